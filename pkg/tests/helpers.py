"""Numerical helpers shared by the module and acceptance tests."""
from __future__ import annotations

import numpy as np

from mdda.autodiff import Tape, backward, softmax_cross_entropy
from mdda.nn import Mlp, MlpConfig, forward, init_mlp
from mdda.pipeline import gradient_penalty
from mdda.rng import stream


def central_difference(value, arrays, step=1e-5):
    """Central finite-difference gradients of ``value()`` with respect to
    each array in ``arrays``, probing by in-place mutation."""
    grads = []
    for target in arrays:
        g = np.zeros_like(target)
        flat = target.reshape(-1)
        gf = g.reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + step
            plus = value()
            flat[j] = keep - step
            minus = value()
            flat[j] = keep
            gf[j] = (plus - minus) / (2.0 * step)
        grads.append(g)
    return grads


def relative_error(got: np.ndarray, want: np.ndarray) -> float:
    """max |got - want| / max(1, |want|), elementwise."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    return float(np.max(np.abs(got - want) / np.maximum(1.0, np.abs(want))))


def kink_margin(net: Mlp, x: np.ndarray) -> float:
    """Smallest |pre-activation| any relu/leaky unit sees for inputs x.

    Finite-difference checks redraw inputs until this clears the probe
    step comfortably, so no unit changes its active side mid-difference.
    """
    h = np.asarray(x, dtype=np.float64)
    margin = np.inf
    n_affine = len(net.config.layer_widths) - 1
    for i in range(n_affine):
        z = h @ net.params[2 * i].value.T + net.params[2 * i + 1].value
        last = i == n_affine - 1
        act = net.config.final_activation if last else net.config.activation
        if act in ("relu", "leaky_relu"):
            margin = min(margin, float(np.abs(z).min()))
        if act == "relu":
            h = np.maximum(z, 0.0)
        elif act == "leaky_relu":
            h = np.where(z > 0.0, z, net.config.leaky_slope * z)
        elif act == "tanh":
            h = np.tanh(z)
        else:
            h = z
    return margin


def _net_loss(net: Mlp, x_leaf, labels: np.ndarray, kind: int):
    out = forward(net, x_leaf)
    if kind == 0:
        return out.square().mean()
    if kind == 1:
        return (out.tanh() + out * 0.5).square().sum()
    if net.config.d_out >= 2:
        return softmax_cross_entropy(out, labels)
    return out.mean()


def fd_sweep(n_nets: int, seed0: int = 0, step: float = 1e-5) -> float:
    """Worst relative error between reverse-mode and central-difference
    gradients over ``n_nets`` random networks and loss compositions."""
    worst = 0.0
    shapes = stream(99 + seed0, "sweep")
    for i in range(n_nets):
        widths = [2 + shapes.randint_below(3)]
        for _ in range(1 + shapes.randint_below(2)):
            widths.append(3 + shapes.randint_below(4))
        widths.append(1 + shapes.randint_below(3))
        act = ("relu", "leaky_relu", "tanh")[shapes.randint_below(3)]
        cfg = MlpConfig(tuple(widths), activation=act)
        kind = i % 3

        tape = Tape()
        net = init_mlp(cfg, stream(300 + i, "init"), tape)
        for attempt in range(60):
            x = stream(600 + i, "x", str(attempt)).uniforms(5 * widths[0], -2.0, 2.0).reshape(5, widths[0])
            if act == "tanh" or kink_margin(net, x) > 1e-3:
                break
        labels = stream(900 + i, "y").integers(5, below=widths[-1])

        loss = _net_loss(net, tape.leaf(x), labels, kind)
        grads = backward(loss, net.params)
        arrays = [p.value.copy() for p in net.params]

        def value():
            t2 = Tape()
            net2 = init_mlp(cfg, stream(300 + i, "init"), t2)
            for p, arr in zip(net2.params, arrays):
                p.assign(arr)
            return _net_loss(net2, t2.leaf(x), labels, kind).item()

        fd = central_difference(value, arrays, step=step)
        for p, f in zip(net.params, fd):
            worst = max(worst, relative_error(grads[p.id].value, f))
    return worst


def gp_param_grad_worst_error() -> float:
    """Worst relative error between the recorded (double-backprop) parameter
    gradient of the interpolate penalty and central finite differences."""
    from mdda.autodiff import Tensor

    cfg = MlpConfig((2, 5, 1), activation="leaky_relu")
    s = stream(11, "s").uniforms(8, -1.5, 1.5).reshape(4, 2)
    t = stream(12, "t").uniforms(8, -1.5, 1.5).reshape(4, 2)

    def build(arrays=None) -> Mlp:
        net = init_mlp(cfg, stream(13, "critic"))
        if arrays is not None:
            for p, arr in zip(net.params, arrays):
                p.assign(arr)
        return net

    critic = build()
    eps = stream(14, "eps").uniforms(4)
    points = np.vstack([eps[:, None] * s + (1.0 - eps[:, None]) * t, s, t])
    assert kink_margin(critic, points) > 1e-3

    penalty = gradient_penalty(critic, Tensor.of(s), Tensor.of(t), stream(14, "eps"))
    grads = backward(penalty, critic.params)
    arrays = [p.value.copy() for p in critic.params]

    def value():
        return gradient_penalty(build(arrays), Tensor.of(s), Tensor.of(t), stream(14, "eps")).item()

    fd = central_difference(value, arrays)
    return max(relative_error(grads[p.id].value, f) for p, f in zip(critic.params, fd))


def linear_critic(weights_row, bias: float = 0.0) -> Mlp:
    """A single-affine critic D(x) = w.x + b with chosen coefficients."""
    net = init_mlp(MlpConfig((len(weights_row), 1)), stream(0, "linear-critic"))
    net.params[0].assign(np.array([weights_row], dtype=np.float64))
    net.params[1].assign(np.array([bias], dtype=np.float64))
    return net


def identity_net(width: int = 1) -> Mlp:
    """A single-affine net computing x itself."""
    net = init_mlp(MlpConfig((width, width)), stream(0, "identity"))
    net.params[0].assign(np.eye(width))
    net.params[1].assign(np.zeros(width))
    return net
