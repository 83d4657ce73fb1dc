"""Central finite-difference gradient checks shared by unit and acceptance tests."""

import numpy as np

REL_TOL = 1e-4
# parameters whose true gradient is ~0 only match to the round-off of the difference quotient
ABS_FLOOR = 1e-8


def numeric_grad(f, arr, eps=1e-5):
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = arr[idx]
        arr[idx] = old + eps
        hi = f()
        arr[idx] = old - eps
        lo = f()
        arr[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


def max_violation(analytic, numeric):
    """Largest ratio of error to the allowed tolerance; <= 1 means the check passes."""
    err = np.abs(analytic - numeric)
    allowed = REL_TOL * np.maximum(np.abs(analytic), np.abs(numeric)) + ABS_FLOOR
    return float(np.max(err / allowed)) if err.size else 0.0


def layer_violation(layer, x, rng):
    """Check input and parameter gradients of ``sum(w * layer(x))`` for a random ``w``."""
    out = layer.forward(x)
    w = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(w * layer.forward(x)))

    layer.forward(x)
    dx = layer.backward(w)
    grads = {k: v.copy() for k, v in layer.grads.items()}
    worst = max_violation(dx, numeric_grad(loss, x))
    for k, p in layer.params.items():
        worst = max(worst, max_violation(grads[k], numeric_grad(loss, p)))
    return worst


def network_violation(net, x, y):
    """Check every parameter gradient of the network's MSE loss with dropout off."""
    _, grads = net.loss_and_grads(x, y, train=False)
    grads = [g.copy() for g in grads]

    def loss():
        pred = net.forward(x)[:, 0]
        return float(np.mean((pred - y) ** 2))

    return max(max_violation(g, numeric_grad(loss, p)) for g, p in zip(grads, net.parameters()))
