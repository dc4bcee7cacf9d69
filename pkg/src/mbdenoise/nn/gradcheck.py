"""Central finite-difference checks of the analytic gradients."""

import numpy as np

from mbdenoise.nn.layers import mse_loss


def relative_error(a, b) -> float:
    a = np.ravel(a)
    b = np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def numeric_gradient(f, x, h=1e-6):
    """Central differences of scalar ``f()`` with respect to array ``x`` (in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def check_layer(layer, x, rng, h=1e-6) -> dict:
    """Max relative error of dx and of every parameter gradient of ``layer``.

    The scalar objective is sum(forward(x) * R) for a fixed random R.
    """
    out = layer.forward(x, train=True)
    weights = rng.normal(size=out.shape)

    def objective():
        return float(np.sum(layer.forward(x, train=True) * weights))

    layer.forward(x, train=True)
    dx = layer.backward(weights)
    errors = {"x": relative_error(dx, numeric_gradient(objective, x, h))}
    for key, p in layer.params.items():
        analytic = layer.grads[key].copy()
        errors[key] = relative_error(analytic, numeric_gradient(objective, p, h))
    return errors


def check_network(net, x, target, h=1e-6) -> dict:
    """Relative error of every parameter gradient of a whole network under MSE."""

    def objective():
        return mse_loss(net.forward(x, train=True), target)[0]

    pred = net.forward(x, train=True)
    _, grad = mse_loss(pred, target)
    net.backward(grad)
    analytic = {name: layer.grads[key].copy() for name, layer, key in net.named_parameters()}
    errors = {}
    for name, layer, key in net.named_parameters():
        errors[name] = relative_error(analytic[name], numeric_gradient(objective, layer.params[key], h))
    return errors


# grouped first conv, bias-free conv (before BN), BN, ReLU, linear output conv
GRADCHECK_KINDS = ("grouped_conv", "conv", "batchnorm", "relu", "linear_conv")


def random_instance(kind: str, rng):
    """A small randomly sized float64 layer of ``kind`` and a matching input."""
    from mbdenoise.nn.layers import BatchNorm2d, Conv2d, ReLU

    B, H, W = (int(v) for v in rng.integers(2, 4, 3))
    if kind == "grouped_conv":
        groups = int(rng.integers(2, 4))
        cin, cout = groups, groups * int(rng.integers(1, 3))
        layer = Conv2d(cin, cout, groups=groups, rng=rng)
        layer.params["b"] = rng.normal(size=cout)
    elif kind == "conv":
        cin, cout = (int(v) for v in rng.integers(1, 4, 2))
        layer = Conv2d(cin, cout, rng=rng, bias=False)
    elif kind == "linear_conv":
        cin, cout = int(rng.integers(1, 5)), 1
        layer = Conv2d(cin, cout, rng=rng)
        layer.params["b"] = rng.normal(size=cout)
    elif kind == "batchnorm":
        cin = int(rng.integers(1, 4))
        layer = BatchNorm2d(cin)
        layer.params["gamma"] = rng.uniform(0.5, 1.5, cin)
        layer.params["beta"] = rng.normal(size=cin)
    elif kind == "relu":
        cin = int(rng.integers(1, 4))
        layer = ReLU()
    else:
        raise ValueError(f"unknown layer kind {kind!r}")
    x = rng.normal(size=(B, H, W, cin))
    if kind == "relu":
        x += np.sign(x) * 1e-2  # keep finite differences off the kink
    return layer, x


def gradient_trials(kind: str, trials: int = 100, seed: int = 0) -> np.ndarray:
    """Worst relative gradient error (inputs and parameters) per random trial."""
    rng = np.random.default_rng(seed)
    worst = np.empty(trials)
    for t in range(trials):
        layer, x = random_instance(kind, rng)
        worst[t] = max(check_layer(layer, x, rng).values())
    return worst
