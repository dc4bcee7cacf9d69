"""Layer primitives for 2D feature maps in NHWC layout.

Every layer keeps what its backward pass needs from the last forward call
made with ``train=True``. Parameters and their gradients live in the
``params`` / ``grads`` dicts under matching keys.
"""

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Layer:
    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


def im2col3(x):
    """(B, H, W, C) -> (B, H, W, 3, 3, C) neighbourhoods with zero padding 1."""
    B, H, W, C = x.shape
    xp = np.zeros((B, H + 2, W + 2, C), dtype=x.dtype)
    xp[:, 1:-1, 1:-1] = x
    cols = np.empty((B, H, W, 3, 3, C), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, :, :, i, j, :] = xp[:, i : i + H, j : j + W, :]
    return cols


def col2im3(dcols):
    """Adjoint of :func:`im2col3`."""
    B, H, W, _, _, C = dcols.shape
    dxp = np.zeros((B, H + 2, W + 2, C), dtype=dcols.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, i : i + H, j : j + W, :] += dcols[:, :, :, i, j, :]
    return dxp[:, 1:-1, 1:-1, :]


class Conv2d(Layer):
    """3x3 convolution, stride 1, zero padding 1, optional channel groups.

    Weight shape is (out_channels, in_channels // groups, 3, 3). ``bias=False``
    drops the additive term (used in front of batch norm, which cancels it).
    """

    def __init__(self, in_channels, out_channels, groups=1, rng=None, dtype=np.float64, bias=True):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise ValueError(f"groups={groups} must divide in ({in_channels}) and out ({out_channels}) channels")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.groups = groups
        rng = np.random.default_rng() if rng is None else rng
        cin_g = in_channels // groups
        bound = np.sqrt(6.0 / (9 * cin_g))  # He-uniform
        self.params["w"] = rng.uniform(-bound, bound, (out_channels, cin_g, 3, 3)).astype(dtype)
        if bias:
            self.params["b"] = np.zeros(out_channels, dtype=dtype)
        self._cache = None

    def _wmat(self, g):
        cout_g = self.out_channels // self.groups
        w = self.params["w"][g * cout_g : (g + 1) * cout_g]
        # (cout_g, cin_g, 3, 3) -> (3*3*cin_g, cout_g), matching the cols layout
        return w.transpose(2, 3, 1, 0).reshape(-1, cout_g)

    def forward(self, x, train=False):
        B, H, W, C = x.shape
        if C != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {C}")
        cin_g = C // self.groups
        cout_g = self.out_channels // self.groups
        out = np.empty((B, H, W, self.out_channels), dtype=x.dtype)
        cols_all = []
        for g in range(self.groups):
            cols = im2col3(x[..., g * cin_g : (g + 1) * cin_g]).reshape(B * H * W, -1)
            out[..., g * cout_g : (g + 1) * cout_g] = (cols @ self._wmat(g)).reshape(B, H, W, cout_g)
            if train:
                cols_all.append(cols)
        if "b" in self.params:
            out += self.params["b"]
        self._cache = (x.shape, cols_all) if train else None
        return out

    def backward(self, dout):
        if self._cache is None:
            raise RuntimeError("backward called without a training-mode forward")
        (B, H, W, C), cols_all = self._cache
        cin_g = C // self.groups
        cout_g = self.out_channels // self.groups
        dw = np.empty_like(self.params["w"])
        dx = np.empty((B, H, W, C), dtype=dout.dtype)
        for g in range(self.groups):
            d2 = dout[..., g * cout_g : (g + 1) * cout_g].reshape(-1, cout_g)
            dwmat = cols_all[g].T @ d2
            dw[g * cout_g : (g + 1) * cout_g] = dwmat.reshape(3, 3, cin_g, cout_g).transpose(3, 2, 0, 1)
            dcols = (d2 @ self._wmat(g).T).reshape(B, H, W, 3, 3, cin_g)
            dx[..., g * cin_g : (g + 1) * cin_g] = col2im3(dcols)
        self.grads["w"] = dw
        if "b" in self.params:
            self.grads["b"] = dout.sum(axis=(0, 1, 2))
        return dx


class BatchNorm2d(Layer):
    """Per-channel batch normalization over (B, H, W); running stats for inference."""

    def __init__(self, channels, dtype=np.float64):
        super().__init__()
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def forward(self, x, train=False):
        if x.shape[0] == 0:
            raise ValueError("batch norm on an empty batch")
        if train:
            n = x.shape[0] * x.shape[1] * x.shape[2]
            mean = x.mean(axis=(0, 1, 2))
            var = x.var(axis=(0, 1, 2))
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (x - mean) * inv_std
            unbiased = var * n / max(n - 1, 1)
            self.running_mean = (1 - BN_MOMENTUM) * self.running_mean + BN_MOMENTUM * mean
            self.running_var = (1 - BN_MOMENTUM) * self.running_var + BN_MOMENTUM * unbiased
            self._cache = (xhat, inv_std)
        else:
            xhat = (x - self.running_mean) / np.sqrt(self.running_var + BN_EPS)
            self._cache = None
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, dout):
        if self._cache is None:
            raise RuntimeError("backward called without a training-mode forward")
        xhat, inv_std = self._cache
        n = dout.shape[0] * dout.shape[1] * dout.shape[2]
        self.grads["gamma"] = (dout * xhat).sum(axis=(0, 1, 2))
        self.grads["beta"] = dout.sum(axis=(0, 1, 2))
        dxhat = dout * self.params["gamma"]
        return (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=(0, 1, 2)) - xhat * (dxhat * xhat).sum(axis=(0, 1, 2))
        )


class ReLU(Layer):
    def forward(self, x, train=False):
        mask = x > 0
        self._mask = mask if train else None
        return np.where(mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, dout):
        if self._mask is None:
            raise RuntimeError("backward called without a training-mode forward")
        return np.where(self._mask, dout, 0).astype(dout.dtype, copy=False)


def mse_loss(pred, target):
    """Mean squared error and its gradient with respect to ``pred``."""
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def mae_loss(pred, target):
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


LOSSES = {"MSE": mse_loss, "MAE": mae_loss}
