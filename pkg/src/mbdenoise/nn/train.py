"""Patch datasets, Adam and the early-stopped training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from mbdenoise.nn.layers import LOSSES
from mbdenoise.nn.network import Network
from mbdenoise.volume import Volume, channel_bvalues

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    patch_size: int = 32
    batch_size: int = 32
    learning_rate: float = 1e-3
    max_epochs: int = 100
    patience: int = 10
    min_delta_fraction: float = 1e-4
    seed: int = 0
    loss: str = "MSE"
    dtype: str = "float32"

    def __post_init__(self):
        if self.patch_size < 16:
            raise ValueError("patch_size must be >= 16")
        for name in ("batch_size", "learning_rate", "max_epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {sorted(LOSSES)}")


@dataclass
class PatchDataset:
    """Input stacks (N, C, H, W) and targets (N, 1, H, W)."""

    inputs: np.ndarray
    targets: np.ndarray
    input_bvalues: tuple = ()
    target_bvalue: float = 0.0

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets differ in count")
        if len(self.inputs) and self.inputs.shape[2:] != self.targets.shape[2:]:
            raise ValueError("inputs and targets differ in spatial size")

    def __len__(self):
        return len(self.inputs)

    def select_inputs(self, bvalues) -> "PatchDataset":
        """Subset of input channels, by b-value."""
        idx = [self.input_bvalues.index(float(b)) for b in bvalues]
        return PatchDataset(self.inputs[:, idx], self.targets, tuple(float(b) for b in bvalues), self.target_bvalue)

    @staticmethod
    def concat(parts) -> "PatchDataset":
        parts = [p for p in parts if len(p)]
        first = parts[0]
        return PatchDataset(
            np.concatenate([p.inputs for p in parts]),
            np.concatenate([p.targets for p in parts]),
            first.input_bvalues,
            first.target_bvalue,
        )


def _grid(n, size, stride):
    return list(range(0, n - size + 1, stride))


def extract_patches(pairs, patch_size, stride=None, input_bvalues=None, target_bvalue=None, slices=None) -> PatchDataset:
    """Cut z-slices of (input, target) volume pairs into square patches.

    Parameters
    ----------
    pairs : list of (Volume, Volume)
        Noisy input repetition and independent target repetition, channels
        labelled with ``b=``.
    patch_size, stride : int
        Patch edge and step; a remainder smaller than a patch is dropped.
        ``stride`` defaults to ``patch_size`` (non-overlapping).
    input_bvalues, target_bvalue : float
        Channels to feed and to predict; defaults: all, and the largest b.
    slices : list of int, optional
        z indices to use (default all).
    """
    stride = stride or patch_size
    xs, ys = [], []
    for inp, tgt in pairs:
        b_in, b_tgt = channel_bvalues(inp), channel_bvalues(tgt)
        ib = [float(b) for b in (input_bvalues if input_bvalues is not None else b_in)]
        tb = float(target_bvalue if target_bvalue is not None else max(b_in))
        ci = [[float(b) for b in b_in].index(b) for b in ib]
        ct = [float(b) for b in b_tgt].index(tb)
        nx, ny, nz = inp.dims
        for z in slices if slices is not None else range(nz):
            for x0 in _grid(nx, patch_size, stride):
                for y0 in _grid(ny, patch_size, stride):
                    win = (slice(x0, x0 + patch_size), slice(y0, y0 + patch_size), z)
                    xs.append(inp.data[(ci,) + win])
                    ys.append(tgt.data[(ct,) + win][None])
    if not xs:
        return PatchDataset(np.zeros((0, len(ib), patch_size, patch_size)), np.zeros((0, 1, patch_size, patch_size)), tuple(ib), tb)
    return PatchDataset(np.stack(xs).astype(np.float64), np.stack(ys).astype(np.float64), tuple(ib), tb)


def slices_dataset(pairs, input_bvalues, target_bvalue, slices) -> PatchDataset:
    """Whole z-slices as samples (used for validation and inference)."""
    xs, ys = [], []
    for inp, tgt in pairs:
        b_in = [float(b) for b in channel_bvalues(inp)]
        b_tgt = [float(b) for b in channel_bvalues(tgt)]
        ci = [b_in.index(float(b)) for b in input_bvalues]
        ct = b_tgt.index(float(target_bvalue))
        for z in slices:
            xs.append(inp.data[ci, :, :, z])
            ys.append(tgt.data[ct, :, :, z][None])
    return PatchDataset(np.stack(xs).astype(np.float64), np.stack(ys).astype(np.float64), tuple(float(b) for b in input_bvalues), float(target_bvalue))


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)


@dataclass
class TrainResult:
    network: Network
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    initial_val_loss: float = float("nan")
    best_epoch: int = 0
    seconds: float = 0.0

    @property
    def best_val_loss(self) -> float:
        """Validation loss of the restored weights."""
        return self.val_loss[self.best_epoch - 1] if self.best_epoch else self.initial_val_loss


def evaluate_loss(net: Network, data: PatchDataset, loss="MSE", batch_size=16) -> float:
    """Mean per-voxel loss of inference-mode predictions over a dataset."""
    fn = LOSSES[loss]
    total, count = 0.0, 0
    for i in range(0, len(data), batch_size):
        pred = net.predict(data.inputs[i : i + batch_size], batch_size)
        value, _ = fn(pred.astype(np.float64), data.targets[i : i + batch_size])
        n = pred.size
        total += value * n
        count += n
    return total / count


def _positive(s):
    return s if s > 0 else 1.0


def input_scale(data: PatchDataset) -> np.ndarray:
    """Per-channel robust intensity scale (99th percentile of |input|)."""
    s = np.percentile(np.abs(data.inputs), 99, axis=(0, 2, 3))
    return np.array([_positive(float(v)) for v in s])


def output_scale(data: PatchDataset, mode: str) -> float:
    """Scale of what the last layer has to produce.

    Residual mode estimates noise, whose std follows from the input/target
    repetition difference as std[I1 - I2] / sqrt(2); direct mode produces the
    image itself (99th percentile of |target|).
    """
    if mode == "residual":
        ti = list(data.input_bvalues).index(float(data.target_bvalue))
        return _positive(float(np.std(data.inputs[:, ti] - data.targets[:, 0]) / np.sqrt(2.0)))
    return _positive(float(np.percentile(np.abs(data.targets), 99)))


def train(net: Network, train_set: PatchDataset, val_set: PatchDataset, cfg: TrainingConfig) -> TrainResult:
    """Minimize the configured loss with Adam; early-stop on validation loss.

    Each epoch visits the training patches in a seeded random order. The
    weights with the lowest validation loss are restored at the end.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("empty training or validation set")
    if tuple(train_set.input_bvalues) and tuple(train_set.input_bvalues) != net.input_bvalues:
        raise ValueError(f"dataset channels {train_set.input_bvalues} != network inputs {net.input_bvalues}")
    start = time.perf_counter()
    loss_fn = LOSSES[cfg.loss]
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(net.parameters(), lr=cfg.learning_rate)
    x_all = train_set.inputs.astype(net.dtype)
    y_all = train_set.targets.astype(net.dtype)
    result = TrainResult(net)
    result.initial_val_loss = best = evaluate_loss(net, val_set, cfg.loss)
    min_delta = cfg.min_delta_fraction * result.initial_val_loss
    best_state = net.state()
    wait = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_set))
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[i : i + cfg.batch_size])
            pred = net.forward(x_all[idx], train=True)
            value, grad = loss_fn(pred, y_all[idx])
            if not np.isfinite(value):
                raise TrainingDivergedError(f"loss became {value} at epoch {epoch + 1}, batch {i // cfg.batch_size}")
            net.backward(grad)
            opt.step(net.gradients())
            total += value * len(idx)
        result.train_loss.append(total / len(order))
        val = evaluate_loss(net, val_set, cfg.loss)
        if not np.isfinite(val):
            raise TrainingDivergedError(f"validation loss became {val} at epoch {epoch + 1}")
        result.val_loss.append(val)
        log.debug("epoch %d train %.4f val %.4f", epoch + 1, result.train_loss[-1], val)
        if val < best - min_delta:
            best, wait = val, 0
            best_state = net.state()
            result.best_epoch = epoch + 1
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    net.load_state(best_state)
    result.seconds = time.perf_counter() - start
    return result
