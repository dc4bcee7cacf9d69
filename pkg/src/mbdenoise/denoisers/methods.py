"""Uniform configuration and dispatch for the five compared methods."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from mbdenoise.denoisers.alge import alge_extrapolate
from mbdenoise.denoisers.mppca import mppca_denoise
from mbdenoise.nn.network import ConfigError, Network, load_checkpoint
from mbdenoise.nn.train import PatchDataset, TrainingConfig, input_scale, output_scale, train
from mbdenoise.volume import Volume, channel_bvalues

METHODS = ("MBD", "N2N", "CNNe", "MPPCA", "ALGe")
NN_METHODS = ("MBD", "N2N", "CNNe")


@dataclass(frozen=True)
class MethodConfig:
    """What a method sees and predicts.

    Parameters
    ----------
    method : {"MBD", "N2N", "CNNe", "ALGe", "MPPCA"}
    input_bvalues : tuple of float
        Channels fed to the method. For ALGe this is the pair (b1, b2).
    target_bvalue : float
    checkpoint : str, optional
        Trained network (MBD, N2N, CNNe).
    patch_radius : int
        MPPCA window radius.
    """

    method: str
    input_bvalues: tuple
    target_bvalue: float
    checkpoint: str = None
    patch_radius: int = 2
    network: Network = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "input_bvalues", tuple(float(b) for b in self.input_bvalues))
        object.__setattr__(self, "target_bvalue", float(self.target_bvalue))
        b, t, m = self.input_bvalues, self.target_bvalue, self.method
        if m not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {m!r}")
        if len(set(b)) != len(b):
            raise ConfigError(f"duplicate input b-values {b}")
        if m == "MBD" and (len(b) < 2 or t not in b):
            raise ConfigError("MBD needs at least two inputs including the target b-value")
        if m == "N2N" and b != (t,):
            raise ConfigError("N2N takes exactly the target b-value as input")
        if m == "CNNe" and (t in b or not b):
            raise ConfigError("CNNe inputs must exclude the target b-value")
        if m == "ALGe" and (len(b) != 2 or b[0] == b[1]):
            raise ConfigError("ALGe needs two distinct b-values (b1, b2)")
        if m == "MPPCA" and self.patch_radius < 1:
            raise ConfigError("patch_radius must be >= 1")

    @property
    def mode(self) -> str:
        return "direct" if self.method == "CNNe" else "residual"

    def load_network(self) -> Network:
        if self.network is not None:
            return self.network
        if not self.checkpoint:
            raise ConfigError(f"{self.method} needs a checkpoint")
        net = load_checkpoint(self.checkpoint)
        self.check_network(net)
        return net

    def check_network(self, net: Network) -> None:
        if net.input_bvalues != self.input_bvalues or net.target_bvalue != self.target_bvalue or net.mode != self.mode:
            raise ConfigError(
                f"network wiring {net.input_bvalues}->{net.target_bvalue} ({net.mode}) does not match "
                f"{self.method} {self.input_bvalues}->{self.target_bvalue}"
            )


def _channel_index(dwi: Volume, b: float) -> int:
    bvals = [float(x) for x in channel_bvalues(dwi)]
    if float(b) not in bvals:
        raise ConfigError(f"volume has no b={b:g} channel (have {bvals})")
    return bvals.index(float(b))


def _single(dwi: Volume, b: float) -> Volume:
    return Volume(dwi.data[_channel_index(dwi, b)], dwi.voxel_size, (f"b={b:g}",))


def nn_denoise(net: Network, dwi: Volume, batch_size: int = 8) -> Volume:
    """Slice-wise inference: every z-slice is one full-size sample."""
    idx = [_channel_index(dwi, b) for b in net.input_bvalues]
    x = np.moveaxis(np.asarray(dwi.data[idx], dtype=np.float64), -1, 0)  # (nz, C, nx, ny)
    y = net.predict(x, batch_size=batch_size).astype(np.float64)
    return Volume(np.moveaxis(y[:, 0], 0, -1), dwi.voxel_size, (f"b={net.target_bvalue:g}",))


def denoise(cfg: MethodConfig, dwi: Volume) -> Volume:
    """Denoised (or extrapolated) single-channel image at ``cfg.target_bvalue``.

    ``dwi`` carries one channel per b-value, labelled ``b=<value>``.
    """
    if cfg.method in NN_METHODS:
        return nn_denoise(cfg.load_network(), dwi)
    if cfg.method == "ALGe":
        b1, b2 = cfg.input_bvalues
        return alge_extrapolate(_single(dwi, b1), _single(dwi, b2), b1, b2, cfg.target_bvalue)
    idx = [_channel_index(dwi, b) for b in cfg.input_bvalues]
    sub = Volume(dwi.data[idx], dwi.voxel_size, tuple(dwi.labels[i] for i in idx))
    out = mppca_denoise(sub, cfg.patch_radius)
    return _single(out, cfg.target_bvalue)


def input_combinations(bvalues, target_bvalue) -> list:
    """Every input set that contains the target, smallest first.

    With three b-values and the largest as target this gives the four
    options {b}, {b0, b}, {bmid, b}, {b0, bmid, b}.
    """
    target = float(target_bvalue)
    others = [float(b) for b in sorted(bvalues) if float(b) != target]
    if len(others) + 1 != len(set(float(b) for b in bvalues)):
        raise ValueError(f"target {target} not among {bvalues}")
    combos = []
    for r in range(len(others) + 1):
        for sub in itertools.combinations(others, r):
            combos.append(tuple(sorted(sub + (target,))))
    return combos


@dataclass
class SweepResult:
    """Averaged validation curves per input set, cropped to the shortest run.

    ``final`` is the validation loss of the kept (best-epoch) networks,
    averaged over repeats.
    """

    curves: dict
    runs: dict

    @property
    def final(self) -> dict:
        return {k: float(np.mean([r.best_val_loss for r in runs])) for k, runs in self.runs.items()}

    @property
    def ranking(self) -> list:
        return sorted(self.curves, key=lambda k: (self.final[k], len(k)))


def input_configuration_sweep(train_set: PatchDataset, val_set: PatchDataset, target_bvalue, cfg: TrainingConfig, repeats: int = 10, dtype=np.float32, precomputed=None) -> SweepResult:
    """Train one residual network per input combination and repeat.

    Repeat ``r`` uses seed ``cfg.seed + r`` for both weight init and batch
    order. Validation curves of one combination are cropped to the length
    of its shortest run and averaged. ``precomputed`` maps an input tuple to
    a list of TrainResults from identically configured runs; those repeats
    are reused instead of retrained.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if len(set(train_set.input_bvalues)) < 3:
        raise ValueError("the sweep needs three distinct b-values")
    curves, runs = {}, {}
    for combo in input_combinations(train_set.input_bvalues, target_bvalue):
        tr, va = train_set.select_inputs(combo), val_set.select_inputs(combo)
        results = list((precomputed or {}).get(combo, []))[:repeats]
        for r in range(len(results), repeats):
            seed = cfg.seed + r
            net = Network(combo, target_bvalue, "residual", seed=seed, dtype=dtype, input_scale=input_scale(tr), output_scale=output_scale(tr, "residual"))
            run_cfg = TrainingConfig(**{**cfg.__dict__, "seed": seed})
            results.append(train(net, tr, va, run_cfg))
        n = min(len(res.val_loss) for res in results)
        curves[combo] = np.mean([res.val_loss[:n] for res in results], axis=0)
        runs[combo] = results
    return SweepResult(curves, runs)
