"""Loss floor, error maps, lesion error histograms and best-method attribution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mbdenoise.volume import Volume

# Tie-breaking order for the best-method attribution.
METHOD_ORDER = ("MBD", "N2N", "CNNe", "MPPCA", "ALGe")
PURE_LESION_TOL = 1e-6
MEAN_BIN = 0.01
ABS_BIN = 1.0


def _same_dims(*vols):
    dims = {v.dims for v in vols}
    if len(dims) != 1:
        raise ValueError(f"volume dims differ: {sorted(dims)}")


def _values(v):
    return np.asarray(v.data if isinstance(v, Volume) else v, dtype=np.float64)


def theoretical_floor(i1, i2, loss: str = "MSE", mask=None) -> float:
    """Lowest loss a network trained on repetition pairs can reach.

    For two repetitions with independent noise of equal variance, the MSE
    floor is Var[I1 - I2] / 2 and the MAE floor is std[I1 - I2] / sqrt(2).

    Parameters
    ----------
    i1, i2 : Volume or ndarray
        Two noisy repetitions of the same clean signal.
    loss : {"MSE", "MAE"}
    mask : ndarray of bool, optional
        Voxels to include.
    """
    if isinstance(i1, Volume) and isinstance(i2, Volume):
        _same_dims(i1, i2)
    a, b = _values(i1), _values(i2)
    if a.shape != b.shape:
        raise ValueError(f"shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    if mask is not None:
        d = d[np.broadcast_to(np.asarray(mask, dtype=bool), d.shape)]
    if loss == "MSE":
        return float(np.var(d) / 2.0)
    if loss == "MAE":
        return float(np.std(d) / np.sqrt(2.0))
    raise ValueError(f"loss must be MSE or MAE, got {loss!r}")


def error_maps(denoised, clean: Volume, lesion_fraction=None):
    """Mean absolute error over repetitions.

    Parameters
    ----------
    denoised : list of Volume
        One denoised result per repetition.
    clean : Volume
        Noiseless reference.
    lesion_fraction : ndarray, optional
        If given, a second map restricted to voxels with non-zero lesion
        fraction (zero elsewhere) is returned as well.

    Returns
    -------
    Volume, or (Volume, Volume)
    """
    if not denoised:
        raise ValueError("no denoised volumes")
    _same_dims(clean, *denoised)
    ref = _values(clean)
    acc = np.zeros_like(ref)
    for v in denoised:
        acc += np.abs(_values(v) - ref)
    avg = clean.with_data(acc / len(denoised))
    if lesion_fraction is None:
        return avg
    sel = np.asarray(lesion_fraction) > 0
    return avg, avg.with_data(np.where(sel, avg.data, 0.0))


def error_difference_map(map_a: Volume, map_b: Volume) -> Volume:
    """``map_b - map_a``: positive where method A has the lower error."""
    _same_dims(map_a, map_b)
    return map_a.with_data(_values(map_b) - _values(map_a))


def lesion_conspicuity_diff(with_lesions: Volume, without_lesions: Volume) -> Volume:
    """Denoised image with lesions minus the same image denoised without them."""
    _same_dims(with_lesions, without_lesions)
    return with_lesions.with_data(_values(with_lesions) - _values(without_lesions))


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _histogram(values, width):
    lo = int(np.floor(values.min() / width))
    hi = int(np.floor(values.max() / width)) + 1
    edges = np.arange(lo, hi + 1) * width
    # integer bin index avoids float edge ambiguity
    idx = np.floor(values / width).astype(np.int64) - lo
    counts = np.bincount(idx, minlength=hi - lo)[: hi - lo]
    return Histogram(edges, counts)


@dataclass(frozen=True)
class ErrorSummary:
    """Signed (bin 0.01) and absolute (bin 1) error histograms of one method."""

    signed: Histogram
    absolute: Histogram
    mean: float
    std: float
    mean_abs: float
    fraction_below_one: float
    count: int


def lesion_error_histograms(errors, scale: float = 1.0, mean_bin: float = MEAN_BIN, abs_bin: float = ABS_BIN) -> ErrorSummary:
    """Histogram the signed errors of pure-lesion voxels.

    Parameters
    ----------
    errors : array_like
        Signed errors (denoised - clean), pooled over voxels and repetitions.
    scale : float
        Errors are divided by this first (e.g. the noise std).
    mean_bin, abs_bin : float
        Bin widths of the signed and absolute histograms.
    """
    e = np.asarray(errors, dtype=np.float64).ravel() / scale
    if e.size == 0:
        raise ValueError("no pure-lesion voxels to histogram")
    a = np.abs(e)
    return ErrorSummary(
        signed=_histogram(e, mean_bin),
        absolute=_histogram(a, abs_bin),
        mean=float(e.mean()),
        std=float(e.std()),
        mean_abs=float(a.mean()),
        fraction_below_one=float(np.mean(a < 1.0)),
        count=int(e.size),
    )


def pure_lesion_errors(denoised: Volume, clean: Volume, lesion_fraction, tol: float = PURE_LESION_TOL) -> np.ndarray:
    """Signed errors at voxels whose lesion fraction is at least 1 - tol."""
    _same_dims(denoised, clean)
    sel = np.asarray(lesion_fraction) >= 1.0 - tol
    return (_values(denoised)[0] - _values(clean)[0])[sel]


@dataclass(frozen=True)
class Attribution:
    """Best method per lesion parameter set.

    ``maes`` is (n_sets, n_methods) in ``methods`` order; ``winner`` holds
    method indices and ``tie`` marks sets whose minimum is shared.
    """

    methods: tuple
    maes: np.ndarray
    winner: np.ndarray
    tie: np.ndarray

    @property
    def win_rates(self) -> dict:
        n = len(self.winner)
        return {m: float(np.sum(self.winner == i)) / n for i, m in enumerate(self.methods)}

    def winner_names(self) -> list:
        return [self.methods[i] for i in self.winner]


def best_method_attribution(maes: dict, order=METHOD_ORDER) -> Attribution:
    """Pick the lowest-MAE method for each parameter set.

    Parameters
    ----------
    maes : dict of str -> array_like
        Per-method MAE, one entry per parameter set.
    order : sequence of str
        Tie-breaking priority; methods not in it follow in sorted order.
    """
    if len(maes) < 2:
        raise ValueError("attribution needs at least two methods")
    methods = tuple([m for m in order if m in maes] + sorted(m for m in maes if m not in order))
    table = np.column_stack([np.asarray(maes[m], dtype=np.float64) for m in methods])
    best = table.min(axis=1, keepdims=True)
    hits = table == best
    # argmax returns the first True, i.e. the highest-priority method
    return Attribution(methods, table, hits.argmax(axis=1), hits.sum(axis=1) > 1)
