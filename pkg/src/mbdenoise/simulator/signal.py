"""Spin-echo signal model, directional diffusivity and Rician noise."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from mbdenoise.phantom import DIFFUSIVITY_UNIT, TISSUES, Phantom, TissueParams
from mbdenoise.volume import Volume

DEFAULT_K = 1000.0
DEFAULT_TR = 6700.0  # ms
DEFAULT_TE = 100.0  # ms
DEFAULT_SIGMA_FRACTION = 0.07  # of the clean WM b=0 intensity
UNIT_TOL = 1e-9


@dataclass(frozen=True)
class AcquisitionProtocol:
    """Imaging constants, b-values (s/mm^2), unit directions and noise level."""

    bvalues: tuple = (0.0, 1000.0, 4000.0)
    directions: np.ndarray = field(default_factory=lambda: np.array([[1.0, 0.0, 0.0]]))
    sigma: float = 0.0
    k: float = DEFAULT_K
    TR: float = DEFAULT_TR
    TE: float = DEFAULT_TE
    repetitions: int = 2

    def __post_init__(self):
        b = tuple(float(x) for x in self.bvalues)
        if not b or min(b) < 0 or list(b) != sorted(b):
            raise ValueError(f"b-values must be non-negative and ascending, got {b}")
        g = np.atleast_2d(np.asarray(self.directions, dtype=np.float64))
        if g.shape[1] != 3:
            raise ValueError("directions must be 3-vectors")
        if np.any(np.abs(np.linalg.norm(g, axis=1) - 1.0) > UNIT_TOL):
            raise ValueError("every direction must have unit norm")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        g = g.copy()
        g.setflags(write=False)
        object.__setattr__(self, "bvalues", b)
        object.__setattr__(self, "directions", g)
        object.__setattr__(self, "sigma", float(self.sigma))

    def with_sigma(self, sigma: float) -> "AcquisitionProtocol":
        return AcquisitionProtocol(self.bvalues, self.directions, sigma, self.k, self.TR, self.TE, self.repetitions)


def steady_state_factor(tissue: str, params: TissueParams, proto: AcquisitionProtocol, dT2: float = 0.0) -> float:
    """k * rho * exp(-TE / (T2 + dT2)) * (1 - exp(-TR / T1))."""
    p = params[tissue]
    t2 = p.T2 + dT2
    if t2 <= 0:
        raise ValueError(f"effective T2 must be positive, got {t2} ms")
    return proto.k * p.rho * np.exp(-proto.TE / t2) * (1.0 - np.exp(-proto.TR / p.T1))


def default_sigma(params: TissueParams, proto: AcquisitionProtocol, fraction: float = DEFAULT_SIGMA_FRACTION) -> float:
    """Noise level as a fraction of the clean pure-WM b=0 intensity."""
    return fraction * steady_state_factor("WM", params, proto)


def _check_unit(g):
    g = np.asarray(g, dtype=np.float64)
    if abs(np.linalg.norm(g) - 1.0) > UNIT_TOL:
        raise ValueError(f"direction {g} is not a unit vector")
    return g


def directional_diffusivity(tensor, g) -> np.ndarray:
    """g^T D g for one tensor (3, 3) or a field (..., 3, 3).

    Values that are negative only through round-off (>= -1e-12) are
    clamped to zero.
    """
    g = _check_unit(g)
    d = np.einsum("i,...ij,j->...", g, np.asarray(tensor, dtype=np.float64), g)
    d = np.where((d < 0) & (d >= -1e-12), 0.0, d)
    return d if np.ndim(d) else float(d)


def simulate_clean(phantom: Phantom, lesions=None, proto: AcquisitionProtocol = None, direction_index: int = 0) -> Volume:
    """Noiseless DWI, one channel per b-value, for one encoding direction.

    Healthy tissue follows the monoexponential spin-echo model with the
    voxel's directional diffusivity. Lesion tissue (fraction L) follows the
    biexponential model with WM relaxation and a T2 shift; healthy
    contributions are scaled by (1 - L).
    """
    proto = proto or AcquisitionProtocol()
    g = proto.directions[direction_index]
    dk = directional_diffusivity(phantom.tensor_matrix(), g) * DIFFUSIVITY_UNIT
    ss = {t: steady_state_factor(t, phantom.params, proto) for t in TISSUES}
    base = sum(phantom.fraction(t) * ss[t] for t in TISSUES)
    if lesions is not None:
        lfrac = lesions.fraction.values
        base = base * (1.0 - lfrac)
        maps = lesions.parameter_maps()
        lesion_ss = np.zeros(phantom.dims)
        inside = lesions.labels >= 0
        for dT2 in np.unique(maps["dT2"][inside]):
            sel = inside & (maps["dT2"] == dT2)
            lesion_ss[sel] = steady_state_factor("WM", phantom.params, proto, float(dT2))
    out = np.empty((len(proto.bvalues),) + phantom.dims)
    for i, b in enumerate(proto.bvalues):
        out[i] = base * np.exp(-b * dk)
        if lesions is not None:
            f, d1, d2 = maps["f"], maps["D1"] * DIFFUSIVITY_UNIT, maps["D2"] * DIFFUSIVITY_UNIT
            out[i] += lfrac * lesion_ss * (f * np.exp(-b * d1) + (1.0 - f) * np.exp(-b * d2))
    labels = tuple(f"b={b:g},dir={direction_index}" for b in proto.bvalues)
    return Volume(out, phantom.voxel_size, labels)


def _slice_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def add_rician_noise(clean: Volume, sigma: float, seed: int, threads: int = 1) -> Volume:
    """|S/sqrt(2) + n1 + i (S/sqrt(2) + n2)| with n1, n2 ~ N(0, sigma).

    Each z-slice draws from its own stream derived from (seed, z), so the
    result does not depend on ``threads``.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return clean.with_data(clean.data)
    data = np.asarray(clean.data, dtype=np.float64)
    half = data / np.sqrt(2.0)
    out = np.empty_like(data)
    nz = data.shape[-1]

    def one(z):
        rng = _slice_rng(seed, z)
        shape = data.shape[:-1]
        n1 = rng.normal(0.0, sigma, shape)
        n2 = rng.normal(0.0, sigma, shape)
        out[..., z] = np.hypot(half[..., z] + n1, half[..., z] + n2)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(one, range(nz)))
    else:
        for z in range(nz):
            one(z)
    return clean.with_data(out)
