"""Procedural lesion shapes, lesion parameters and insertion into WM."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from mbdenoise.phantom import Phantom
from mbdenoise.volume import Mask, Volume, load_volume, save_volume

log = logging.getLogger(__name__)

D_RANGE = (0.3, 1.35)  # 1e-3 mm^2/s, half-open
DT2_GRID = np.arange(-30, 31, 5)  # ms
BLUR_SIGMA = 0.7  # voxels
BLUR_TRUNCATE = 4.0  # in units of sigma
NORMALIZATION_FACTOR = 3.5
SHAPE_SIZE_BOUNDS = (4, 21)
PLACEMENT_RETRIES = 200
KERNEL_RADIUS = int(BLUR_TRUNCATE * BLUR_SIGMA + 0.5)


@dataclass(frozen=True)
class LesionParams:
    """Biexponential lesion parameters (diffusivities in 1e-3 mm^2/s, dT2 in ms)."""

    f: float
    D1: float
    D2: float
    dT2: float = 0.0
    shape_id: int = -1
    position: tuple = ()

    def __post_init__(self):
        if not 0.0 <= self.f <= 1.0:
            raise ValueError(f"f must lie in [0, 1], got {self.f}")
        for name in ("D1", "D2"):
            d = getattr(self, name)
            if not D_RANGE[0] <= d < D_RANGE[1]:
                raise ValueError(f"{name} must lie in [{D_RANGE[0]}, {D_RANGE[1]}), got {d}")
        if self.dT2 not in DT2_GRID:
            raise ValueError(f"dT2 must be a multiple of 5 ms in [-30, 30], got {self.dT2}")

    def diffusion(self) -> tuple:
        return (self.f, self.D1, self.D2, self.dT2)


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_lesion_params(seed=None) -> LesionParams:
    """f ~ U[0, 1], D1, D2 ~ U[0.3, 1.35), dT2 uniform on {-30, -25, ..., 30}."""
    rng = _as_rng(seed)
    f = rng.uniform(0.0, 1.0)
    d1, d2 = rng.uniform(D_RANGE[0], D_RANGE[1], 2)
    dt2 = float(rng.choice(DT2_GRID))
    return LesionParams(float(f), float(d1), float(d2), dt2)


@dataclass(frozen=True)
class LesionField:
    """Fuzzy lesion fraction plus, per voxel, the index of the owning lesion.

    ``support`` marks the binary lesion pixels (inside the WM placement
    mask); ``labels`` covers the whole blurred footprint of each lesion and
    is -1 elsewhere. Footprints of distinct lesions are disjoint.
    """

    fraction: Mask
    labels: np.ndarray
    support: np.ndarray
    params: tuple

    def __post_init__(self):
        if self.labels.shape != self.fraction.dims or self.support.shape != self.fraction.dims:
            raise ValueError("label/support maps must match the fraction grid")
        if np.any((self.fraction.values > 0) & (self.labels < 0)):
            raise ValueError("lesion fraction outside any lesion footprint")
        if self.labels.max(initial=-1) >= len(self.params):
            raise ValueError("label refers to a missing lesion")

    @property
    def count(self) -> int:
        return len(self.params)

    def parameter_maps(self) -> dict:
        """Per-voxel f, D1, D2, dT2 arrays (zeros outside lesions)."""
        table = np.array([p.diffusion() for p in self.params] + [(0.0, 0.0, 0.0, 0.0)])
        idx = np.where(self.labels >= 0, self.labels, len(self.params))
        return {name: table[idx, i] for i, name in enumerate(("f", "D1", "D2", "dT2"))}

    def with_params(self, params: LesionParams) -> "LesionField":
        """Same geometry, every lesion carrying the diffusion parameters of ``params``."""
        new = tuple(replace(p, f=params.f, D1=params.D1, D2=params.D2, dT2=params.dT2) for p in self.params)
        return LesionField(self.fraction, self.labels, self.support, new)

    def pure_lesion_mask(self, tol: float = 1e-6) -> np.ndarray:
        return self.fraction.values >= 1.0 - tol

    @classmethod
    def empty(cls, dims, voxel_size=(1.0, 1.0, 1.0)) -> "LesionField":
        return cls(Mask(np.zeros(dims), voxel_size), np.full(dims, -1), np.zeros(dims, bool), ())


def rasterize_ellipse(a: float, b: float, theta: float = 0.0, wobble=None) -> np.ndarray:
    """Lattice points inside an ellipse with semi-axes a, b rotated by theta.

    ``wobble`` is an optional list of (order, amplitude, phase) radial
    harmonics making an irregular star-shaped blob.
    """
    r = int(np.ceil(max(a, b) * 1.3)) + 1
    y, x = np.mgrid[-r : r + 1, -r : r + 1].astype(np.float64)
    c, s = np.cos(theta), np.sin(theta)
    xr = c * x + s * y
    yr = -s * x + c * y
    rho = np.sqrt((xr / a) ** 2 + (yr / b) ** 2)
    limit = np.ones_like(rho)
    if wobble:
        ang = np.arctan2(yr, xr)
        for order, amp, phase in wobble:
            limit = limit + amp * np.cos(order * ang + phase)
    mask = rho <= limit + 1e-12
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return mask[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]


def _largest_component(mask):
    lab, n = ndimage.label(mask, structure=np.ones((3, 3)))
    if n <= 1:
        return mask
    sizes = ndimage.sum(mask, lab, range(1, n + 1))
    keep = lab == (1 + int(np.argmax(sizes)))
    rows = np.flatnonzero(keep.any(axis=1))
    cols = np.flatnonzero(keep.any(axis=0))
    return keep[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]


def generate_lesion_shapes(n: int, size_range=(4, 12), elongation_range=(1.0, 3.0), seed: int = 0) -> list:
    """Connected binary 2D lesion masks: alternating round and elongated blobs.

    ``size_range`` bounds the longer bounding-box side in voxels and must lie
    within [4, 21]; ``elongation_range`` bounds the major/minor axis ratio of
    the elongated class (round shapes use ratios below 1.3).
    """
    lo, hi = size_range
    if not (SHAPE_SIZE_BOUNDS[0] <= lo <= hi <= SHAPE_SIZE_BOUNDS[1]):
        raise ValueError(f"size range must lie within {SHAPE_SIZE_BOUNDS}, got {size_range}")
    e_lo, e_hi = elongation_range
    if not 1.0 <= e_lo <= e_hi:
        raise ValueError(f"elongation range must satisfy 1 <= lo <= hi, got {elongation_range}")
    rng = np.random.default_rng(seed)
    shapes = []
    while len(shapes) < n:
        elongated = len(shapes) % 2 == 1
        size = rng.uniform(lo, hi + 1)
        ratio = rng.uniform(max(e_lo, 1.3) if elongated else 1.0, e_hi if elongated else 1.3)
        a = size / 2.0
        b = max(a / ratio, 0.8)
        wobble = [(k, rng.uniform(0, 0.12), rng.uniform(0, 2 * np.pi)) for k in (2, 3)]
        mask = _largest_component(rasterize_ellipse(a, b, rng.uniform(0, np.pi), wobble))
        if min(mask.shape) < 1 or max(mask.shape) < lo or max(mask.shape) > hi:
            continue
        shapes.append(mask)
    return shapes


def save_lesion_shapes(shapes, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(shapes):
        save_volume(Volume(np.asarray(s, dtype=np.float32)[:, :, None]), d / f"lesion_{i:04d}")


def load_lesion_shapes(directory) -> list:
    """Load precomputed 2D lesion masks (``lesion_*.f32raw`` with nz == 1).

    Values may be binary or normalized intensities (~1 inside the lesion);
    zero marks background.
    """
    d = Path(directory)
    shapes = []
    for header in sorted(d.glob("lesion_*.vhdr")):
        v = load_volume(header)
        if v.dims[2] != 1 or v.channels != 1:
            raise ValueError(f"{header}: lesion masks must be single-channel 2D")
        shapes.append(np.asarray(v.data[0, :, :, 0], dtype=np.float64))
    if not shapes:
        raise FileNotFoundError(f"no lesion_*.vhdr files in {d}")
    return shapes


PARAM_COLUMNS = ("f", "D1", "D2", "dT2", "shape_id", "x", "y", "z")


def save_lesion_field(field: LesionField, directory) -> None:
    """``fraction``, ``labels`` and ``support`` volumes plus ``params.tsv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    vs = field.fraction.voxel_size
    save_volume(field.fraction, d / "fraction")
    save_volume(Volume(field.labels.astype(np.float64), vs), d / "labels")
    save_volume(Volume(field.support.astype(np.float64), vs), d / "support")
    rows = ["\t".join(PARAM_COLUMNS)]
    for p in field.params:
        pos = tuple(p.position) + (-1,) * (3 - len(p.position))
        rows.append("\t".join(repr(float(v)) for v in (p.f, p.D1, p.D2, p.dT2)) + "\t" + "\t".join(str(int(v)) for v in (p.shape_id, *pos)))
    (d / "params.tsv").write_text("\n".join(rows) + "\n")


def load_lesion_field(directory) -> LesionField:
    d = Path(directory)
    fraction = load_volume(d / "fraction")
    labels = np.rint(load_volume(d / "labels").data[0]).astype(np.int64)
    support = load_volume(d / "support").data[0] > 0.5
    lines = (d / "params.tsv").read_text().splitlines()
    if not lines or tuple(lines[0].split("\t")) != PARAM_COLUMNS:
        raise ValueError(f"{d / 'params.tsv'}: unexpected header")
    params = []
    for line in lines[1:]:
        v = line.split("\t")
        params.append(LesionParams(float(v[0]), float(v[1]), float(v[2]), float(v[3]), int(v[4]), tuple(int(x) for x in v[5:8])))
    return LesionField(Mask(np.clip(fraction.data[0].astype(np.float64), 0.0, 1.0), fraction.voxel_size), labels, support, tuple(params))


def fuzzify(shape: np.ndarray) -> np.ndarray:
    """Blur (sigma 0.7, truncated at 4 sigma), scale by 3.5 / mean intensity, clip to [0, 1].

    Returns the fuzzy map on the shape grid padded by the kernel radius.
    """
    shape = np.asarray(shape, dtype=np.float64)
    support = shape > 0
    mean_intensity = shape[support].mean()
    padded = np.pad(shape, KERNEL_RADIUS)
    blurred = ndimage.gaussian_filter(padded, BLUR_SIGMA, truncate=BLUR_TRUNCATE, mode="constant")
    return np.clip(NORMALIZATION_FACTOR * blurred / mean_intensity, 0.0, 1.0)


def insert_lesions(
    phantom: Phantom,
    shapes,
    count_range=(4, 10),
    seed: int = 0,
    slices=None,
    params=None,
) -> LesionField:
    """Place fuzzy lesions inside the WM placement mask, slice by slice.

    For every selected z-slice a lesion count is drawn uniformly from
    ``count_range`` and that many shapes are drawn without replacement. Each
    shape is put at a uniformly random position with all its pixels inside
    WM and its blurred footprint clear of lesions already placed; after 200
    rejected draws the lesion is dropped (and a warning logged).

    Parameters
    ----------
    params : LesionParams or None
        Diffusion parameters for every lesion; sampled per lesion if None.
    """
    wm = phantom.wm_mask_binary.values > 0.5
    if not wm.any():
        raise ValueError("empty WM mask: nowhere to place lesions")
    lo, hi = (int(c) for c in count_range)
    if lo < 0 or hi < lo:
        raise ValueError(f"invalid count range {count_range}")
    if len(shapes) < lo:
        raise ValueError(f"shape source holds {len(shapes)} masks, need at least {lo}")
    nx, ny, nz = phantom.dims
    if slices is None:
        slices = [z for z in range(nz) if wm[:, :, z].any()]
    fraction = np.zeros(phantom.dims)
    labels = np.full(phantom.dims, -1, dtype=np.int64)
    support_map = np.zeros(phantom.dims, dtype=bool)
    records = []
    fuzzy = [fuzzify(s) for s in shapes]
    R = KERNEL_RADIUS
    requested = 0
    for z in slices:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(z)]))
        count = min(int(rng.integers(lo, hi + 1)), len(shapes))
        chosen = rng.choice(len(shapes), size=count, replace=False)
        wm_z = wm[:, :, z]
        occupied = labels[:, :, z] >= 0
        dropped = 0
        for sid in chosen:
            shape = np.asarray(shapes[sid]) > 0
            fz = fuzzy[sid]
            fh, fw = fz.shape
            if fh > nx or fw > ny:
                dropped += 1
                continue
            placed = False
            for _ in range(PLACEMENT_RETRIES):
                ox = int(rng.integers(0, nx - fh + 1))
                oy = int(rng.integers(0, ny - fw + 1))
                core = wm_z[ox + R : ox + R + shape.shape[0], oy + R : oy + R + shape.shape[1]]
                if not np.all(core[shape]):
                    continue
                foot = fz > 0
                if np.any(occupied[ox : ox + fh, oy : oy + fw][foot]):
                    continue
                placed = True
                break
            if not placed:
                dropped += 1
                continue
            idx = len(records)
            lp = params if params is not None else sample_lesion_params(rng)
            records.append(replace(lp, shape_id=int(sid), position=(ox + R, oy + R, int(z))))
            win = (slice(ox, ox + fh), slice(oy, oy + fw), z)
            fraction[win] = np.where(foot, fz, fraction[win])
            labels[win] = np.where(foot, idx, labels[win])
            sup = np.zeros_like(foot)
            sup[R : R + shape.shape[0], R : R + shape.shape[1]] = shape
            support_map[win] |= sup
            occupied = labels[:, :, z] >= 0
        if dropped:
            log.debug("slice %d: placed %d of %d lesions after %d retries each", z, count - dropped, count, PLACEMENT_RETRIES)
        requested += count
    if len(records) < requested:
        log.warning("placed %d of %d requested lesions over %d slices (WM too small for the rest)", len(records), requested, len(slices))
    return LesionField(Mask(fraction, phantom.voxel_size), labels, support_map, tuple(records))
