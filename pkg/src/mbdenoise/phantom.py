"""Fuzzy tissue maps, diffusion tensor field and tissue constants.

Diffusivities are kept in units of 1e-3 mm^2/s everywhere, so a
b-value in s/mm^2 multiplies ``DIFFUSIVITY_UNIT * D``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mbdenoise.volume import Mask, Volume, load_volume, save_volume

TISSUES = ("CSF", "GM", "WM")
DIFFUSIVITY_UNIT = 1e-3  # mm^2/s per internal unit
WM_PLACEMENT_THRESHOLD = 0.9
FRACTION_SUM_TOL = 1e-6
PSD_TOL = 1e-12

# Diffusivities (1e-3 mm^2/s) used by the procedural phantom.
WM_EIGENVALUES = (1.7, 0.3, 0.3)
GM_DIFFUSIVITY = 0.8
CSF_DIFFUSIVITY = 3.0

TENSOR_COMPONENTS = ("Dxx", "Dyy", "Dzz", "Dxy", "Dxz", "Dyz")


class PhantomError(ValueError):
    pass


@dataclass(frozen=True)
class Relaxation:
    rho: float
    T1: float
    T2: float


@dataclass(frozen=True)
class TissueParams:
    """Proton density (relative to CSF), T1 and T2 in ms for each tissue."""

    tissues: dict = field(
        default_factory=lambda: {
            "CSF": Relaxation(1.0, 2569.0, 329.0),
            "GM": Relaxation(0.86, 833.0, 83.0),
            "WM": Relaxation(0.77, 500.0, 70.0),
        }
    )

    def __post_init__(self):
        missing = set(TISSUES) - set(self.tissues)
        if missing:
            raise PhantomError(f"tissue parameters missing for {sorted(missing)}")
        for name, p in self.tissues.items():
            if min(p.rho, p.T1, p.T2) <= 0:
                raise PhantomError(f"{name}: rho, T1 and T2 must be positive")
            if p.rho > 1:
                raise PhantomError(f"{name}: rho is relative to CSF and cannot exceed 1")
        if self.tissues["CSF"].rho != 1.0:
            raise PhantomError("CSF proton density is the reference and must equal 1")

    def __getitem__(self, tissue: str) -> Relaxation:
        return self.tissues[tissue]

    def to_config(self) -> configparser.ConfigParser:
        cfg = configparser.ConfigParser()
        cfg.optionxform = str
        for name in TISSUES:
            p = self.tissues[name]
            cfg[name] = {"rho": repr(p.rho), "T1": repr(p.T1), "T2": repr(p.T2)}
        return cfg

    @classmethod
    def from_config(cls, cfg: configparser.ConfigParser) -> "TissueParams":
        tissues = {}
        for name in TISSUES:
            if name not in cfg:
                raise PhantomError(f"params file has no [{name}] section")
            sec = cfg[name]
            try:
                tissues[name] = Relaxation(float(sec["rho"]), float(sec["T1"]), float(sec["T2"]))
            except KeyError as exc:
                raise PhantomError(f"[{name}] lacks {exc}") from exc
        return cls(tissues)


def tensor_from_components(comp: np.ndarray) -> np.ndarray:
    """(6, ...) components -> (..., 3, 3) exactly symmetric matrices."""
    xx, yy, zz, xy, xz, yz = comp
    return np.stack(
        [np.stack([xx, xy, xz], -1), np.stack([xy, yy, yz], -1), np.stack([xz, yz, zz], -1)],
        axis=-2,
    )


def components_from_tensor(mat: np.ndarray) -> np.ndarray:
    return np.stack(
        [mat[..., 0, 0], mat[..., 1, 1], mat[..., 2, 2], mat[..., 0, 1], mat[..., 0, 2], mat[..., 1, 2]]
    )


@dataclass(frozen=True)
class Phantom:
    """Tissue fractions, tensor field (6 channels, 1e-3 mm^2/s) and constants."""

    fractions: dict
    tensor: Volume
    params: TissueParams = field(default_factory=TissueParams)

    def __post_init__(self):
        if set(self.fractions) != set(TISSUES):
            raise PhantomError(f"fractions needed for exactly {TISSUES}")
        dims = {m.dims for m in self.fractions.values()}
        if len(dims) != 1 or self.tensor.dims not in dims:
            raise PhantomError("fraction and tensor volumes must share dims")
        if self.tensor.channels != 6:
            raise PhantomError(f"tensor volume needs 6 channels, has {self.tensor.channels}")
        total = sum(m.values for m in self.fractions.values())
        if total.max() > 1 + FRACTION_SUM_TOL:
            raise PhantomError(f"tissue fractions sum to {total.max():.6g} > 1 at some voxel")
        eig = np.linalg.eigvalsh(self.tensor_matrix())
        scale = max(1.0, float(np.abs(eig).max())) if eig.size else 1.0
        # float32 storage of a singular tensor can dip slightly below 0
        tol = PSD_TOL + (1e-6 * scale if self.tensor.data.dtype == np.float32 else 0.0)
        if eig.size and eig.min() < -tol:
            raise PhantomError(f"tensor not positive semidefinite (eigenvalue {eig.min():.3g})")

    @property
    def dims(self) -> tuple:
        return self.tensor.dims

    @property
    def voxel_size(self) -> tuple:
        return self.tensor.voxel_size

    def fraction(self, tissue: str) -> np.ndarray:
        return self.fractions[tissue].values

    @property
    def wm_mask_binary(self) -> Mask:
        return self.fractions["WM"].binary(WM_PLACEMENT_THRESHOLD)

    def tensor_matrix(self) -> np.ndarray:
        return tensor_from_components(np.asarray(self.tensor.data, dtype=np.float64))


def _smoothstep(x):
    """C1 step from 0 (x <= -1) to 1 (x >= 1); exactly 0/1 outside the band."""
    t = np.clip(0.5 * (x + 1.0), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def generate_procedural_phantom(dims=(48, 48, 48), seed: int = 0, voxel_size=(1.0, 1.0, 1.0)) -> Phantom:
    """Smooth nested-region brain: CSF rim and ventricles, GM shell, WM interior.

    WM tensors are prolate (eigenvalues 1.7/0.3/0.3) with a principal direction
    that swirls around the z axis; GM and CSF are isotropic. Partial-volume
    voxels get the fraction-weighted mean tensor. Fractions sum to the
    (smooth) brain mask, i.e. to 1 inside the brain.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 32:
        raise PhantomError(f"procedural phantom needs dims >= 32 per axis, got {dims}")
    rng = np.random.default_rng(seed)
    nx, ny, nz = dims
    centre = np.array([(n - 1) / 2.0 for n in dims]) + rng.uniform(-0.5, 0.5, 3)
    radii = np.array([0.45 * n for n in dims]) * rng.uniform(0.95, 1.0, 3)
    gx, gy, gz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    u = (gx - centre[0]) / radii[0]
    v = (gy - centre[1]) / radii[1]
    w = (gz - centre[2]) / radii[2]
    r = np.sqrt(u * u + v * v + w * w)
    theta = np.arccos(np.clip(w / np.maximum(r, 1e-12), -1, 1))
    phi = np.arctan2(v, u)

    # low-order angular modulation of the boundaries ("folding")
    fold = np.zeros(dims)
    for _ in range(4):
        n_t, n_p = rng.integers(2, 6, 2)
        fold += rng.uniform(0.3, 1.0) * np.sin(n_t * theta + rng.uniform(0, 2 * np.pi)) * np.cos(
            n_p * phi + rng.uniform(0, 2 * np.pi)
        )
    fold /= 4.0

    width = 1.2 / radii.min()  # transition half-width, ~1 voxel
    brain = _smoothstep((1.0 - r * (1 + 0.02 * fold)) / width)
    outer_csf = _smoothstep((r - (0.92 + 0.015 * fold)) / width)
    beyond_gm = _smoothstep((r - (0.8 + 0.04 * fold)) / width)

    vent = np.zeros(dims)
    offset = rng.uniform(0.07, 0.09)
    for side in (-1.0, 1.0):
        c = np.array([side * offset, rng.uniform(-0.05, 0.05), rng.uniform(0.0, 0.1)])
        ax = np.array([0.05, 0.16, 0.12]) * rng.uniform(0.9, 1.1, 3)
        rv = np.sqrt(((u - c[0]) / ax[0]) ** 2 + ((v - c[1]) / ax[1]) ** 2 + ((w - c[2]) / ax[2]) ** 2)
        vent = np.maximum(vent, _smoothstep((1.0 - rv) / (width / ax.min())))

    csf = outer_csf
    gm = (1.0 - outer_csf) * beyond_gm
    wm_raw = (1.0 - outer_csf) * (1.0 - beyond_gm)
    csf = csf + wm_raw * vent
    wm = wm_raw * (1.0 - vent)
    csf, gm, wm = (np.clip(brain * f, 0.0, 1.0) for f in (csf, gm, wm))

    # principal WM direction: swirl about z plus a random smooth tilt
    swirl = np.stack([-v, u, np.zeros(dims)], axis=-1)
    tilt = rng.normal(size=3)
    tilt /= np.linalg.norm(tilt)
    grad = rng.normal(scale=0.5, size=(3, 3))
    pos = np.stack([u, v, w], axis=-1)
    direction = swirl + 0.6 * tilt + pos @ grad.T
    norm = np.linalg.norm(direction, axis=-1, keepdims=True)
    direction = direction / np.maximum(norm, 1e-12)
    l1, l2, _ = WM_EIGENVALUES
    eye = np.eye(3)
    d_wm = l2 * eye + (l1 - l2) * direction[..., :, None] * direction[..., None, :]
    total = csf + gm + wm
    with np.errstate(invalid="ignore", divide="ignore"):
        mix = np.where(
            total[..., None, None] > 1e-6,
            (wm[..., None, None] * d_wm + (gm * GM_DIFFUSIVITY + csf * CSF_DIFFUSIVITY)[..., None, None] * eye)
            / np.maximum(total, 1e-6)[..., None, None],
            0.0,
        )
    tensor = Volume(components_from_tensor(mix), voxel_size, TENSOR_COMPONENTS)
    fractions = {
        "CSF": Mask(csf, voxel_size, ("CSF",)),
        "GM": Mask(gm, voxel_size, ("GM",)),
        "WM": Mask(wm, voxel_size, ("WM",)),
    }
    return Phantom(fractions, tensor, TissueParams())


def save_phantom(ph: Phantom, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in TISSUES:
        save_volume(ph.fractions[name], d / name.lower())
    save_volume(ph.tensor, d / "tensor")
    with open(d / "params.cfg", "w") as fh:
        ph.params.to_config().write(fh)


def load_phantom(directory) -> Phantom:
    """Load ``csf/gm/wm/tensor`` volume pairs and ``params.cfg`` from a directory."""
    d = Path(directory)
    if not d.is_dir():
        raise PhantomError(f"{d} is not a directory")
    fractions = {}
    for name in TISSUES:
        vol = load_volume(d / name.lower())
        if vol.channels != 1:
            raise PhantomError(f"{name} fraction volume must have one channel")
        try:
            fractions[name] = Mask(vol.data, vol.voxel_size, vol.labels)
        except ValueError as exc:
            raise PhantomError(f"{name}: {exc}") from exc
    tensor = load_volume(d / "tensor")
    if tensor.channels != 6:
        raise PhantomError(f"tensor volume needs 6 channels, has {tensor.channels}")
    cfg_path = d / "params.cfg"
    if not cfg_path.exists():
        raise PhantomError(f"missing {cfg_path}")
    cfg = configparser.ConfigParser()
    cfg.optionxform = str
    cfg.read(cfg_path)
    return Phantom(fractions, tensor, TissueParams.from_config(cfg))
