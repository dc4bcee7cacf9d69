"""Marchenko-Pastur PCA denoising over sliding cubic windows.

Each window of (2r+1)^3 voxels gives an M x N matrix (M voxels, N
channels). Eigencomponents of its covariance that are consistent with the
Marchenko-Pastur law for pure noise are zeroed, and the overlapping
reconstructions are averaged uniformly.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from mbdenoise.volume import Volume

DEGENERATE_TOL = 1e-12


def mp_signal_count(eigenvalues: np.ndarray, m: int) -> np.ndarray:
    """Number of signal components per window.

    Parameters
    ----------
    eigenvalues : ndarray, shape (K, N)
        Covariance eigenvalues of K windows, ascending.
    m : int
        Voxels per window.

    Returns
    -------
    ndarray of int, shape (K,)
        The smallest p such that the N - p trailing eigenvalues, with noise
        variance estimated as their mean, all lie below the upper MP edge
        sigma^2 (1 + sqrt((N - p) / m))^2.
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    k, n = lam.shape
    p = np.full(k, n - 1)
    undecided = np.ones(k, dtype=bool)
    cums = np.cumsum(lam, axis=1)
    for cand in range(n):
        nt = n - cand
        sigma2 = cums[:, nt - 1] / nt
        ok = lam[:, nt - 1] <= sigma2 * (1.0 + np.sqrt(nt / m)) ** 2
        take = undecided & ok
        p[take] = cand
        undecided &= ~take
        if not undecided.any():
            break
    return p


def denoise_windows(x: np.ndarray, return_sigma: bool = False):
    """Denoise a batch of window matrices.

    Parameters
    ----------
    x : ndarray, shape (K, M, N)
    return_sigma : bool
        Also return the per-window noise std estimate.

    Returns
    -------
    ndarray, shape (K, M, N)
        Reconstruction from the signal components plus the channel means.
        Windows with (numerically) constant data are returned unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    k, m, n = x.shape
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    cov = np.matmul(xc.transpose(0, 2, 1), xc) / m
    lam, vec = np.linalg.eigh(cov)
    p = mp_signal_count(lam, m)
    keep = np.arange(n)[None, :] >= (n - p)[:, None]
    vs = vec * keep[:, None, :]
    out = np.matmul(xc, np.matmul(vs, vec.transpose(0, 2, 1))) + mean
    scale = np.maximum(np.abs(lam).max(axis=1), np.abs(mean).max(axis=(1, 2)) ** 2)
    degenerate = lam.max(axis=1) <= DEGENERATE_TOL * np.maximum(scale, 1.0)
    out[degenerate] = x[degenerate]
    if return_sigma:
        nt = n - p
        sigma2 = np.array([lam[i, : nt[i]].mean() for i in range(k)])
        return out, np.sqrt(np.maximum(sigma2, 0.0))
    return out


def _coverage(n: int, w: int) -> np.ndarray:
    c = np.zeros(n)
    for start in range(n - w + 1):
        c[start : start + w] += 1
    return c


def mppca_denoise(dwi: Volume, patch_radius: int = 2) -> Volume:
    """Denoise a multi-channel volume with sliding-window MP-PCA.

    Parameters
    ----------
    dwi : Volume
        At least 3 channels (e.g. one per b-value); every spatial dim must
        hold a full window.
    patch_radius : int
        Window edge is ``2 * patch_radius + 1``.

    Returns
    -------
    Volume
        Same shape and labels. Every voxel is the mean of the
        reconstructions of all windows that lie fully inside the volume and
        contain it.
    """
    if patch_radius < 1:
        raise ValueError("patch_radius must be >= 1")
    if dwi.channels < 3:
        raise ValueError(f"MPPCA needs at least 3 channels, got {dwi.channels}")
    w = 2 * patch_radius + 1
    if min(dwi.dims) < w:
        raise ValueError(f"volume {dwi.dims} smaller than the {w}^3 window")
    arr = np.moveaxis(np.asarray(dwi.data, dtype=np.float64), 0, -1)
    nx, ny, nz, n = arr.shape
    windows = sliding_window_view(arr, (w, w, w), axis=(0, 1, 2))
    wy, wz = ny - w + 1, nz - w + 1
    acc = np.zeros_like(arr)
    for i in range(nx - w + 1):
        # (wy, wz, N, w, w, w) -> (wy*wz, w^3, N)
        block = windows[i].transpose(0, 1, 3, 4, 5, 2).reshape(wy * wz, w**3, n)
        den = denoise_windows(block).reshape(wy, wz, w, w, w, n)
        for a in range(w):
            for b in range(w):
                for c in range(w):
                    acc[i + a, b : b + wy, c : c + wz] += den[:, :, a, b, c]
    count = _coverage(nx, w)[:, None, None] * _coverage(ny, w)[None, :, None] * _coverage(nz, w)[None, None, :]
    out = acc / count[..., None]
    return dwi.with_data(np.moveaxis(out, -1, 0))
