"""Two-point algebraic extrapolation of a monoexponential decay."""

from __future__ import annotations

import numpy as np

from mbdenoise.volume import Mask, Volume


def alge_extrapolate(s1: Volume, s2: Volume, b1: float, b2: float, b_target: float, return_defects: bool = False):
    """Extrapolate the signal to ``b_target`` from images at ``b1`` and ``b2``.

    Per voxel, D = (log S1 - log S2) / (b2 - b1) and the prediction is
    S1 * exp(-(b_target - b1) * D).

    Parameters
    ----------
    s1, s2 : Volume
        Single-channel images acquired at ``b1`` and ``b2``.
    b1, b2, b_target : float
        b-values in s/mm^2; ``b1 != b2``.
    return_defects : bool
        Also return the defect mask.

    Returns
    -------
    Volume, or (Volume, Mask)
        Voxels where either input is nonpositive cannot be fitted; they are
        set to 0 and flagged in the defect mask.
    """
    if b1 == b2:
        raise ValueError("ALGe needs two distinct b-values")
    if s1.channels != 1 or s2.channels != 1:
        raise ValueError("ALGe takes single-channel volumes")
    if s1.dims != s2.dims:
        raise ValueError(f"dims differ: {s1.dims} vs {s2.dims}")
    a = np.asarray(s1.data[0], dtype=np.float64)
    c = np.asarray(s2.data[0], dtype=np.float64)
    defect = (a <= 0) | (c <= 0)
    if b_target == b1:
        out = np.where(defect, 0.0, a)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            la = np.log(np.where(defect, 1.0, a))
            lc = np.log(np.where(defect, 1.0, c))
            d = (la - lc) / (b2 - b1)
            out = np.exp(la - (b_target - b1) * d)
        defect = defect | ~np.isfinite(out)
        out = np.where(defect, 0.0, out)
    vol = Volume(out, s1.voxel_size, (f"b={b_target:g}",))
    if return_defects:
        return vol, Mask(defect.astype(np.float64), s1.voxel_size)
    return vol
