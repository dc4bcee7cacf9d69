"""Diffusion-encoding directions from antipodally symmetric electrostatic repulsion."""

import numpy as np


def electrostatic_energy(g: np.ndarray) -> float:
    """Coulomb energy of unit charges at +g_i and -g_i (self pairs excluded)."""
    g = np.asarray(g, dtype=np.float64)
    n = len(g)
    if n < 2:
        return 0.0
    iu = np.triu_indices(n, 1)
    diff = np.linalg.norm(g[:, None, :] - g[None, :, :], axis=-1)[iu]
    summ = np.linalg.norm(g[:, None, :] + g[None, :, :], axis=-1)[iu]
    return float(np.sum(1.0 / diff) + np.sum(1.0 / summ))


def _energy_gradient(g):
    d = g[:, None, :] - g[None, :, :]
    s = g[:, None, :] + g[None, :, :]
    rd = np.linalg.norm(d, axis=-1)
    rs = np.linalg.norm(s, axis=-1)
    np.fill_diagonal(rd, np.inf)
    np.fill_diagonal(rs, np.inf)
    # d/dg_i of 1/|g_i - g_j| and 1/|g_i + g_j|
    grad = -(d / rd[..., None] ** 3).sum(axis=1) - (s / rs[..., None] ** 3).sum(axis=1)
    return grad


def antipodal_min_angle(g: np.ndarray) -> float:
    """Smallest pairwise angle in degrees with g and -g identified."""
    g = np.asarray(g, dtype=np.float64)
    if len(g) < 2:
        return 180.0
    cos = np.abs(g @ g.T)
    iu = np.triu_indices(len(g), 1)
    return float(np.degrees(np.arccos(np.clip(cos[iu], -1.0, 1.0))).min())


def generate_directions(n: int, seed: int = 0, iterations: int = 2000, return_energies: bool = False):
    """Unit vectors spread over a hemisphere by electrostatic repulsion.

    Projected gradient descent on the sphere with a backtracking step: a
    step is only accepted if it lowers the symmetrized energy, so the
    recorded energy sequence is non-increasing. Vectors are returned with
    non-negative z (the energy is invariant to the sign flip).

    Parameters
    ----------
    n : int
        Number of directions (>= 1).
    seed : int
        Seed of the random initial configuration.
    iterations : int
        Number of accepted-or-rejected descent steps.
    return_energies : bool
        Also return the energy after every iteration (index 0 = initial).
    """
    if n < 1:
        raise ValueError("need at least one direction")
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(n, 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    energy = electrostatic_energy(g)
    energies = [energy]
    step = 0.1 / max(n, 1)
    for _ in range(iterations if n > 1 else 0):
        grad = _energy_gradient(g)
        tangent = grad - np.sum(grad * g, axis=1, keepdims=True) * g
        accepted = False
        for _ in range(30):
            trial = g - step * tangent
            trial /= np.linalg.norm(trial, axis=1, keepdims=True)
            e_trial = electrostatic_energy(trial)
            if e_trial <= energy:
                g, energy, accepted = trial, e_trial, True
                step *= 1.2
                break
            step *= 0.5
        energies.append(energy)
        if not accepted:
            break
    g = np.where(g[:, 2:3] < 0, -g, g)
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    if return_energies:
        return g, np.asarray(energies)
    return g
