"""Weighted norms, BMO estimates and energy inequalities on discrete fields.

All helpers accept squared magnitudes shaped ``(nodes, P, *extra)``.  Extra
axes (a family parameter, say) are reduced by a supremum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .family import reconstruct_family_z
from .paths import TimeGrid
from .regression import Regressor


def sq_process(Y: np.ndarray) -> np.ndarray:
    """``(nodes, P, d) -> (nodes, P)``."""
    return np.sum(Y**2, axis=-1)


def sq_density(Z: np.ndarray) -> np.ndarray:
    """``(N, P, m, d) -> (N, P)``."""
    return np.sum(Z**2, axis=(2, 3))


def sq_family(U: np.ndarray) -> np.ndarray:
    """``(nodes, P, S, d) -> (nodes, P, S)``."""
    return np.sum(U**2, axis=-1)


def sq_family_density(V: np.ndarray) -> np.ndarray:
    """``(N, P, m, S, d) -> (N, P, S)``."""
    return np.sum(V**2, axis=(2, 4))


def _expand(vec: np.ndarray, ndim: int) -> np.ndarray:
    return vec.reshape((-1,) + (1,) * (ndim - 1))


def sup_norm(sq: np.ndarray, grid: TimeGrid, c: float = 0.0) -> float:
    """``max e^{c t / 2} |Y_t|`` over nodes and paths."""
    w = _expand(np.exp(c * grid.times[: sq.shape[0]]), sq.ndim)
    return float(np.sqrt(np.max(w * sq, initial=0.0)))


def weighted_increments(sq: np.ndarray, grid: TimeGrid, c: float) -> np.ndarray:
    n = sq.shape[0]
    w = np.exp(c * grid.times[:n]) * grid.dt[:n]
    return _expand(w, sq.ndim) * sq


def h2_norm(sq: np.ndarray, grid: TimeGrid, c: float = 0.0, weights: np.ndarray | None = None) -> float:
    """``sqrt(E int e^{cr} |Z_r|^2 dr)``, supremum over extra axes."""
    total = weighted_increments(sq, grid, c).sum(axis=0)
    if weights is None:
        weights = np.full(total.shape[0], 1.0 / total.shape[0])
    return float(np.sqrt(np.max(np.tensordot(weights, total, axes=(0, 0)), initial=0.0)))


def tail_integrals(sq: np.ndarray, grid: TimeGrid, c: float) -> np.ndarray:
    """``sum_{j >= i} e^{c t_j} sq_j dt_j`` for every node ``i``."""
    inc = weighted_increments(sq, grid, c)
    return np.cumsum(inc[::-1], axis=0)[::-1]


def bmo_sq(sq: np.ndarray, grid: TimeGrid, regressor: Regressor, c: float = 0.0) -> float:
    """Squared BMO estimate: ``max_i max_paths E_i[int_{t_i}^T e^{cr}|Z_r|^2 dr]``."""
    tails = tail_integrals(sq, grid, c)
    best = 0.0
    for i in range(tails.shape[0]):
        ce = regressor.condexp(tails[i], i)
        best = max(best, float(np.max(ce, initial=0.0)))
    return best


def bmo_norm(sq: np.ndarray, grid: TimeGrid, regressor: Regressor, c: float = 0.0) -> float:
    return math.sqrt(bmo_sq(sq, grid, regressor, c))


@dataclass
class EnergyCheck:
    p: int
    lhs: float
    rhs: float
    passed: bool


def energy_check(Z: np.ndarray, grid: TimeGrid, regressor: Regressor, c: float = 0.0, p: int = 1) -> EnergyCheck:
    """``E[(int e^{cr}|Z|^2 dr)^p] <= p! * ||Z||_BMO^{2p}`` with relative slack ``1e-6``."""
    if int(p) != p or p < 1:
        raise ValueError(f"p must be a positive integer, got {p}")
    sq = sq_density(Z)
    total = weighted_increments(sq, grid, c).sum(axis=0)
    lhs = float(regressor.ensemble.mean(total**p))
    rhs = math.factorial(p) * bmo_sq(sq, grid, regressor, c) ** p
    return EnergyCheck(p, lhs, rhs, lhs <= rhs * (1.0 + 1e-6))


@dataclass
class DiagonalEnergyCheck:
    lhs: np.ndarray
    rhs: np.ndarray
    passed: bool

    @property
    def worst_gap(self) -> float:
        return float(np.max(self.lhs - self.rhs))


def diagonal_energy_check(
    V: np.ndarray,
    dV: np.ndarray,
    grid: TimeGrid,
    c: float = 0.0,
    eps: float = 1.0,
    start: int = 0,
    slack: float = 1e-9,
) -> DiagonalEnergyCheck:
    """Pathwise diagonal energy inequality from node ``start``.

    The family is the one rebuilt from the top member and its parameter
    derivative, so between parameter nodes it moves linearly with slope
    ``dV``; the parameter integral of ``|W|^2`` is evaluated exactly on each
    linear piece.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    N = grid.steps
    fam = reconstruct_family_z(V, dV, grid)
    P = V.shape[1]
    lhs = np.zeros(P)
    rhs = np.zeros(P)
    dts = grid.dt
    for u in range(start, N):
        weight = math.exp(c * grid.times[u]) * dts[u]
        diag = fam[u, :, :, u]
        lhs += weight * np.sum(diag**2, axis=(1, 2))
        acc = np.sum(fam[u, :, :, start] ** 2, axis=(1, 2))
        for k in range(start, u):
            w = fam[u, :, :, k]
            d = dV[u, :, :, k]
            h = dts[k]
            w2 = np.sum(w**2, axis=(1, 2))
            wd = np.sum(w * d, axis=(1, 2))
            d2 = np.sum(d**2, axis=(1, 2))
            acc += eps * h * (w2 + wd * h + d2 * h * h / 3.0) + h * d2 / eps
        rhs += weight * acc
    passed = bool(np.all(lhs <= rhs + slack * (1.0 + np.abs(rhs))))
    return DiagonalEnergyCheck(lhs, rhs, passed)
