"""Families of BSDEs indexed by a parameter ``s`` on the time grid.

Family arrays keep paths on axis 1 and the parameter on the axis just before
the components: ``U`` is ``(N + 1, P, S, d)`` and ``V`` is ``(N, P, m, S, d)``
with ``S = N + 1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bsde import backward_sweep
from .paths import PathEnsemble, TimeGrid
from .regression import Regressor

FamilyDriver = Callable[[int, int, np.ndarray, np.ndarray], np.ndarray]


@dataclass
class FamilyResult:
    U: np.ndarray
    V: np.ndarray
    s_times: np.ndarray
    implicit_failures: list

    def member(self, s_index: int) -> tuple[np.ndarray, np.ndarray]:
        return self.U[:, :, s_index], self.V[:, :, :, s_index]


@dataclass
class Diagonals:
    """Diagonal processes ``U_t^t``, ``dU_t^t`` and the reconstructed ``V_t^t``."""

    u: np.ndarray
    v: np.ndarray
    du: np.ndarray


def solve_family(
    terminals: np.ndarray,
    ensemble: PathEnsemble,
    regressor: Regressor,
    driver: FamilyDriver,
    scheme: str = "explicit",
) -> FamilyResult:
    """Solve every family member backward from ``T``.

    ``terminals`` has shape ``(P, S, d)``; ``driver(i, k, u, v)`` returns the
    generator of member ``k`` at node ``i`` for ``u`` of shape ``(P, d)`` and
    ``v`` of shape ``(P, m, d)``.
    """
    terminals = np.asarray(terminals, dtype=float)
    S = terminals.shape[1]

    def batched(i, u, v):
        return np.stack([driver(i, k, u[:, k], v[:, :, k]) for k in range(S)], axis=1)

    res = backward_sweep(terminals, ensemble, regressor, batched, scheme=scheme)
    return FamilyResult(res.Y, res.Z, ensemble.grid.times.copy(), res.implicit_failures)


def evaluate_terminals(fn: Callable[[float, np.ndarray], np.ndarray], ensemble: PathEnsemble, dim: int) -> np.ndarray:
    """Stack ``fn(s, X)`` over the parameter grid into ``(P, S, dim)``."""
    out = np.empty((ensemble.n_paths, ensemble.grid.steps + 1, dim))
    for k, s in enumerate(ensemble.grid.times):
        out[:, k] = np.asarray(fn(float(s), ensemble.X), dtype=float).reshape(ensemble.n_paths, dim)
    return out


def reconstruct_family_z(V: np.ndarray, dV: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """``V^T - sum_{j >= k} dV^{s_j} dt_j`` for every parameter node ``k``.

    This is the family obtained by integrating the parameter derivative back
    from the top member.  Output shape matches ``V``.
    """
    weighted = dV[:, :, :, :-1] * grid.dt[None, None, None, :, None]
    tail = np.cumsum(weighted[:, :, :, ::-1], axis=3)[:, :, :, ::-1]
    out = np.empty_like(V)
    out[:, :, :, :-1] = V[:, :, :, -1:] - tail
    out[:, :, :, -1] = V[:, :, :, -1]
    return out


def diagonal(U: np.ndarray, V: np.ndarray, dU: np.ndarray, dV: np.ndarray, grid: TimeGrid) -> Diagonals:
    """Diagonals with ``V_i^i = V_i^{s_N} - sum_{j=i}^{N-1} dV_i^{s_j} dt_j``."""
    N = grid.steps
    idx = np.arange(N + 1)
    u = U[idx, :, idx]
    du = dU[idx, :, idx]
    recon = reconstruct_family_z(V, dV, grid)
    v = recon[idx[:-1], :, :, idx[:-1]]
    return Diagonals(u, v, du)


def directional_derivative(g: Callable, t, s, x, u, v, y, z, du, dv, step: float = 1e-5) -> np.ndarray:
    """Central difference of ``g`` along ``(1, du, dv)`` in ``(s, u, v)``."""
    plus = np.asarray(g(t, s + step, x, u + step * du, v + step * dv, y, z), dtype=float)
    minus = np.asarray(g(t, s - step, x, u - step * du, v - step * dv, y, z), dtype=float)
    return (plus - minus) / (2.0 * step)


@dataclass
class GradCheck:
    max_abs: float
    max_rel: float
    passed: bool


def check_grad_consistency(
    g: Callable,
    grad_g: Callable,
    dims: tuple[int, int, int, int],
    horizon: float,
    n_samples: int = 256,
    seed: int = 0,
    step: float = 1e-5,
    tol: float = 1e-5,
    scale: float = 1.0,
) -> GradCheck:
    """Compare a user-supplied ``grad_g`` with finite differences at random points.

    ``dims`` is ``(n, m, d1, d2)``.  ``g(t, s, x, u, v, y, z)`` and
    ``grad_g(t, s, x, du, dv, u, v, y, z)`` follow the system conventions.
    """
    n, m, d1, d2 = dims
    rng = np.random.default_rng(seed)
    worst_abs = worst_rel = 0.0
    for _ in range(8):
        t = float(rng.uniform(0.0, horizon))
        s = float(rng.uniform(0.0, horizon))
        P = n_samples // 8
        x = rng.normal(scale=scale, size=(P, n))
        u = rng.normal(scale=scale, size=(P, d2))
        v = rng.normal(scale=scale, size=(P, m, d2))
        y = rng.normal(scale=scale, size=(P, d1))
        z = rng.normal(scale=scale, size=(P, m, d1))
        du = rng.normal(scale=scale, size=(P, d2))
        dv = rng.normal(scale=scale, size=(P, m, d2))
        fd = directional_derivative(g, t, s, x, u, v, y, z, du, dv, step)
        exact = np.asarray(grad_g(t, s, x, du, dv, u, v, y, z), dtype=float)
        err = np.abs(fd - exact)
        worst_abs = max(worst_abs, float(err.max()))
        worst_rel = max(worst_rel, float((err / (1.0 + np.abs(exact))).max()))
    return GradCheck(worst_abs, worst_rel, worst_rel <= tol)
