"""Type-I backward stochastic Volterra equations solved through the coupled system.

The equation ``Y_t^s = xi(s, X) + int_t^T f(r, s, X, Y_r^s, Z_r^s, Y_r^r, Z_r^r) dr
- int_t^T Z_r^s dX_r`` is mapped onto the system with

* ``h = f(t, t, x, y, z, u, v) - du`` for the diagonal equation,
* ``g = f(t, s, x, u, v, y, z)`` for the family (own slots first),
* ``grad_g = grad_f`` for the parameter derivative.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .constants import KAPPA_BSVIE, Certificate, LipschitzConstants
from .family import Diagonals
from .paths import PathEnsemble
from .regression import Regressor
from .system import PicardResult, SystemSpec, certify_system, picard_solve


class CertificationWarning(UserWarning):
    pass


@dataclass
class BsvieSpec:
    """Generator ``f(t, s, x, y, z, u, v)`` reads its own pair ``(y, z)`` and the
    diagonal pair ``(u, v)``.  ``grad_f(t, s, x, du, dv, y, z, u, v)`` is the
    total ``s``-derivative along ``(1, du, dv)`` in ``(s, y, z)``.
    """

    f: Callable
    grad_f: Callable
    xi: Callable
    d_xi: Callable
    d: int = 1
    lipschitz: LipschitzConstants = field(default_factory=LipschitzConstants)
    mode: str = "lq"
    name: str = ""


def build_system(spec: BsvieSpec, horizon: float) -> SystemSpec:
    f, grad_f = spec.f, spec.grad_f
    T = float(horizon)

    def h(t, x, y, z, u, v, du):
        return np.asarray(f(t, t, x, y, z, u, v), dtype=float) - du

    def g(t, s, x, u, v, y, z):
        return f(t, s, x, u, v, y, z)

    def grad_g(t, s, x, du, dv, u, v, y, z):
        return grad_f(t, s, x, du, dv, u, v, y, z)

    lip = replace(spec.lipschitz, du=max(spec.lipschitz.du, 1.0))
    return SystemSpec(
        xi=lambda X: spec.xi(T, X),
        eta=spec.xi,
        d_eta=spec.d_xi,
        h=h,
        g=g,
        grad_g=grad_g,
        d1=spec.d,
        d2=spec.d,
        lipschitz=lip,
        mode=spec.mode,
        name=spec.name,
    )


@dataclass
class BsvieSolution:
    picard: PicardResult
    certificate: Certificate | None

    @property
    def converged(self) -> bool:
        return self.picard.converged

    @property
    def Y(self) -> np.ndarray:
        """Family values ``(N + 1, P, S, d)``."""
        return self.picard.iterate.U

    @property
    def Z(self) -> np.ndarray:
        return self.picard.iterate.V

    @property
    def dY(self) -> np.ndarray:
        return self.picard.iterate.dU

    @property
    def dZ(self) -> np.ndarray:
        return self.picard.iterate.dV

    @property
    def diag(self) -> Diagonals:
        return self.picard.iterate.diag

    @property
    def diagonal_process(self) -> tuple[np.ndarray, np.ndarray]:
        """Solution of the diagonal equation of the system."""
        return self.picard.iterate.Y, self.picard.iterate.Z

    def diagonal_gap(self) -> tuple[float, float]:
        """Max gaps between the family diagonal and the diagonal equation."""
        it = self.picard.iterate
        return float(np.max(np.abs(self.diag.u - it.Y))), float(np.max(np.abs(self.diag.v - it.Z)))


def solve_bsvie(
    spec: BsvieSpec,
    ensemble: PathEnsemble,
    regressor: Regressor,
    c: float = 0.0,
    tol: float = 1e-6,
    max_iter: int = 50,
    scheme: str = "explicit",
    variant: str = "frozen",
    certify: bool = True,
    kappa: float = KAPPA_BSVIE,
    eps=None,
    gamma: float = 0.5,
    radius_sq: float | None = None,
) -> BsvieSolution:
    """Solve the BSVIE; a failed certification warns but does not stop the solve."""
    system = build_system(spec, ensemble.grid.horizon)
    cert = None
    if certify:
        cert = certify_system(system, ensemble, kappa, eps, gamma, radius_sq, None)
        if not cert.certified:
            warnings.warn("small-data conditions are not certified for this BSVIE", CertificationWarning, stacklevel=2)
    result = picard_solve(system, ensemble, regressor, c, tol, max_iter, scheme, variant)
    return BsvieSolution(result, cert)


@dataclass
class FlowReport:
    rms: float
    max_pair_rms: float
    max_abs: float
    pairs: int


def flow_increments(
    diag: Diagonals, spec: BsvieSpec, ensemble: PathEnsemble, drop_derivative: bool = False
) -> np.ndarray:
    """Per-step terms ``dt (f(..diag..) - dY_r^r) - (Z_r^r)^T dB``, shape ``(N, P, d)``."""
    grid = ensemble.grid
    out = np.empty((grid.steps,) + diag.u.shape[1:])
    for i in range(grid.steps):
        t = grid.times[i]
        x = ensemble.X[:, i, :]
        y, z = diag.u[i], diag.v[i]
        drift = np.asarray(spec.f(t, t, x, y, z, y, z), dtype=float)
        if not drop_derivative:
            drift = drift - diag.du[i]
        mart = np.einsum("pmd,pm->pd", z, ensemble.increment(i))
        out[i] = grid.dt[i] * drift - mart
    return out


def flow_residual(
    diag: Diagonals,
    spec: BsvieSpec,
    ensemble: PathEnsemble,
    drop_derivative: bool = False,
    pairs: list | None = None,
) -> FlowReport:
    """Residual of the flow identity linking ``Y_a^a`` and ``Y_b^b`` for node pairs ``a < b``.

    ``drop_derivative`` removes the ``dY_r^r`` term; the identity should then
    break visibly on parameter-dependent data.
    """
    inc = flow_increments(diag, spec, ensemble, drop_derivative)
    N = ensemble.grid.steps
    cum = np.concatenate([np.zeros((1,) + inc.shape[1:]), np.cumsum(inc, axis=0)])
    W = diag.u + cum
    if pairs is None:
        pairs = [(a, b) for a in range(N + 1) for b in range(a + 1, N + 1)]
    if not pairs:
        return FlowReport(0.0, 0.0, 0.0, 0)
    sq_total = 0.0
    worst_pair = worst_abs = 0.0
    for a, b in pairs:
        if not 0 <= a < b <= N:
            raise ValueError(f"invalid node pair ({a}, {b})")
        r = np.linalg.norm(W[a] - W[b], axis=-1)
        ms = float(ensemble.mean(r**2))
        sq_total += ms
        worst_pair = max(worst_pair, math.sqrt(ms))
        worst_abs = max(worst_abs, float(r.max()))
    return FlowReport(math.sqrt(sq_total / len(pairs)), worst_pair, worst_abs, len(pairs))
