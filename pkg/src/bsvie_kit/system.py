"""The coupled system: a BSDE for ``Y``, a family ``U^s`` and its ``s``-derivative.

Discrete equations on the grid (left-point quadrature, explicit scheme)::

    U^s_i  = E_i U^s_{i+1}  + dt_i g(t_i, s, X_i, E_i U^s_{i+1}, V^s_i, Y_i, Z_i)
    dU^s_i = E_i dU^s_{i+1} + dt_i grad_g(t_i, s, X_i, E_i dU^s_{i+1}, dV^s_i, U^s_i, V^s_i, Y_i, Z_i)
    Y_i    = E_i Y_{i+1}    + dt_i h(t_i, X_i, E_i Y_{i+1}, Z_i, U^{t_i}_i, V^{t_i}_i, dU^{t_i}_i)

with ``V^{t_i}_i`` rebuilt from ``dV`` (see :func:`bsvie_kit.family.diagonal`).
The Picard map solves the three sweeps with the coupling slots (``Y, Z`` in
the family generators and the diagonals in ``h``) frozen at the input iterate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from . import norms
from .bsde import backward_sweep
from .constants import (
    KAPPA_SYSTEM,
    Certificate,
    LipschitzConstants,
    assemble_I0,
    certify,
    compute_c_eps,
    compute_radius_bound,
    default_eps,
    estimate_data_norms,
    PROOF_RADIUS_FACTOR,
)
from .family import Diagonals, diagonal, evaluate_terminals, solve_family
from .paths import PathEnsemble
from .regression import Regressor

VARIANTS = ("frozen", "sequential")


@dataclass
class SystemSpec:
    """Data of the system.

    Shapes for ``P`` paths: ``x`` is ``(P, n)``, ``y`` is ``(P, d1)``, ``z`` is
    ``(P, m, d1)``, ``u`` and ``du`` are ``(P, d2)``, ``v`` and ``dv`` are
    ``(P, m, d2)``.  Density arguments are the aggregates ``sigma^T Z``.
    ``xi`` and ``eta`` receive whole paths ``(P, N + 1, n)``.
    """

    xi: Callable
    eta: Callable
    d_eta: Callable
    h: Callable
    g: Callable
    grad_g: Callable
    d1: int
    d2: int
    lipschitz: LipschitzConstants = field(default_factory=LipschitzConstants)
    mode: str = "lq"
    name: str = ""


@dataclass
class SystemIterate:
    Y: np.ndarray
    Z: np.ndarray
    U: np.ndarray
    V: np.ndarray
    dU: np.ndarray
    dV: np.ndarray
    grid: object = None

    @classmethod
    def zeros(cls, ensemble: PathEnsemble, d1: int, d2: int) -> "SystemIterate":
        N, P, m = ensemble.grid.steps, ensemble.n_paths, ensemble.noise_dim
        S = N + 1
        return cls(
            np.zeros((N + 1, P, d1)),
            np.zeros((N, P, m, d1)),
            np.zeros((N + 1, P, S, d2)),
            np.zeros((N, P, m, S, d2)),
            np.zeros((N + 1, P, S, d2)),
            np.zeros((N, P, m, S, d2)),
            ensemble.grid,
        )

    @cached_property
    def diag(self) -> Diagonals:
        return diagonal(self.U, self.V, self.dU, self.dV, self.grid)

    def __sub__(self, other: "SystemIterate") -> "SystemIterate":
        return SystemIterate(
            self.Y - other.Y,
            self.Z - other.Z,
            self.U - other.U,
            self.V - other.V,
            self.dU - other.dU,
            self.dV - other.dV,
            self.grid,
        )

    def perturbed(self, scale: float, seed: int = 0) -> "SystemIterate":
        rng = np.random.default_rng(seed)
        fields = [a + scale * rng.standard_normal(a.shape) for a in (self.Y, self.Z, self.U, self.V, self.dU, self.dV)]
        return SystemIterate(*fields, self.grid)


def iterate_norms(it: SystemIterate, regressor: Regressor, c: float = 0.0) -> dict:
    """Component norms: supremum norms for values, BMO norms for densities."""
    grid = regressor.ensemble.grid
    return {
        "y": norms.sup_norm(norms.sq_process(it.Y), grid, c),
        "z": norms.bmo_norm(norms.sq_density(it.Z), grid, regressor, c),
        "u": norms.sup_norm(norms.sq_family(it.U), grid, c),
        "v": norms.bmo_norm(norms.sq_family_density(it.V), grid, regressor, c),
        "du": norms.sup_norm(norms.sq_family(it.dU), grid, c),
        "dv": norms.bmo_norm(norms.sq_family_density(it.dV), grid, regressor, c),
    }


def total_norm(components: dict) -> float:
    return math.sqrt(sum(v * v for v in components.values()))


def apply_map(
    it: SystemIterate,
    spec: SystemSpec,
    ensemble: PathEnsemble,
    regressor: Regressor,
    scheme: str = "explicit",
    variant: str = "frozen",
) -> SystemIterate:
    """One application of the Picard map."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    grid = ensemble.grid
    times = grid.times
    X = ensemble.X

    def g_driver(i, k, u, v):
        return spec.g(times[i], times[k], X[:, i, :], u, v, it.Y[i], it.Z[i])

    fam = solve_family(evaluate_terminals(spec.eta, ensemble, spec.d2), ensemble, regressor, g_driver, scheme)

    def grad_driver(i, k, du, dv):
        return spec.grad_g(times[i], times[k], X[:, i, :], du, dv, fam.U[i, :, k], fam.V[i, :, :, k], it.Y[i], it.Z[i])

    dfam = solve_family(evaluate_terminals(spec.d_eta, ensemble, spec.d2), ensemble, regressor, grad_driver, scheme)

    diag = it.diag if variant == "frozen" else diagonal(fam.U, fam.V, dfam.U, dfam.V, grid)

    def h_driver(i, y, z):
        return spec.h(times[i], X[:, i, :], y, z, diag.u[i], diag.v[i], diag.du[i])

    terminal = np.asarray(spec.xi(X), dtype=float).reshape(ensemble.n_paths, spec.d1)
    ys = backward_sweep(terminal, ensemble, regressor, h_driver, scheme=scheme)
    return SystemIterate(ys.Y, ys.Z, fam.U, fam.V, dfam.U, dfam.V, grid)


@dataclass
class TraceRow:
    iteration: int
    diff: float
    ratio: float
    diff_components: dict
    norms: dict


@dataclass
class PicardResult:
    iterate: SystemIterate
    converged: bool
    iterations: int
    trace: list

    @property
    def diag(self) -> Diagonals:
        return self.iterate.diag

    def ratios(self) -> list:
        return [row.ratio for row in self.trace[1:]]


def picard_solve(
    spec: SystemSpec,
    ensemble: PathEnsemble,
    regressor: Regressor,
    c: float = 0.0,
    tol: float = 1e-6,
    max_iter: int = 50,
    scheme: str = "explicit",
    variant: str = "frozen",
    init: SystemIterate | None = None,
) -> PicardResult:
    """Iterate the Picard map from ``init`` (zero by default).

    Stops once the weighted norm of successive differences drops below
    ``tol``.  Hitting ``max_iter`` returns ``converged=False``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    current = init if init is not None else SystemIterate.zeros(ensemble, spec.d1, spec.d2)
    if current.grid is None:
        current.grid = ensemble.grid
    trace = []
    converged = False
    prev = math.nan
    k = 0
    for k in range(1, max_iter + 1):
        new = apply_map(current, spec, ensemble, regressor, scheme, variant)
        comps = iterate_norms(new - current, regressor, c)
        diff = total_norm(comps)
        ratio = diff / prev if prev > 0 else math.nan
        trace.append(TraceRow(k, diff, ratio, comps, iterate_norms(new, regressor, c)))
        prev = diff
        current = new
        if diff < tol:
            converged = True
            break
    return PicardResult(current, converged, k, trace)


@dataclass
class EquationResidual:
    projected_max: float
    projected_rms: float
    pathwise_rms: float


@dataclass
class ResidualReport:
    y: EquationResidual
    u: EquationResidual
    du: EquationResidual

    @property
    def worst_projected(self) -> float:
        return max(self.y.projected_max, self.u.projected_max, self.du.projected_max)

    @property
    def worst_projected_rms(self) -> float:
        return max(self.y.projected_rms, self.u.projected_rms, self.du.projected_rms)


def _equation_residual(values, densities, drivers, ensemble, regressor, scheme):
    """Residual of ``values_i = E_i values_{i+1} + dt driver`` at every node.

    ``drivers(i, y)`` evaluates the generator with own value ``y``.
    """
    grid = ensemble.grid
    proj_sq = proj_max = path_sq = 0.0
    count = 0
    for i in range(grid.steps):
        dt = grid.dt[i]
        proxy = regressor.condexp(values[i + 1], i)
        own = proxy if scheme == "explicit" else values[i]
        drv = np.asarray(drivers(i, own), dtype=float)
        proj = values[i] - proxy - dt * drv
        dB = ensemble.increment(i)
        extra = (1,) * (values.ndim - 2)
        mart = np.sum(densities[i] * dB.reshape(dB.shape + extra), axis=1)
        path = values[i] - values[i + 1] - dt * drv + mart
        proj_sq += float(np.sum(proj**2))
        path_sq += float(np.sum(path**2))
        proj_max = max(proj_max, float(np.max(np.abs(proj), initial=0.0)))
        count += proj.size
    return EquationResidual(proj_max, math.sqrt(proj_sq / count), math.sqrt(path_sq / count))


def residual_check(
    it: SystemIterate,
    spec: SystemSpec,
    ensemble: PathEnsemble,
    regressor: Regressor,
    scheme: str = "explicit",
) -> ResidualReport:
    """Plug the final iterate back into all three equations.

    The projected residual drops the martingale part by conditioning; the
    pathwise one keeps it and so includes the representation error of the
    regression.
    """
    times = ensemble.grid.times
    X = ensemble.X
    diag = it.diag
    S = it.U.shape[2]

    def h_drv(i, y):
        return spec.h(times[i], X[:, i, :], y, it.Z[i], diag.u[i], diag.v[i], diag.du[i])

    def g_drv(i, u):
        return np.stack(
            [spec.g(times[i], times[k], X[:, i, :], u[:, k], it.V[i, :, :, k], it.Y[i], it.Z[i]) for k in range(S)],
            axis=1,
        )

    def grad_drv(i, du):
        return np.stack(
            [
                spec.grad_g(
                    times[i], times[k], X[:, i, :], du[:, k], it.dV[i, :, :, k], it.U[i, :, k], it.V[i, :, :, k], it.Y[i], it.Z[i]
                )
                for k in range(S)
            ],
            axis=1,
        )

    return ResidualReport(
        y=_equation_residual(it.Y, it.Z, h_drv, ensemble, regressor, scheme),
        u=_equation_residual(it.U, it.V, g_drv, ensemble, regressor, scheme),
        du=_equation_residual(it.dU, it.dV, grad_drv, ensemble, regressor, scheme),
    )


def default_radius_sq(kappa: float, spec: SystemSpec, horizon: float, I0: float, gamma: float) -> float:
    """Half the conservative radius bound, or the smallest admissible radius when unbounded."""
    bound = compute_radius_bound(kappa, spec.lipschitz.star(spec.mode), horizon, spec.mode)
    if math.isinf(bound):
        return max(kappa * I0 / gamma, 1e-300)
    return 0.5 * bound / PROOF_RADIUS_FACTOR


def certify_system(
    spec: SystemSpec,
    ensemble: PathEnsemble,
    kappa: float = KAPPA_SYSTEM,
    eps=None,
    gamma: float = 0.5,
    radius_sq: float | None = None,
    c: float | None = None,
) -> Certificate:
    """Estimate ``I0`` on ``ensemble`` and run :func:`~bsvie_kit.constants.certify`."""
    eps = list(eps) if eps is not None else default_eps(spec.mode)
    T = ensemble.grid.horizon
    if c is None:
        c = compute_c_eps(eps, spec.lipschitz, T, spec.mode)
    data = estimate_data_norms(spec, ensemble, c)
    I0 = assemble_I0(data, eps)
    if radius_sq is None:
        radius_sq = default_radius_sq(kappa, spec, T, I0, gamma)
    return certify(kappa, eps, gamma, radius_sq, c, I0, spec.mode, spec.lipschitz, T)


@dataclass
class GradientDiagonalBound:
    lhs: float
    rhs: float
    weight_ok: bool

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs * (1.0 + 1e-9)


def gradient_diagonal_bound(
    it: SystemIterate, spec: SystemSpec, ensemble: PathEnsemble, regressor: Regressor, c: float = 0.0
) -> GradientDiagonalBound:
    """A priori bound on the diagonal of ``dU`` at time zero.

    ``E[sum e^{ct}/(7T) |dU_t^t|^2 dt]`` against the bound assembled from the
    data norms, the ``Y`` and ``U`` energies and the fourth powers of the BMO
    norms.  The bound is stated for ``c >= 2 max(L_u, L_du)``; ``weight_ok``
    records whether ``c`` qualifies.
    """
    grid = ensemble.grid
    T = grid.horizon
    lip = spec.lipschitz
    data = estimate_data_norms(spec, ensemble, c)
    lhs_sq = norms.weighted_increments(norms.sq_process(it.diag.du[:-1]), grid, c).sum(axis=0)
    lhs = float(ensemble.mean(lhs_sq)) / (7 * T)
    y_energy = float(ensemble.mean(norms.weighted_increments(norms.sq_process(it.Y[:-1]), grid, c).sum(axis=0)))
    u_energy = float(np.max(ensemble.mean(norms.weighted_increments(norms.sq_family(it.U[:-1]), grid, c).sum(axis=0))))
    bmo4 = sum(
        norms.bmo_sq(sq, grid, regressor, c) ** 2
        for sq in (norms.sq_family_density(it.dV), norms.sq_density(it.Z), norms.sq_family_density(it.V))
    )
    L = lip.star(spec.mode)
    rhs = (
        data.d_eta**2
        + data.grad_g0**2
        + T * lip.y**2 * y_energy
        + T * lip.u**2 * u_energy
        + 2 * L**2 * bmo4
    )
    return GradientDiagonalBound(lhs, rhs, c >= 2 * max(lip.u, lip.du))
