"""Growth constants, the data bound ``I0``, the weight ``c`` and certification.

Two growth regimes are supported: ``"lq"`` (Lipschitz in ``y``, ``u`` and
``du``, quadratic in the densities) and ``"quadratic"`` (quadratic in every
argument).  ``certify`` checks the four small-data conditions that guarantee
the Picard map is a contraction on a ball of radius ``R``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

MODES = ("lq", "quadratic")
KAPPA_SYSTEM = 10
KAPPA_BSVIE = 7
# The radius obtained by carrying the constants through the contraction
# argument is ten times smaller than the headline bound.
PROOF_RADIUS_FACTOR = 10
SQRT_SLACK = 1e-12


class ConstantsError(ValueError):
    pass


@dataclass(frozen=True)
class LipschitzConstants:
    """Declared growth constants of the generators.

    ``du`` and ``dv`` refer to the arguments ``dU_r^r`` in ``h`` and ``dV`` in
    the derivative generator.
    """

    y: float = 0.0
    u: float = 0.0
    du: float = 0.0
    z: float = 0.0
    v: float = 0.0
    dv: float = 0.0

    def __post_init__(self):
        for name, val in asdict(self).items():
            if not (val >= 0 and math.isfinite(val)):
                raise ConstantsError(f"constant {name} must be finite and non-negative, got {val}")

    def star(self, mode: str) -> float:
        _check_mode(mode)
        if mode == "lq":
            return max(self.z, self.v, self.dv)
        return max(self.y, self.u, self.du, self.z, self.v, self.dv)


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ConstantsError(f"unknown growth mode {mode!r}; expected one of {MODES}")


def _eps(eps: Sequence[float], count: int) -> list[float]:
    eps = [float(e) for e in eps]
    if len(eps) < count:
        raise ConstantsError(f"need at least {count} epsilons, got {len(eps)}")
    if any(not (e > 0 and math.isfinite(e)) for e in eps):
        raise ConstantsError("epsilons must be positive and finite")
    return eps


def eps_count(mode: str) -> int:
    _check_mode(mode)
    return 11 if mode == "lq" else 6


def compute_c_eps(eps: Sequence[float], lip: LipschitzConstants, horizon: float, mode: str) -> float:
    """Minimal weight ``c`` for the given epsilons."""
    _check_mode(mode)
    T = float(horizon)
    Ly, Lu, Ld = lip.y, lip.u, lip.du
    if mode == "quadratic":
        e1, e2 = _eps(eps, 2)[:2]
        return max(7 * T * Ld**2 / e1, 7 * T / e2, 2 * Ld)
    e = _eps(eps, 11)
    e1, e2, e7, e8, e9, e10, e11 = e[0], e[1], e[6], e[7], e[8], e[9], e[10]
    return max(
        2 * Ly + 7 * T * Ld**2 / e1 + (e1 + e2) * T * Ly**2 + Lu**2 / e7 + e8 + e9 + e10,
        2 * Lu + 7 * T / e2 + e7 + Ly**2 / e8,
        2 * Ld + Ly**2 / e10 + Lu**2 / e11,
        2 * Lu + (e1 + e2) * T * Lu**2 + Ly**2 / e9 + e11,
        8 * Ly + 2 * T * Ly + 2 * T * Ld * Ly,
        4 * Lu + 2 * T * Lu + 2 * T * Ld * Lu,
    )


def expand_reduced_eps(reduced: Sequence[float]) -> list[float]:
    """Map the five shared epsilons onto the full list of eleven."""
    a, b, g, d, e = _eps(reduced, 5)[:5]
    return [a, a, b, g, g, a, d, e, e, e, d]


def c_eps_reduced(reduced: Sequence[float], lip: LipschitzConstants, horizon: float) -> float:
    """Weight ``c`` written directly in the five shared epsilons (growth mode ``lq``)."""
    a, _, _, d, e = _eps(reduced, 5)[:5]
    T = float(horizon)
    Ly, Lu, Ld = lip.y, lip.u, lip.du
    return max(
        2 * Ly + 7 * T * Ld**2 / a + 2 * a * T * Ly**2 + Lu**2 / d + 3 * e,
        2 * Lu + 7 * T / a + d + Ly**2 / e,
        2 * Ld + Ly**2 / e + Lu**2 / d,
        2 * Lu + 2 * a * T * Lu**2 + Ly**2 / e + d,
        8 * Ly + 2 * T * Ly + 2 * T * Ld * Ly,
        4 * Lu + 2 * T * Lu + 2 * T * Ld * Lu,
    )


@dataclass(frozen=True)
class DataNorms:
    """Norms of the data entering ``I0``; see :func:`estimate_data_norms`."""

    xi: float
    eta: float
    d_eta: float
    h0: float
    g0: float
    grad_g0: float


def assemble_I0(norms: DataNorms, eps: Sequence[float]) -> float:
    e = _eps(eps, 6)
    return (
        norms.xi**2
        + 2 * norms.eta**2
        + (1 + e[0] + e[1]) * norms.d_eta**2
        + e[2] * norms.h0**2
        + (e[3] + e[4]) * norms.g0**2
        + (e[0] + e[1] + e[5]) * norms.grad_g0**2
    )


def assemble_I0_reduced(norms: DataNorms, reduced: Sequence[float]) -> float:
    a, b, g = _eps(reduced, 5)[:3]
    return (
        norms.xi**2
        + 2 * norms.eta**2
        + (1 + 2 * a) * norms.d_eta**2
        + b * norms.h0**2
        + 2 * g * norms.g0**2
        + 3 * a * norms.grad_g0**2
    )


def compute_radius_bound(kappa: float, l_star: float, horizon: float, mode: str, exact: bool = False):
    """Headline admissible squared radius ``U(kappa)``; ``inf`` when ``l_star == 0``."""
    _check_mode(mode)
    if not kappa > 0:
        raise ConstantsError("kappa must be positive")
    if l_star < 0:
        raise ConstantsError("l_star must be non-negative")
    if l_star == 0:
        return math.inf
    num = Fraction(kappa) if exact else float(kappa)
    L2 = Fraction(l_star) ** 2 if exact else float(l_star) ** 2
    if mode == "lq":
        val = 1 / (168 * num * L2)
    else:
        val = 1 / (336 * num * L2 * max(2, Fraction(horizon) ** 2 if exact else float(horizon) ** 2))
    return val


def proof_radius_bound(kappa: float, l_star: float, horizon: float, mode: str) -> float:
    return compute_radius_bound(kappa, l_star, horizon, mode) / PROOF_RADIUS_FACTOR


def sqrt_condition_multiplier(mode: str) -> int:
    _check_mode(mode)
    return 28 if mode == "lq" else 56


def max_eps_sum(kappa: float, mode: str) -> float:
    """Largest ``eps1 + eps2`` with ``(sqrt(eps1+eps2+3k) + sqrt(3k))^2 <= K k``."""
    K = sqrt_condition_multiplier(mode)
    return K * kappa - 2 * kappa * math.sqrt(3 * K)


@dataclass
class Certificate:
    mode: str
    kappa: float
    sqrt_lhs: float
    sqrt_rhs: float
    sqrt_ok: bool
    I0: float
    I0_limit: float
    I0_ok: bool
    radius_sq: float
    radius_statement: float
    radius_proof: float
    radius_ok: bool
    radius_statement_ok: bool
    c: float
    c_eps: float
    c_ok: bool
    notes: list = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return self.sqrt_ok and self.I0_ok and self.radius_ok and self.c_ok

    def to_dict(self) -> dict:
        out = asdict(self)
        out["certified"] = self.certified
        return {k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in out.items()}


def certify(
    kappa: float,
    eps: Sequence[float],
    gamma: float,
    radius_sq: float,
    c: float,
    I0: float,
    mode: str,
    lip: LipschitzConstants,
    horizon: float,
) -> Certificate:
    """Check the small-data conditions.

    The radius condition uses the smaller of the headline and the proof
    bound; both verdicts are reported.
    """
    _check_mode(mode)
    e = _eps(eps, eps_count(mode))
    if not 0 < gamma:
        raise ConstantsError("gamma must be positive")
    K = sqrt_condition_multiplier(mode)
    s = e[0] + e[1]
    sqrt_lhs = (math.sqrt(s + 3 * kappa) + math.sqrt(3 * kappa)) ** 2
    sqrt_rhs = K * kappa
    sqrt_ok = s <= max_eps_sum(kappa, mode) * (1 + SQRT_SLACK)
    L = lip.star(mode)
    statement = compute_radius_bound(kappa, L, horizon, mode)
    proof = statement / PROOF_RADIUS_FACTOR
    conservative = min(statement, proof)
    c_eps = compute_c_eps(e, lip, horizon, mode)
    I0_limit = gamma * radius_sq / kappa
    notes = []
    if radius_sq < statement and not radius_sq < conservative:
        notes.append("radius admissible for the headline bound but not for the proof bound")
    return Certificate(
        mode=mode,
        kappa=float(kappa),
        sqrt_lhs=sqrt_lhs,
        sqrt_rhs=float(sqrt_rhs),
        sqrt_ok=sqrt_ok,
        I0=float(I0),
        I0_limit=I0_limit,
        I0_ok=I0 <= I0_limit,
        radius_sq=float(radius_sq),
        radius_statement=statement,
        radius_proof=proof,
        radius_ok=radius_sq < conservative,
        radius_statement_ok=radius_sq < statement,
        c=float(c),
        c_eps=c_eps,
        c_ok=c >= c_eps,
        notes=notes,
    )


def default_eps(mode: str) -> list[float]:
    return [1.0] * eps_count(mode)


def estimate_data_norms(spec, ensemble, c: float = 0.0) -> DataNorms:
    """Sample estimates of the data norms of a system on ``ensemble``.

    ``spec`` is a :class:`~bsvie_kit.system.SystemSpec`.  Supremum norms are
    taken over paths, the parameter grid and time nodes.
    """
    grid = ensemble.grid
    X = ensemble.X
    P = ensemble.n_paths
    T = grid.horizon
    top = math.exp(c * T / 2)
    xi = top * float(np.max(np.linalg.norm(np.asarray(spec.xi(X)).reshape(P, -1), axis=1)))
    eta = d_eta = 0.0
    for s in grid.times:
        eta = max(eta, float(np.max(np.linalg.norm(np.asarray(spec.eta(s, X)).reshape(P, -1), axis=1))))
        d_eta = max(d_eta, float(np.max(np.linalg.norm(np.asarray(spec.d_eta(s, X)).reshape(P, -1), axis=1))))
    m, d1, d2 = ensemble.noise_dim, spec.d1, spec.d2
    zy, zz = np.zeros((P, d1)), np.zeros((P, m, d1))
    zu, zv = np.zeros((P, d2)), np.zeros((P, m, d2))
    h_acc = np.zeros(P)
    g_acc = np.zeros((P, grid.steps + 1))
    gg_acc = np.zeros((P, grid.steps + 1))
    for i in range(grid.steps):
        t = grid.times[i]
        x = X[:, i, :]
        w = math.exp(c * t / 2) * grid.dt[i]
        h_acc += w * np.linalg.norm(np.asarray(spec.h(t, x, zy, zz, zu, zv, zu)).reshape(P, -1), axis=1)
        for k, s in enumerate(grid.times):
            g_acc[:, k] += w * np.linalg.norm(np.asarray(spec.g(t, s, x, zu, zv, zy, zz)).reshape(P, -1), axis=1)
            gg = spec.grad_g(t, s, x, zu, zv, zu, zv, zy, zz)
            gg_acc[:, k] += w * np.linalg.norm(np.asarray(gg).reshape(P, -1), axis=1)
    return DataNorms(
        xi=xi,
        eta=top * eta,
        d_eta=top * d_eta,
        h0=float(h_acc.max()),
        g0=float(g_acc.max()),
        grad_g0=float(gg_acc.max()),
    )
