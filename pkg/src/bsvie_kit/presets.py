"""Ready-made problems and the name-based preset registry.

Besides small test equations this holds two applications:

* a time-inconsistent control problem whose equilibrium is described by a
  value process, a reward family and a mean-field component,
* a risk-sensitive multi-player game written as a vector Volterra equation
  whose generator reads the diagonal density through Nash responses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .constants import LipschitzConstants
from .system import SystemSpec
from .volterra import BsvieSpec

GOLDEN_TOL = 1e-10
NEWTON_STENCIL = 1e-5
NASH_TOL = 1e-14
NASH_MAX_ITER = 500


class PresetError(ValueError):
    pass


def _col(a) -> np.ndarray:
    return np.asarray(a, dtype=float).reshape(-1, 1)


def terminal_state(X: np.ndarray) -> np.ndarray:
    return X[:, -1, 0]


TERMINALS = {
    "identity": terminal_state,
    "tanh": lambda X: np.tanh(X[:, -1, 0]),
    "cos": lambda X: np.cos(X[:, -1, 0]),
}


# ---------------------------------------------------------------------------
# discount kernels: weight phi(t - s) and its s-derivative


def discount_kernel(kind: str, rate: float) -> tuple[Callable, Callable]:
    if rate < 0:
        raise PresetError("discount rate must be non-negative")
    if kind == "exponential":
        return (lambda tau: math.exp(-rate * tau)), (lambda tau: rate * math.exp(-rate * tau))
    if kind == "hyperbolic":
        return (lambda tau: 1.0 / (1.0 + rate * tau)), (lambda tau: rate / (1.0 + rate * tau) ** 2)
    raise PresetError(f"unknown discount kind {kind!r}; expected 'exponential' or 'hyperbolic'")


# ---------------------------------------------------------------------------
# time-inconsistent control


@dataclass
class ControlSpec:
    """Bridge-type control problem.

    The control ``a`` adds drift ``b = (x - a) / (t - T)`` per unit of noise,
    so member ``s`` of the reward family has generator
    ``reward(t, s, x, a) + b * z``.  The criterion of the agent at time ``s`` is
    ``E[int reward + F(s, X)] + G(s, E[gmap(X)])``.
    """

    reward: Callable
    reward_ds: Callable
    F: Callable
    F_ds: Callable
    G: Callable = lambda s, n: np.zeros_like(n)
    G_ds: Callable = lambda s, n: np.zeros_like(n)
    G_nn: Callable = lambda s, n: np.zeros_like(n)
    gmap: Callable = terminal_state
    actions: tuple = (-1.0, 1.0)
    reward_affine: bool = False
    time_cap: float | None = None
    lipschitz: LipschitzConstants = field(default_factory=lambda: LipschitzConstants(0.1, 0.1, 1.0, 0.1, 0.1, 0.1))


def bridge_drift(t: float, x: np.ndarray, a: np.ndarray, horizon: float, cap: float) -> np.ndarray:
    """``(x - a) / (t - T)`` with ``t`` capped at ``T - cap``."""
    t = min(t, horizon - cap)
    return (x - a) / (t - horizon)


def golden_section_max(objective: Callable, lo: float, hi: float, size: int) -> np.ndarray:
    """Vectorised maximiser of concave objectives on ``[lo, hi]``.

    Golden-section search to bracket width ``GOLDEN_TOL``, then one
    central-difference Newton step (exact for quadratics up to rounding,
    which value comparisons alone cannot resolve near a smooth maximum), and
    finally a comparison against both endpoints.
    """
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a = np.full(size, float(lo))
    b = np.full(size, float(hi))
    while np.max(b - a) > GOLDEN_TOL:
        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
        left = objective(c) > objective(d)
        b = np.where(left, d, b)
        a = np.where(left, a, c)
    best = 0.5 * (a + b)
    step = NEWTON_STENCIL * (hi - lo)
    mid = np.clip(best, lo + step, hi - step)
    f_m, f_0, f_p = objective(mid - step), objective(mid), objective(mid + step)
    curv = f_p - 2.0 * f_0 + f_m
    with np.errstate(divide="ignore", invalid="ignore"):
        newton = np.where(curv < 0, mid - 0.5 * step * (f_p - f_m) / curv, best)
    newton = np.clip(newton, lo, hi)
    f_best = objective(best)
    f_newton = objective(newton)
    best = np.where(f_newton >= f_best, newton, best)
    f_best = np.maximum(f_newton, f_best)
    for end in (lo, hi):
        e = np.full(size, float(end))
        f_e = objective(e)
        best = np.where(f_e > f_best, e, best)
        f_best = np.maximum(f_e, f_best)
    return best


def hamiltonian_max(t: float, x: np.ndarray, z: np.ndarray, spec: ControlSpec, horizon: float, cap: float):
    """Maximise ``a -> reward(t, t, x, a) + b(t, x, a) z`` over the action interval.

    Returns ``(value, argmax)``.  Affine rewards take the better endpoint,
    ties going to the lower action.
    """
    lo, hi = spec.actions
    x = np.asarray(x, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float).reshape(-1)

    def objective(a):
        return np.asarray(spec.reward(t, t, x, a), dtype=float) + bridge_drift(t, x, a, horizon, cap) * z

    if spec.reward_affine:
        a_lo = np.full_like(x, lo)
        a_hi = np.full_like(x, hi)
        f_lo, f_hi = objective(a_lo), objective(a_hi)
        best = np.where(f_hi > f_lo, a_hi, a_lo)
        return np.maximum(f_lo, f_hi), best
    best = golden_section_max(objective, lo, hi, x.size)
    return objective(best), best


def build_ti_system(spec: ControlSpec, horizon: float, dt_cap: float) -> SystemSpec:
    """Equilibrium system; the diagonal equation stacks ``(value, N)``.

    ``N`` tracks ``E[gmap(X_T) | F_t]`` under the equilibrium control and feeds
    the mean-field correction of the Hamiltonian.  The attribute ``policy`` of
    the returned system maps ``(t, x, z)`` to equilibrium actions.
    """
    T = float(horizon)
    cap = spec.time_cap if spec.time_cap is not None else dt_cap
    if not 0 < cap < T:
        raise PresetError("time cap must lie in (0, T)")

    def policy(t, x, z):
        return hamiltonian_max(t, x[:, 0], z[:, 0, 0], spec, T, cap)

    def xi(X):
        n = np.asarray(spec.gmap(X), dtype=float)
        return np.stack([np.asarray(spec.F(T, X)) + np.asarray(spec.G(T, n)), n], axis=1)

    def eta(s, X):
        return _col(np.asarray(spec.F(s, X)) + np.asarray(spec.G(s, np.asarray(spec.gmap(X), dtype=float))))

    def d_eta(s, X):
        return _col(np.asarray(spec.F_ds(s, X)) + np.asarray(spec.G_ds(s, np.asarray(spec.gmap(X), dtype=float))))

    def h(t, x, y, z, u, v, du):
        value, a = policy(t, x, z)
        n = y[:, 1]
        zn = z[:, 0, 1]
        ham = value - du[:, 0] - spec.G_ds(t, n) - 0.5 * zn**2 * spec.G_nn(t, n)
        return np.stack([ham, bridge_drift(t, x[:, 0], a, T, cap) * zn], axis=1)

    def g(t, s, x, u, v, y, z):
        _, a = policy(t, x, z)
        return _col(spec.reward(t, s, x[:, 0], a) + bridge_drift(t, x[:, 0], a, T, cap) * v[:, 0, 0])

    def grad_g(t, s, x, du, dv, u, v, y, z):
        _, a = policy(t, x, z)
        return _col(spec.reward_ds(t, s, x[:, 0], a) + bridge_drift(t, x[:, 0], a, T, cap) * dv[:, 0, 0])

    system = SystemSpec(xi, eta, d_eta, h, g, grad_g, d1=2, d2=1, lipschitz=spec.lipschitz, mode="quadratic", name="ti-control")
    system.policy = lambda t, x, z: policy(t, x, z)[1]
    return system


def discounted_control(
    horizon: float,
    reward_quadratic: tuple = (-0.5, 0.0, 0.0),
    terminal: Callable = terminal_state,
    discount: float = 0.0,
    discount_kind: str = "exponential",
    actions: tuple = (-1.0, 1.0),
    mean_field_linear: float = 0.0,
    mean_field_quadratic: float = 0.0,
) -> ControlSpec:
    """Running reward ``phi(t - s) l(a)`` with quadratic ``l`` and terminal
    ``phi(T - s) terminal(X)``.

    The mean-field part is ``G(s, n) = lin n + quad (1 + s) n^2 / 2``.
    """
    q2, q1, q0 = (float(q) for q in reward_quadratic)
    if q2 > 0:
        raise PresetError("the running reward must be concave in the action")
    lo, hi = (float(a) for a in actions)
    if not lo < hi:
        raise PresetError("actions must be an interval [lo, hi] with lo < hi")
    T = float(horizon)
    phi, dphi = discount_kernel(discount_kind, discount)

    def ell(a):
        a = np.asarray(a, dtype=float)
        return q2 * a * a + q1 * a + q0

    def reward(t, s, x, a):
        return phi(t - s) * ell(a) * np.ones_like(np.asarray(x, dtype=float))

    def reward_ds(t, s, x, a):
        return dphi(t - s) * ell(a) * np.ones_like(np.asarray(x, dtype=float))

    def F(s, X):
        return phi(T - s) * np.asarray(terminal(X), dtype=float)

    def F_ds(s, X):
        return dphi(T - s) * np.asarray(terminal(X), dtype=float)

    lin, quad = float(mean_field_linear), float(mean_field_quadratic)

    return ControlSpec(
        reward,
        reward_ds,
        F,
        F_ds,
        G=lambda s, n: lin * n + 0.5 * quad * (1.0 + s) * n**2,
        G_ds=lambda s, n: 0.5 * quad * n**2,
        G_nn=lambda s, n: quad * (1.0 + s) * np.ones_like(n),
        actions=(lo, hi),
        reward_affine=(q2 == 0.0),
    )


# ---------------------------------------------------------------------------
# risk-sensitive game


@dataclass
class GameParams:
    players: int = 2
    discount: float = 0.5
    cost: float = 1.0
    coupling: float = 0.3
    risk: float = 0.2
    actions: tuple = (-1.0, 1.0)
    terminal_weights: tuple | None = None


def nash_response(v: np.ndarray, params: GameParams) -> np.ndarray:
    """Equilibrium actions ``(P, players)`` for diagonal densities ``v`` of shape ``(P, m, players)``.

    Player ``i`` maximises ``-cost a_i^2 / 2 + coupling a_i mean(a_{-i}) + a_i v_i / players``
    with the others frozen; best responses are iterated to a fixed point.
    """
    d = params.players
    lo, hi = params.actions
    dens = v[:, 0, :]
    a = np.zeros_like(dens)
    for _ in range(NASH_MAX_ITER):
        others = (a.sum(axis=1, keepdims=True) - a) / (d - 1) if d > 1 else np.zeros_like(a)
        new = np.clip((params.coupling * others + dens / d) / params.cost, lo, hi)
        if np.max(np.abs(new - a), initial=0.0) <= NASH_TOL:
            return new
        a = new
    raise PresetError("Nash best-response iteration did not converge")


def game_bsvie(params: GameParams, horizon: float, terminal: Callable = TERMINALS["tanh"]) -> BsvieSpec:
    d = params.players
    if d < 1:
        raise PresetError("need at least one player")
    if params.cost <= 0:
        raise PresetError("cost must be positive")
    if d > 1 and abs(params.coupling) >= params.cost:
        raise PresetError("|coupling| must be below cost for best responses to contract")
    rho = float(params.discount)
    T = float(horizon)
    weights = np.ones(d) if params.terminal_weights is None else np.asarray(params.terminal_weights, dtype=float)
    if weights.shape != (d,):
        raise PresetError("terminal_weights needs one entry per player")

    def running(a):
        others = (a.sum(axis=1, keepdims=True) - a) / (d - 1) if d > 1 else np.zeros_like(a)
        return -0.5 * params.cost * a**2 + params.coupling * a * others

    def f(t, s, x, y, z, u, v):
        a = nash_response(v, params)
        zz = z[:, 0, :]
        return math.exp(-rho * (t - s)) * running(a) + a.mean(axis=1, keepdims=True) * zz + 0.5 * params.risk * zz**2

    def grad_f(t, s, x, du, dv, y, z, u, v):
        a = nash_response(v, params)
        zz = z[:, 0, :]
        drift = a.mean(axis=1, keepdims=True)
        return rho * math.exp(-rho * (t - s)) * running(a) + (drift + params.risk * zz) * dv[:, 0, :]

    def xi(s, X):
        return math.exp(-rho * (T - s)) * np.asarray(terminal(X), dtype=float)[:, None] * weights[None, :]

    def d_xi(s, X):
        return rho * xi(s, X)

    lip = LipschitzConstants(0.0, 0.0, 0.0, params.risk + 1.0, 1.0 / params.cost, params.risk + 1.0)
    return BsvieSpec(f, grad_f, xi, d_xi, d=d, lipschitz=lip, mode="quadratic", name="game")


# ---------------------------------------------------------------------------
# small test equations


def zero_bsvie() -> BsvieSpec:
    def zero(t, s, x, *args):
        return np.zeros_like(args[0])

    def xi(s, X):
        return np.zeros((X.shape[0], 1))

    return BsvieSpec(zero, zero, xi, xi, name="zero")


def linear_decay_bsvie(beta: float = 1.0, terminal: float = 1.0) -> BsvieSpec:
    """``f = -beta y`` with constant terminal value; the solution does not depend on ``s``."""

    def f(t, s, x, y, z, u, v):
        return -beta * y

    def grad_f(t, s, x, du, dv, y, z, u, v):
        return -beta * du

    def xi(s, X):
        return np.full((X.shape[0], 1), float(terminal))

    def d_xi(s, X):
        return np.zeros((X.shape[0], 1))

    return BsvieSpec(f, grad_f, xi, d_xi, lipschitz=LipschitzConstants(y=abs(beta)), name="linear-decay")


def linear_family_bsvie(scale: float = 1.0) -> BsvieSpec:
    """Zero generator with terminal ``scale * s * X_T``."""

    def f(t, s, x, y, z, u, v):
        return np.zeros_like(y)

    def grad_f(t, s, x, du, dv, y, z, u, v):
        return np.zeros_like(du)

    def xi(s, X):
        return _col(scale * s * X[:, -1, 0])

    def d_xi(s, X):
        return _col(scale * X[:, -1, 0])

    return BsvieSpec(f, grad_f, xi, d_xi, name="linear-family")


def coupled_bsvie(alpha: float = 0.5, beta: float = 0.3, delta: float = 0.2, gamma: float = 0.1, horizon: float = 1.0) -> BsvieSpec:
    """Parameter-dependent generator coupled to the diagonal:

    ``f = -alpha y + beta (1 + s) sin(u) + delta cos(s) z + gamma v``
    with terminal ``(1 + s) tanh(X_T) + s^2 cos(X_T)``.
    """

    def f(t, s, x, y, z, u, v):
        return -alpha * y + beta * (1 + s) * np.sin(u) + delta * math.cos(s) * z[:, 0, :] + gamma * v[:, 0, :]

    def grad_f(t, s, x, du, dv, y, z, u, v):
        return beta * np.sin(u) - delta * math.sin(s) * z[:, 0, :] - alpha * du + delta * math.cos(s) * dv[:, 0, :]

    def xi(s, X):
        xt = X[:, -1, 0]
        return _col((1 + s) * np.tanh(xt) + s * s * np.cos(xt))

    def d_xi(s, X):
        xt = X[:, -1, 0]
        return _col(np.tanh(xt) + 2 * s * np.cos(xt))

    lip = LipschitzConstants(y=alpha, u=beta * (1 + horizon), z=delta, v=gamma, dv=delta)
    return BsvieSpec(f, grad_f, xi, d_xi, lipschitz=lip, name="coupled")


def quadratic_small_system(scale: float = 1e-3, coefficient: float = 0.1) -> SystemSpec:
    """Quadratic generators with every growth constant equal to ``coefficient``.

    ``h = k (y^2 + z^2 + u^2 + v^2 + du)``, ``g = k (v^2 + y^2 + s u^2)``,
    terminals ``scale tanh(X_T)`` and ``scale (1 + s) cos(X_T) / 2``.
    """
    k = float(coefficient)

    def sq(a):
        return np.sum(a.reshape(a.shape[0], -1) ** 2, axis=1, keepdims=True)

    def xi(X):
        return _col(scale * np.tanh(X[:, -1, 0]))

    def eta(s, X):
        return _col(scale * (1 + s) * np.cos(X[:, -1, 0]) / 2)

    def d_eta(s, X):
        return _col(scale * np.cos(X[:, -1, 0]) / 2)

    def h(t, x, y, z, u, v, du):
        return k * (y**2 + sq(z) + u**2 + sq(v) + du)

    def g(t, s, x, u, v, y, z):
        return k * (sq(v) + y**2 + s * u**2)

    def grad_g(t, s, x, du, dv, u, v, y, z):
        return k * (u**2 + 2 * s * u * du + 2 * np.sum((v * dv).reshape(v.shape[0], -1), axis=1, keepdims=True))

    lip = LipschitzConstants(k, k, k, k, k, k)
    return SystemSpec(xi, eta, d_eta, h, g, grad_g, d1=1, d2=1, lipschitz=lip, mode="quadratic", name="quadratic-small")


# ---------------------------------------------------------------------------
# registry


@dataclass
class Preset:
    name: str
    kind: str  # "bsvie", "system" or "control"
    spec: object
    params: dict


@dataclass(frozen=True)
class _Entry:
    kind: str
    defaults: dict
    build: Callable


def _build_ti(params: dict, horizon: float):
    terminal = params["terminal"]
    if terminal not in TERMINALS:
        raise PresetError(f"unknown terminal {terminal!r}; expected one of {sorted(TERMINALS)}")
    return discounted_control(
        horizon,
        reward_quadratic=tuple(params["reward"]),
        terminal=TERMINALS[terminal],
        discount=params["discount"],
        discount_kind=params["discount_kind"],
        actions=tuple(params["actions"]),
        mean_field_linear=params["mean_field_linear"],
        mean_field_quadratic=params["mean_field_quadratic"],
    )


def _build_game(params: dict, horizon: float):
    gp = GameParams(
        players=int(params["players"]),
        discount=params["discount"],
        cost=params["cost"],
        coupling=params["coupling"],
        risk=params["risk"],
        actions=tuple(params["actions"]),
        terminal_weights=None if params["terminal_weights"] is None else tuple(params["terminal_weights"]),
    )
    terminal = params["terminal"]
    if terminal not in TERMINALS:
        raise PresetError(f"unknown terminal {terminal!r}; expected one of {sorted(TERMINALS)}")
    return game_bsvie(gp, horizon, TERMINALS[terminal])


REGISTRY: dict[str, _Entry] = {
    "zero": _Entry("bsvie", {}, lambda p, T: zero_bsvie()),
    "linear-decay": _Entry("bsvie", {"beta": 1.0, "terminal": 1.0}, lambda p, T: linear_decay_bsvie(p["beta"], p["terminal"])),
    "linear-family": _Entry("bsvie", {"scale": 1.0}, lambda p, T: linear_family_bsvie(p["scale"])),
    "coupled": _Entry(
        "bsvie",
        {"alpha": 0.5, "beta": 0.3, "delta": 0.2, "gamma": 0.1},
        lambda p, T: coupled_bsvie(p["alpha"], p["beta"], p["delta"], p["gamma"], T),
    ),
    "game": _Entry(
        "bsvie",
        {
            "players": 2,
            "discount": 0.5,
            "cost": 1.0,
            "coupling": 0.3,
            "risk": 0.2,
            "actions": [-1.0, 1.0],
            "terminal_weights": None,
            "terminal": "tanh",
        },
        _build_game,
    ),
    "quadratic-small": _Entry(
        "system", {"scale": 1e-3, "coefficient": 0.1}, lambda p, T: quadratic_small_system(p["scale"], p["coefficient"])
    ),
    "ti-control": _Entry(
        "control",
        {
            "reward": [-0.5, 0.0, 0.0],
            "terminal": "identity",
            "discount": 0.5,
            "discount_kind": "hyperbolic",
            "actions": [-1.0, 1.0],
            "mean_field_linear": 0.0,
            "mean_field_quadratic": 0.0,
        },
        _build_ti,
    ),
}


def preset_names() -> list[str]:
    return sorted(REGISTRY)


def build_preset(name: str, params: dict | None, horizon: float) -> Preset:
    """Build a registered preset; unknown names or parameters raise :class:`PresetError`."""
    if name not in REGISTRY:
        raise PresetError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    entry = REGISTRY[name]
    params = dict(params or {})
    unknown = sorted(set(params) - set(entry.defaults))
    if unknown:
        raise PresetError(f"unknown parameter {unknown[0]!r} for preset {name!r}")
    resolved = {**entry.defaults, **params}
    return Preset(name, entry.kind, entry.build(resolved, horizon), resolved)
