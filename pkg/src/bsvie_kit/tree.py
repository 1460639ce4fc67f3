"""Exact solvers on the scalar two-point tree, used as oracles.

Every conditional expectation is a branch average and every density is a
branch difference, so no regression is involved.  The coupled equations are
solved node by node, backward in time, with a damped scalar fixed point on
the diagonal value at each node.  Results are laid out like the Monte Carlo
solver's arrays on :func:`bsvie_kit.paths.tree_ensemble`.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .paths import TimeGrid


class OracleError(RuntimeError):
    pass


def _sigma_value(sigma, t: float, x: float) -> float:
    if callable(sigma):
        return float(np.asarray(sigma(t, np.array([[x]]))).reshape(-1)[0])
    return float(np.asarray(sigma).reshape(-1)[0])


def _tree_states(x0: float, sigma, grid: TimeGrid) -> dict:
    """State value at every node, keyed by the sign prefix."""
    states = {(): float(x0)}
    for i in range(grid.steps):
        h = math.sqrt(grid.dt[i])
        for prefix in itertools.product((1, -1), repeat=i):
            x = states[prefix]
            vol = _sigma_value(sigma, grid.times[i], x)
            for sgn in (1, -1):
                states[prefix + (sgn,)] = x + vol * sgn * h
    return states


def _path_array(prefix: tuple, states: dict) -> np.ndarray:
    return np.array([states[prefix[:k]] for k in range(len(prefix) + 1)]).reshape(1, -1, 1)


@dataclass
class TreeBsvie:
    Y: np.ndarray
    Z: np.ndarray
    U: np.ndarray
    V: np.ndarray
    dU: np.ndarray
    dV: np.ndarray
    diag_u: np.ndarray
    diag_v: np.ndarray
    diag_du: np.ndarray
    flow_rms: float
    flow_max_pair_rms: float
    max_local_iterations: int


def tree_oracle(spec, x0: float, sigma, grid: TimeGrid, damping: float = 1.0, tol: float = 1e-14, max_iter: int = 100_000) -> TreeBsvie:
    """Exact discrete solution of a BSVIE (explicit scheme) on the full tree.

    ``spec`` is a :class:`~bsvie_kit.volterra.BsvieSpec`.  The tree is limited
    to ten steps.
    """
    N = grid.steps
    if N > 10:
        raise OracleError("the tree oracle is limited to ten steps")
    if not 0 < damping <= 1:
        raise OracleError("damping must lie in (0, 1]")
    d = spec.d
    T = grid.horizon
    times = grid.times
    S = N + 1
    states = _tree_states(x0, sigma, grid)
    f, grad_f = spec.f, spec.grad_f

    def vec(a):
        return np.asarray(a, dtype=float).reshape(d)

    # node records: Y (d,), Z (d,), U (S, d), V (S, d), dU (S, d), dV (S, d), vdiag (d,)
    rec = {}
    for prefix in itertools.product((1, -1), repeat=N):
        path = _path_array(prefix, states)
        rec[prefix] = {
            "Y": vec(spec.xi(T, path)),
            "U": np.array([vec(spec.xi(s, path)) for s in times]),
            "dU": np.array([vec(spec.d_xi(s, path)) for s in times]),
        }
    worst_iter = 0
    for i in range(N - 1, -1, -1):
        dt = grid.dt[i]
        h = math.sqrt(dt)
        t = times[i]
        for prefix in itertools.product((1, -1), repeat=i):
            up, dn = rec[prefix + (1,)], rec[prefix + (-1,)]
            x = np.array([[states[prefix]]])
            y_hat = 0.5 * (up["Y"] + dn["Y"])
            z_cal = (up["Y"] - dn["Y"]) / (2 * h)
            u_hat = 0.5 * (up["U"] + dn["U"])
            v = (up["U"] - dn["U"]) / (2 * h)
            du_hat = 0.5 * (up["dU"] + dn["dU"])
            dv = (up["dU"] - dn["dU"]) / (2 * h)
            vdiag = v[N] - sum(dv[j] * grid.dt[j] for j in range(i, N))
            zc = z_cal.reshape(1, 1, d)

            def members(y):
                yc = y.reshape(1, d)
                U = np.empty((S, d))
                dU = np.empty((S, d))
                for k, s in enumerate(times):
                    vk = v[k].reshape(1, 1, d)
                    U[k] = u_hat[k] + dt * vec(f(t, s, x, u_hat[k].reshape(1, d), vk, yc, zc))
                    dU[k] = du_hat[k] + dt * vec(
                        grad_f(t, s, x, du_hat[k].reshape(1, d), dv[k].reshape(1, 1, d), U[k].reshape(1, d), vk, yc, zc)
                    )
                return U, dU

            y = y_hat.copy()
            for it in range(1, max_iter + 1):
                U, dU = members(y)
                drift = vec(f(t, t, x, y_hat.reshape(1, d), zc, U[i].reshape(1, d), vdiag.reshape(1, 1, d))) - dU[i]
                target = y_hat + dt * drift
                gap = float(np.max(np.abs(target - y)))
                y = y + damping * (target - y)
                if gap <= tol:
                    break
            else:
                raise OracleError(f"local fixed point did not converge at node {prefix}")
            worst_iter = max(worst_iter, it)
            U, dU = members(y)
            rec[prefix] = {"Y": y, "Z": z_cal, "U": U, "V": v, "dU": dU, "dV": dv, "vdiag": vdiag}

    leaves = list(itertools.product((1, -1), repeat=N))
    P = len(leaves)
    Y = np.empty((N + 1, P, d))
    Z = np.empty((N, P, 1, d))
    U = np.empty((N + 1, P, S, d))
    V = np.empty((N, P, 1, S, d))
    dU = np.empty((N + 1, P, S, d))
    dV = np.empty((N, P, 1, S, d))
    diag_v = np.empty((N, P, 1, d))
    for p, leaf in enumerate(leaves):
        for i in range(N + 1):
            r = rec[leaf[:i]]
            Y[i, p] = r["Y"]
            U[i, p] = r["U"]
            dU[i, p] = r["dU"]
            if i < N:
                Z[i, p, 0] = r["Z"]
                V[i, p, 0] = r["V"]
                dV[i, p, 0] = r["dV"]
                diag_v[i, p, 0] = r["vdiag"]
    idx = np.arange(N + 1)
    diag_u = U[idx, :, idx]
    diag_du = dU[idx, :, idx]

    # flow identity, evaluated pair by pair
    sq = []
    pair_rms = 0.0
    for a in range(N + 1):
        for b in range(a + 1, N + 1):
            acc = 0.0
            for p, leaf in enumerate(leaves):
                r = diag_u[a, p] - diag_u[b, p]
                for k in range(a, b):
                    x = np.array([[states[leaf[:k]]]])
                    yk = diag_u[k, p].reshape(1, d)
                    zk = diag_v[k, p].reshape(1, 1, d)
                    drift = vec(f(times[k], times[k], x, yk, zk, yk, zk)) - diag_du[k, p]
                    r = r - grid.dt[k] * drift + diag_v[k, p, 0] * leaf[k] * math.sqrt(grid.dt[k])
                acc += float(np.sum(r**2)) / P
            sq.append(acc)
            pair_rms = max(pair_rms, math.sqrt(acc))
    flow_rms = math.sqrt(sum(sq) / len(sq)) if sq else 0.0
    return TreeBsvie(Y, Z, U, V, dU, dV, diag_u, diag_v, diag_du, flow_rms, pair_rms, worst_iter)


@dataclass
class TreeControl:
    value: np.ndarray
    policy: np.ndarray


def controlled_tree_dp(
    x0: float,
    sigma: float,
    grid: TimeGrid,
    terminal,
    reward_quadratic: tuple[float, float, float],
    actions: tuple[float, float],
    discount: float = 0.0,
) -> TreeControl:
    """Dynamic programming for the bridge-type control problem on the tree.

    Under action ``a`` the Brownian up-move probability is ``(1 + b sqrt(dt)) / 2``
    with drift ``b = (x - a) / (t - T)``; the running reward is
    ``q2 a^2 + q1 a + q0`` and continuation values are discounted by
    ``exp(-discount dt)``.  The maximiser is found in closed form, ties going
    to the lower action.
    """
    N = grid.steps
    T = grid.horizon
    q2, q1, q0 = reward_quadratic
    if q2 > 0:
        raise OracleError("the running reward must be concave in the action")
    lo, hi = actions
    states = _tree_states(x0, sigma, grid)
    leaves = list(itertools.product((1, -1), repeat=N))
    val = {leaf: float(terminal(_path_array(leaf, states))) for leaf in leaves}
    act = {}
    for i in range(N - 1, -1, -1):
        dt = grid.dt[i]
        t = grid.times[i]
        disc = math.exp(-discount * dt)
        for prefix in itertools.product((1, -1), repeat=i):
            x = states[prefix]
            vp, vm = val[prefix + (1,)], val[prefix + (-1,)]
            spread = 0.5 * math.sqrt(dt) * (vp - vm) * disc

            def objective(a):
                b = (x - a) / (t - T)
                cont = disc * 0.5 * (vp + vm) + b * spread
                return cont + dt * (q2 * a * a + q1 * a + q0)

            # objective is q2 dt a^2 + lin a + const
            lin = dt * q1 + spread / (T - t)
            if q2 < 0:
                a = min(max(-lin / (2 * q2 * dt), lo), hi)
            else:
                a = hi if lin > 0 else lo
            act[prefix] = a
            val[prefix] = objective(a)
    P = len(leaves)
    value = np.empty((N + 1, P))
    policy = np.empty((N, P))
    for p, leaf in enumerate(leaves):
        for i in range(N + 1):
            value[i, p] = val[leaf[:i]]
            if i < N:
                policy[i, p] = act[leaf[:i]]
    return TreeControl(value, policy)
