"""Backward Euler sweep for a single (possibly batched) BSDE.

``Y_i = E_i[Y_{i+1}] + dt_i * driver(i, y, z_i)`` where ``z_i`` is the
aggregate ``sigma^T Z`` estimated as ``E_i[(Y_{i+1} - E_i Y_{i+1}) dB_i^T] / dt_i``.  The
explicit scheme feeds ``y = E_i[Y_{i+1}]`` to the driver, the implicit one
solves for ``y = Y_i`` by damped fixed-point iteration.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .paths import PathEnsemble
from .regression import Regressor

SCHEMES = ("explicit", "implicit")

Driver = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


class NumericalError(RuntimeError):
    """Raised when a driver or terminal value produces non-finite numbers."""


@dataclass
class SweepResult:
    """``Y`` has shape ``(N + 1, P, *shape)`` and ``Z`` has shape ``(N, P, m, *shape)``."""

    Y: np.ndarray
    Z: np.ndarray
    implicit_failures: list = field(default_factory=list)

    @property
    def y0(self) -> np.ndarray:
        return self.Y[0].mean(axis=0)


def martingale_density(
    y_next: np.ndarray, dB: np.ndarray, dt: float, regressor: Regressor, node: int, centre: np.ndarray | None = None
) -> np.ndarray:
    """``E_node[(y_next - centre) dB^T] / dt`` with the noise axis right after paths.

    Subtracting the conditional mean ``centre`` leaves the estimate unbiased
    and removes most of its sampling noise.
    """
    if centre is not None:
        y_next = y_next - centre
    extra = (1,) * (y_next.ndim - 1)
    prod = dB.reshape(dB.shape + extra) * y_next[:, None]
    return regressor.condexp(prod, node) / dt


def _check_finite(arr: np.ndarray, what: str, node: int) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"{what} is not finite at node {node}")


def backward_sweep(
    terminal: np.ndarray,
    ensemble: PathEnsemble,
    regressor: Regressor,
    driver: Driver,
    scheme: str = "explicit",
    damping: float = 1.0,
    implicit_tol: float = 1e-12,
    implicit_max_iter: int = 50,
) -> SweepResult:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if not 0.0 < damping <= 1.0:
        raise ValueError(f"damping must lie in (0, 1], got {damping}")
    terminal = np.asarray(terminal, dtype=float)
    if terminal.shape[0] != ensemble.n_paths:
        raise ValueError("terminal values need one row per path")
    _check_finite(terminal, "terminal value", ensemble.grid.steps)

    grid = ensemble.grid
    N = grid.steps
    shape = terminal.shape[1:]
    P, m = ensemble.n_paths, ensemble.noise_dim
    Y = np.empty((N + 1, P) + shape)
    Z = np.empty((N, P, m) + shape)
    Y[N] = terminal
    failures = []
    for i in range(N - 1, -1, -1):
        dt = grid.dt[i]
        proxy = regressor.condexp(Y[i + 1], i)
        z = martingale_density(Y[i + 1], ensemble.increment(i), dt, regressor, i, centre=proxy)
        if scheme == "explicit":
            y = proxy + dt * np.asarray(driver(i, proxy, z), dtype=float)
        else:
            y = proxy.copy()
            for _ in range(implicit_max_iter):
                target = proxy + dt * np.asarray(driver(i, y, z), dtype=float)
                step = damping * (target - y)
                y = y + step
                if np.max(np.abs(step), initial=0.0) <= implicit_tol * max(1.0, np.max(np.abs(y), initial=0.0)):
                    break
            else:
                failures.append(i)
        _check_finite(y, "backward value", i)
        Y[i] = y
        Z[i] = z
    return SweepResult(Y, Z, failures)
