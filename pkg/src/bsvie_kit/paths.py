"""Forward paths of the driftless state process and time grids.

The state follows ``dX = sigma(t, X) dB`` and is simulated with an Euler
scheme.  Gaussian increments come from counter-based Philox streams keyed by
``(seed, block)`` where a block is a fixed range of path indices, so a run is
bit-identical whatever the number of worker threads.
"""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

BLOCK_SIZE = 2048

SigmaLike = Union[float, np.ndarray, Callable[[float, np.ndarray], np.ndarray]]


class PathError(ValueError):
    """Raised for invalid grids, volatilities or simulation requests."""


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time nodes ``t_0 = 0 < ... < t_N = T``."""

    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise PathError("a time grid needs at least two nodes")
        if not np.all(np.isfinite(times)):
            raise PathError("time grid contains non-finite values")
        if np.any(np.diff(times) <= 0.0):
            raise PathError("time grid must be strictly increasing")
        object.__setattr__(self, "times", times)

    @classmethod
    def uniform(cls, horizon: float, steps: int) -> "TimeGrid":
        if not horizon > 0.0 or not np.isfinite(horizon):
            raise PathError(f"horizon must be positive, got {horizon}")
        if int(steps) != steps or steps < 1:
            raise PathError(f"steps must be a positive integer, got {steps}")
        return cls(np.linspace(0.0, float(horizon), int(steps) + 1))

    @property
    def steps(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def max_dt(self) -> float:
        return float(self.dt.max())


@dataclass
class PathEnsemble:
    """Simulated paths.

    ``X`` has shape ``(n_paths, N + 1, n)`` and ``dB`` has shape
    ``(n_paths, N, m)``.  ``weights`` sum to one.
    """

    grid: TimeGrid
    X: np.ndarray
    dB: np.ndarray
    weights: np.ndarray
    seed: int | None = None
    is_tree: bool = False

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    @property
    def state_dim(self) -> int:
        return self.X.shape[2]

    @property
    def noise_dim(self) -> int:
        return self.dB.shape[2]

    def state(self, node: int) -> np.ndarray:
        return self.X[:, node, :]

    def increment(self, node: int) -> np.ndarray:
        return self.dB[:, node, :]

    def mean(self, values: np.ndarray) -> np.ndarray:
        """Weighted sample mean over the path axis."""
        return np.tensordot(self.weights, values, axes=(0, 0))


def _sigma_callable(sigma: SigmaLike, n: int, m: int | None):
    if callable(sigma):
        return sigma, m
    arr = np.asarray(sigma, dtype=float)
    if arr.ndim == 0:
        if m is None:
            m = n
        if n != m:
            raise PathError("scalar sigma needs matching state and noise dimensions")
        arr = float(arr) * np.eye(n)
    if arr.shape[0] != n or arr.ndim != 2:
        raise PathError(f"sigma must have shape ({n}, m), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise PathError("sigma contains non-finite entries")
    m = arr.shape[1]
    return (lambda t, x: np.broadcast_to(arr, (x.shape[0], n, m))), m


def _block_normals(seed: int, block: int, count: int, steps: int, m: int) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(block,))
    gen = np.random.Generator(np.random.Philox(ss))
    return gen.standard_normal((count, steps, m))


def gaussian_increments(seed: int, n_paths: int, grid: TimeGrid, m: int, threads: int = 1) -> np.ndarray:
    """Brownian increments of shape ``(n_paths, N, m)``.

    Path ``p`` always receives the same draws for a given seed, independent of
    ``threads`` and of how many further paths are requested.
    """
    if n_paths < 1:
        raise PathError(f"n_paths must be positive, got {n_paths}")
    if threads < 1:
        raise PathError(f"threads must be positive, got {threads}")
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise PathError("seed must fit in an unsigned 64-bit integer")
    n_blocks = -(-n_paths // BLOCK_SIZE)
    out = np.empty((n_paths, grid.steps, m))
    scale = np.sqrt(grid.dt)[None, :, None]

    def fill(block: int) -> None:
        lo = block * BLOCK_SIZE
        hi = min(lo + BLOCK_SIZE, n_paths)
        out[lo:hi] = _block_normals(seed, block, hi - lo, grid.steps, m) * scale

    if threads == 1 or n_blocks == 1:
        for b in range(n_blocks):
            fill(b)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, range(n_blocks)))
    return out


def euler_paths(x0: np.ndarray, sigma, grid: TimeGrid, dB: np.ndarray) -> np.ndarray:
    """Euler recursion ``X_{i+1} = X_i + sigma(t_i, X_i) dB_i``."""
    n_paths, steps, _ = dB.shape
    n = x0.size
    X = np.empty((n_paths, steps + 1, n))
    X[:, 0, :] = x0
    for i in range(steps):
        vol = np.asarray(sigma(grid.times[i], X[:, i, :]), dtype=float)
        if vol.shape != (n_paths, n, dB.shape[2]):
            vol = np.broadcast_to(vol, (n_paths, n, dB.shape[2]))
        if not np.all(np.isfinite(vol)):
            raise PathError(f"sigma returned non-finite values at node {i}")
        X[:, i + 1, :] = X[:, i, :] + np.einsum("pnm,pm->pn", vol, dB[:, i, :])
    return X


def simulate_forward(
    x0: Sequence[float] | float,
    sigma: SigmaLike,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    threads: int = 1,
    noise_dim: int | None = None,
) -> PathEnsemble:
    """Simulate ``n_paths`` Euler paths of the driftless forward process."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not np.all(np.isfinite(x0)):
        raise PathError("x0 contains non-finite values")
    vol, m = _sigma_callable(sigma, x0.size, noise_dim)
    if m is None:
        raise PathError("noise_dim is required when sigma is a callable")
    dB = gaussian_increments(seed, n_paths, grid, m, threads)
    X = euler_paths(x0, vol, grid, dB)
    weights = np.full(n_paths, 1.0 / n_paths)
    return PathEnsemble(grid, X, dB, weights, seed=int(seed))


def tree_ensemble(x0: float, sigma: SigmaLike, grid: TimeGrid) -> PathEnsemble:
    """All ``2**N`` paths of the scalar two-point tree with increments ``+-sqrt(dt)``.

    Paths are ordered lexicographically with the first step most significant
    and ``+`` before ``-``.  Every path carries weight ``2**-N``.
    """
    steps = grid.steps
    if steps > 16:
        raise PathError("exhaustive trees are limited to 16 steps")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != 1:
        raise PathError("tree ensembles are scalar")
    vol, _ = _sigma_callable(sigma, 1, 1)
    signs = np.array(list(itertools.product([1.0, -1.0], repeat=steps)))
    if steps == 0:
        signs = signs.reshape(1, 0)
    dB = (signs * np.sqrt(grid.dt)[None, :])[:, :, None]
    X = euler_paths(x0, vol, grid, dB)
    weights = np.full(signs.shape[0], 1.0 / signs.shape[0])
    return PathEnsemble(grid, X, dB, weights, is_tree=True)
