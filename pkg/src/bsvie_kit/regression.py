"""Conditional expectations on a path ensemble.

Three bases are available:

``poly``
    least squares on monomials of the standardised current state,
``bins``
    piecewise-constant on equal-count bins of the current state,
``exact``
    averages over paths sharing the whole state history.  On an exhaustive
    tree ensemble this is the exact conditional expectation.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .paths import PathEnsemble

BASIS_KINDS = ("poly", "bins", "exact")
RIDGE_SCALE = 1e-8
RANK_TOL = 1e-12


class RegressionError(ValueError):
    pass


@dataclass(frozen=True)
class BasisSpec:
    kind: str = "poly"
    degree: int = 3
    n_bins: int = 16
    clip: float | None = None

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise RegressionError(f"unknown basis kind {self.kind!r}; expected one of {BASIS_KINDS}")
        if int(self.degree) != self.degree or self.degree < 0:
            raise RegressionError(f"degree must be a non-negative integer, got {self.degree}")
        if int(self.n_bins) != self.n_bins or self.n_bins < 1:
            raise RegressionError(f"n_bins must be a positive integer, got {self.n_bins}")
        if self.clip is not None and not self.clip > 0:
            raise RegressionError(f"clip must be positive, got {self.clip}")


def _monomial_exponents(dim: int, degree: int) -> list[tuple[int, ...]]:
    exps = []
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(dim), total):
            e = [0] * dim
            for k in combo:
                e[k] += 1
            exps.append(tuple(e))
    return exps


@dataclass
class _PolyNode:
    center: np.ndarray
    scale: np.ndarray
    dims: np.ndarray
    exponents: list
    factor: object
    ridge: bool


@dataclass
class _GroupNode:
    order: np.ndarray
    starts: np.ndarray
    inverse: np.ndarray
    group_weight: np.ndarray


@dataclass
class Regressor:
    """Caches per-node regression data for repeated conditional expectations."""

    ensemble: PathEnsemble
    basis: BasisSpec = field(default_factory=BasisSpec)
    rank_deficient: set = field(default_factory=set)

    def __post_init__(self):
        self._cache: dict[int, object] = {}

    # -- node preparation -------------------------------------------------
    def _spread_dims(self, node: int):
        x = self.ensemble.state(node)
        w = self.ensemble.weights
        center = w @ x
        scale = np.sqrt(w @ (x - center) ** 2)
        dims = np.flatnonzero(scale > 1e-12 * (1.0 + np.abs(center)))
        return x, center, scale, dims

    def _features(self, x: np.ndarray, prep: _PolyNode) -> np.ndarray:
        z = (x[:, prep.dims] - prep.center[prep.dims]) / prep.scale[prep.dims]
        cols = [np.prod(z ** np.array(e), axis=1) if any(e) else np.ones(x.shape[0]) for e in prep.exponents]
        return np.stack(cols, axis=1)

    def _prepare_poly(self, node: int) -> _PolyNode:
        x, center, scale, dims = self._spread_dims(node)
        prep = _PolyNode(center, scale, dims, _monomial_exponents(dims.size, self.basis.degree), None, False)
        phi = self._features(x, prep)
        gram = phi.T @ (phi * self.ensemble.weights[:, None])
        d = np.sqrt(np.diag(gram))
        normalised = gram / np.outer(d, d)
        eig = np.linalg.eigvalsh(normalised)
        if eig[0] <= RANK_TOL * eig[-1]:
            lam = RIDGE_SCALE * np.trace(gram) / gram.shape[0]
            prep.factor = cho_factor(gram + lam * np.eye(gram.shape[0]))
            prep.ridge = True
            self.rank_deficient.add(node)
        else:
            prep.factor = cho_factor(gram)
        return prep

    def _prepare_groups(self, labels: np.ndarray) -> _GroupNode:
        _, inverse = np.unique(labels, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        order = np.argsort(inverse, kind="stable")
        sorted_ids = inverse[order]
        starts = np.flatnonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]])
        gw = np.add.reduceat(self.ensemble.weights[order], starts)
        return _GroupNode(order, starts, inverse, gw)

    def _prepare_bins(self, node: int) -> _GroupNode:
        x, _, _, dims = self._spread_dims(node)
        labels = np.zeros((x.shape[0], max(dims.size, 1)), dtype=np.int64)
        q = np.linspace(0.0, 1.0, self.basis.n_bins + 1)[1:-1]
        for col, k in enumerate(dims):
            edges = np.unique(np.quantile(x[:, k], q))
            labels[:, col] = np.searchsorted(edges, x[:, k], side="right")
        return self._prepare_groups(labels)

    def _prepare_exact(self, node: int) -> _GroupNode:
        hist = self.ensemble.X[:, : node + 1, :].reshape(self.ensemble.n_paths, -1)
        return self._prepare_groups(hist)

    def _prep(self, node: int):
        if node not in self._cache:
            kind = self.basis.kind
            if kind == "poly":
                self._cache[node] = self._prepare_poly(node)
            elif kind == "bins":
                self._cache[node] = self._prepare_bins(node)
            else:
                self._cache[node] = self._prepare_exact(node)
        return self._cache[node]

    # -- public -----------------------------------------------------------
    def condexp(self, values: np.ndarray, node: int) -> np.ndarray:
        """Estimate ``E[values | F_node]``; the path axis must come first."""
        values = np.asarray(values, dtype=float)
        n = self.ensemble.n_paths
        if values.shape[0] != n:
            raise RegressionError(f"values have {values.shape[0]} rows for {n} paths")
        if not 0 <= node <= self.ensemble.grid.steps:
            raise RegressionError(f"node {node} outside the grid")
        flat = values.reshape(n, -1)
        prep = self._prep(node)
        w = self.ensemble.weights
        if isinstance(prep, _PolyNode):
            phi = self._features(self.ensemble.state(node), prep)
            beta = cho_solve(prep.factor, phi.T @ (flat * w[:, None]))
            fitted = phi @ beta
        else:
            sums = np.add.reduceat(flat[prep.order] * w[prep.order, None], prep.starts, axis=0)
            fitted = (sums / prep.group_weight[:, None])[prep.inverse]
        if self.basis.clip is not None:
            fitted = np.clip(fitted, -self.basis.clip, self.basis.clip)
        return fitted.reshape(values.shape)


def condexp(values: np.ndarray, ensemble: PathEnsemble, node: int, basis: BasisSpec | None = None) -> np.ndarray:
    """One-off conditional expectation; prefer a shared :class:`Regressor` in loops."""
    return Regressor(ensemble, basis or BasisSpec()).condexp(values, node)
