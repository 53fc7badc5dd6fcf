"""Perturbation coefficients, Karhunen-Loeve viscosity, and sparse grids.

The collocation machinery targets uniform random vectors y on
Gamma = [-sqrt(3), sqrt(3)]^N (zero mean, unit variance per axis).  Nested
Clenshaw-Curtis rules combine through the Smolyak construction; the level-1
grid in N dimensions has 2N+1 nodes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

GAMMA_HALF_WIDTH = math.sqrt(3.0)

# Nested 1D Clenshaw-Curtis sizes per level.
CC_POINTS = {0: 1, 1: 3, 2: 5, 3: 9}


@dataclass(frozen=True)
class PerturbationSpec:
    """How the per-realization data perturbation coefficients k_j are drawn."""

    epsilon: float
    mode: str = "deterministic"  # or "uniform"
    J: int = 20

    def coeffs(self, seed: int | None = None) -> np.ndarray:
        return perturbation_coeffs(self.J, self.mode, seed)


def perturbation_coeffs(J: int, mode: str = "deterministic", seed: int | None = None) -> np.ndarray:
    """Coefficients k_1..k_J scaling the data noise of each realization.

    Deterministic mode alternates signs with growing magnitude,
    k_j = (-1)^(j+1) * 4 * ceil(j/2) / J, summing to zero for even J;
    uniform mode draws seeded samples from U(-1, 1).
    """
    if J < 1:
        raise ValueError("J must be >= 1")
    if mode == "deterministic":
        j = np.arange(1, J + 1)
        return (-1.0) ** (j + 1) * 4.0 * np.ceil(j / 2.0) / J
    if mode == "uniform":
        rng = np.random.default_rng(seed)
        return rng.uniform(-1.0, 1.0, size=J)
    raise ValueError(f"unknown perturbation mode {mode!r}")


@dataclass(frozen=True)
class KLViscosity:
    """Truncated Karhunen-Loeve viscosity field on the cavity domain.

    nu(x, y) = (2/E[Re]) * {1 + sqrt(sqrt(pi) l / 2) y_1
               + sum_{i=1,2} sqrt(xi_i) [sin(i pi x1/2) sin(i pi x2/2) y_{2i}
                                        + cos(i pi x1/2) cos(i pi x2/2) y_{2i+1}]}

    with sqrt(xi_i) = (sqrt(pi) l)^(1/2) exp(-(i pi l)^2 / 8).  Five random
    dimensions; parameters live on Gamma = [-sqrt(3), sqrt(3)]^5.
    """

    expected_re: float
    length: float = 0.01
    ndim: int = 5

    def eigen_roots(self) -> np.ndarray:
        i = np.arange(1, 3)
        return np.sqrt(math.sqrt(math.pi) * self.length) * np.exp(-((i * math.pi * self.length) ** 2) / 8.0)

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.size != self.ndim:
            raise ValueError(f"parameter vector must have {self.ndim} entries")
        if np.any(np.abs(y) > GAMMA_HALF_WIDTH + 1e-12):
            raise ValueError("parameter vector outside Gamma = [-sqrt(3), sqrt(3)]^N")
        s = np.full(x.shape[0], 1.0 + math.sqrt(math.sqrt(math.pi) * self.length / 2.0) * y[0])
        roots = self.eigen_roots()
        for i in (1, 2):
            si = np.sin(i * math.pi * x[:, 0] / 2.0) * np.sin(i * math.pi * x[:, 1] / 2.0)
            co = np.cos(i * math.pi * x[:, 0] / 2.0) * np.cos(i * math.pi * x[:, 1] / 2.0)
            s += roots[i - 1] * (si * y[2 * i - 1] + co * y[2 * i])
        return (2.0 / self.expected_re) * s


def kl_viscosity_eval(kl: KLViscosity, x, y) -> np.ndarray:
    """Viscosity value(s) at point(s) x for the parameter vector y."""
    return kl(x, y)


def clenshaw_curtis_1d(level: int):
    """Nested Clenshaw-Curtis rule on [-1,1] for the uniform density.

    Returns (nodes, weights) with weights normalized to sum to 1 (they
    integrate f against the density 1/2 on [-1,1]).  The interpolatory
    weights are exact for polynomials up to degree n-1.
    """
    if level not in CC_POINTS:
        raise ValueError(f"unsupported Clenshaw-Curtis level {level}; expected one of {sorted(CC_POINTS)}")
    n = CC_POINTS[level]
    if n == 1:
        return np.array([0.0]), np.array([1.0])
    k = np.arange(n)
    # sin form keeps the nodes exactly symmetric and exactly nested
    nodes = np.sin(math.pi * (2.0 * k - (n - 1)) / (2.0 * (n - 1)))
    # Chebyshev moments of the uniform density: int T_m(x)/2 dx on [-1,1]
    moments = np.zeros(n)
    even = np.arange(0, n, 2)
    moments[even] = 1.0 / (1.0 - even.astype(float) ** 2)
    V = np.polynomial.chebyshev.chebvander(nodes, n - 1)
    weights = np.linalg.solve(V.T, moments)
    return nodes, weights


@dataclass(frozen=True)
class SparseGrid:
    """Smolyak collocation grid on Gamma with probability weights."""

    ndim: int
    level: int
    nodes: np.ndarray  # (J, N)
    weights: np.ndarray  # (J,)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]


def smolyak_grid(ndim: int, level: int) -> SparseGrid:
    """Smolyak combination of nested CC rules, scaled to [-sqrt(3), sqrt(3)]^N.

    Duplicate nodes from overlapping tensor grids are merged with summed
    weights; nodes are sorted lexicographically for reproducibility.
    """
    if ndim < 1:
        raise ValueError("dimension must be >= 1")
    if level not in (0, 1, 2):
        raise ValueError(f"unsupported Smolyak level {level}")
    rules = {lv: clenshaw_curtis_1d(lv) for lv in range(level + 1)}
    acc: dict[tuple, float] = {}
    for total in range(max(0, level - ndim + 1), level + 1):
        coeff = (-1.0) ** (level - total) * math.comb(ndim - 1, level - total)
        if coeff == 0.0:
            continue
        for idx in _compositions(total, ndim):
            pts_1d = [rules[i][0] for i in idx]
            wts_1d = [rules[i][1] for i in idx]
            for combo in itertools.product(*(range(len(p)) for p in pts_1d)):
                node = tuple(pts_1d[d][combo[d]] for d in range(ndim))
                w = coeff * math.prod(wts_1d[d][combo[d]] for d in range(ndim))
                acc[node] = acc.get(node, 0.0) + w
    nodes = sorted(acc)
    weights = np.array([acc[n] for n in nodes])
    return SparseGrid(ndim, level, GAMMA_HALF_WIDTH * np.array(nodes), weights)


def _compositions(total: int, ndim: int):
    """All nonnegative integer N-tuples summing to `total`."""
    if ndim == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, ndim - 1):
            yield (first,) + rest


def weighted_expectation(values, weights) -> np.ndarray | float:
    """Collocation expectation sum_j w_j psi_j, per time sample if 2D.

    `values` is (J,) or (J, T); weights must align with the realization
    axis.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape[0] != weights.shape[0]:
        raise ValueError(f"{values.shape[0]} values vs {weights.shape[0]} weights")
    out = np.tensordot(weights, values, axes=(0, 0))
    return float(out) if np.ndim(out) == 0 else out


def grid_to_csv(grid: SparseGrid, path) -> None:
    """Audit dump: one row per node, coordinates then weight."""
    header = ",".join(f"y{i + 1}" for i in range(grid.ndim)) + ",weight"
    rows = [header]
    for node, w in zip(grid.nodes, grid.weights):
        rows.append(",".join(f"{v:.16g}" for v in node) + f",{w:.16g}")
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")
