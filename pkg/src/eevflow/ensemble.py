"""Ensemble state, statistics, and the eddy-viscosity ingredients.

Holds the J realization velocity histories, computes the ensemble mean and
fluctuations prescribed by a scheme descriptor, the Prandtl mixing length
l = sqrt(sum_j |u'_j|^2) at quadrature points, and the per-realization
viscosity ensemble with its fluctuation statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import AssemblyTables, TaylorHoodSpace


@dataclass
class EnsembleState:
    """Velocity/pressure coefficients of all realizations at one time level.

    u_hist[m] is the (J, n_u) velocity block at time level n - m (newest
    first); p is the latest pressure block (J, n_p).  States are treated as
    immutable: stepping returns a new instance.
    """

    space: TaylorHoodSpace
    u_hist: list  # list of (J, n_u) arrays, newest first
    p: np.ndarray
    t: float = 0.0
    n: int = 0

    @property
    def J(self) -> int:
        return self.u_hist[0].shape[0]

    @property
    def depth(self) -> int:
        return len(self.u_hist)

    @classmethod
    def from_initial(cls, space: TaylorHoodSpace, u0: np.ndarray) -> "EnsembleState":
        u0 = np.atleast_2d(np.asarray(u0, dtype=float))
        return cls(space, [u0], np.zeros((u0.shape[0], space.n_p)))


def extrapolated_velocity(state: EnsembleState, descriptor) -> np.ndarray:
    """(J, n_u) extrapolated velocities U_j per the descriptor coefficients."""
    if state.J == 0:
        raise RuntimeError("empty ensemble")
    if state.depth < descriptor.history_depth:
        raise RuntimeError(
            f"{descriptor.name} needs {descriptor.history_depth} history levels, state has {state.depth}"
        )
    U = np.zeros_like(state.u_hist[0])
    for c, u in zip(descriptor.extrap_coeffs, state.u_hist):
        U += c * u
    return U


def ensemble_mean(state: EnsembleState, descriptor) -> np.ndarray:
    """Coefficient-wise mean (1/J) sum_j U_j of the extrapolated velocities."""
    return extrapolated_velocity(state, descriptor).mean(axis=0)


def fluctuations(state: EnsembleState, descriptor) -> np.ndarray:
    """(J, n_u) fluctuations U_j minus the ensemble mean; they sum to zero."""
    U = extrapolated_velocity(state, descriptor)
    return U - U.mean(axis=0)


def fluctuation(state: EnsembleState, j: int, descriptor) -> np.ndarray:
    """Fluctuation of realization j."""
    return fluctuations(state, descriptor)[j]


@dataclass
class MixingLengthField:
    """Mixing length l and eddy viscosity nu_T = mu * dt * l^2 at quad points."""

    l: np.ndarray  # (nc, nq)
    nu_t: np.ndarray  # (nc, nq)
    mu: float
    dt: float

    @property
    def l_max(self) -> float:
        return float(self.l.max()) if self.l.size else 0.0


def mixing_length(state: EnsembleState, descriptor, tables: AssemblyTables, mu: float, dt: float) -> MixingLengthField:
    """Pointwise root-sum-of-squares of the ensemble velocity fluctuations.

    Evaluated at the quadrature points of `tables`; the mixing length only
    ever appears inside integrals, so no finite element projection is made.
    """
    fl = fluctuations(state, descriptor)  # (J, n_u)
    vals = tables.velocity_at_qp(fl)  # (J, nc, nq, 2)
    l = np.sqrt(np.einsum("jcqi,jcqi->cq", vals, vals, optimize=True))
    return MixingLengthField(l, mu * dt * l**2, mu, dt)


class ViscosityEnsemble:
    """Per-realization viscosity fields with fluctuation statistics.

    nu_bar is the ensemble mean field, nu'_j = nu_j - nu_bar the
    fluctuations, and
        alpha_j       = min nu_bar - ||nu'_j||_inf
        alpha_tilde_j = min nu_bar - 3 ||nu'_j||_inf
    are the margins entering the first- and second-order stability
    hypotheses.  Spatially varying fields are sampled at `stat_points` for
    the min/sup statistics.
    """

    def __init__(self, samples, stat_points: np.ndarray | None = None):
        is_field = len(samples) > 0 and callable(samples[0])
        if is_field:
            if stat_points is None:
                raise ValueError("spatially varying viscosity needs stat_points for its statistics")
            self._fields = list(samples)
            self._const = None
            vals = self.at_points(stat_points)  # (J, m)
        else:
            self._const = np.asarray(samples, dtype=float).reshape(-1)
            self._fields = None
            vals = self._const[:, None]
        if vals.shape[0] == 0:
            raise ValueError("viscosity ensemble must contain at least one realization")
        if np.any(vals <= 0.0):
            raise ValueError("viscosity must be positive everywhere sampled")
        self.J = vals.shape[0]
        bar = vals.mean(axis=0)
        prime = vals - bar
        self.nu_bar_min = float(bar.min())
        self.nu_prime_inf = np.abs(prime).max(axis=1)  # (J,)
        self.alpha = self.nu_bar_min - self.nu_prime_inf
        self.alpha_tilde = self.nu_bar_min - 3.0 * self.nu_prime_inf
        self._stat_vals = vals
        self._stat_bar = bar

    @property
    def is_constant(self) -> bool:
        return self._const is not None

    @property
    def nu_const(self) -> np.ndarray:
        if self._const is None:
            raise RuntimeError("viscosity ensemble is spatially varying")
        return self._const

    @property
    def nu_bar_const(self) -> float:
        """Scalar mean viscosity; only defined for constant ensembles."""
        return float(self.nu_const.mean())

    @property
    def nu_prime_const(self) -> np.ndarray:
        return self.nu_const - self.nu_bar_const

    def at_points(self, pts: np.ndarray) -> np.ndarray:
        """(J, m) viscosity values at the given points."""
        pts = np.asarray(pts, dtype=float)
        if self._const is not None:
            return np.broadcast_to(self._const[:, None], (self._const.size, pts.shape[0])).copy()
        return np.stack([np.asarray(f(pts), dtype=float).reshape(-1) for f in self._fields])

    def mean_at(self, pts: np.ndarray) -> np.ndarray:
        return self.at_points(pts).mean(axis=0)

    def prime_at(self, pts: np.ndarray) -> np.ndarray:
        vals = self.at_points(pts)
        return vals - vals.mean(axis=0)


def sample_uniform_viscosity(expected: float, spread: float, J: int, seed: int) -> ViscosityEnsemble:
    """J constant-in-space draws from Uniform(nu(1-spread), nu(1+spread)).

    The generator is numpy's seeded default PCG64; experiments record the
    seed so every random table is reproducible.
    """
    if expected <= 0.0:
        raise ValueError("expected viscosity must be positive")
    if not 0.0 <= spread < 1.0:
        raise ValueError(f"relative spread must lie in [0, 1), got {spread}")
    rng = np.random.default_rng(seed)
    draws = rng.uniform(expected * (1.0 - spread), expected * (1.0 + spread), size=J)
    return ViscosityEnsemble(draws)
