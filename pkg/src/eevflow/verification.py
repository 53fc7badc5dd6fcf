"""Manufactured solutions, discrete norms, and convergence studies.

The synthetic velocity/pressure pair

    u = (cos x2 + (1+e^t) sin x2,  sin x1 + (1+e^t) cos x1)
    p = sin(x1 + x2) (1+e^t)

is divergence-free and satisfies Delta u = -u, which keeps the closed-form
forcing compact.  Realization j carries the scaled data
u_j = (1 + k_j eps) u, p_j = (1 + k_j eps) p, and its forcing comes from
substituting that data into the momentum equation
f_j = d_t u_j + u_j . grad u_j - nu_j Delta u_j + grad p_j.

The reported space-time error is the discrete L^2(0,T; H^1) norm

    ||<e>||_{2,1} = (dt sum_n ||<e>(t_n)||^2 + ||grad <e>(t_n)||^2)^(1/2)

of the ensemble-mean velocity error (the H^1 seminorm variant is a flag).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem, scheme
from .ensemble import EnsembleState, ViscosityEnsemble
from .fem import AssemblyTables, TaylorHoodSpace
from .mesh import unit_square_mesh


class ManufacturedSolution:
    """Closed-form fields and derivatives of the reference flow."""

    @staticmethod
    def velocity(x: np.ndarray, t: float) -> np.ndarray:
        x = np.atleast_2d(x)
        a = 1.0 + np.exp(t)
        return np.stack([np.cos(x[:, 1]) + a * np.sin(x[:, 1]), np.sin(x[:, 0]) + a * np.cos(x[:, 0])], axis=-1)

    @staticmethod
    def velocity_t(x: np.ndarray, t: float) -> np.ndarray:
        x = np.atleast_2d(x)
        e = np.exp(t)
        return np.stack([e * np.sin(x[:, 1]), e * np.cos(x[:, 0])], axis=-1)

    @staticmethod
    def velocity_grad(x: np.ndarray, t: float) -> np.ndarray:
        """(m, 2, 2) entries du_i/dx_j."""
        x = np.atleast_2d(x)
        a = 1.0 + np.exp(t)
        g = np.zeros((x.shape[0], 2, 2))
        g[:, 0, 1] = -np.sin(x[:, 1]) + a * np.cos(x[:, 1])
        g[:, 1, 0] = np.cos(x[:, 0]) - a * np.sin(x[:, 0])
        return g

    @staticmethod
    def velocity_laplacian(x: np.ndarray, t: float) -> np.ndarray:
        return -ManufacturedSolution.velocity(x, t)

    @staticmethod
    def pressure(x: np.ndarray, t: float) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.sin(x[:, 0] + x[:, 1]) * (1.0 + np.exp(t))

    @staticmethod
    def pressure_grad(x: np.ndarray, t: float) -> np.ndarray:
        x = np.atleast_2d(x)
        c = np.cos(x[:, 0] + x[:, 1]) * (1.0 + np.exp(t))
        return np.stack([c, c], axis=-1)

    @staticmethod
    def divergence(x: np.ndarray, t: float) -> np.ndarray:
        g = ManufacturedSolution.velocity_grad(x, t)
        return g[:, 0, 0] + g[:, 1, 1]


def manufactured_forcing(k: float, eps: float, nu: float, x: np.ndarray, t: float) -> np.ndarray:
    """Strong-form forcing of realization data (1 + k eps)(u, p) with viscosity nu.

    With a = 1 + k eps and Delta u = -u this is
    a (u_t + grad p) + a nu u + a^2 (u . grad u): the convection part scales
    quadratically in a, everything else linearly.
    """
    ms = ManufacturedSolution
    a = 1.0 + k * eps
    u = ms.velocity(x, t)
    conv = np.einsum("mk,mik->mi", u, ms.velocity_grad(x, t))
    return a * (ms.velocity_t(x, t) + ms.pressure_grad(x, t)) + a * nu * u + a * a * conv


class EnsembleProblem:
    """Manufactured ensemble data: scaled solutions, BCs, and forcing.

    Bundles the perturbation coefficients k_j, the viscosity draws, and the
    closures the stepper consumes (ensemble boundary data and body force).
    """

    def __init__(self, k: np.ndarray, eps: float, viscosity: ViscosityEnsemble):
        self.k = np.asarray(k, dtype=float)
        self.eps = eps
        self.scale = 1.0 + self.k * eps  # (J,)
        self.viscosity = viscosity

    @property
    def J(self) -> int:
        return self.k.size

    def exact_velocity(self, x: np.ndarray, t: float) -> np.ndarray:
        """(J, m, 2) scaled realization velocities."""
        return self.scale[:, None, None] * ManufacturedSolution.velocity(x, t)[None]

    def exact_mean_field(self) -> "VectorField":
        s = float(self.scale.mean())
        return VectorField(
            lambda x, t: s * ManufacturedSolution.velocity(x, t),
            lambda x, t: s * ManufacturedSolution.velocity_grad(x, t),
        )

    def bc(self, points: np.ndarray, t: float, marker: int) -> np.ndarray:
        return self.exact_velocity(points, t)

    def forcing(self, points: np.ndarray, t: float) -> np.ndarray:
        ms = ManufacturedSolution
        u = ms.velocity(points, t)
        base = ms.velocity_t(points, t) + ms.pressure_grad(points, t)
        conv = np.einsum("mk,mik->mi", u, ms.velocity_grad(points, t))
        a = self.scale[:, None, None]
        nu = self.viscosity.nu_const[:, None, None]
        return a * (base[None] + nu * u[None]) + a * a * conv[None]

    def initial_state(self, space: TaylorHoodSpace) -> EnsembleState:
        u0 = self.exact_velocity(space.q2_coords, 0.0).reshape(self.J, space.n_u)
        return EnsembleState.from_initial(space, u0)


@dataclass(frozen=True)
class VectorField:
    """Analytic vector field as (value, gradient) closures."""

    value: object  # callable(x, t) -> (m, 2)
    grad: object  # callable(x, t) -> (m, 2, 2)


def mean_error_at(tables: AssemblyTables, mean_u: np.ndarray, exact: VectorField, t: float):
    """(||e||^2, ||grad e||^2) of the FE mean against the exact mean at time t."""
    xq = tables.xq.reshape(-1, 2)
    e = tables.velocity_at_qp(mean_u) - np.asarray(exact.value(xq, t)).reshape(tables.xq.shape)
    ge = tables.velocity_grad_at_qp(mean_u) - np.asarray(exact.grad(xq, t)).reshape(tables.xq.shape + (2,))
    l2 = float(np.einsum("cq,cqi,cqi->", tables.wdet, e, e))
    h1 = float(np.einsum("cq,cqij,cqij->", tables.wdet, ge, ge))
    return l2, h1


def error_norm_2_1(mean_traj, exact: VectorField, tables: AssemblyTables, dt: float, seminorm: bool = False) -> float:
    """Discrete L^2(0,T;H^1) norm of the mean-velocity error.

    `mean_traj` holds the FE ensemble-mean coefficients at t_n = n dt for
    n = 1..M.  With `seminorm` only the gradient part is kept.
    """
    total = 0.0
    for n, mean_u in enumerate(mean_traj, start=1):
        l2, h1 = mean_error_at(tables, np.asarray(mean_u), exact, n * dt)
        total += (0.0 if seminorm else l2) + h1
    return float(np.sqrt(dt * total))


def kinetic_energy(tables: AssemblyTables, u: np.ndarray) -> float:
    """1/2 ||u||^2 by quadrature."""
    uq = tables.velocity_at_qp(u)
    return float(0.5 * np.einsum("cq,cqi,cqi->", tables.wdet, uq, uq))


def divergence_norm(tables: AssemblyTables, u: np.ndarray) -> float:
    """||div u||_{L^2} by quadrature."""
    g = tables.velocity_grad_at_qp(u)
    d = g[..., 0, 0] + g[..., 1, 1]
    return float(np.sqrt(np.einsum("cq,cq->", tables.wdet, d**2)))


@dataclass
class ErrorReport:
    """Refinement levels with errors and observed rates."""

    kind: str  # "spatial" or "temporal"
    descriptor: str
    levels: list  # h or dt per row
    errors: list
    rates: list  # None for the first row
    audits: list  # per-level list of AuditRow

    def rows(self):
        return list(zip(self.levels, self.errors, self.rates))


def _rates(errors):
    out = [None]
    for a, b in zip(errors, errors[1:]):
        out.append(float(np.log2(a / b)))
    return out


def make_problem(e_nu: float, eps: float, J: int, seed: int, k_mode: str = "deterministic") -> EnsembleProblem:
    from .ensemble import sample_uniform_viscosity
    from .stochastics import perturbation_coeffs

    visc = sample_uniform_viscosity(e_nu, 0.1, J, seed)
    k = perturbation_coeffs(J, k_mode, seed + 1)
    return EnsembleProblem(k, eps, visc)


def run_manufactured(
    descriptor,
    params: scheme.StepParams,
    problem: EnsembleProblem,
    n_cells: int,
    seminorm: bool = False,
    workers: int | None = None,
):
    """One transient on the unit square; error norm plus stability audit."""
    space = TaylorHoodSpace(unit_square_mesh(n_cells))
    stepper = scheme.EnsembleStepper(
        space, descriptor, params, problem.viscosity, bc=problem.bc, forcing=problem.forcing, workers=workers
    )
    state = problem.initial_state(space)
    n_steps = params.M
    if descriptor.history_depth == 2:
        state = scheme.bootstrap_bdf2(state, exact=problem.exact_velocity, dt=params.dt)
        n_steps -= 1
    record = scheme.TrajectoryRecord()
    state = scheme.run_transient(stepper, state, n_steps, record=record, record_means=True)
    means = [record.means[n] for n in sorted(record.means)]
    err = error_norm_2_1(means, problem.exact_mean_field(), stepper.tables, params.dt, seminorm=seminorm)
    audit = scheme.stability_audit(record, stepper)
    return err, audit, state


def convergence_study(
    kind: str,
    descriptor,
    problem: EnsembleProblem,
    gamma: float,
    mu: float = 1.0,
    T: float | None = None,
    dt: float | None = None,
    mesh_levels=(2, 4, 8, 16),
    dt_divisors=(4, 8, 16, 32, 64),
    mesh_n: int = 32,
    seminorm: bool = False,
    workers: int | None = None,
) -> ErrorReport:
    """Refine h (spatial) or dt (temporal) by factors of two and tabulate.

    Spatial runs fix a very short end time so the temporal error stays
    negligible; temporal runs fix the mesh and halve dt.
    """
    errors, audits = [], []
    if kind == "spatial":
        T = 0.001 if T is None else T
        dt = T / 8.0 if dt is None else dt
        levels = [1.0 * np.sqrt(2.0) / n for n in mesh_levels]
        for n in mesh_levels:
            params = scheme.StepParams(dt=dt, gamma=gamma, mu=mu, T=T)
            err, audit, _ = run_manufactured(descriptor, params, problem, n, seminorm, workers)
            errors.append(err)
            audits.append(audit)
    elif kind == "temporal":
        T = 1.0 if T is None else T
        levels = [T / d for d in dt_divisors]
        for d in dt_divisors:
            params = scheme.StepParams(dt=T / d, gamma=gamma, mu=mu, T=T)
            err, audit, _ = run_manufactured(descriptor, params, problem, mesh_n, seminorm, workers)
            errors.append(err)
            audits.append(audit)
    else:
        raise ValueError(f"unknown study kind {kind!r}")
    return ErrorReport(kind, descriptor.name, levels, errors, _rates(errors), audits)
