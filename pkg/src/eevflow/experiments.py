"""Experiment drivers: convergence tables, step channel, cavity SCM, timing.

Every run writes its artifacts into `cfg.outdir`: a metadata file echoing
the fully resolved configuration (re-runnable as a config), CSV tables, and
optional VTK snapshots.  Experiment CSVs contain no wall-clock data, so two
runs with the same configuration and seed produce byte-identical tables;
the opt-in per-step diagnostics stream and the timing experiment are the
deliberate exceptions.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from . import fem, linalg, scheme, stochastics, verification
from .config import ConfigError, ExperimentConfig, config_text, float_list, int_list
from .ensemble import EnsembleState, ViscosityEnsemble, sample_uniform_viscosity
from .fem import TaylorHoodSpace
from .mesh import DIRICHLET_INFLOW, DIRICHLET_LID, DIRICHLET_OUTFLOW, cavity_mesh, step_channel_mesh, write_vtk
from .scheme import DESCRIPTORS, StepParams
from .stochastics import KLViscosity, perturbation_coeffs, smolyak_grid


def emit_vtk(space: TaylorHoodSpace, fields: dict, path) -> None:
    """Write nodal velocity/pressure/speed point data in legacy VTK ASCII.

    Velocity is restricted to the mesh corner nodes (the Q2 coefficients at
    those nodes are the nodal values); pressure lives there already.
    """
    data = {}
    n = space.mesh.n_nodes
    if "velocity" in fields:
        vel = np.asarray(fields["velocity"]).reshape(space.n_q2, 2)[:n]
        data["velocity"] = vel
        data["speed"] = np.linalg.norm(vel, axis=1)
    if "pressure" in fields:
        data["pressure"] = np.asarray(fields["pressure"]).reshape(-1)
    write_vtk(space.mesh, path, point_data=data, title="eevflow fields")


def _fmt(x) -> str:
    return f"{x:.16g}"


def _write_csv(path, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def _write_metadata(cfg: ExperimentConfig, outdir: Path) -> None:
    with open(outdir / "metadata.txt", "w") as fh:
        fh.write(config_text(cfg, header="eevflow run metadata; reusable as a config file"))


def _write_audits(path, report: verification.ErrorReport) -> None:
    rows = []
    for level, audit in zip(report.levels, report.audits):
        for row in audit:
            rows.append((_fmt(level), row.realization, row.lhs, row.rhs, int(row.satisfied)))
    _write_csv(path, "level,realization,lhs,rhs,satisfied", rows)


def _workers() -> int:
    return max(1, int(os.environ.get("ENSEMBLE_EEV_THREADS", "1")))


# -- convergence studies -----------------------------------------------------


def run_converge_space(cfg: ExperimentConfig, outdir: Path) -> verification.ErrorReport:
    problem = verification.make_problem(cfg.e_nu, cfg.epsilon, cfg.J, cfg.seed, cfg.k_mode)
    report = verification.convergence_study(
        "spatial",
        DESCRIPTORS[cfg.scheme],
        problem,
        gamma=cfg.gamma,
        mu=cfg.mu,
        T=cfg.T,
        dt=cfg.dt,
        mesh_levels=int_list(cfg.mesh_levels),
        seminorm=cfg.seminorm,
        workers=_workers(),
    )
    _write_csv(
        outdir / "convergence.csv",
        "h,error,rate",
        [(h, e, "" if r is None else _fmt(r)) for h, e, r in report.rows()],
    )
    _write_audits(outdir / "audit.csv", report)
    return report


def run_converge_time(cfg: ExperimentConfig, outdir: Path) -> verification.ErrorReport:
    problem = verification.make_problem(cfg.e_nu, cfg.epsilon, cfg.J, cfg.seed, cfg.k_mode)
    report = verification.convergence_study(
        "temporal",
        DESCRIPTORS[cfg.scheme],
        problem,
        gamma=cfg.gamma,
        mu=cfg.mu,
        T=cfg.T,
        dt_divisors=int_list(cfg.dt_divisors),
        mesh_n=cfg.mesh_n,
        seminorm=cfg.seminorm,
        workers=_workers(),
    )
    _write_csv(
        outdir / "convergence.csv",
        "dt,error,rate",
        [(dt, e, "" if r is None else _fmt(r)) for dt, e, r in report.rows()],
    )
    _write_audits(outdir / "audit.csv", report)
    return report


# -- step channel -------------------------------------------------------------


def _channel_setup(cfg: ExperimentConfig):
    space = TaylorHoodSpace(step_channel_mesh(cfg.base))
    viscosity = sample_uniform_viscosity(cfg.e_nu, 0.1, cfg.J, cfg.seed)
    k = perturbation_coeffs(cfg.J, cfg.k_mode, cfg.seed + 1)
    scale = 1.0 + k * cfg.epsilon
    sign = -1.0 if cfg.negate_inflow else 1.0

    def profile(points):
        x2 = points[:, 1]
        vals = np.zeros((points.shape[0], 2))
        vals[:, 0] = sign * x2 * (x2 - 10.0) / 25.0
        return vals

    def bc(points, t, marker):
        if marker in (DIRICHLET_INFLOW, DIRICHLET_OUTFLOW):  # parabolic profile
            return scale[:, None, None] * profile(points)[None]
        return np.zeros((cfg.J, points.shape[0], 2))

    u0 = scale[:, None, None] * profile(space.q2_coords)[None]
    state0 = EnsembleState.from_initial(space, u0.reshape(cfg.J, space.n_u))
    return space, viscosity, bc, state0


def _transient_run(cfg, space, viscosity, bc, state0, params, outdir, forcing=None, weights=None, tag="energy"):
    """March to T, writing the energy series and optional VTK snapshots."""
    descriptor = DESCRIPTORS[cfg.scheme]
    stepper = scheme.EnsembleStepper(space, descriptor, params, viscosity, bc=bc, forcing=forcing, workers=_workers())
    state = state0
    n_steps = params.M
    if descriptor.history_depth == 2:
        be = scheme.EnsembleStepper(space, scheme.BE_EEV, params, viscosity, bc=bc, forcing=forcing, workers=_workers())
        state = scheme.bootstrap_bdf2(state, be_stepper=be)
        n_steps -= 1

    snapshots = set()
    targets = float_list(cfg.vtk_times)
    series = []

    def on_step(s, info):
        mean = s.u_hist[0].mean(axis=0)
        e_mean = 0.5 * float(mean @ (stepper.mass @ mean))
        row = [s.t, e_mean]
        if weights is not None:
            row.append(float(stochastics.weighted_expectation(info.energy, weights)))
        row.extend(info.energy.tolist())
        series.append(row)
        for tt in targets:
            if abs(s.t - tt) < 0.5 * params.dt and tt not in snapshots:
                snapshots.add(tt)
                emit_vtk(
                    space,
                    {"velocity": mean, "pressure": s.p.mean(axis=0)},
                    outdir / f"fields_t{tt:g}.vtk",
                )

    record = scheme.TrajectoryRecord()
    diag = open(outdir / "diagnostics.csv", "w") if cfg.diagnostics else None
    try:
        state = scheme.run_transient(stepper, state, n_steps, record=record, on_step=on_step, diagnostics=diag)
    finally:
        if diag is not None:
            diag.close()

    head = ["time", "mean_energy"]
    if weights is not None:
        head.append("weighted_energy")
    head.extend(f"energy_{j + 1}" for j in range(cfg.J))
    _write_csv(outdir / f"{tag}.csv", ",".join(head), series)
    return state, record, stepper


def run_step_channel(cfg: ExperimentConfig, outdir: Path):
    space, viscosity, bc, state0 = _channel_setup(cfg)
    if cfg.gamma_sweep:
        gammas = float_list(cfg.gamma_sweep)
        rows = []
        for g in gammas:
            params = StepParams(dt=cfg.dt, gamma=g, mu=cfg.mu, T=cfg.T)
            _, record, _ = _transient_run(
                cfg, space, viscosity, bc, state0, params, outdir, tag=f"energy_gamma{g:g}"
            )
            levels, _, _, dv = record.norm_arrays()
            div_sum = cfg.dt * np.sum(dv[1:] ** 2, axis=0)  # dt * sum_n ||div u_j^n||^2
            for j in range(cfg.J):
                rows.append((_fmt(g), j, float(div_sum[j])))
        _write_csv(outdir / "gamma_sweep.csv", "gamma,realization,div_time_sum", rows)
        return rows
    params = StepParams(dt=cfg.dt, gamma=cfg.gamma, mu=cfg.mu, T=cfg.T)
    state, record, stepper = _transient_run(cfg, space, viscosity, bc, state0, params, outdir)
    return state, record, stepper


# -- cavity with stochastic collocation ---------------------------------------


def run_cavity_scm(cfg: ExperimentConfig, outdir: Path):
    grid = smolyak_grid(cfg.kl_dim, cfg.kl_level)
    cfg.J = grid.n_nodes  # one realization per collocation node
    stochastics.grid_to_csv(grid, outdir / "grid.csv")

    space = TaylorHoodSpace(cavity_mesh(cfg.mesh_n))
    tables = fem.AssemblyTables(space)
    kl = KLViscosity(cfg.e_re, cfg.kl_length, cfg.kl_dim)
    fields = [(lambda pts, y=y: kl(pts, y)) for y in grid.nodes]
    viscosity = ViscosityEnsemble(fields, stat_points=tables.xq.reshape(-1, 2))

    k = perturbation_coeffs(cfg.J, cfg.k_mode, cfg.seed + 1)
    scale = 1.0 + k * cfg.epsilon

    def bc(points, t, marker):
        if marker == DIRICHLET_LID:
            vals = np.zeros((points.shape[0], 2))
            vals[:, 0] = (1.0 - points[:, 0] ** 2) ** 2
            return scale[:, None, None] * vals[None]
        return np.zeros((cfg.J, points.shape[0], 2))

    state0 = EnsembleState.from_initial(space, np.zeros((cfg.J, space.n_u)))
    params = StepParams(dt=cfg.dt, gamma=cfg.gamma, mu=cfg.mu, T=cfg.T)
    return _transient_run(cfg, space, viscosity, bc, state0, params, outdir, weights=grid.weights)


# -- plumbing experiments ------------------------------------------------------


def run_grid_dump(cfg: ExperimentConfig, outdir: Path):
    grid = smolyak_grid(cfg.kl_dim, cfg.kl_level)
    stochastics.grid_to_csv(grid, outdir / "grid.csv")
    return grid


def run_timing_compare(cfg: ExperimentConfig, outdir: Path):
    """Shared factorization vs. per-realization factorizations, same systems."""
    space, viscosity, bc, state = _channel_setup(cfg)
    params = StepParams(dt=cfg.dt, gamma=cfg.gamma, mu=cfg.mu, T=cfg.T)
    stepper = scheme.EnsembleStepper(space, DESCRIPTORS[cfg.scheme], params, viscosity, bc=bc, workers=_workers())
    t_shared = t_standard = 0.0
    for _ in range(cfg.timing_steps):
        K, B, G, _ml = stepper.assemble(state)
        F, C = stepper.free, stepper.constrained
        A = K[F][:, F]
        rhs = B[F, :] - K[F][:, C] @ G
        ts, tn = linalg.timing_compare(A, rhs)
        t_shared += ts
        t_standard += tn
        state, _ = stepper.step(state)
    _write_csv(
        outdir / "timing.csv",
        "n_dofs,n_reduced,J,steps,t_shared,t_standard,shared_faster",
        [(space.n_total, stepper.free.size, cfg.J, cfg.timing_steps, t_shared, t_standard, int(t_shared < t_standard))],
    )
    return t_shared, t_standard


DISPATCH = {
    "converge_space": run_converge_space,
    "converge_time": run_converge_time,
    "step_channel": run_step_channel,
    "cavity_scm": run_cavity_scm,
    "grid_dump": run_grid_dump,
    "timing_compare": run_timing_compare,
}


def run_experiment(cfg: ExperimentConfig):
    """Dispatch a configured experiment; artifacts land in cfg.outdir."""
    if cfg.experiment not in DISPATCH:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}")
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    result = DISPATCH[cfg.experiment](cfg, outdir)
    _write_metadata(cfg, outdir)
    return result
