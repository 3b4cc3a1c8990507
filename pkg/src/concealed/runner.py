"""Scenario orchestration: lockstep qlag/eref runs, CSV output and reports."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import eref, qlag
from .config import ScenarioConfig
from .energy import energy_lagrangian, energy_report, external_energy
from .errors import NumericalError
from .routh import DiscreteState, polar_free_particle, simulate_lockstep

log = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("t", "a", "q", "qdot", "J", "u", "Q", "Qdot")
ENERGY_COLUMNS = ("t", "T_visible", "T_concealed", "V_external", "H_lagrangian",
                  "H_eulerian", "H_operator", "H_metric")
EULERIAN_COLUMNS = ("t", "x", "rho_qlag", "rho_psi", "v", "V_concealed_lagrangian",
                    "V_concealed_continuity")
ROUTH_COLUMNS = ("t", "q_full", "q_reduced", "qdot_full", "Q_full", "Q_reconstructed",
                 "Qdot_full", "Qdot_reconstructed", "q_exact", "Q_exact")
FMT = "%.12e"


@dataclass
class RunReport:
    """Outcome of one run: metrics tagged by resolution plus the CSV tables."""

    scenario: str
    resolution: str
    metrics: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    status: str = "ok"
    failure: Optional[str] = None
    warnings: tuple = ()

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def metric(self, name: str) -> float:
        return self.metrics[name]

    def render(self) -> str:
        lines = [f"scenario = {self.scenario}", f"status = {self.status}"]
        if self.failure:
            lines.append(f"failure = {self.failure}")
        lines += [f"warning = {w}" for w in self.warnings]
        lines.append(f"resolution = {self.resolution}")
        for name, value in self.metrics.items():
            lines.append(f"{name} = {value:.6e}  [{self.resolution}]")
        for name, (value, limit, passed) in self.checks.items():
            verdict = "PASS" if passed else "FAIL"
            lines.append(f"check {name}: {verdict} ({value:.3e} <= {limit:.3e})  [{self.resolution}]")
        return "\n".join(lines) + "\n"


def _resolution(cfg: ScenarioConfig, n_labels=None, degree=None) -> str:
    if cfg.scenario == "routh-demo":
        return f"dt={cfg.dt:g}"
    parts = [f"N={n_labels or cfg.n_labels}", f"M={cfg.m_grid}", f"dt={cfg.dt:g}"]
    if degree is not None:
        parts.append(f"K={degree}")
    return " ".join(parts)


def write_table(path: Path, columns, rows: np.ndarray) -> None:
    rows = np.asarray(rows, dtype=float).reshape(-1, len(columns))
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        np.savetxt(fh, rows, fmt=FMT, delimiter=",")


def _write_outputs(report: RunReport, out_dir: Optional[Path]) -> None:
    if out_dir is None:
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (columns, blocks) in report.tables.items():
        rows = np.concatenate(blocks, axis=0) if blocks else np.empty((0, len(columns)))
        write_table(out_dir / name, columns, rows)
    (out_dir / "report.txt").write_text(report.render())


# ---------------------------------------------------------------- qlag run

def setup(cfg: ScenarioConfig):
    """Physical parameters, initial state, label spec and Eulerian grid for ``cfg``."""
    state = cfg.packet()
    potential = qlag.Potential.harmonic(cfg.omega, cfg.mass) if cfg.omega > 0 else None
    params = qlag.PhysicalParams(hbar=cfg.hbar, mass=cfg.mass, dt=cfg.dt, t_final=cfg.t_final,
                                 external_potential=potential)
    spec = qlag.LabelGridSpec(n_labels=cfg.n_labels, half_width=cfg.half_width,
                              fit_degree=cfg.label_modes or None)
    lo, hi = state.support(cfg.t_final, n_sigma=10.0)
    x = eref.make_grid(lo, hi, cfg.m_grid)
    return params, state, spec, x


def continuity_weights(grid) -> np.ndarray:
    """Per-label weights rho0 u0^2 da, the concealed-energy density at t = 0."""
    return grid.weights * grid.rho0 * grid.u0**2


def continuity_error(grid, traj, conc, conc_e, x) -> float:
    """Weighted mean relative drift of J W(q) along trajectories."""
    inv = eref.label_continuity_invariant(conc_e, x, traj)
    keep = ~conc.masked
    rel = np.abs(inv[keep] - conc.R[keep]) / np.abs(conc.R[keep])
    w = continuity_weights(grid)[keep]
    return float(np.sum(w * rel) / np.sum(w))


def _l2(diff, dx):
    return float(np.sqrt(np.sum(diff**2) * dx))


def run(cfg: ScenarioConfig, out_dir: Optional[str | Path] = None, quiet: bool = True) -> RunReport:
    """Execute ``cfg``; write CSVs and report.txt into ``out_dir`` if given.

    Numerical failures write a partial report and are re-raised.
    """
    out = Path(out_dir) if out_dir is not None else None
    if cfg.scenario == "routh-demo":
        return run_routh_demo(cfg, out)
    report = RunReport(cfg.scenario, _resolution(cfg), warnings=cfg.warnings)
    try:
        _run_fluid(cfg, report, quiet)
    except NumericalError as exc:
        report.status = "failed"
        report.failure = str(exc)
        _write_outputs(report, out)
        raise
    _write_outputs(report, out)
    return report


def _run_fluid(cfg: ScenarioConfig, report: RunReport, quiet: bool) -> None:
    params, state, spec, x = setup(cfg)
    grid, traj, conc = qlag.init_scenario(params, spec, state)
    report.resolution = _resolution(cfg, grid.n, grid.fit.degree)
    dx = float(x[1] - x[0])
    traj_rows, energy_rows, euler_rows = [], [], []
    report.tables = {"trajectories.csv": (TRAJECTORY_COLUMNS, traj_rows),
                     "energy.csv": (ENERGY_COLUMNS, energy_rows),
                     "eulerian.csv": (EULERIAN_COLUMNS, euler_rows)}
    fields = solver = conc_e = None
    if cfg.run_reference:
        fields = eref.init_fields(state, x, cfg.hbar, cfg.mass)
        solver = eref.CrankNicolson(x, cfg.hbar, cfg.mass, cfg.dt,
                                    params.external_potential.value if params.external_potential else None)
        if cfg.run_concealed:
            conc_e = eref.init_concealed_eulerian(fields, cfg.hbar, cfg.mass)

    stats = dict(trajectory=0.0, concealed=0.0, drift=0.0, spread=0.0, central=0.0,
                 momentum=0.0, density=0.0)
    H0 = T0 = None
    p_scale = max(np.max(np.abs(conc.P)), np.finfo(float).tiny)

    def record(k):
        nonlocal H0, T0
        t = k * cfg.dt
        rep = energy_report(params, grid, traj, conc, fields, t=t)
        U = qlag.modified_lagrangian_value(params, grid, traj)[1]
        if H0 is None:
            H0, T0 = rep.H_lagrangian, rep.T_concealed
            report.metrics["energy_ratio_t0"] = rep.T_concealed / rep.T_visible if rep.T_visible > 0 else math.inf
        scale = abs(H0) if H0 != 0 else 1.0
        stats["drift"] = max(stats["drift"], abs(rep.H_lagrangian - H0) / scale)
        stats["spread"] = max(stats["spread"], rep.spread() / scale)
        if T0:
            stats["central"] = max(stats["central"], abs(rep.T_concealed - U) / T0)
        n = grid.n
        Q = conc.Q if cfg.run_concealed else np.full(n, np.nan)
        Qdot = conc.velocity if cfg.run_concealed else np.full(n, np.nan)
        traj_rows.append(np.column_stack([np.full(n, t), grid.a, traj.q, traj.qdot, traj.J, traj.u, Q, Qdot]))
        T_con = rep.T_concealed if cfg.run_concealed else np.nan
        H_met = rep.H_metric if cfg.run_concealed else np.nan
        H_lag = rep.H_lagrangian if cfg.run_concealed else rep.T_visible + U + rep.V_external
        energy_rows.append(np.array([[t, rep.T_visible, T_con, rep.V_external, H_lag,
                                      rep.H_eulerian, rep.H_operator, H_met]]))
        V_lag, rho_lag = eref.lagrangian_to_eulerian(grid, traj, conc, x)
        m = len(x)
        nan = np.full(m, np.nan)
        if fields is not None:
            inside = np.isfinite(rho_lag)
            stats["density"] = max(stats["density"], _l2(rho_lag[inside] - fields.rho[inside], dx))
        euler_rows.append(np.column_stack([
            np.full(m, t), x, rho_lag,
            fields.rho if fields is not None else nan,
            np.where(fields.masked, np.nan, fields.v) if fields is not None else nan,
            V_lag if cfg.run_concealed else nan,
            np.where(conc_e.u_masked, np.nan, conc_e.V) if conc_e is not None else nan]))
        if not quiet:
            print(f"t={t:.4f}  H_lagrangian={rep.H_lagrangian:.10f}  T_concealed={rep.T_concealed:.10f}")

    def track(k):
        t = k * cfg.dt
        stats["trajectory"] = max(stats["trajectory"], float(np.max(np.abs(traj.q - state.trajectory(grid.a, t)))))
        if cfg.run_concealed:
            exact = state.concealed_displacement(grid.a, t)
            stats["concealed"] = max(stats["concealed"], float(np.max(np.abs(conc.Q - conc.Q0 - exact))))
            res = qlag.momentum_residual(params, grid, traj, conc)
            stats["momentum"] = max(stats["momentum"], float(np.max(np.abs(res))) / p_scale)
        if H0 is not None:
            T_vis, T_con = energy_lagrangian(params, grid, traj, conc)
            H = T_vis + T_con + external_energy(params, grid, traj)
            stats["drift"] = max(stats["drift"], abs(H - H0) / (abs(H0) if H0 != 0 else 1.0))

    n_steps = cfg.n_steps
    record(0)
    track(0)
    for k in range(1, n_steps + 1):
        try:
            traj = qlag.step_visible(params, grid, traj)
        except NumericalError as exc:
            raise type(exc)(f"step {k} (t={k * cfg.dt:.6g}): {exc}") from exc
        traj.t = k * cfg.dt
        if cfg.run_concealed:
            conc = qlag.advance_concealed(conc, traj, cfg.dt)
        if fields is not None:
            fields = solver.step(fields)
            fields.t = k * cfg.dt
            if conc_e is not None:
                n_sub = eref.continuity_substeps(fields, cfg.dt)
                for _ in range(n_sub):
                    conc_e = eref.concealed_continuity_step(conc_e, fields, cfg.dt / n_sub)
        track(k)
        if k % cfg.output_stride == 0 or k == n_steps:
            record(k)

    M = report.metrics
    M["trajectory_sup_error"] = stats["trajectory"]
    M["energy_drift"] = stats["drift"]
    if cfg.run_concealed:
        M["concealed_sup_error"] = stats["concealed"]
        M["central_claim_error"] = stats["central"]
        M["momentum_consistency"] = stats["momentum"]
    V_lag, rho_lag = eref.lagrangian_to_eulerian(grid, traj, conc, x)
    inside = np.isfinite(rho_lag)
    M["mapped_mass_error"] = abs(float(np.sum(rho_lag[inside]) * dx) - 1.0)
    if fields is not None:
        t_end = n_steps * cfg.dt
        M["density_l2_error"] = _l2(rho_lag[inside] - fields.rho[inside], dx)
        M["density_l2_error_max"] = stats["density"]
        M["reference_density_l2_error"] = _l2(fields.rho - state.density_at(x, t_end), dx)
        M["identity_chain_spread"] = stats["spread"]
        M["norm_error"] = abs(fields.norm() - 1.0)
        if conc_e is not None:
            M["continuity_invariant_error"] = continuity_error(grid, traj, conc, conc_e, x)
            keep = inside & ~conc_e.u_masked
            denom = np.linalg.norm(V_lag[keep])
            M["continuity_velocity_l2_rel"] = (float(np.linalg.norm(V_lag[keep] - conc_e.V[keep]) / denom)
                                               if denom > 0 else 0.0)
            M["continuity_masked_fraction"] = conc_e.masked_fraction
    M["label_fit_degree"] = float(grid.fit.degree)
    tol = cfg.tolerance
    report.checks["trajectory_sup_error"] = (M["trajectory_sup_error"], tol, M["trajectory_sup_error"] <= tol)
    if cfg.run_concealed:
        report.checks["concealed_sup_error"] = (M["concealed_sup_error"], tol, M["concealed_sup_error"] <= tol)


# ----------------------------------------------------------- routh demo

def run_routh_demo(cfg: ScenarioConfig, out: Optional[Path]) -> RunReport:
    """Polar free particle: L = qdot^2/2 + q^2 Qdot^2/2 from q=1, qdot=0, Qdot=1."""
    report = RunReport(cfg.scenario, _resolution(cfg), warnings=cfg.warnings)
    sys = polar_free_particle()
    s0 = DiscreteState(q=np.array([1.0]), qdot=np.array([0.0]), Q=np.array([0.0]), Qdot=np.array([1.0]))
    try:
        full, reduced, red = simulate_lockstep(sys, s0, cfg.dt, cfg.n_steps, scheme="rk4")
    except NumericalError as exc:
        report.status, report.failure = "failed", str(exc)
        _write_outputs(report, out)
        raise
    t = full.t
    q_exact = np.sqrt(1 + t**2)
    Q_exact = np.arctan(t)
    M = report.metrics
    M["full_vs_reduced_sup"] = float(np.max(np.abs(full.q - reduced.q)))
    M["q_final_error"] = float(abs(full.q[-1, 0] - q_exact[-1]))
    M["concealed_final_error"] = float(abs(reduced.Q[-1, 0] - Q_exact[-1]))
    M["concealed_sup_error"] = float(np.max(np.abs(reduced.Q[:, 0] - Q_exact)))
    momentum = full.q[:, 0] ** 2 * full.Qdot[:, 0]
    M["momentum_drift"] = float(np.max(np.abs(momentum - red.P[0])))
    tol = cfg.tolerance
    report.checks["full_vs_reduced_sup"] = (M["full_vs_reduced_sup"], tol, M["full_vs_reduced_sup"] <= tol)
    report.checks["concealed_sup_error"] = (M["concealed_sup_error"], tol, M["concealed_sup_error"] <= tol)
    idx = np.unique(np.r_[np.arange(0, len(t), cfg.output_stride), len(t) - 1])
    rows = np.column_stack([t, full.q[:, 0], reduced.q[:, 0], full.qdot[:, 0], full.Q[:, 0],
                            reduced.Q[:, 0], full.Qdot[:, 0], reduced.Qdot[:, 0], q_exact, Q_exact])[idx]
    report.tables = {"routh.csv": (ROUTH_COLUMNS, [rows])}
    _write_outputs(report, out)
    return report


# ----------------------------------------------------------- convergence

CONVERGENCE_METRICS = ("trajectory_sup_error", "density_l2_error", "energy_drift",
                       "concealed_sup_error", "continuity_invariant_error")


def observed_orders(levels, errors) -> list[float]:
    """Richardson orders log(e_k / e_k+1) / log(l_k+1 / l_k) between consecutive levels."""
    out = []
    for (l0, e0), (l1, e1) in zip(zip(levels, errors), zip(levels[1:], errors[1:])):
        if e0 > 0 and e1 > 0 and np.isfinite(e0) and np.isfinite(e1):
            out.append(math.log(e0 / e1) / math.log(l1 / l0))
        else:
            out.append(math.nan)
    return out


@dataclass
class ConvergenceTable:
    levels: tuple
    resolutions: list
    errors: dict
    orders: dict

    def render(self) -> str:
        lines = ["metric," + ",".join(f"level_{k}" for k in self.levels)
                 + "," + ",".join(f"order_{a}_{b}" for a, b in zip(self.levels, self.levels[1:]))]
        for name, errs in self.errors.items():
            lines.append(name + "," + ",".join(f"{e:.6e}" for e in errs) + ","
                         + ",".join(f"{o:.3f}" for o in self.orders[name]))
        return "\n".join(lines) + "\n"


def converge(cfg: ScenarioConfig, out_dir: Optional[str | Path] = None, quiet: bool = True) -> ConvergenceTable:
    """Rerun ``cfg`` with labels, grid and step refined together at each level."""
    levels = tuple(sorted(set(cfg.convergence_levels)))
    if cfg.scenario == "routh-demo":
        names = ("q_final_error", "concealed_final_error", "full_vs_reduced_sup")
    else:
        names = CONVERGENCE_METRICS
    resolutions, errors = [], {n: [] for n in names}
    for level in levels:
        rep = run(cfg.refined(level), None, quiet=True)
        resolutions.append(rep.resolution)
        for n in names:
            errors[n].append(rep.metrics.get(n, math.nan))
        if not quiet:
            print(f"level {level}: {rep.resolution}")
    errors = {n: e for n, e in errors.items() if not all(math.isnan(v) for v in e)}
    table = ConvergenceTable(levels, resolutions, errors,
                             {n: observed_orders(levels, e) for n, e in errors.items()})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "convergence.csv").write_text(table.render())
        text = [f"scenario = {cfg.scenario}"]
        text += [f"level {k}: {r}" for k, r in zip(levels, resolutions)]
        text.append(table.render())
        (out / "report.txt").write_text("\n".join(text))
    return table
