"""Lagrangian-picture quantum fluid with its concealed companion flow (1D).

Fluid elements carry labels a (their positions at t = 0) and move along
q(a, t).  Mass conservation gives rho(q) = rho0(a) / J with J = dq/da, and
the visible motion obeys

    m qddot = -d/dq [Q_B + V],    Q_B = -(hbar^2 / 2m) (sqrt rho)'' / sqrt rho,

equivalently m qddot = (hbar^2 / 4m) (u_qq + u u_q) - V' with u = d log rho / dq.

The concealed flow Q(a, t) carries the constant momentum density
P = m rho0 Qdot0, with |Qdot0| = (hbar / 2m) |u0|, and evolves as

    Qdot = (u0^2)^-1 u^2 Qdot0,    Q = Q0 + R(a) * int_0^t u^2 dt',

where R = Qdot0 / u0^2.  Its kinetic energy equals the quantum potential
energy sum (hbar^2 / 8m) rho0 u^2 da at all times.

u0 = d log rho0 / da comes from 8th-order finite differences.  Higher
label derivatives, of q and of u0, go through a least-squares Legendre fit
whose degree is chosen so that explicit velocity-Verlet is stable at the
requested time step; see :mod:`concealed.stencils`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigError, NumericalError, TrajectoryCrossingError
from .stencils import LegendreDerivative, fd_matrix, stable_legendre_degree

log = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-8
BOUNDARY_LIMIT = 1e-3
RATIO_MASK = 1e-6


@dataclass(frozen=True)
class Potential:
    """External scalar potential V(x) with its gradient."""

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def harmonic(cls, omega: float, mass: float, center: float = 0.0) -> "Potential":
        k = mass * omega**2
        return cls(lambda x: 0.5 * k * (np.asarray(x) - center) ** 2,
                   lambda x: k * (np.asarray(x) - center))

    @classmethod
    def from_function(cls, fun, h: float = 1e-5) -> "Potential":
        return cls(fun, lambda x: (fun(np.asarray(x) + h) - fun(np.asarray(x) - h)) / (2 * h))


@dataclass(frozen=True)
class PhysicalParams:
    hbar: float = 1.0
    mass: float = 1.0
    dt: float = 1e-3
    t_final: float = 2.0
    external_potential: Optional[Potential] = None

    def __post_init__(self):
        for name in ("hbar", "mass", "dt"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.t_final < 0:
            raise ConfigError("t_final must be non-negative")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass(frozen=True)
class LabelGridSpec:
    """How to lay out labels: ``n_labels`` points across the retained span.

    The span is the connected region around the density maximum where
    rho0 >= ``density_floor * max rho0``, searched within
    ``center +- half_width``.
    """

    n_labels: int = 1024
    half_width: float = 12.0
    center: Optional[float] = None
    density_floor: float = DENSITY_FLOOR
    fit_degree: Optional[int] = None
    Q0: Optional[Callable[[np.ndarray], np.ndarray]] = None


@dataclass
class LabelGrid:
    a: np.ndarray
    da: float
    weights: np.ndarray
    rho0: np.ndarray
    rho0_concealed: np.ndarray
    log_rho0_derivs: np.ndarray
    fd: object
    fit: LegendreDerivative

    @property
    def n(self) -> int:
        return len(self.a)

    @property
    def u0(self) -> np.ndarray:
        return self.log_rho0_derivs[0]

    def integrate(self, density: np.ndarray) -> float:
        """Trapezoidal integral over labels."""
        return float(np.dot(self.weights, density))


@dataclass
class TrajectoryField:
    q: np.ndarray
    qdot: np.ndarray
    J: np.ndarray
    u: np.ndarray
    u0: np.ndarray
    t: float = 0.0
    accel: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class ConcealedField:
    Q0: np.ndarray
    Qdot0: np.ndarray
    P: np.ndarray
    R: np.ndarray
    I: np.ndarray
    Q: np.ndarray
    u2: np.ndarray
    masked: np.ndarray

    @property
    def velocity(self) -> np.ndarray:
        """Qdot = R u^2, i.e. (u0^2)^-1 u^2 Qdot0 with the u0 -> 0 limit resolved."""
        return self.R * self.u2


# --------------------------------------------------------------------- setup

def _retained_span(state, lo, hi, floor, n_probe):
    x = np.linspace(lo, hi, n_probe)
    rho = np.asarray(state.rho(x), dtype=float)
    if not np.all(np.isfinite(rho)) or np.max(rho) <= 0:
        raise ConfigError("initial density is not normalizable on the domain")
    peak = int(np.argmax(rho))
    cut = floor * rho[peak]
    keep = rho >= cut
    left = peak
    while left > 0 and keep[left - 1]:
        left -= 1
    right = peak
    while right < len(x) - 1 and keep[right + 1]:
        right += 1
    if state.decays:
        for edge in (left, right):
            if edge in (0, len(x) - 1) and rho[edge] > BOUNDARY_LIMIT * rho[peak]:
                raise ConfigError(
                    f"domain too small: density at x={x[edge]:.4g} is "
                    f"{rho[edge] / rho[peak]:.2e} of its maximum")

    def g(s):
        return float(state.rho(np.array([s]))[0]) - cut

    a_lo = x[left] if left == 0 else brentq(g, x[left - 1], x[left], xtol=1e-14)
    a_hi = x[right] if right == len(x) - 1 else brentq(g, x[right], x[right + 1], xtol=1e-14)
    # a jump in rho0 can leave the root just outside the support
    if g(a_lo) < 0:
        a_lo = x[left]
    if g(a_hi) < 0:
        a_hi = x[right]
    return a_lo, a_hi


def _trapezoid_weights(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def make_label_grid(params: PhysicalParams, spec: LabelGridSpec, state) -> LabelGrid:
    center = state.center if spec.center is None else spec.center
    lo, hi = center - spec.half_width, center + spec.half_width
    a_lo, a_hi = _retained_span(state, lo, hi, spec.density_floor, 40 * spec.n_labels + 1)
    a = np.linspace(a_lo, a_hi, spec.n_labels)
    da = a[1] - a[0]
    weights = _trapezoid_weights(len(a), da)
    rho0 = np.asarray(state.rho(a), dtype=float)
    if np.any(rho0 <= 0):
        raise ConfigError("initial density must be positive on the retained labels")
    norm = np.dot(weights, rho0)
    if not np.isfinite(norm) or norm <= 0:
        raise ConfigError("initial density is not normalizable")
    rho0 = rho0 / norm
    fd = fd_matrix(len(a), da)
    degree = spec.fit_degree
    if degree is None:
        degree = stable_legendre_degree(0.5 * (a_hi - a_lo), params.hbar, params.mass, params.dt)
    fit = LegendreDerivative(a, min(degree, len(a) // 4))
    d1 = fd @ np.log(rho0)
    # repeated stencils amplify round-off like da^-3 near the ends
    d2, d3 = fit(d1, orders=(1, 2))
    return LabelGrid(a, da, weights, rho0, rho0.copy(), np.array([d1, d2, d3]), fd, fit)


def init_scenario(params: PhysicalParams, grid_spec: LabelGridSpec, state):
    """Build labels, the visible field at t = 0 and the concealed field."""
    grid = make_label_grid(params, grid_spec, state)
    q = grid.a.copy()
    qdot = np.asarray(state.velocity(grid.a), dtype=float).copy()
    traj = TrajectoryField(q, qdot, np.ones_like(q), grid.u0.copy(), grid.u0.copy(), 0.0)
    J, u = jacobian_and_u(grid, traj)
    traj.J, traj.u = J, u
    traj.accel = quantum_force(params, grid, traj) / params.mass
    Qdot0 = initial_concealed_velocity(params, grid)
    P = concealed_momenta(params, grid, traj, Qdot0)
    R, masked = regularized_ratio(grid, Qdot0)
    Q0 = grid.a.copy() if grid_spec.Q0 is None else np.asarray(grid_spec.Q0(grid.a), dtype=float)
    conc = ConcealedField(Q0, Qdot0, P, R, np.zeros_like(q), Q0.copy(), traj.u**2, masked)
    return grid, traj, conc


# ---------------------------------------------------------------- kinematics

def _label_kinematics(grid: LabelGrid, q: np.ndarray):
    J, J1, J2, J3 = grid.fit(q, orders=(1, 2, 3, 4))
    if np.any(J <= 0):
        bad = int(np.argmin(J))
        raise TrajectoryCrossingError(
            f"J={J[bad]:.3e} at label index {bad} (a={grid.a[bad]:.4g}): trajectories crossed")
    d1, d2, d3 = grid.log_rho0_derivs
    r1 = J1 / J
    # derivatives along a of  log rho = log rho0 - log J
    e1 = d1 - r1
    e2 = d2 - J2 / J + r1**2
    e3 = d3 - J3 / J + 3 * r1 * J2 / J - 2 * r1**3
    return J, r1, J2 / J, e1, e2, e3


def jacobian_and_u(grid: LabelGrid, traj: TrajectoryField):
    """J = dq/da and u = J^-1 d/da(log rho0 - log J) on each trajectory."""
    J, _, _, e1, _, _ = _label_kinematics(grid, traj.q)
    return J, e1 / J


def mapped_density(grid: LabelGrid, traj: TrajectoryField) -> np.ndarray:
    """rho(q(a, t), t) = rho0(a) / J(a, t)."""
    return grid.rho0 / traj.J


def quantum_force(params: PhysicalParams, grid: LabelGrid, traj: TrajectoryField) -> np.ndarray:
    """-d/dq (Q_B + V) at every label, Q_B the Bohm quantum potential."""
    J, r1, r2, e1, e2, e3 = _label_kinematics(grid, traj.q)
    u = e1 / J
    u_q = (e2 - e1 * r1) / J**2
    u_qq = (e3 - 3 * e2 * r1 - e1 * r2 + 3 * e1 * r1**2) / J**3
    force = params.hbar**2 / (4 * params.mass) * (u_qq + u * u_q)
    if params.external_potential is not None:
        force = force - params.external_potential.gradient(traj.q)
    return force


def bohm_potential(params: PhysicalParams, grid: LabelGrid, traj: TrajectoryField) -> np.ndarray:
    """Q_B = -(hbar^2 / 4m) u_q - (hbar^2 / 8m) u^2 on each trajectory."""
    J, r1, _, e1, e2, _ = _label_kinematics(grid, traj.q)
    u = e1 / J
    u_q = (e2 - e1 * r1) / J**2
    return -params.hbar**2 / (4 * params.mass) * u_q - params.hbar**2 / (8 * params.mass) * u**2


def step_visible(params: PhysicalParams, grid: LabelGrid, traj: TrajectoryField) -> TrajectoryField:
    """One velocity-Verlet step of m qddot = quantum_force."""
    dt = params.dt
    accel = traj.accel if traj.accel is not None else quantum_force(params, grid, traj) / params.mass
    v_half = traj.qdot + 0.5 * dt * accel
    q = traj.q + dt * v_half
    moved = replace(traj, q=q)
    new_accel = quantum_force(params, grid, moved) / params.mass
    if not np.all(np.isfinite(new_accel)):
        bad = int(np.flatnonzero(~np.isfinite(new_accel))[0])
        raise NumericalError(f"non-finite quantum force at label index {bad} (t={traj.t + dt:.6g})")
    J, u = jacobian_and_u(grid, moved)
    return TrajectoryField(q, v_half + 0.5 * dt * new_accel, J, u, traj.u0, traj.t + dt, new_accel)


# ------------------------------------------------------------ concealed flow

def initial_concealed_velocity(params: PhysicalParams, grid: LabelGrid) -> np.ndarray:
    """Qdot0 = (hbar / 2m) u0, so Qdot0^2 = hbar^2 u0^2 / 4m^2 exactly."""
    return params.hbar / (2 * params.mass) * grid.u0


def concealed_momenta(params: PhysicalParams, grid: LabelGrid, traj: TrajectoryField,
                      Qdot0: np.ndarray) -> np.ndarray:
    """P = m rho0 Qdot0 (the metric factor u0^2 / u^2 is 1 at t = 0)."""
    return params.mass * grid.rho0_concealed * Qdot0


def regularized_ratio(grid: LabelGrid, Qdot0: np.ndarray, eta: float = RATIO_MASK):
    """R = Qdot0 / u0^2 where |u0| > eta max|u0|; linear fill elsewhere.

    Returns ``(R, masked)``.
    """
    u0 = grid.u0
    # gradients below atol are round-off of a flat density
    atol = 1e-9 / (grid.a[-1] - grid.a[0])
    scale = np.max(np.abs(u0))
    if scale <= atol:
        return np.zeros_like(u0), np.ones(u0.shape, dtype=bool)
    masked = np.abs(u0) <= max(eta * scale, atol)
    R = np.zeros_like(u0)
    R[~masked] = Qdot0[~masked] / u0[~masked] ** 2
    if np.any(masked):
        idx = np.arange(len(u0))
        R[masked] = np.interp(idx[masked], idx[~masked], R[~masked])
    return R, masked


def advance_concealed(conc: ConcealedField, traj: TrajectoryField, dt: float) -> ConcealedField:
    """Accumulate I = int u^2 dt (trapezoid) and set Q = Q0 + R I."""
    u2 = traj.u**2
    I = conc.I + 0.5 * dt * (conc.u2 + u2)
    return replace(conc, I=I, Q=conc.Q0 + conc.R * I, u2=u2)


def momentum_residual(params: PhysicalParams, grid: LabelGrid, traj: TrajectoryField,
                      conc: ConcealedField) -> np.ndarray:
    """m rho0 (u0^2 / u^2) Qdot - P, which vanishes when P is conserved."""
    factor = grid.u0**2 / np.maximum(traj.u**2, np.finfo(float).tiny)
    return params.mass * grid.rho0_concealed * factor * conc.velocity - conc.P


def step(params, grid, traj, conc):
    """Advance visible and concealed fields together by one dt."""
    traj = step_visible(params, grid, traj)
    return traj, advance_concealed(conc, traj, params.dt)


# ------------------------------------------------------------- diagnostics

def modified_lagrangian_value(params: PhysicalParams, grid: LabelGrid, traj: TrajectoryField):
    """(T_visible, U_quantum, L') with L' = T - U - sum rho0 V(q) da."""
    T = grid.integrate(0.5 * params.mass * grid.rho0 * traj.qdot**2)
    U = grid.integrate(params.hbar**2 / (8 * params.mass) * grid.rho0 * traj.u**2)
    V = 0.0
    if params.external_potential is not None:
        V = grid.integrate(grid.rho0 * params.external_potential.value(traj.q))
    return T, U, T - U - V


def classicality(params: PhysicalParams, grid: LabelGrid, traj: TrajectoryField,
                 floor: float = 1e-12):
    """Per-label (hbar / 2m)|u| / |qdot| and the energy ratio U_quantum / T_visible."""
    ratio = params.hbar / (2 * params.mass) * np.abs(traj.u) / np.maximum(np.abs(traj.qdot), floor)
    T, U, _ = modified_lagrangian_value(params, grid, traj)
    return ratio, (U / T if T > 0 else np.inf)
