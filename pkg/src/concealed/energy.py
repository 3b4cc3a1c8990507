"""Energy bookkeeping across the Lagrangian, Eulerian and operator pictures."""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .eref import EulerianFields, derivative_operator


@dataclass(frozen=True)
class EnergyReport:
    t: float
    T_visible: float
    T_concealed: float
    V_external: float
    H_lagrangian: float
    H_eulerian: float = np.nan
    H_operator: float = np.nan
    H_metric: float = np.nan
    H_operator_second_form: float = np.nan

    def spread(self) -> float:
        """Largest pairwise gap among the available totals."""
        vals = np.array([self.H_lagrangian, self.H_eulerian, self.H_operator, self.H_metric])
        vals = vals[np.isfinite(vals)]
        return float(np.ptp(vals)) if len(vals) else 0.0

    def as_dict(self) -> dict:
        return asdict(self)


def energy_lagrangian(params, grid, traj, conc):
    """Visible and concealed kinetic energies summed over labels.

    The concealed density is (1/2) m rho0 (u0^2 / u^2) Qdot^2 with
    Qdot = R u^2, which simplifies to (1/2) m rho0 (R u0)^2 u^2 and stays
    finite where u0 vanishes.
    """
    T_vis = grid.integrate(0.5 * params.mass * grid.rho0 * traj.qdot**2)
    T_con = grid.integrate(0.5 * params.mass * grid.rho0_concealed * (conc.R * grid.u0) ** 2 * traj.u**2)
    return T_vis, T_con


def external_energy(params, grid, traj) -> float:
    if params.external_potential is None:
        return 0.0
    return grid.integrate(grid.rho0 * params.external_potential.value(traj.q))


def energy_eulerian(params, fields: EulerianFields) -> float:
    """Trapezoid sum of (1/2) m rho v^2 + (hbar^2 / 8m) rho u^2, plus rho V when a potential is set."""
    dens = 0.5 * params.mass * fields.rho * fields.v**2 + params.hbar**2 / (8 * params.mass) * fields.rho * fields.u**2
    if params.external_potential is not None:
        dens = dens + fields.rho * params.external_potential.value(fields.x)
    return float(np.dot(fields.weights, dens))


def energy_operator(params, fields: EulerianFields, second_form: bool = False):
    """<H> from psi.

    The primary value is (hbar^2/2m) sum |psi'|^2 dx (+ <V>), real by
    construction.  With ``second_form=True`` also returns the complex
    -(hbar^2/2m) sum psi* psi'' dx (+ <V>) for comparison.
    """
    psi = fields.psi
    w = fields.weights
    c = params.hbar**2 / (2 * params.mass)
    dpsi = derivative_operator(len(psi), fields.dx) @ psi
    pot = 0.0
    if params.external_potential is not None:
        pot = float(np.dot(w, np.abs(psi) ** 2 * params.external_potential.value(fields.x)))
    H = c * float(np.dot(w, np.abs(dpsi) ** 2)) + pot
    if not second_form:
        return H
    d2psi = derivative_operator(len(psi), fields.dx, deriv=2) @ psi
    return H, -c * complex(np.dot(w, np.conj(psi) * d2psi)) + pot


def energy_metric(params, grid, traj, conc) -> float:
    """Kinetic energy as a per-label contraction (1/2) m xi_dot^T G xi_dot.

    ``xi_dot = (qdot, Qdot)`` and ``G = diag(rho0, rho0_concealed u0^2 / u^2)``.
    Labels where u vanishes exactly contribute their visible part only
    (Qdot = R u^2 sends the concealed term to zero there).
    """
    xi = np.stack([traj.qdot, conc.velocity], axis=-1)
    u2 = traj.u**2
    G = np.zeros((grid.n, 2, 2))
    G[:, 0, 0] = grid.rho0
    G[:, 1, 1] = grid.rho0_concealed * grid.u0**2 / np.where(u2 > 0, u2, 1.0)
    G[u2 == 0, 1, 1] = 0.0
    quad = np.einsum("ni,nij,nj->n", xi, G, xi)
    return grid.integrate(0.5 * params.mass * quad)


def energy_report(params, grid, traj, conc, fields: Optional[EulerianFields] = None,
                  t: Optional[float] = None) -> EnergyReport:
    T_vis, T_con = energy_lagrangian(params, grid, traj, conc)
    V = external_energy(params, grid, traj)
    kw = {}
    if fields is not None:
        H_op, H_op2 = energy_operator(params, fields, second_form=True)
        kw = dict(H_eulerian=energy_eulerian(params, fields), H_operator=H_op,
                  H_operator_second_form=H_op2.real)
    return EnergyReport(t=traj.t if t is None else t, T_visible=T_vis, T_concealed=T_con,
                        V_external=V, H_lagrangian=T_vis + T_con + V,
                        H_metric=energy_metric(params, grid, traj, conc) + V, **kw)
