"""Eulerian reference: Crank-Nicolson Schrodinger solver and field bridges.

Quantities on a uniform x grid with homogeneous Dirichlet walls:

* ``psi`` advanced by Crank-Nicolson with the 3-point Laplacian,
* ``rho = |psi|^2``, current velocity ``v = (hbar/m) Im(psi* psi') / rho``
  and ``u = d log rho / dx = 2 Re(psi* psi') / rho``,
* the concealed continuity variable ``W = V / u^2``, transported by
  ``dW/dt + d(v W)/dx = 0`` with a first-order upwind scheme.

Also provided: a trajectory tracer through the sampled velocity field
and the map from labelled Lagrangian fields onto the grid.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.sparse.linalg import splu

from .errors import ConfigError, NumericalError, StabilityError
from .stencils import fd_matrix

RHO_MASK = 1e-10
U_MASK = 1e-6
CFL_LIMIT = 0.9


@dataclass
class EulerianFields:
    x: np.ndarray
    psi: np.ndarray
    rho: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None
    S: Optional[np.ndarray] = None
    t: float = 0.0
    masked: Optional[np.ndarray] = None

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def weights(self) -> np.ndarray:
        w = np.full(len(self.x), self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w

    def norm(self) -> float:
        return float(np.dot(self.weights, np.abs(self.psi) ** 2))


def make_grid(lo: float, hi: float, m_grid: int) -> np.ndarray:
    if m_grid < 16:
        raise ConfigError(f"m_grid must be at least 16, got {m_grid}")
    if not hi > lo:
        raise ConfigError("empty spatial domain")
    return np.linspace(lo, hi, m_grid)


def init_fields(state, x: np.ndarray, hbar: float = 1.0, mass: float = 1.0) -> EulerianFields:
    """Sample ``state.psi`` on ``x``, normalise and fill the polar fields."""
    psi = np.asarray(state.psi(x), dtype=complex)
    psi[0] = psi[-1] = 0.0
    f = EulerianFields(x=x, psi=psi)
    edge = max(abs(state.psi(x[:1])[0]), abs(state.psi(x[-1:])[0]))
    if edge > 1e-8:
        raise ConfigError(f"|psi| = {edge:.2e} at the walls; widen the domain")
    f.psi = psi / np.sqrt(f.norm())
    return polar_fields(f, hbar, mass)


class CrankNicolson:
    """Crank-Nicolson propagator for ``i hbar psi_t = -(hbar^2/2m) psi_xx + V psi``.

    The two tridiagonal operators are assembled and the implicit one is
    LU-factorised once; each :meth:`step` is a sparse mat-vec plus a solve.
    """

    def __init__(self, x, hbar, mass, dt, potential: Optional[Callable] = None):
        n = len(x)
        dx = x[1] - x[0]
        interior = n - 2
        kin = hbar**2 / (2 * mass * dx**2)
        pot = np.zeros(interior) if potential is None else np.asarray(potential(x[1:-1]), dtype=float)
        diag = 2 * kin + pot
        H = sp.diags([np.full(interior - 1, -kin), diag, np.full(interior - 1, -kin)], [-1, 0, 1],
                     format="csc")
        eye = sp.identity(interior, format="csc")
        z = 0.5j * dt / hbar
        self.dt = dt
        self.hbar, self.mass = hbar, mass
        self._explicit = (eye - z * H).tocsr()
        try:
            self._lu = splu((eye + z * H).tocsc())
        except RuntimeError as exc:
            raise NumericalError(f"Crank-Nicolson factorisation failed: {exc}") from exc

    def step(self, fields: EulerianFields, refresh: bool = True) -> EulerianFields:
        psi = np.zeros_like(fields.psi)
        psi[1:-1] = self._lu.solve(self._explicit @ fields.psi[1:-1])
        if not np.all(np.isfinite(psi)):
            raise NumericalError(f"non-finite wavefunction at t={fields.t + self.dt:.6g}")
        out = EulerianFields(x=fields.x, psi=psi, t=fields.t + self.dt)
        return polar_fields(out, self.hbar, self.mass) if refresh else out


def cn_step(fields: EulerianFields, V_ext, params) -> EulerianFields:
    """One Crank-Nicolson step; builds a fresh propagator (use :class:`CrankNicolson` in loops)."""
    return CrankNicolson(fields.x, params.hbar, params.mass, params.dt, V_ext).step(fields)


_DERIV_CACHE: dict = {}


def derivative_operator(n: int, h: float, deriv: int = 1):
    key = (n, float(h), deriv)
    if key not in _DERIV_CACHE:
        _DERIV_CACHE.clear() if len(_DERIV_CACHE) > 8 else None
        _DERIV_CACHE[key] = fd_matrix(n, h, order=8, deriv=deriv)
    return _DERIV_CACHE[key]


def polar_fields(fields: EulerianFields, hbar: float = 1.0, mass: float = 1.0) -> EulerianFields:
    """Refresh ``rho``, ``v`` and ``u``; ``v`` and ``u`` are zero where rho < 1e-10 max rho."""
    psi = fields.psi
    dpsi = derivative_operator(len(psi), fields.dx) @ psi
    rho = np.abs(psi) ** 2
    cross = np.conj(psi) * dpsi
    masked = rho < RHO_MASK * np.max(rho)
    safe = np.where(masked, 1.0, rho)
    v = np.where(masked, 0.0, hbar / mass * cross.imag / safe)
    u = np.where(masked, 0.0, 2 * cross.real / safe)
    return replace(fields, rho=rho, v=v, u=u, masked=masked)


def phase(fields: EulerianFields, mass: float = 1.0, anchor: int | None = None) -> np.ndarray:
    """S(x) = m * integral of v dx, zero at ``anchor`` (default: the density peak)."""
    from scipy.integrate import cumulative_trapezoid
    S = mass * cumulative_trapezoid(fields.v, fields.x, initial=0.0)
    i = int(np.argmax(fields.rho)) if anchor is None else anchor
    return S - S[i]


# ------------------------------------------------------------------ tracer

def _cubic_interp(x0: float, dx: float, f: np.ndarray, q: np.ndarray) -> np.ndarray:
    n = len(f)
    s = (q - x0) / dx
    i = np.clip(np.floor(s).astype(int), 1, n - 3)
    r = s - i
    wm = -r * (r - 1) * (r - 2) / 6
    w0 = (r + 1) * (r - 1) * (r - 2) / 2
    w1 = -(r + 1) * r * (r - 2) / 2
    w2 = (r + 1) * r * (r - 1) / 6
    return wm * f[i - 1] + w0 * f[i] + w1 * f[i + 1] + w2 * f[i + 2]


def advect_trace(times: np.ndarray, v_history: np.ndarray, x: np.ndarray, labels: np.ndarray):
    """Integral curves of a sampled velocity field.

    Parameters
    ----------
    times : (T,) array
        Uniform sample times of the velocity field.
    v_history : (T, M) array
        ``v(x, t)`` at each sample time.
    x : (M,) array
        Uniform spatial grid.
    labels : (N,) array
        Starting positions at ``times[0]``.

    Returns
    -------
    paths : (T, N) array
        Positions at every sample time, RK4 with cubic interpolation in x
        and linear interpolation in t.
    exited : (N,) bool array
        Paths that left the interior of the grid; they are frozen at the
        exit point and should be excluded from norms.
    """
    times = np.asarray(times, dtype=float)
    v_history = np.asarray(v_history, dtype=float)
    x0, dx = float(x[0]), float(x[1] - x[0])
    lo, hi = x[1], x[-2]
    q = np.asarray(labels, dtype=float).copy()
    paths = np.empty((len(times), len(q)))
    paths[0] = q
    exited = (q < lo) | (q > hi)
    for n in range(len(times) - 1):
        h = times[n + 1] - times[n]
        va, vb = v_history[n], v_history[n + 1]
        vm = 0.5 * (va + vb)
        k1 = _cubic_interp(x0, dx, va, q)
        k2 = _cubic_interp(x0, dx, vm, q + 0.5 * h * k1)
        k3 = _cubic_interp(x0, dx, vm, q + 0.5 * h * k2)
        k4 = _cubic_interp(x0, dx, vb, q + h * k3)
        new = q + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out = (new < lo) | (new > hi)
        exited |= out
        q = np.where(exited, q, new)
        paths[n + 1] = q
    return paths, exited


# ------------------------------------------------- concealed continuity

@dataclass
class ConcealedEulerian:
    """Transported ``W = V / u^2`` and the recovered concealed velocity ``V``."""

    W: np.ndarray
    V: np.ndarray
    u_masked: np.ndarray
    t: float = 0.0

    @property
    def masked_fraction(self) -> float:
        return float(np.mean(self.u_masked))


def _u_mask(u: np.ndarray) -> np.ndarray:
    scale = np.max(np.abs(u))
    return np.abs(u) <= U_MASK * scale if scale > 0 else np.ones(u.shape, dtype=bool)


def _fill(values: np.ndarray, masked: np.ndarray) -> np.ndarray:
    if not np.any(masked) or np.all(masked):
        return np.where(masked, 0.0, values)
    idx = np.arange(len(values))
    out = values.copy()
    out[masked] = np.interp(idx[masked], idx[~masked], values[~masked])
    return out


def init_concealed_eulerian(fields: EulerianFields, hbar: float = 1.0, mass: float = 1.0) -> ConcealedEulerian:
    """W(x, 0) from V(x, 0) = (hbar/2m) u(x, 0), i.e. W = (hbar/2m) / u off the mask."""
    u = fields.u
    masked = _u_mask(u) | fields.masked
    V = hbar / (2 * mass) * u
    W = np.zeros_like(u)
    W[~masked] = V[~masked] / u[~masked] ** 2
    W = _fill(W, masked)
    return ConcealedEulerian(W=W, V=np.where(masked, 0.0, V), u_masked=masked, t=fields.t)


def concealed_continuity_step(conc: ConcealedEulerian, fields: EulerianFields, dt: float) -> ConcealedEulerian:
    """One conservative donor-cell step of ``W_t + (v W)_x = 0``.

    Face velocities average the neighbouring nodes; the wall faces carry no
    flux.  ``V = W u^2`` is refreshed from ``fields.u`` off the mask.
    """
    v = fields.v
    dx = fields.dx
    cfl = dt * np.max(np.abs(v)) / dx
    if cfl > CFL_LIMIT:
        raise StabilityError(f"CFL number {cfl:.3f} exceeds {CFL_LIMIT} (dt={dt:g}, dx={dx:g})")
    W = conc.W
    vf = 0.5 * (v[:-1] + v[1:])
    flux = np.where(vf > 0, vf * W[:-1], vf * W[1:])
    div = np.zeros_like(W)
    div[:-1] += flux
    div[1:] -= flux
    W = W - dt / dx * div
    u = fields.u
    masked = _u_mask(u) | fields.masked
    V = np.where(masked, 0.0, W * u**2)
    return ConcealedEulerian(W=W, V=V, u_masked=masked, t=conc.t + dt)


def continuity_substeps(fields: EulerianFields, dt: float) -> int:
    """Smallest number of equal substeps keeping the upwind CFL number below the limit."""
    cfl = dt * np.max(np.abs(fields.v)) / fields.dx
    return max(1, int(np.ceil(cfl / CFL_LIMIT)))


# ---------------------------------------------------- Lagrangian bridge

def lagrangian_to_eulerian(grid, traj, conc, x: np.ndarray):
    """Concealed velocity ``V = Qdot / J`` and density ``rho0 / J`` sampled on ``x``.

    ``a(x)`` inverts the monotone map ``q(a)`` by PCHIP; the smooth label
    fields ``log(rho0 / J)`` and ``Qdot / J`` are then evaluated by cubic
    splines.  Points outside the trajectory span are NaN.
    """
    q = traj.q
    if np.any(np.diff(q) <= 0):
        raise NumericalError("trajectory map is not monotone")
    x = np.asarray(x, dtype=float)
    inside = (x >= q[0]) & (x <= q[-1])
    a_of_x = PchipInterpolator(q, grid.a)(x[inside])
    log_rho = CubicSpline(grid.a, np.log(grid.rho0 / traj.J))(a_of_x)
    V_lab = CubicSpline(grid.a, conc.velocity / traj.J)(a_of_x)
    V = np.full(x.shape, np.nan)
    rho = np.full(x.shape, np.nan)
    V[inside] = V_lab
    rho[inside] = np.exp(log_rho)
    return V, rho


def label_continuity_invariant(conc_e: ConcealedEulerian, x: np.ndarray, traj) -> np.ndarray:
    """J(a, t) W(q(a, t), t): constant per label when the continuity equation holds."""
    x0, dx = float(x[0]), float(x[1] - x[0])
    return traj.J * _cubic_interp(x0, dx, conc_e.W, traj.q)
