"""Initial states and closed-form Gaussian solutions.

A Gaussian packet without initial chirp, released in a harmonic trap
V = 1/2 m omega^2 x^2 (omega = 0 for free motion), stays Gaussian:

    centre  x_c(t)   = x0 cos(wt) + p0 / (m w) sin(wt)
    width   s(t)^2   = s0^2 cos^2(wt) + (hbar / (2 m w s0))^2 sin^2(wt)

Trajectories are affine in the label, q(a, t) = x_c + (a - x0) s / s0, and
the log-density gradient on a trajectory is u = -(a - x0) / (s s0).  The
concealed displacement follows by integrating u^2 in time.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GaussianPacket:
    """Minimum-uncertainty packet exp(-(x - x0)^2 / 4 s0^2 + i p0 x / hbar)."""

    sigma0: float = 1.0
    x0: float = 0.0
    p0: float = 0.0
    hbar: float = 1.0
    mass: float = 1.0
    omega: float = 0.0

    decays = True

    @property
    def center(self) -> float:
        return self.x0

    def rho(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-0.5 * ((x - self.x0) / self.sigma0) ** 2) / np.sqrt(2 * np.pi * self.sigma0**2)

    def velocity(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.p0 / self.mass)

    def psi(self, x):
        x = np.asarray(x, dtype=float)
        amp = (2 * np.pi * self.sigma0**2) ** -0.25
        return amp * np.exp(-((x - self.x0) ** 2) / (4 * self.sigma0**2) + 1j * self.p0 * x / self.hbar)

    # closed forms -------------------------------------------------------

    def _b(self):
        return self.hbar / (2 * self.mass * self.omega * self.sigma0)

    def centre_at(self, t):
        t = np.asarray(t, dtype=float)
        w = self.omega
        if w == 0:
            return self.x0 + self.p0 * t / self.mass
        return self.x0 * np.cos(w * t) + self.p0 / (self.mass * w) * np.sin(w * t)

    def centre_velocity(self, t):
        t = np.asarray(t, dtype=float)
        w = self.omega
        if w == 0:
            return np.full_like(t, self.p0 / self.mass)
        return -self.x0 * w * np.sin(w * t) + self.p0 / self.mass * np.cos(w * t)

    def width(self, t):
        t = np.asarray(t, dtype=float)
        s0, w = self.sigma0, self.omega
        if w == 0:
            return s0 * np.sqrt(1 + (self.hbar * t / (2 * self.mass * s0**2)) ** 2)
        return np.sqrt((s0 * np.cos(w * t)) ** 2 + (self._b() * np.sin(w * t)) ** 2)

    def width_rate(self, t):
        """d sigma / dt."""
        t = np.asarray(t, dtype=float)
        s0, w = self.sigma0, self.omega
        if w == 0:
            c = self.hbar / (2 * self.mass * s0)
            return c**2 * t / self.width(t)
        return w * (self._b() ** 2 - s0**2) * np.sin(w * t) * np.cos(w * t) / self.width(t)

    def trajectory(self, a, t):
        return self.centre_at(t) + (np.asarray(a) - self.x0) * self.width(t) / self.sigma0

    def log_density_gradient(self, a, t):
        """u(q(a, t), t) on the trajectory of label a."""
        return -(np.asarray(a) - self.x0) / (self.width(t) * self.sigma0)

    def inverse_width_integral(self, t):
        """Integral of sigma(t')^-2 over [0, t]."""
        t = np.asarray(t, dtype=float)
        s0, w = self.sigma0, self.omega
        if w == 0:
            k = self.hbar / (2 * self.mass * s0**2)
            return np.arctan(k * t) / (k * s0**2)
        b = self._b()
        phase = np.arctan2(b * np.sin(w * t), s0 * np.cos(w * t))
        phase = phase + 2 * np.pi * np.round((w * t - phase) / (2 * np.pi))
        return phase / (w * s0 * b)

    def concealed_displacement(self, a, t):
        """Q(a, t) - Q0(a) for the convention Qdot0 = (hbar / 2m) u0."""
        return -(self.hbar / (2 * self.mass)) * (np.asarray(a) - self.x0) * self.inverse_width_integral(t)

    def density_at(self, x, t):
        s = self.width(t)
        return np.exp(-0.5 * ((np.asarray(x) - self.centre_at(t)) / s) ** 2) / np.sqrt(2 * np.pi * s**2)

    def velocity_field(self, x, t):
        return self.centre_velocity(t) + (np.asarray(x) - self.centre_at(t)) * self.width_rate(t) / self.width(t)

    def support(self, t_final, n_sigma=10.0, samples=513):
        """Interval containing the packet (to ``n_sigma`` widths) over [0, t_final]."""
        ts = np.linspace(0.0, max(t_final, 0.0), samples)
        c, s = self.centre_at(ts), self.width(ts)
        return float(np.min(c - n_sigma * s)), float(np.max(c + n_sigma * s))

    def energy(self):
        """Exact <H> including the trap term."""
        kinetic = self.p0**2 / (2 * self.mass) + self.hbar**2 / (8 * self.mass * self.sigma0**2)
        trap = 0.5 * self.mass * self.omega**2 * (self.x0**2 + self.sigma0**2)
        return kinetic + trap


@dataclass(frozen=True)
class UniformState:
    """Flat density on ``[lo, hi]`` moving with constant velocity ``v0``."""

    lo: float = -1.0
    hi: float = 1.0
    v0: float = 0.0

    decays = False

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def rho(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lo - 1e-12) & (x <= self.hi + 1e-12)
        return np.where(inside, 1.0 / (self.hi - self.lo), 0.0)

    def velocity(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.v0)


def coherent_width(hbar: float, mass: float, omega: float) -> float:
    """Width of the shape-preserving packet in a trap of frequency omega."""
    return float(np.sqrt(hbar / (2 * mass * omega)))
