"""Routh reduction of purely kinetic Lagrangians with ignorable coordinates.

A system with visible coordinates q and concealed coordinates Q has

    L = 1/2 qdot . B(q) qdot + 1/2 Qdot . A(q) Qdot.

Q is absent from L, so P = A(q) Qdot is conserved.  Eliminating Qdot gives
the Routhian

    L'(q, qdot) = 1/2 qdot . B(q) qdot - 1/2 P . A(q)^-1 P,

whose Euler-Lagrange equations reproduce the visible motion of L; the
concealed kinetic energy reappears as the potential V_q = 1/2 P . A^-1 P.

All matrix callables may be evaluated on batches: ``B(q)`` with ``q`` of shape
``(..., n_visible)`` returns ``(..., n_visible, n_visible)``, and derivative
providers return ``(..., n_visible, rows, cols)`` with the differentiation
index first.  This lets independent systems or initial states share one
integration loop.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import NumericalError, SingularMatrixError

MatrixField = Callable[[np.ndarray], np.ndarray]

_EPS = np.finfo(float).eps


def fd_matrix_gradient(fun: MatrixField, q: np.ndarray) -> np.ndarray:
    """Central-difference derivative of a matrix field with respect to q.

    The step for component k is ``eps**(1/3) * max(1, |q_k|)``.
    """
    q = np.asarray(q, dtype=float)
    n = q.shape[-1]
    out = []
    for k in range(n):
        h = _EPS ** (1.0 / 3.0) * np.maximum(1.0, np.abs(q[..., k]))
        qp = q.copy()
        qm = q.copy()
        qp[..., k] += h
        qm[..., k] -= h
        step = (qp[..., k] - qm[..., k])[..., None, None]
        out.append((fun(qp) - fun(qm)) / step)
    return np.stack(out, axis=-3)


@dataclass(frozen=True)
class KineticSystem:
    """Homogeneous quadratic Lagrangian in visible and concealed velocities."""

    n_visible: int
    n_concealed: int
    B: MatrixField
    A: MatrixField
    dB: Optional[MatrixField] = None
    dA: Optional[MatrixField] = None
    terms: Optional[Callable] = None

    def evaluate(self, q):
        """Return ``(B, dB/dq, A, dA/dq)`` at q, fused when ``terms`` is given."""
        if self.terms is not None:
            return self.terms(q)
        return self.B(q), self.dB_dq(q), self.A(q), self.dA_dq(q)

    def dB_dq(self, q):
        return self.dB(q) if self.dB is not None else fd_matrix_gradient(self.B, q)

    def dA_dq(self, q):
        return self.dA(q) if self.dA is not None else fd_matrix_gradient(self.A, q)

    def check_positive_definite(self, samples: np.ndarray) -> None:
        """Raise if B or A fails to be symmetric positive-definite at any sample."""
        samples = np.atleast_2d(samples)
        for name, fun in (("B", self.B), ("A", self.A)):
            m = fun(samples)
            if not np.allclose(m, np.swapaxes(m, -1, -2), rtol=1e-12, atol=1e-12):
                raise ValueError(f"{name}(q) is not symmetric")
            if np.min(np.linalg.eigvalsh(m)) <= 0.0:
                raise SingularMatrixError(f"{name}(q) is not positive-definite")


@dataclass
class DiscreteState:
    q: np.ndarray
    qdot: np.ndarray
    Q: np.ndarray
    Qdot: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.qdot = np.asarray(self.qdot, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        self.Qdot = np.asarray(self.Qdot, dtype=float)
        if self.q.shape != self.qdot.shape or self.Q.shape != self.Qdot.shape:
            raise ValueError("position and velocity shapes differ")

    def check(self, sys: KineticSystem) -> None:
        if self.q.shape[-1] != sys.n_visible or self.Q.shape[-1] != sys.n_concealed:
            raise ValueError(
                f"state has {self.q.shape[-1]} visible / {self.Q.shape[-1]} concealed "
                f"freedoms, system expects {sys.n_visible} / {sys.n_concealed}")


@dataclass(frozen=True)
class ReducedSystem:
    """Routhian system: the base Lagrangian with constant concealed momenta P."""

    base: KineticSystem
    P: np.ndarray

    def concealed_velocity(self, q):
        return _solve(self.base.A(q), np.broadcast_to(self.P, np.shape(q)[:-1] + self.P.shape[-1:]), "A")

    def emergent_potential(self, q):
        """V_q(q) = 1/2 P . A(q)^-1 P, the concealed kinetic energy."""
        return 0.5 * np.sum(self.P * self.concealed_velocity(q), axis=-1)

    def routhian(self, q, qdot):
        kinetic = 0.5 * np.einsum("...i,...ij,...j->...", qdot, self.base.B(q), qdot)
        return kinetic - self.emergent_potential(q)


@dataclass
class DiscretePath:
    """Sampled solution; arrays carry time as their first axis."""

    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    Q: np.ndarray
    Qdot: np.ndarray


def _solve(m, rhs, name):
    try:
        x = np.linalg.solve(m, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"{name}(q) is singular") from exc
    if not np.isfinite(x.sum()):
        raise SingularMatrixError(f"{name}(q) inversion produced non-finite values")
    return x


def _visible_rhs(dB, qdot, dA, Qdot):
    # 1/2 d_k(qdot.B.qdot) + 1/2 d_k(Qdot.A.Qdot) - (qdot_k d_k B) qdot
    dBv = (dB @ qdot[..., None, :, None])[..., 0]
    dAv = (dA @ Qdot[..., None, :, None])[..., 0]
    quad = 0.5 * (np.sum(dBv * qdot[..., None, :], axis=-1)
                  + np.sum(dAv * Qdot[..., None, :], axis=-1))
    return quad - np.sum(qdot[..., :, None] * dBv, axis=-2)


def full_accelerations(sys: KineticSystem, s: DiscreteState):
    """Euler-Lagrange accelerations (qddot, Qddot) of the full Lagrangian."""
    return _full_accel(sys, s.q, s.qdot, s.Qdot)


def _full_accel(sys, q, qdot, Qdot):
    B, dB, A, dA = sys.evaluate(q)
    qdd = _solve(B, _visible_rhs(dB, qdot, dA, Qdot), "B")
    dAv = (dA @ Qdot[..., None, :, None])[..., 0]
    Qdd = _solve(A, -np.sum(qdot[..., :, None] * dAv, axis=-2), "A")
    return qdd, Qdd


def reduce(sys: KineticSystem, s0: DiscreteState) -> ReducedSystem:
    """Fix the concealed momenta P = A(q0) Qdot0 and return the Routhian system.

    Degenerate A(q0) is rejected: a zero eigenvalue would leave some concealed
    freedoms without a momentum.
    """
    s0.check(sys)
    a0 = sys.A(s0.q)
    eig = np.linalg.eigvalsh(a0)
    if np.min(np.abs(eig)) <= 1e3 * _EPS * np.max(np.abs(eig)):
        raise SingularMatrixError("A(q0) is singular; concealed momenta undefined")
    P = np.einsum("...ij,...j->...i", a0, s0.Qdot)
    return ReducedSystem(sys, P)


def reduced_accelerations(red: ReducedSystem, q, qdot):
    """Visible accelerations from the Euler-Lagrange equations of L'.

    Uses -1/2 P . d_k(A^-1) P = 1/2 Qdot . d_k A . Qdot with Qdot = A^-1 P.
    """
    B, dB, A, dA = red.base.evaluate(q)
    Qdot = _solve(A, np.broadcast_to(red.P, np.shape(q)[:-1] + red.P.shape[-1:]), "A")
    return _solve(B, _visible_rhs(dB, qdot, dA, Qdot), "B")


def reconstruct_concealed(red: ReducedSystem, t, q, Q0=None):
    """Concealed velocities A^-1(q(t)) P and positions by cumulative quadrature.

    P is taken from ``red`` and never recomputed.
    """
    t = np.asarray(t, dtype=float)
    Qdot = red.concealed_velocity(np.asarray(q, dtype=float))
    if Q0 is None:
        Q0 = np.zeros(Qdot.shape[1:])
    Q = np.asarray(Q0, dtype=float) + cumulative_trapezoid(Qdot, t, axis=0, initial=0.0)
    return Qdot, Q


def integrate(accel_fn, x0, v0, dt: float, n_steps: int, scheme: str = "rk4",
              velocity_iterations: int = 2):
    """Fixed-step integration of xddot = accel_fn(x, xdot).

    ``scheme`` is ``"verlet"`` (velocity-Verlet; the closing half-kick is
    solved by fixed-point iteration when the acceleration depends on the
    velocity) or ``"rk4"`` (classical Runge-Kutta on the first-order system).

    Returns ``(t, x, v)`` with the time axis first.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if scheme not in ("verlet", "rk4"):
        raise ValueError(f"unknown scheme {scheme!r}")
    x = np.array(x0, dtype=float)
    v = np.array(v0, dtype=float)
    xs = np.empty((n_steps + 1,) + x.shape)
    vs = np.empty_like(xs)
    xs[0], vs[0] = x, v
    half, sixth = 0.5 * dt, dt / 6.0
    a = accel_fn(x, v)
    for i in range(1, n_steps + 1):
        if scheme == "verlet":
            v_half = v + 0.5 * dt * a
            x = x + dt * v_half
            v_new = v_half
            for _ in range(max(1, velocity_iterations)):
                a = accel_fn(x, v_new)
                v_new = v_half + 0.5 * dt * a
            v = v_new
        else:
            k2x = v + half * a
            k2v = accel_fn(x + half * v, k2x)
            k3x = v + half * k2v
            k3v = accel_fn(x + half * k2x, k3x)
            k4x = v + dt * k3v
            k4v = accel_fn(x + dt * k3x, k4x)
            x = x + sixth * (v + 2.0 * (k2x + k3x) + k4x)
            v = v + sixth * (a + 2.0 * (k2v + k3v) + k4v)
            a = accel_fn(x, v)
        if not np.isfinite(x.sum() + v.sum()):
            raise NumericalError(f"non-finite state at step {i}")
        xs[i], vs[i] = x, v
    return dt * np.arange(n_steps + 1), xs, vs


def simulate_full(sys: KineticSystem, s0: DiscreteState, dt, n_steps, scheme="rk4"):
    """Integrate visible and concealed freedoms together under L."""
    s0.check(sys)
    nv = sys.n_visible

    def accel(x, v):
        qdd, Qdd = _full_accel(sys, x[..., :nv], v[..., :nv], v[..., nv:])
        return np.concatenate([qdd, Qdd], axis=-1)

    x0 = np.concatenate([s0.q, s0.Q], axis=-1)
    v0 = np.concatenate([s0.qdot, s0.Qdot], axis=-1)
    t, x, v = integrate(accel, x0, v0, dt, n_steps, scheme)
    return DiscretePath(s0.t + t, x[..., :nv], v[..., :nv], x[..., nv:], v[..., nv:])


def simulate_reduced(red: ReducedSystem, s0: DiscreteState, dt, n_steps, scheme="rk4"):
    """Integrate the visible freedoms under L', then rebuild the concealed path."""
    t, q, qdot = integrate(lambda x, v: reduced_accelerations(red, x, v),
                           s0.q, s0.qdot, dt, n_steps, scheme)
    Qdot, Q = reconstruct_concealed(red, t, q, s0.Q)
    return DiscretePath(s0.t + t, q, qdot, Q, Qdot)


def simulate_lockstep(sys: KineticSystem, s0: DiscreteState, dt, n_steps, scheme="rk4"):
    """Integrate the full and the Routh-reduced dynamics side by side.

    Both copies share one matrix evaluation per stage.  The reduced copy sees
    only (q, qdot) and the fixed momenta P; its concealed path is rebuilt
    afterwards by :func:`reconstruct_concealed`.  Returns
    ``(full_path, reduced_path, reduced_system)``.
    """
    s0.check(sys)
    red = reduce(sys, s0)
    nv = sys.n_visible
    P = red.P

    def accel(x, v):
        B, dB, A, dA = sys.evaluate(x[..., :nv])
        qdot = v[..., :nv]
        Qdot = np.stack([v[0, ..., nv:], _solve(A[1], P, "A")])
        qdd = _solve(B, _visible_rhs(dB, qdot, dA, Qdot), "B")
        dAv = (dA[0] @ Qdot[0][..., None, :, None])[..., 0]
        Qdd = _solve(A[0], -np.sum(qdot[0][..., :, None] * dAv, axis=-2), "A")
        return np.concatenate([qdd, np.stack([Qdd, np.zeros_like(Qdd)])], axis=-1)

    x0 = np.concatenate([s0.q, s0.Q], axis=-1)
    v0 = np.concatenate([s0.qdot, s0.Qdot], axis=-1)
    v0_red = np.concatenate([s0.qdot, np.zeros_like(s0.Qdot)], axis=-1)
    t, x, v = integrate(accel, np.stack([x0, x0]), np.stack([v0, v0_red]), dt, n_steps, scheme)
    t = s0.t + t
    full = DiscretePath(t, x[:, 0, ..., :nv], v[:, 0, ..., :nv], x[:, 0, ..., nv:], v[:, 0, ..., nv:])
    Qdot_r, Q_r = reconstruct_concealed(red, t, x[:, 1, ..., :nv], s0.Q)
    reduced = DiscretePath(t, x[:, 1, ..., :nv], v[:, 1, ..., :nv], Q_r, Qdot_r)
    return full, reduced, red


def concealed_kinetic_energy(sys: KineticSystem, q, Qdot):
    """T_Q = 1/2 Qdot . A(q) Qdot."""
    return 0.5 * np.einsum("...i,...ij,...j->...", Qdot, sys.A(q), Qdot)


def concealed_momentum(sys: KineticSystem, q, Qdot):
    return np.einsum("...ij,...j->...i", sys.A(q), Qdot)


def polar_free_particle() -> KineticSystem:
    """B = 1, A = q**2: a free particle in the plane, with the angle concealed."""
    return KineticSystem(
        1, 1,
        B=lambda q: np.ones(np.shape(q)[:-1] + (1, 1)),
        A=lambda q: (q[..., 0] ** 2)[..., None, None],
        dB=lambda q: np.zeros(np.shape(q)[:-1] + (1, 1, 1)),
        dA=lambda q: (2.0 * q[..., 0])[..., None, None, None],
    )


@dataclass
class SmoothKineticFamily:
    """A batch of random smooth kinetic systems sharing one evaluation path.

    Member ``b`` has ``B(q) = B0_b + sum_k sin(q_k) B1_bk`` (likewise A) with
    symmetric B1 scaled so that ``sum_k ||B1_bk|| <= 1/2 lambda_min(B0_b)``;
    B and A are then symmetric positive-definite for every q.  Members may
    have fewer freedoms than the padded batch dimensions: padding blocks are
    the identity with zero derivatives, so padded freedoms decouple and stay
    at rest when started at rest.
    """

    B0: np.ndarray
    B1: np.ndarray
    A0: np.ndarray
    A1: np.ndarray
    dims: list = field(default_factory=list)

    @staticmethod
    def _random_block(rng, n_dep, n, scale):
        m = rng.standard_normal((n, n))
        m0 = np.eye(n) + scale * (m @ m.T) / n
        m1 = rng.standard_normal((n_dep, n, n))
        m1 = m1 + np.swapaxes(m1, -1, -2)
        norm = sum(np.linalg.norm(m, 2) for m in m1)
        if norm > 0:
            m1 *= 0.5 * np.min(np.linalg.eigvalsh(m0)) / norm
        return m0, m1

    @classmethod
    def random(cls, rng: np.random.Generator, dims, scale: float = 1.0):
        nv = max(d[0] for d in dims)
        nc = max(d[1] for d in dims)
        nb = len(dims)
        B0 = np.tile(np.eye(nv), (nb, 1, 1))
        A0 = np.tile(np.eye(nc), (nb, 1, 1))
        B1 = np.zeros((nb, nv, nv, nv))
        A1 = np.zeros((nb, nv, nc, nc))
        for b, (v, c) in enumerate(dims):
            B0[b, :v, :v], B1[b, :v, :v, :v] = cls._random_block(rng, v, v, scale)
            A0[b, :c, :c], A1[b, :v, :c, :c] = cls._random_block(rng, v, c, scale)
        return cls(B0, B1, A0, A1, list(dims))

    @staticmethod
    def _field(M0, M1, sq):
        k, r, c = M1.shape[-3:]
        flat = sq[..., None, :] @ M1.reshape(M1.shape[:-3] + (k, r * c))
        return M0 + flat.reshape(flat.shape[:-2] + (r, c))

    def _terms(self, q):
        sq, cq = np.sin(q), np.cos(q)[..., :, None, None]
        return (self._field(self.B0, self.B1, sq), cq * self.B1,
                self._field(self.A0, self.A1, sq), cq * self.A1)

    def system(self) -> KineticSystem:
        return KineticSystem(
            self.B0.shape[-1], self.A0.shape[-1],
            B=lambda q: self._field(self.B0, self.B1, np.sin(q)),
            A=lambda q: self._field(self.A0, self.A1, np.sin(q)),
            dB=lambda q: np.cos(q)[..., :, None, None] * self.B1,
            dA=lambda q: np.cos(q)[..., :, None, None] * self.A1,
            terms=self._terms,
        )

    def masks(self):
        """Boolean masks of the genuine (unpadded) visible and concealed freedoms."""
        nv, nc = self.B0.shape[-1], self.A0.shape[-1]
        vis = np.array([[i < d[0] for i in range(nv)] for d in self.dims])
        con = np.array([[i < d[1] for i in range(nc)] for d in self.dims])
        return vis, con

    def random_state(self, rng: np.random.Generator, speed: float = 0.5) -> DiscreteState:
        vis, con = self.masks()
        q = np.where(vis, rng.uniform(-1, 1, vis.shape), 0.0)
        qdot = np.where(vis, speed * rng.standard_normal(vis.shape), 0.0)
        Q = np.where(con, rng.uniform(-1, 1, con.shape), 0.0)
        Qdot = np.where(con, speed * rng.standard_normal(con.shape), 0.0)
        return DiscreteState(q, qdot, Q, Qdot)
