"""Finite-difference and band-limited differentiation on uniform 1D grids.

Two differentiators live here:

* :func:`fd_matrix` builds sparse high-order finite-difference operators
  (central in the interior, one-sided of matching order near the ends).
  They are used on static or Eulerian fields.
* :class:`LegendreDerivative` differentiates a field through a least-squares
  Legendre fit of bounded degree.  It is used for the trajectory field
  q(a, t), whose fourth label derivative drives the quantum force: the
  bounded degree caps the stiffest resolved mode so that explicit
  velocity-Verlet stays stable at practical time steps.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import legendre


def fornberg_weights(z: float, x: np.ndarray, m: int) -> np.ndarray:
    """Weights of the m-th derivative at ``z`` from values at nodes ``x``.

    Fornberg's recursion (Math. Comp. 51, 1988).  Returns an array of shape
    ``(len(x), m + 1)`` whose column ``k`` holds the k-th derivative weights.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = np.zeros((n, m + 1))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c


def fd_matrix(n: int, h: float, order: int = 8, deriv: int = 1) -> sp.csr_matrix:
    """Sparse ``n x n`` matrix approximating the ``deriv``-th derivative.

    Interior rows use the centred stencil of the given (even) order; rows
    within ``order // 2`` of an end use the nearest one-sided window with the
    same number of nodes (first derivatives keep the formal order there).
    """
    if order % 2:
        raise ValueError("order must be even")
    width = order + 1 + 2 * ((deriv - 1) // 2)
    if n < width:
        raise ValueError(f"need at least {width} points for order {order}, got {n}")
    half = width // 2
    offsets = np.arange(-half, half + 1)
    centred = fornberg_weights(0.0, offsets.astype(float), deriv)[:, deriv]
    mat = sp.diags([np.full(n - abs(k), w) for k, w in zip(offsets, centred)],
                   offsets, shape=(n, n), format="lil")
    for i in list(range(half)) + list(range(n - half, n)):
        lo = min(max(i - half, 0), n - width)
        idx = np.arange(lo, lo + width)
        mat[i, :] = 0.0
        mat[i, idx] = fornberg_weights(float(i), idx.astype(float), deriv)[:, deriv]
    return (mat.tocsr() / h**deriv).tocsr()


def stable_legendre_degree(half_width: float, hbar: float, mass: float, dt: float,
                           safety: float = 1.0, cap: int = 24) -> int:
    """Largest fit degree whose stiffest quantum mode is Verlet-stable.

    A degree-K Legendre field on ``[-L, L]`` has label derivatives bounded by
    roughly ``k = K(K+1) / 2L``; the Schrodinger-type dispersion then gives a
    mode frequency ``(hbar / 2m) k**2``, which must satisfy ``omega dt <= safety``.
    """
    k_max = np.sqrt(safety / (dt * hbar / (2.0 * mass)))
    degree = 1
    while degree < cap and (degree + 1) * (degree + 2) / (2.0 * half_width) <= k_max:
        degree += 1
    return degree


class LegendreDerivative:
    """Derivatives of a sampled field through a least-squares Legendre fit.

    Parameters
    ----------
    a : array
        Uniform sample coordinates.
    degree : int
        Degree of the fitted polynomial; polynomials up to this degree are
        differentiated exactly.
    max_order : int
        Highest derivative that will be requested.
    """

    def __init__(self, a: np.ndarray, degree: int, max_order: int = 4):
        a = np.asarray(a, dtype=float)
        if degree >= len(a):
            raise ValueError("fit degree must be smaller than the number of samples")
        self.degree = degree
        self.center = 0.5 * (a[0] + a[-1])
        self.half_width = 0.5 * (a[-1] - a[0])
        x = (a - self.center) / self.half_width
        vander = legendre.legvander(x, degree)
        self._pinv = np.linalg.pinv(vander)
        eye = np.eye(degree + 1)
        self._evals = [vander]
        for k in range(1, max_order + 1):
            dk = np.column_stack([legendre.legval(x, legendre.legder(eye[j], k))
                                  for j in range(degree + 1)])
            self._evals.append(dk / self.half_width**k)

    def coefficients(self, f: np.ndarray) -> np.ndarray:
        return self._pinv @ f

    def __call__(self, f: np.ndarray, orders=(1,)) -> list[np.ndarray]:
        """Return the requested derivatives of ``f`` at the sample points."""
        c = self._pinv @ f
        return [self._evals[k] @ c for k in orders]

    def residual(self, f: np.ndarray) -> float:
        """Max deviation between ``f`` and its fitted polynomial."""
        return float(np.max(np.abs(self._evals[0] @ (self._pinv @ f) - f)))
