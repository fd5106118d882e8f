"""Scalar special functions, Haar orthogonal sampling and symmetric eigensystems."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

INV_E = math.exp(-1.0)
_BRANCH_TOL = 1e-12


@dataclass(frozen=True)
class EigenSystem:
    """Eigenvalues in descending order with the matching orthonormal basis.

    Column ``basis[:, a]`` pairs with ``values[a]``.
    """

    values: np.ndarray
    basis: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def assemble(self, values: np.ndarray | None = None) -> np.ndarray:
        """Rebuild ``sum_a values[a] v_a v_a^T``, optionally with replacement values."""
        vals = self.values if values is None else np.asarray(values, dtype=float)
        if vals.shape != self.values.shape:
            raise ValueError(f"expected {self.n} values, got shape {vals.shape}")
        m = (self.basis * vals) @ self.basis.T
        return 0.5 * (m + m.T)

    def project(self, m: np.ndarray) -> np.ndarray:
        """Matrix elements ``v_a^T m v_b`` in this basis."""
        return self.basis.T @ m @ self.basis


def _w0_initial(x: np.ndarray) -> np.ndarray:
    w = np.empty_like(x)
    near = x < -0.25
    mid = (~near) & (x < 3.0)
    far = x >= 3.0
    # series about the branch point in p = sqrt(2(e x + 1))
    p = np.sqrt(np.maximum(2.0 * (np.e * x[near] + 1.0), 0.0))
    w[near] = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3
    l1 = np.log1p(x[mid])
    w[mid] = l1 * (1.0 - np.log1p(l1) / (2.0 + l1))
    lx = np.log(x[far])
    w[far] = lx - np.log(lx)
    return w


def lambert_w0(x):
    """Principal branch of the Lambert W function, real arguments only.

    Solves ``w * exp(w) = x`` for ``w >= -1`` by Halley iteration. Arguments
    slightly below the branch point ``-1/e`` (by at most 1e-12) are clamped.

    Parameters
    ----------
    x : float or array_like
        Argument(s), ``x >= -1/e``.

    Returns
    -------
    float or ndarray
        ``W0(x)`` with the same shape as ``x``.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(arr)):
        raise ValueError("lambert_w0 got NaN")
    if np.any(arr < -INV_E - _BRANCH_TOL):
        raise ValueError(f"lambert_w0 domain error: x={float(arr.min())!r} < -1/e")
    xs = np.maximum(arr.ravel(), -INV_E)
    w = _w0_initial(xs)
    active = np.isfinite(xs) & (xs != 0.0) & (xs > -INV_E)
    for _ in range(50):
        if not active.any():
            break
        wa, xa = w[active], xs[active]
        ew = np.exp(wa)
        f = wa * ew - xa
        wp1 = wa + 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            dw = f / (ew * wp1 - (wa + 2.0) * f / (2.0 * wp1))
        dw = np.where(np.isfinite(dw), dw, 0.0)
        wa = np.maximum(wa - dw, -1.0)
        w[active] = wa
        still = np.abs(dw) > 4e-16 * (1.0 + np.abs(wa))
        idx = np.flatnonzero(active)
        active[idx[~still]] = False
    w[xs == 0.0] = 0.0
    w[xs <= -INV_E] = -1.0
    w[xs == np.inf] = np.inf
    if arr.ndim == 0:
        return float(w[0])
    return w.reshape(arr.shape)


def random_orthogonal(n: int, seed=None) -> np.ndarray:
    """Haar-distributed ``n x n`` orthogonal matrix.

    QR of a standard normal matrix, with the signs of ``diag(R)`` pushed into
    ``Q`` so the law is exactly Haar.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"dimension must be a positive integer, got {n!r}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((int(n), int(n)))
    q, r = np.linalg.qr(z)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def check_symmetric(m: np.ndarray, tol: float = 1e-10, name: str = "matrix") -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    asym = np.max(np.abs(m - m.T)) if m.size else 0.0
    if asym > tol * max(1.0, np.max(np.abs(m))):
        raise ValueError(f"{name} is not symmetric (max asymmetry {asym:.3e})")
    return m


def sym_eig(m: np.ndarray) -> EigenSystem:
    """Eigendecomposition of a real symmetric matrix.

    Values come back non-increasing; every eigenvector is signed so that its
    largest-magnitude component is positive.
    """
    m = check_symmetric(m)
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1].copy()
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    vecs *= signs
    return EigenSystem(values=vals, basis=vecs)


def sym_sqrt(m: np.ndarray, clamp: float = 1e-10) -> np.ndarray:
    """Square root of a symmetric PSD matrix; eigenvalues in ``[-clamp, 0)`` become 0.

    Eigenvalues below the rounding level ``N * eps * max|lambda|`` are also
    treated as exact zeros, so a singular input keeps an exactly singular root
    instead of picking up ``sqrt(eps)``-sized components.
    """
    es = sym_eig(m)
    if es.values.min() < -clamp * max(1.0, abs(es.values[0])):
        raise ValueError(f"matrix is not PSD (min eigenvalue {es.values.min():.3e})")
    floor = es.values.size * np.finfo(float).eps * max(abs(es.values[0]), abs(es.values[-1]))
    vals = np.where(es.values > floor, es.values, 0.0)
    return es.assemble(np.sqrt(vals))


def is_positive_definite(m: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return False
    return True
