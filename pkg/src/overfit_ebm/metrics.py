"""Scalar quality measures for trained couplings.

Conventions: the coupling error is squared and divided by N, the generation
error is the plain Frobenius norm.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .numerics import check_symmetric, sym_sqrt

METRIC_NAMES = ("e_train", "e_test", "ll_train", "ll_test", "e_j", "e_c", "w2")


@dataclass
class MetricReport:
    e_train: float | None = None
    e_test: float | None = None
    ll_train: float | None = None
    ll_test: float | None = None
    e_j: float | None = None
    e_c: float | None = None
    w2: float | None = None

    def __post_init__(self):
        for name in ("e_j", "e_c", "w2"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be non-negative, got {v}")

    def as_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def _pair(a, b, names=("a", "b")):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"dimension mismatch: {names[0]} {a.shape} vs {names[1]} {b.shape}")
    return a, b


def trace_energy(j: np.ndarray, c: np.ndarray) -> float:
    """``Tr(J C) / N``; train energy for the data covariance, test energy for the population."""
    j, c = _pair(j, c, ("j", "c"))
    return float(np.sum(j * c.T) / j.shape[0])


def _logdet_pd(j: np.ndarray) -> float:
    try:
        chol = np.linalg.cholesky(j)
    except np.linalg.LinAlgError:
        raise ValueError("coupling matrix is not positive definite") from None
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def log_likelihood(j: np.ndarray, c: np.ndarray) -> float:
    """Per-component Gaussian log-likelihood ``log det J / 2N - Tr(J C) / 2N``."""
    j, c = _pair(j, c, ("j", "c"))
    return _logdet_pd(j) / (2 * j.shape[0]) - 0.5 * trace_energy(j, c)


def coupling_error(j: np.ndarray, j_true: np.ndarray) -> float:
    j, j_true = _pair(j, j_true, ("j", "j_true"))
    return float(np.sum((j - j_true) ** 2) / j.shape[0])


def generation_error(c_pop: np.ndarray, j: np.ndarray) -> float:
    """``||C_pop - J^-1||_F`` (not squared, not normalized)."""
    c_pop, j = _pair(c_pop, j, ("c_pop", "j"))
    _logdet_pd(j)
    return float(np.linalg.norm(c_pop - np.linalg.inv(j)))


def gaussian_w2(c1: np.ndarray, c2: np.ndarray) -> float:
    """2-Wasserstein distance between ``N(0, c1)`` and ``N(0, c2)``.

    Uses ``W2 = min_U ||A - B U||_F`` over orthogonal ``U`` with
    ``A = c1^1/2`` and ``B = c2^1/2``; the minimizer is the polar factor of
    ``B^T A``. This equals the usual trace formula but avoids its
    cancellation, so ``gaussian_w2(c, c)`` is zero to rounding rather than
    to the square root of rounding.
    """
    c1, c2 = _pair(c1, c2, ("c1", "c2"))
    check_symmetric(c1, tol=1e-8, name="c1")
    check_symmetric(c2, tol=1e-8, name="c2")
    a = sym_sqrt(c1)
    b = sym_sqrt(c2)
    u, _, vt = np.linalg.svd(b.T @ a)
    return float(np.linalg.norm(a - b @ (u @ vt)))


class Optimum(NamedTuple):
    time: float
    value: float
    index: int
    interior: bool


def find_optimum(traj, metric: str, sense: str = "min") -> Optimum:
    """Recorded time at which ``metric`` is extremal; ties go to the earliest time."""
    if metric not in traj.metrics:
        raise KeyError(f"metric {metric!r} not in trajectory (have {sorted(traj.metrics)})")
    vals = np.asarray(traj.metrics[metric], dtype=float)
    if vals.size < 3:
        raise ValueError(f"need at least 3 recorded values of {metric!r}, got {vals.size}")
    if sense == "min":
        idx = int(np.argmin(vals))
    elif sense == "max":
        idx = int(np.argmax(vals))
    else:
        raise ValueError(f"sense must be 'min' or 'max', got {sense!r}")
    return Optimum(float(traj.times[idx]), float(vals[idx]), idx, 0 < idx < vals.size - 1)


class AlignedEvaluator:
    """Metrics for couplings diagonal in a fixed orthonormal basis.

    For ``J = V diag(j) V^T`` every trace metric reduces to sums over the
    diagonal projections of the reference matrices, so whole trajectories can
    be scored without forming ``J``.

    Parameters
    ----------
    basis : ndarray
        Orthonormal columns ``V`` (usually the eigenvectors of the data covariance).
    c_train : ndarray
        Covariance for the train energy (the data covariance).
    c_pop : ndarray
        Population covariance; its inverse is the ground-truth coupling.
    c_test : ndarray, optional
        Covariance for the test energy; defaults to ``c_pop``.
    """

    def __init__(self, basis, c_train, c_pop, c_test=None, with_w2: bool = False):
        self.basis = np.asarray(basis, dtype=float)
        self.n = self.basis.shape[0]
        c_test = c_pop if c_test is None else c_test
        j_true = np.linalg.inv(c_pop)
        j_true = 0.5 * (j_true + j_true.T)
        v = self.basis
        self._ctrain_d = np.einsum("ia,ij,ja->a", v, c_train, v)
        self._ctest_d = np.einsum("ia,ij,ja->a", v, c_test, v)
        self._cpop_d = self._ctest_d if c_test is c_pop else np.einsum("ia,ij,ja->a", v, c_pop, v)
        self._jtrue_d = np.einsum("ia,ij,ja->a", v, j_true, v)
        self._jtrue_sq = float(np.sum(j_true**2))
        self._cpop_sq = float(np.sum(c_pop**2))
        self._w2_root = None
        if with_w2:
            s = sym_sqrt(c_pop)
            self._w2_root = (s, float(np.trace(c_pop)))

    def e_j(self, modes):
        m = np.asarray(modes, dtype=float)
        val = (np.sum(m**2, axis=-1) + self._jtrue_sq - 2.0 * m @ self._jtrue_d) / self.n
        return np.maximum(val, 0.0)

    def e_train(self, modes):
        return np.asarray(modes) @ self._ctrain_d / self.n

    def e_test(self, modes):
        return np.asarray(modes) @ self._ctest_d / self.n

    def _half_logdet(self, modes):
        m = np.asarray(modes, dtype=float)
        if np.any(m <= 0):
            raise ValueError("log-likelihood needs positive modes")
        return np.sum(np.log(m), axis=-1) / (2 * self.n)

    def ll_train(self, modes):
        return self._half_logdet(modes) - 0.5 * self.e_train(modes)

    def ll_test(self, modes):
        return self._half_logdet(modes) - 0.5 * self.e_test(modes)

    def e_c(self, modes):
        inv = 1.0 / np.asarray(modes, dtype=float)
        sq = self._cpop_sq + np.sum(inv**2, axis=-1) - 2.0 * inv @ self._cpop_d
        return np.sqrt(np.maximum(sq, 0.0))

    def w2(self, modes):
        if self._w2_root is None:
            raise RuntimeError("evaluator built without with_w2=True")
        s, tr_pop = self._w2_root
        modes = np.atleast_2d(np.asarray(modes, dtype=float))
        out = np.empty(modes.shape[0])
        for k, m in enumerate(modes):
            c_model = (self.basis / m) @ self.basis.T
            ev = np.linalg.eigvalsh(s @ c_model @ s)
            d2 = tr_pop + np.sum(1.0 / m) - 2.0 * np.sum(np.sqrt(np.clip(ev, 0.0, None)))
            out[k] = np.sqrt(max(d2, 0.0))
        return out

    def all(self, modes, names=("e_j", "e_train", "e_test", "ll_train", "ll_test", "e_c")) -> dict:
        return {name: np.asarray(getattr(self, name)(modes), dtype=float) for name in names}
