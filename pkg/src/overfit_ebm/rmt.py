"""Asymptotic (N, M -> infinity, M/N = rho fixed) predictions for the Gaussian EBM.

The empirical-spectrum resolvent is replaced by its deterministic equivalent
``(z - Lambda(z) C)^-1`` with

    Lambda(z) = 1 / (1 - Gamma(z))
    Gamma(z)  = (1/rho) sum_k w_k x_k / (z - Lambda(z) x_k)

solved on the real axis at ``z = y + i eps``. Imaginary parts are stored with
the sign flipped (``lambda_i = -Im Lambda``) so that the density
``rho * lambda_i / (pi y)`` is non-negative.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .numerics import lambert_w0

RHO_SCOPE_MSG = ("only the under-parameterized regime rho = M/N > 1 is supported; "
                 "the rho < 1 branch is not implemented")


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Population:
    """Discrete population spectrum: atoms ``values`` with probabilities ``weights``."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if v.shape != w.shape or v.size == 0:
            raise ValueError("values and weights must be non-empty and of equal length")
        if np.any(v <= 0) or np.any(w < 0):
            raise ValueError("population values must be positive and weights non-negative")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w / w.sum())

    @classmethod
    def uniform(cls, values) -> "Population":
        v = np.asarray(values, dtype=float).ravel()
        return cls(v, np.full(v.size, 1.0 / v.size))

    def moment(self, p: float) -> float:
        return float(np.sum(self.weights * self.values**p))


def _check_rho(rho: float) -> None:
    if not rho > 1:
        raise ValueError(f"rho={rho}: {RHO_SCOPE_MSG}")


def default_grid(population: Population, rho: float, n_points: int = 2000) -> np.ndarray:
    """Log-spaced abscissae covering the widened support of the empirical spectrum."""
    _check_rho(rho)
    s = 1.0 / np.sqrt(rho)
    lo = population.values.min() * (1.0 - s) ** 2 * 0.5
    hi = population.values.max() * (1.0 + s) ** 2 * 2.0
    return np.geomspace(lo, hi, n_points)


@dataclass(frozen=True)
class RmtSolution:
    rho: float
    grid: np.ndarray
    lambda_r: np.ndarray
    lambda_i: np.ndarray
    gamma_r: np.ndarray
    gamma_i: np.ndarray
    density: np.ndarray
    population: Population
    eps: float
    residual: float

    def integrate(self, f) -> float:
        return float(np.trapezoid(f, self.grid))

    def mass(self) -> float:
        return self.integrate(self.density)

    def mean(self) -> float:
        return self.integrate(self.grid * self.density)

    def write_csv(self, path) -> None:
        cols = ("y", "lambda_r", "lambda_i", "gamma_r", "gamma_i", "density")
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in zip(self.grid, self.lambda_r, self.lambda_i, self.gamma_r,
                           self.gamma_i, self.density):
                w.writerow([repr(float(v)) for v in row])


def _gamma(lam, z, x, w, rho):
    inv = 1.0 / (z[:, None] - lam[:, None] * x[None, :])
    g = inv @ (w * x) / rho
    dg = (inv * inv) @ (w * x * x) / rho
    return g, dg


def solve_self_consistent(population: Population, rho: float, grid=None, eps: float = 1e-6,
                          damping: float = 0.5, tol: float = 1e-10, max_iter: int = 200,
                          eps_start: float | None = None) -> RmtSolution:
    """Solve for ``Lambda``/``Gamma`` on every grid point.

    A few damped fixed-point sweeps at a large imaginary offset pick the
    physical branch (``Lambda -> 1`` far from the spectrum); the offset is then
    lowered geometrically to ``eps`` with Newton steps warm-started from the
    previous level.

    Raises
    ------
    ConvergenceError
        If any grid point misses ``tol`` after ``max_iter`` Newton steps.
    """
    _check_rho(rho)
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    x, w = population.values, population.weights
    y = default_grid(population, rho) if grid is None else np.asarray(grid, dtype=float)
    if y.ndim != 1 or np.any(y <= 0) or np.any(np.diff(y) <= 0):
        raise ValueError("grid must be increasing and positive")

    start = eps_start if eps_start is not None else 10.0 * x.max()
    levels = np.geomspace(start, eps, max(int(np.ceil(np.log10(start / eps) * 1.5)), 2))

    lam = np.ones(y.size, dtype=complex)
    z = y + 1j * levels[0]
    for _ in range(200):
        g, _ = _gamma(lam, z, x, w, rho)
        new = 1.0 / (1.0 - g)
        step = np.max(np.abs(new - lam))
        lam = (1.0 - damping) * lam + damping * new
        if step < 1e-6:
            break

    def residual(lam_, z_):
        g_, dg_ = _gamma(lam_, z_, x, w, rho)
        f_ = lam_ * (1.0 - g_) - 1.0
        return f_, g_, dg_

    for level, e in enumerate(levels):
        z = y + 1j * e
        # intermediate offsets only need to seed the next level
        level_tol = tol if level == levels.size - 1 else max(tol, 1e-6)
        f, g, dg = residual(lam, z)
        for it in range(max_iter):
            if np.max(np.abs(f)) <= level_tol:
                break
            fp = 1.0 - g - lam * dg
            step = f / fp
            t = np.ones(y.size)
            # backtracking keeps each point on its branch
            for _ in range(30):
                cand = lam - t * step
                fc, gc, dgc = residual(cand, z)
                worse = np.abs(fc) > np.abs(f) * (1 - 1e-4 * t)
                bad = worse & (np.abs(f) > level_tol)
                if not bad.any():
                    break
                t = np.where(bad, 0.5 * t, t)
            lam, f, g, dg = cand, fc, gc, dgc
        res = np.abs(f)
        if np.max(res) > level_tol:
            k = int(np.argmax(res))
            raise ConvergenceError(
                f"self-consistent solve did not converge at y={y[k]:.6g} (eps={e:.3g}): "
                f"residual {res[k]:.3e} > {tol:.1e}")

    gam = 1.0 - 1.0 / lam
    lambda_i = -lam.imag
    gamma_i = -gam.imag
    density = np.maximum(rho * lambda_i / (np.pi * y), 0.0)
    return RmtSolution(rho=float(rho), grid=y, lambda_r=lam.real.copy(), lambda_i=lambda_i,
                       gamma_r=gam.real.copy(), gamma_i=gamma_i, density=density,
                       population=population, eps=float(eps), residual=float(np.max(np.abs(f))))


def marchenko_pastur_density(y, q: float, scale: float = 1.0):
    """Textbook Marchenko-Pastur density for ratio ``q = N/M <= 1`` and variance ``scale``."""
    y = np.asarray(y, dtype=float) / scale
    a, b = (1 - np.sqrt(q)) ** 2, (1 + np.sqrt(q)) ** 2
    inside = (y > a) & (y < b)
    out = np.zeros_like(y)
    out[inside] = np.sqrt((b - y[inside]) * (y[inside] - a)) / (2 * np.pi * q * y[inside])
    return out / scale


# ---------------------------------------------------------------------------
# coupling functionals


@dataclass(frozen=True)
class JFunctional:
    """Coupling eigenvalue as a function of the data eigenvalue.

    ``time``: training from zero couplings up to time ``param``.
    ``spectral_l1`` / ``l2``: regularized fixed points with inverse penalty
    ``param = 1/lambda``.
    """

    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in ("time", "spectral_l1", "l2"):
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.param < 0:
            raise ValueError("parameter must be non-negative")

    @classmethod
    def from_lambda(cls, kind: str, lam: float) -> "JFunctional":
        return cls(kind, np.inf if lam == 0 else 1.0 / lam)


def one_plus_w0_branch(s):
    """``1 + W0(-exp(-1 - s))`` for ``s >= 0``, accurate as ``s -> 0``."""
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    small = s < 1e-6
    # p^2 = 2 (1 - e^{-s}); series of W0 about the branch point
    p = np.sqrt(-2.0 * np.expm1(-s[small]))
    out[small] = p - p**2 / 3 + 11 * p**3 / 72 - 43 * p**4 / 540
    big = ~small
    out[big] = 1.0 + lambert_w0(-np.exp(-1.0 - s[big]))
    return out


def eval_j(f: JFunctional, x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("eigenvalues must be non-negative")
    a = f.param
    if f.kind == "time":
        if np.isinf(a):
            with np.errstate(divide="ignore"):
                out = 1.0 / x
        else:
            s = x * x * a
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.where(x > 0, one_plus_w0_branch(s) / np.where(x > 0, x, 1.0),
                               np.sqrt(2.0 * a))
    elif f.kind == "spectral_l1":
        with np.errstate(divide="ignore"):
            out = 1.0 / x if np.isinf(a) else a / (1.0 + a * x)
    else:
        if np.isinf(a):
            with np.errstate(divide="ignore"):
                out = 1.0 / x
        else:
            # (a/2)(sqrt(x^2 + 4/a) - x), cancellation-free
            out = 2.0 / (x + np.sqrt(x * x + 4.0 / a))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# asymptotic functionals


class Energies(NamedTuple):
    e_train: float
    e_test: float


def asymptotic_energies(sol: RmtSolution, f: JFunctional) -> Energies:
    j = eval_j(f, sol.grid)
    c = sol.rho / np.pi
    e_train = c * sol.integrate(j * (sol.lambda_r * sol.gamma_i + sol.lambda_i * sol.gamma_r))
    e_test = c * sol.integrate(j * sol.gamma_i)
    return Energies(e_train, e_test)


def asymptotic_coupling_error(sol: RmtSolution, f: JFunctional,
                              population: Population | None = None) -> float:
    pop = population or sol.population
    y, rho = sol.grid, sol.rho
    j = eval_j(f, y)
    integrand = sol.density * j * (j - (2.0 / rho) * ((1.0 - rho) + 2.0 * rho * sol.lambda_r) / y)
    return pop.moment(-2.0) + sol.integrate(integrand)


def asymptotic_log_likelihood(sol: RmtSolution, f: JFunctional) -> tuple[float, float]:
    """(train, test) log-likelihood from the real-line density reduction."""
    j = eval_j(f, sol.grid)
    mask = sol.density > 0
    half_logdet = 0.5 * sol.integrate(np.where(mask, sol.density * np.log(np.where(mask, j, 1.0)), 0.0))
    e = asymptotic_energies(sol, f)
    return half_logdet - 0.5 * e.e_train, half_logdet - 0.5 * e.e_test


def gcv_test_from_train(e_train: float, rho: float) -> float:
    denom = 1.0 - e_train / rho
    if denom <= 0:
        raise ValueError(f"e_train={e_train} must be below rho={rho}")
    return e_train / denom


def gcv_train_from_test(e_test: float, rho: float) -> float:
    denom = 1.0 + e_test / rho
    if denom <= 0:
        raise ValueError("1 + e_test / rho must be positive")
    return e_test / denom


class L1Direct(NamedTuple):
    lam: float
    gamma: float
    e_train: float
    e_test: float
    e_j: float


def spectral_l1_direct(population: Population, rho: float, alpha: float,
                       tol: float = 1e-14) -> L1Direct:
    """Spectral-L1 asymptotics from the real fixed point, without contour integrals.

    Solves ``Lambda = alpha / (1 + Gamma)``,
    ``Gamma = (alpha/rho) sum_k w_k x_k / (1 + Lambda x_k)``.
    """
    _check_rho(rho)
    x, w = population.values, population.weights

    def h(lam):
        return np.sum(w * x / (1.0 + lam * x))

    # Lambda * (1 + (alpha/rho) h(Lambda)) - alpha is increasing in Lambda on [0, alpha]
    lo, hi = 0.0, alpha
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid * (1.0 + alpha / rho * h(mid)) > alpha:
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol * max(1.0, alpha):
            break
    lam = 0.5 * (lo + hi)
    gam = alpha / rho * h(lam)
    e_test = rho * gam
    e_train = 1.0 - np.sum(w / (1.0 + lam * x))
    hp = -np.sum(w * x * x / (1.0 + lam * x) ** 2)
    dlam = (1.0 - lam * h(lam) / rho) / (1.0 + alpha / rho * h(lam) + alpha * lam / rho * hp)
    tr_g = np.sum(w / (1.0 + lam * x))
    tr_g2 = tr_g - alpha * dlam * np.sum(w * x / (1.0 + lam * x) ** 2)
    cross = np.sum(w / (x * (1.0 + lam * x)))
    e_j = alpha**2 * tr_g2 + np.sum(w / x**2) - 2.0 * alpha * cross
    return L1Direct(lam, gam, float(e_train), float(e_test), float(e_j))


# ---------------------------------------------------------------------------
# scans


class ScanResult(NamedTuple):
    best_param: float
    params: np.ndarray
    curve: np.ndarray
    boundary: bool


def objective_curve(sol: RmtSolution, kind: str, params, objective: str) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    out = np.empty(params.size)
    for k, p in enumerate(params):
        f = _functional_for(kind, p)
        if objective == "coupling_error":
            out[k] = asymptotic_coupling_error(sol, f)
        elif objective == "test_ll":
            out[k] = asymptotic_log_likelihood(sol, f)[1]
        else:
            raise ValueError(f"unknown objective {objective!r}")
    return out


def _functional_for(kind: str, p: float) -> JFunctional:
    """Scan parameters are times for ``time`` and penalties lambda otherwise."""
    if kind == "time":
        return JFunctional("time", p)
    return JFunctional.from_lambda(kind, p)


def optimum_scan(population: Population, rho: float, kind: str, param_grid,
                 objective: str = "coupling_error", sol: RmtSolution | None = None,
                 **solver_kw) -> ScanResult:
    """Scan times (``kind='time'``) or penalties lambda and locate the optimum.

    Coupling error is minimized, test log-likelihood maximized. ``boundary``
    flags an optimum at either end of the grid.
    """
    sol = sol or solve_self_consistent(population, rho, **solver_kw)
    params = np.asarray(param_grid, dtype=float)
    curve = objective_curve(sol, kind, params, objective)
    idx = int(np.argmin(curve) if objective == "coupling_error" else np.argmax(curve))
    return ScanResult(float(params[idx]), params, curve, idx in (0, params.size - 1))
