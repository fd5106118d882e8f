"""Gaussian EBM training: per-mode closed forms and full-matrix gradient ascent.

Time is measured in units of the learning-rate timescale, so ``t = steps * rate``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .numerics import EigenSystem, check_symmetric, lambert_w0, sym_eig


class PositiveDefinitenessError(RuntimeError):
    """Raised when an iterate leaves the positive-definite cone."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        super().__init__(f"coupling matrix lost positive definiteness at step {step}"
                         + (f": {detail}" if detail else ""))


@dataclass
class Trajectory:
    """Time-indexed mode values and scalar metrics of one training run."""

    times: np.ndarray
    mode_values: np.ndarray | None = None
    metrics: dict = field(default_factory=dict)
    steps: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1:
            raise ValueError("times must be one-dimensional")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.mode_values is not None:
            self.mode_values = np.asarray(self.mode_values, dtype=float)
            if self.mode_values.shape[0] != self.times.size:
                raise ValueError("mode_values rows must match times")
        for k, v in list(self.metrics.items()):
            v = np.asarray(v, dtype=float)
            if v.shape != self.times.shape:
                raise ValueError(f"metric {k!r} has shape {v.shape}, expected {self.times.shape}")
            self.metrics[k] = v

    def __len__(self):
        return self.times.size

    def final(self, name: str) -> float:
        return float(self.metrics[name][-1])

    def write_csv(self, path, include_modes: bool = True, index_name: str = "time") -> None:
        cols = [index_name]
        data = [self.times]
        if self.steps is not None:
            cols.append("step")
            data.append(np.asarray(self.steps, dtype=float))
        if include_modes and self.mode_values is not None:
            n = self.mode_values.shape[1]
            cols += [f"mode_{a + 1:03d}" for a in range(n)]
            data += [self.mode_values[:, a] for a in range(n)]
        for k in sorted(self.metrics):
            cols.append(k)
            data.append(self.metrics[k])
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in zip(*data):
                w.writerow([_fmt(v) for v in row])


def _fmt(v: float) -> str:
    return repr(float(v))


def read_trajectory_csv(path) -> Trajectory:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    times = body[:, 0]
    steps = body[:, header.index("step")] if "step" in header else None
    mode_idx = [i for i, h in enumerate(header) if h.startswith("mode_")]
    modes = body[:, mode_idx] if mode_idx else None
    metrics = {h: body[:, i] for i, h in enumerate(header)
               if h not in ("time", "step") and not h.startswith("mode_")}
    return Trajectory(times=times, mode_values=modes, metrics=metrics, steps=steps)


# ---------------------------------------------------------------------------
# closed forms


def analytic_mode_trajectory(c_hat, j0, t):
    """Unregularized mode value ``J(t) = (1 + W0(B exp(-c^2 t))) / c``.

    ``B = (c j0 - 1) exp(c j0 - 1)`` fixes ``J(0) = j0``; ``j0 = 0`` gives
    ``B = -1/e``. Broadcasts over all arguments.
    """
    c = np.asarray(c_hat, dtype=float)
    j0 = np.asarray(j0, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(c <= 0):
        raise ValueError("c_hat must be positive")
    if np.any(t < 0) or np.any(j0 < 0):
        raise ValueError("t and j0 must be non-negative")
    u = c * j0 - 1.0
    # log of |B e^{-c^2 t}| keeps huge j0 from overflowing
    with np.errstate(divide="ignore"):
        logmag = np.log(np.abs(u)) + u - c * c * t
    big = logmag > 600.0
    arg = np.sign(u) * np.exp(np.where(big, 0.0, logmag))
    w = lambert_w0(arg)
    if np.any(big):
        w = np.where(big, _w0_of_exp(np.where(big, logmag, 1.0)), w)
    return (1.0 + w) / c


def _w0_of_exp(log_x):
    """``W0(exp(L))`` for large ``L``: Newton on ``w + log w = L``."""
    w = log_x - np.log(log_x)
    for _ in range(6):
        w = w - (w + np.log(w) - log_x) * w / (w + 1.0)
    return w


def regularized_fixed_point(c, lam: float, kind: str = "l2"):
    """Stationary mode value under L2 or spectral-L1 regularization."""
    c = np.asarray(c, dtype=float)
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if kind == "l2":
        if lam == 0:
            if np.any(c <= 0):
                raise ValueError("c = lambda = 0 has no fixed point")
            out = 1.0 / c
        else:
            if np.any(c < 0):
                raise ValueError("c must be non-negative")
            # (-c + sqrt(c^2 + 4 lam)) / (2 lam), written without cancellation
            out = 2.0 / (c + np.sqrt(c * c + 4.0 * lam))
    elif kind == "spectral_l1":
        if np.any(c + lam <= 0):
            raise ValueError("c + lambda must be positive")
        out = 1.0 / (c + lam)
    else:
        raise ValueError(f"unknown regularization kind {kind!r}")
    return float(out) if out.ndim == 0 else out


def score_matching_j(x, t):
    """Score-matching coupling ``(1 - exp(-x t)) / x`` with the ``x = 0`` limit ``t``."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    x, t = np.broadcast_arrays(x, t)
    out = np.array(t, dtype=float, copy=True)
    nz = x != 0
    out[nz] = -np.expm1(-x[nz] * t[nz]) / x[nz]
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# mode ODEs


def _rk4(rhs: Callable, y0: np.ndarray, t_grid: np.ndarray, step: float) -> np.ndarray:
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or (t_grid.size > 1 and np.any(np.diff(t_grid) < 0)):
        raise ValueError("t_grid must be non-decreasing")
    y = np.array(y0, dtype=float, copy=True)
    out = np.empty((t_grid.size,) + y.shape)
    t = 0.0
    for k, target in enumerate(t_grid):
        if target < t:
            raise ValueError("t_grid must start at or after 0")
        n_sub = int(np.ceil((target - t) / step - 1e-9))
        if n_sub > 0:
            h = (target - t) / n_sub
            for _ in range(n_sub):
                k1 = rhs(y)
                k2 = rhs(y + 0.5 * h * k1)
                k3 = rhs(y + 0.5 * h * k2)
                k4 = rhs(y + h * k3)
                y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
                if np.any(y <= 0) or not np.all(np.isfinite(y)):
                    raise PositiveDefinitenessError(k, f"mode value left (0, inf) before t={target}")
            t = target
        out[k] = y
    return out


def l2_mode_dynamics(c, j0, lam: float, t_grid, step: float = 1e-3) -> np.ndarray:
    """RK4 solution of ``dJ/dt = 1/J - c - lam J`` sampled on ``t_grid``.

    Vectorized over ``c``/``j0``; returns an array of shape ``t_grid.shape + c.shape``.
    """
    c, j0 = np.broadcast_arrays(np.asarray(c, dtype=float), np.asarray(j0, dtype=float))
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if np.any(j0 <= 0):
        raise ValueError("j0 must be positive")
    return _rk4(lambda j: 1.0 / j - c - lam * j, j0, t_grid, step)


def mode_ode_rk4(c, j0, t_grid, step: float = 1e-3) -> np.ndarray:
    """RK4 solution of the unregularized mode equation ``dJ/dt = 1/J - c``."""
    return l2_mode_dynamics(c, j0, 0.0, t_grid, step)


def first_passage_time(times, values, target, rel_tol: float = 0.1) -> float:
    """First recorded time at which ``|values - target| <= rel_tol |target|``.

    Returns ``inf`` if the band is never reached.
    """
    values = np.asarray(values, dtype=float)
    hit = np.flatnonzero(np.abs(values - target) <= rel_tol * abs(target))
    return float(np.asarray(times)[hit[0]]) if hit.size else float("inf")


# ---------------------------------------------------------------------------
# full-matrix training


@dataclass(frozen=True)
class Regularization:
    kind: str = "none"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "l2", "spectral_l1"):
            raise ValueError(f"unknown regularization {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    def gradient_term(self, j: np.ndarray) -> np.ndarray | float:
        if self.kind == "l2":
            return self.lam * j
        if self.kind == "spectral_l1":
            # d Tr(J) / dJ = I: every projected mode loses lam
            return self.lam * np.eye(j.shape[0])
        return 0.0

    def fixed_point(self, c):
        if self.kind == "none":
            return regularized_fixed_point(c, 0.0, "spectral_l1")
        return regularized_fixed_point(c, self.lam, self.kind)

    @classmethod
    def parse(cls, text: str) -> "Regularization":
        """Parse ``none``, ``l2(0.1)`` or ``spectral_l1(0.5)``."""
        text = text.strip()
        if text in ("", "none"):
            return cls()
        if not text.endswith(")") or "(" not in text:
            raise ValueError(f"cannot parse regularization {text!r}")
        kind, arg = text[:-1].split("(", 1)
        return cls(kind.strip(), float(arg))


def gradient_ascent_train(c_hat: np.ndarray, j0: np.ndarray, rate: float, steps: int,
                          reg: Regularization | None = None, diag_double: bool = False,
                          symmetric: bool = False, record_every: int = 1,
                          observe: Callable[[np.ndarray], dict] | None = None,
                          mode_basis: np.ndarray | None = None) -> Trajectory:
    """Iterate ``J <- J + rate (J^-1 - C_hat - reg'(J))`` on the full matrix.

    Parameters
    ----------
    c_hat : ndarray
        Data covariance (symmetric PSD).
    j0 : ndarray
        Symmetric positive-definite initial couplings.
    rate : float
        Learning rate; one step advances time by ``rate``.
    steps : int
        Number of updates.
    reg : Regularization, optional
        ``l2`` subtracts ``lam J``, ``spectral_l1`` subtracts ``lam`` per mode.
    diag_double, symmetric : bool
        ``symmetric`` uses the symmetric-perturbation gradient, which halves
        the diagonal; ``diag_double`` doubles the diagonal step.
    record_every : int
        Recording cadence in steps. Step 0 and the last step are always kept.
    observe : callable, optional
        Maps the current ``J`` to a dict of scalar metrics.
    mode_basis : ndarray, optional
        If given, modes are recorded as ``diag(V^T J V)``; otherwise the
        eigenvalues of ``J`` in descending order.

    Raises
    ------
    PositiveDefinitenessError
        If an update leaves the positive-definite cone.
    """
    c_hat = check_symmetric(c_hat, name="c_hat")
    j = check_symmetric(j0, name="j0").copy()
    if rate <= 0:
        raise ValueError("rate must be positive")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    reg = reg or Regularization()
    n = j.shape[0]
    diag_scale = (0.5 if symmetric else 1.0) * (2.0 if diag_double else 1.0)

    times, step_ids, modes, rows = [], [], [], []

    def record(k, chol):
        times.append(k * rate)
        step_ids.append(k)
        if mode_basis is not None:
            modes.append(np.einsum("ia,ij,ja->a", mode_basis, j, mode_basis))
        else:
            modes.append(np.linalg.eigvalsh(j)[::-1])
        if observe is not None:
            rows.append(observe(j))

    try:
        chol = np.linalg.cholesky(j)
    except np.linalg.LinAlgError:
        raise PositiveDefinitenessError(0, "initial coupling matrix") from None
    record(0, chol)
    eye = np.eye(n)
    for k in range(1, steps + 1):
        jinv = np.linalg.solve(j, eye)
        grad = jinv - c_hat - reg.gradient_term(j)
        grad = 0.5 * (grad + grad.T)
        if diag_scale != 1.0:
            grad[np.diag_indices(n)] *= diag_scale
        j = j + rate * grad
        try:
            chol = np.linalg.cholesky(j)
        except np.linalg.LinAlgError:
            raise PositiveDefinitenessError(k, f"reduce the learning rate (rate={rate})") from None
        if k % record_every == 0 or k == steps:
            record(k, chol)

    metrics = {}
    if rows:
        for key in rows[0]:
            metrics[key] = np.array([r[key] for r in rows])
    return Trajectory(times=np.array(times), mode_values=np.array(modes), metrics=metrics,
                      steps=np.array(step_ids))


def eigenvector_rotation_rate(j: np.ndarray, c_hat: np.ndarray, gap_tol: float = 1e-10) -> np.ndarray:
    """Rotation generator ``c_ab / (J_a - J_b)`` in the eigenbasis of ``j``.

    Rows and columns follow the descending eigenvalue order of ``j``.
    """
    j = check_symmetric(j, name="j")
    c_hat = check_symmetric(c_hat, name="c_hat")
    es = sym_eig(j)
    diff = es.values[:, None] - es.values[None, :]
    n = es.n
    off = ~np.eye(n, dtype=bool)
    if n > 1:
        gaps = np.abs(diff[off])
        if gaps.min() <= gap_tol:
            a, b = np.argwhere(off & (np.abs(diff) <= gap_tol))[0]
            raise ValueError(f"degenerate spectrum: modes {a} and {b} share eigenvalue {es.values[a]:.6g}")
    proj = es.project(c_hat)
    out = np.zeros((n, n))
    out[off] = proj[off] / diff[off]
    return out


def mode_trajectories(es: EigenSystem, j0, times, reg: Regularization | None = None,
                      step: float = 1e-3) -> np.ndarray:
    """Aligned-initialization mode values for every eigenvalue of ``es``.

    Uses the Lambert-W closed form without regularization and the L2 RK4
    integrator otherwise. Shape ``(len(times), n)``.
    """
    reg = reg or Regularization()
    c = es.values
    times = np.asarray(times, dtype=float)
    j0 = np.broadcast_to(np.asarray(j0, dtype=float), c.shape)
    if reg.kind == "none":
        return analytic_mode_trajectory(c[None, :], j0[None, :], times[:, None])
    if reg.kind == "spectral_l1":
        # same closed form with c shifted by lambda
        return analytic_mode_trajectory(c[None, :] + reg.lam, j0[None, :], times[:, None])
    return l2_mode_dynamics(c, j0, reg.lam, times, step)
