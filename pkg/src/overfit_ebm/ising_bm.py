"""Binary pairwise models: 2D Ising ground truth, Metropolis sampling and
Boltzmann-machine training with mean-field or Monte Carlo gradients.

Spins take values in {-1, +1}, fields are fixed to zero and the model weight
is ``exp(x^T J x / 2)`` with a zero-diagonal ``J``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .gebm import PositiveDefinitenessError, Trajectory, analytic_mode_trajectory
from .numerics import check_symmetric
from .spectra import Dataset, empirical_covariance


@dataclass(frozen=True)
class IsingModel:
    side: int
    coupling_scale: float
    couplings: np.ndarray

    @property
    def n(self) -> int:
        return self.couplings.shape[0]


@dataclass
class BmState:
    coupling: np.ndarray
    time: int = 0

    def __post_init__(self):
        j = check_symmetric(self.coupling, name="coupling")
        if np.any(np.diag(j) != 0):
            raise ValueError("Boltzmann machine couplings must have a zero diagonal")
        self.coupling = np.array(j, dtype=float)


def build_ising_2d(side: int, beta: float) -> IsingModel:
    """Periodic nearest-neighbour lattice with weight ``beta`` on every bond.

    At ``side == 2`` the two periodic neighbours in each direction coincide;
    the duplicate edges are merged into one bond of weight ``beta``.
    """
    if int(side) != side or side < 2:
        raise ValueError(f"lattice side must be an integer >= 2, got {side}")
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    side = int(side)
    n = side * side
    idx = np.arange(n).reshape(side, side)
    adj = np.zeros((n, n), dtype=bool)
    for shift, axis in ((1, 0), (1, 1)):
        nb = np.roll(idx, -shift, axis=axis)
        adj[idx.ravel(), nb.ravel()] = True
    adj |= adj.T
    np.fill_diagonal(adj, False)
    return IsingModel(side, float(beta), beta * adj.astype(float))


def _sweep(x: np.ndarray, j: np.ndarray, rng: np.random.Generator) -> None:
    """One random-scan Metropolis sweep (N single-site proposals), in place.

    Every chain draws its own site at each proposal. A fixed sequential scan
    is periodic when nearly every flip is accepted (at ``J = 0`` each chain
    would just alternate between ``x`` and ``-x``); random sites avoid that.
    """
    chains, n = x.shape
    sites = rng.integers(0, n, size=(n, chains))
    log_u = np.log(rng.random((n, chains)))
    rows = np.arange(chains)
    for k in range(n):
        i = sites[k]
        h = np.einsum("cj,cj->c", x, j[i])
        xi = x[rows, i]
        # flip cost in log-weight: -2 x_i h_i
        flip = log_u[k] < -2.0 * xi * h
        x[rows[flip], i[flip]] = -xi[flip]


def _random_spins(rng, chains: int, n: int) -> np.ndarray:
    return np.where(rng.random((chains, n)) < 0.5, -1.0, 1.0)


def metropolis_sample(model, m: int, burn_in: int = 1000, thin: int = 10, seed=None,
                      chains: int = 100) -> Dataset:
    """Equilibrium configurations from independent random-scan Metropolis chains.

    ``model`` is an :class:`IsingModel`, a :class:`BmState` or a coupling
    matrix. Each chain discards ``burn_in`` sweeps and then keeps one
    configuration every ``thin`` sweeps; samples are interleaved across
    chains. The output depends only on ``(model, m, burn_in, thin, seed, chains)``.
    """
    j = _couplings_of(model)
    if m < 1:
        raise ValueError(f"need m >= 1, got {m}")
    if burn_in < 1 or thin < 1:
        raise ValueError("burn_in and thin must be >= 1")
    if chains < 1:
        raise ValueError("chains must be >= 1")
    chains = min(chains, m)
    rng = np.random.default_rng(seed)
    x = _random_spins(rng, chains, j.shape[0])
    for _ in range(burn_in):
        _sweep(x, j, rng)
    rounds = -(-m // chains)
    out = np.empty((rounds * chains, j.shape[0]))
    for r in range(rounds):
        for _ in range(thin):
            _sweep(x, j, rng)
        out[r * chains:(r + 1) * chains] = x
    return Dataset(out[:m], seed=seed, meta={"burn_in": burn_in, "thin": thin, "chains": chains})


def _couplings_of(model) -> np.ndarray:
    if isinstance(model, IsingModel):
        return model.couplings
    if isinstance(model, BmState):
        return model.coupling
    j = check_symmetric(np.asarray(model, dtype=float), name="couplings")
    if np.any(np.diag(j) != 0):
        raise ValueError("couplings must have a zero diagonal")
    return j


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class McmcGradient:
    """Persistent-chain estimate of the model correlations."""

    chains: int = 200
    sweeps: int = 1
    seed: object = None


def _mean_field_corr(j: np.ndarray, step: int) -> np.ndarray:
    a = np.eye(j.shape[0]) - j
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise PositiveDefinitenessError(step, "I - J is no longer positive definite; "
                                              "reduce the learning rate") from None
    return np.linalg.inv(a)


def bm_train(c_hat: np.ndarray, j0, rate: float, steps: int, gradient="mean_field",
             record_every: int = 1, observe: Callable[[np.ndarray], dict] | None = None,
             mode_basis: np.ndarray | None = None) -> Trajectory:
    """Iterate ``J <- J + rate (C_hat - C_model)`` on the off-diagonal entries.

    Parameters
    ----------
    c_hat : ndarray
        Data correlations of +-1 variables (unit diagonal).
    j0 : BmState or ndarray
        Zero-diagonal symmetric initial couplings.
    gradient : "mean_field" or McmcGradient
        ``mean_field`` uses ``C_model = (I - J)^-1``; an :class:`McmcGradient`
        estimates it from persistent Metropolis chains.
    mode_basis : ndarray, optional
        Record ``diag(V^T J V)`` instead of the descending eigenvalues of ``J``.

    The trajectory's ``times`` are ``steps * rate``; ``steps`` holds the raw
    update counts.
    """
    c_hat = check_symmetric(c_hat, name="c_hat")
    state = j0 if isinstance(j0, BmState) else BmState(np.asarray(j0, dtype=float))
    j = state.coupling.copy()
    if j.shape != c_hat.shape:
        raise ValueError(f"dimension mismatch: c_hat {c_hat.shape} vs j0 {j.shape}")
    if rate <= 0:
        raise ValueError("rate must be positive")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    n = j.shape[0]
    off = ~np.eye(n, dtype=bool)

    if gradient == "mean_field":
        def model_corr(k):
            return _mean_field_corr(j, k)
    elif isinstance(gradient, McmcGradient):
        rng = np.random.default_rng(gradient.seed)
        x = _random_spins(rng, gradient.chains, n)

        def model_corr(k):
            for _ in range(gradient.sweeps):
                _sweep(x, j, rng)
            return x.T @ x / x.shape[0]
    else:
        raise ValueError(f"unknown gradient {gradient!r}")

    times, step_ids, modes, rows = [], [], [], []

    def record(k):
        times.append(k * rate)
        step_ids.append(state.time + k)
        if mode_basis is not None:
            modes.append(np.einsum("ia,ij,ja->a", mode_basis, j, mode_basis))
        else:
            modes.append(np.linalg.eigvalsh(j)[::-1])
        if observe is not None:
            rows.append(observe(j))

    if gradient == "mean_field":
        _mean_field_corr(j, 0)
    record(0)
    for k in range(1, steps + 1):
        grad = c_hat - model_corr(k - 1)
        grad = 0.5 * (grad + grad.T)
        j[off] += rate * grad[off]
        if k % record_every == 0 or k == steps:
            record(k)

    metrics = {}
    if rows:
        for key in rows[0]:
            metrics[key] = np.array([r[key] for r in rows])
    return Trajectory(times=np.array(times), mode_values=np.array(modes), metrics=metrics,
                      steps=np.array(step_ids))


def bm_analytic_mode_trajectory(c_hat_alpha, j0, t):
    """Independent-mode mean-field solution ``1 - 1/c - W0(B e^{-c^2 t}) / c``.

    With ``u = 1 - J`` the mode equation becomes the Gaussian one, so this is
    ``1 - analytic_mode_trajectory(c, 1 - j0, t)``. Requires ``j0 <= 1``.
    """
    c = np.asarray(c_hat_alpha, dtype=float)
    if np.any(c <= 0) or not np.all(np.isfinite(c)):
        raise ValueError("c_hat_alpha must be positive and finite")
    j0 = np.asarray(j0, dtype=float)
    if np.any(j0 > 1):
        raise ValueError("mean-field modes need j0 <= 1")
    return 1.0 - analytic_mode_trajectory(c, 1.0 - j0, t)


def bm_generation_error(model_j, reference_cov: np.ndarray, n_gen: int, sampler_params=None,
                        seed=None) -> float:
    """Frobenius distance between sampled model correlations and ``reference_cov``."""
    params = dict(sampler_params or {})
    data = metropolis_sample(model_j, n_gen, seed=seed, **params)
    ref = np.asarray(reference_cov, dtype=float)
    c_gen = empirical_covariance(data)
    if ref.shape != c_gen.shape:
        raise ValueError(f"dimension mismatch: reference {ref.shape} vs model {c_gen.shape}")
    return float(np.linalg.norm(c_gen - ref))
