"""Eigenvalue corrections of an empirical covariance that keep its eigenvectors.

All cleaners return a :class:`CleanedCovariance` whose matrix is diagonal in
the eigenbasis of the input covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gebm import regularized_fixed_point
from .numerics import EigenSystem, check_symmetric, sym_eig
from .spectra import Dataset, empirical_covariance


@dataclass(frozen=True)
class CleanedCovariance:
    values: np.ndarray
    basis: np.ndarray
    method: str
    provenance: dict = field(default_factory=dict)

    @property
    def matrix(self) -> np.ndarray:
        m = (self.basis * self.values) @ self.basis.T
        return 0.5 * (m + m.T)

    @property
    def eigensystem(self) -> EigenSystem:
        return EigenSystem(self.values, self.basis)


def _clamp_to_smallest_positive(values: np.ndarray) -> np.ndarray:
    values = np.array(values, dtype=float)
    pos = values > 0
    if not pos.any():
        raise ValueError("every cleaned eigenvalue is non-positive")
    values[~pos] = values[pos].min()
    return values


def rie_clean(c_hat: np.ndarray, rho: float, eta: float | None = None) -> CleanedCovariance:
    """Rotationally invariant estimator with kernel-broadened Stieltjes transform.

    Each empirical eigenvalue ``l_k`` becomes

        xi_k = l_k / |1 - q + q l_k g_k(l_k - i eta)|^2,

    with ``q = 1/rho`` and ``g_k(z) = (1/N) sum_{j != k} 1/(z - l_j)``. The
    default broadening is ``eta = N^-1/2 * mean(l)``: the usual ``N^-1/2``
    width expressed in the units of the spectrum. A width of the order of the
    level spacing leaves ``g`` dominated by the nearest neighbours and the
    shrinkage becomes erratic. Non-positive outputs are clamped to the
    smallest positive cleaned value.
    """
    c_hat = check_symmetric(c_hat, name="c_hat")
    if not rho > 1:
        raise ValueError(f"RIE cleaning needs rho > 1, got {rho}")
    es = sym_eig(c_hat)
    lam = es.values
    n = lam.size
    if n < 2:
        raise ValueError("RIE cleaning needs at least two eigenvalues")
    if eta is None:
        eta = lam.mean() / np.sqrt(n)
    if not eta > 0:
        raise ValueError("broadening eta must be positive (is c_hat zero?)")
    q = 1.0 / rho
    diff = (lam - 1j * eta)[:, None] - lam[None, :]
    np.fill_diagonal(diff, np.inf)  # drop the self term
    g = (1.0 / diff).sum(axis=1) / n
    xi = lam / np.abs(1.0 - q + q * lam * g) ** 2
    xi = _clamp_to_smallest_positive(xi)
    return CleanedCovariance(xi, es.basis, "rie", {"rho": rho, "eta": float(eta)})


def default_sub_sizes(n: int, m: int, count: int = 8) -> np.ndarray:
    """``count`` distinct log-spaced integers strictly between ``n`` and ``m``."""
    if m - n - 1 < 2:
        raise ValueError(f"need at least two sizes strictly between N={n} and M={m}")
    sizes = np.unique(np.round(np.geomspace(n, m, count + 2)[1:-1]).astype(int))
    sizes = sizes[(sizes > n) & (sizes < m)]
    if sizes.size < 2:
        sizes = np.unique(np.linspace(n + 1, m - 1, min(count, m - n - 1)).astype(int))
    return sizes


def fit_intercepts(sizes, mean_eigs: np.ndarray, nu: float) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares fit ``c_a(m) = A_a m^-nu + B_a`` for every column ``a``.

    ``mean_eigs`` has shape ``(len(sizes), n_modes)``. Returns ``(B, A)``.
    """
    sizes = np.asarray(sizes, dtype=float)
    if sizes.size < 2:
        raise ValueError("need at least two sub-sample sizes to fit slope and intercept")
    design = np.column_stack([np.ones_like(sizes), sizes ** (-nu)])
    coef, *_ = np.linalg.lstsq(design, np.asarray(mean_eigs, dtype=float), rcond=None)
    return coef[0], coef[1]


def subsample_spectra(samples: np.ndarray, sizes, repeats: int, seed=None) -> np.ndarray:
    """Mean descending eigenvalues of covariances from random subsets without replacement."""
    rng = np.random.default_rng(seed)
    m_total, n = samples.shape
    out = np.empty((len(sizes), n))
    for i, m in enumerate(sizes):
        acc = np.zeros(n)
        for _ in range(repeats):
            idx = rng.choice(m_total, size=int(m), replace=False)
            x = samples[idx]
            acc += np.linalg.eigvalsh(x.T @ x / m)[::-1]
        out[i] = acc / repeats
    return out


def polyfit_clean(dataset: Dataset, nu: float = 1.0, sub_sizes=None, repeats: int = 10,
                  seed=None) -> CleanedCovariance:
    """Extrapolate each eigenvalue to infinite sample size from random sub-samples.

    For every size ``m`` in ``sub_sizes`` (``N < m < M``) the descending
    spectrum is averaged over ``repeats`` random subsets; each mode is then
    fitted against ``m^-nu`` and the intercept replaces the full-data
    eigenvalue on the full-data eigenvector. Non-positive intercepts are
    clamped to the smallest positive one.
    """
    x = dataset.samples
    m_total, n = x.shape
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    sizes = default_sub_sizes(n, m_total) if sub_sizes is None else np.asarray(sub_sizes, dtype=int)
    if sizes.size < 2:
        raise ValueError("need at least two sub-sample sizes to fit slope and intercept")
    if np.any(sizes <= n) or np.any(sizes >= m_total):
        raise ValueError(f"sub-sample sizes must satisfy N={n} < m < M={m_total}")
    es = sym_eig(empirical_covariance(dataset))
    means = subsample_spectra(x, sizes, repeats, seed)
    intercepts, slopes = fit_intercepts(sizes, means, nu)
    values = _clamp_to_smallest_positive(intercepts)
    return CleanedCovariance(values, es.basis, "polyfit",
                             {"nu": nu, "sub_sizes": sizes.tolist(), "repeats": repeats,
                              "seed": seed, "slopes": slopes})


def oracle_clean(pop_spectrum, c_hat: np.ndarray) -> CleanedCovariance:
    """Population eigenvalues placed on the empirical eigenvectors, matched by rank."""
    c_hat = check_symmetric(c_hat, name="c_hat")
    pop = np.sort(np.asarray(pop_spectrum, dtype=float))[::-1]
    if pop.size != c_hat.shape[0]:
        raise ValueError(f"spectrum has {pop.size} values, matrix is {c_hat.shape[0]}x{c_hat.shape[0]}")
    es = sym_eig(c_hat)
    return CleanedCovariance(pop, es.basis, "oracle", {})


def l2_equivalent_clean(c_hat: np.ndarray, lam: float) -> CleanedCovariance:
    """Covariance whose unregularized fixed point equals the L2-regularized one."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    c_hat = check_symmetric(c_hat, name="c_hat")
    es = sym_eig(c_hat)
    vals = np.clip(es.values, 0.0, None)
    return CleanedCovariance(1.0 / regularized_fixed_point(vals, lam, "l2"), es.basis,
                             "l2_equivalent", {"lambda": lam})
