"""Synthetic population spectra, Gaussian sampling and empirical covariances."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import check_symmetric, sym_eig


@dataclass(frozen=True)
class PowerLawSpectrumParams:
    """Two-piece power-law mixture for population eigenvalues.

    A fraction ``r`` of the eigenvalues ("weak" modes) lies in ``(x1, 1)`` with
    CDF exponent ``beta``; the rest lies in ``(1, x2)`` with exponent ``gamma``.
    """

    r: float = 0.9
    beta: float = 0.9
    gamma: float = 1.1
    x1: float = 0.1
    x2: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.r < 1.0:
            raise ValueError(f"r must lie in (0, 1), got {self.r}")
        if self.beta <= 0 or self.gamma <= 0:
            raise ValueError("beta and gamma must be positive")
        if not 0.0 < self.x1 < 1.0 < self.x2:
            raise ValueError(f"need 0 < x1 < 1 < x2, got x1={self.x1}, x2={self.x2}")

    def inverse_cdf(self, u):
        u = np.asarray(u, dtype=float)
        weak = u < self.r
        out = np.empty_like(u)
        out[weak] = self.x1 + (1.0 - self.x1) * (u[weak] / self.r) ** (1.0 / self.beta)
        hi = (u[~weak] - self.r) / (1.0 - self.r)
        out[~weak] = 1.0 + (self.x2 - 1.0) * hi ** (1.0 / self.gamma)
        return out


# steep population with most weight below one, used for the finite-data training studies
FIG1B = PowerLawSpectrumParams(r=0.9, beta=0.9, gamma=1.1, x1=0.1, x2=10.0)
# smoother population used for the asymptotic comparisons
RMT_SPECTRUM = PowerLawSpectrumParams(r=0.5, beta=1.0, gamma=0.5, x1=0.1, x2=10.0)


@dataclass(frozen=True)
class Dataset:
    samples: np.ndarray
    seed: object = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise ValueError(f"samples must be (M >= 1, N), got shape {self.samples.shape}")

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    @property
    def n(self) -> int:
        return self.samples.shape[1]


def power_law_spectrum(params: PowerLawSpectrumParams, n: int, mode: str = "quantile",
                       seed=None) -> np.ndarray:
    """Draw ``n`` population eigenvalues from the power-law mixture.

    ``quantile`` evaluates the inverse CDF at ``(a - 1/2)/n``, ``random`` at
    uniform draws. The result is sorted in descending order.
    """
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    if mode == "quantile":
        u = (np.arange(1, n + 1) - 0.5) / n
    elif mode == "random":
        u = np.random.default_rng(seed).uniform(size=n)
    else:
        raise ValueError(f"unknown spectrum mode {mode!r}")
    return np.sort(params.inverse_cdf(u))[::-1]


def assemble_covariance(spectrum, basis: np.ndarray) -> np.ndarray:
    spectrum = np.asarray(spectrum, dtype=float)
    basis = np.asarray(basis, dtype=float)
    if basis.ndim != 2 or basis.shape != (spectrum.size, spectrum.size):
        raise ValueError(f"basis shape {basis.shape} does not match spectrum of size {spectrum.size}")
    if np.any(spectrum <= 0):
        raise ValueError("covariance eigenvalues must be positive")
    c = (basis * spectrum) @ basis.T
    return 0.5 * (c + c.T)


def sample_gaussian(cov: np.ndarray, m: int, seed=None) -> Dataset:
    """Draw ``m`` zero-mean Gaussian vectors ``x = sum_a sqrt(c_a) v_a z_a``."""
    cov = check_symmetric(cov, name="covariance")
    if m < 1:
        raise ValueError(f"need m >= 1, got {m}")
    es = sym_eig(cov)
    if es.values[-1] <= 0:
        raise ValueError(f"covariance is not positive definite (min eigenvalue {es.values[-1]:.3e})")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((m, cov.shape[0]))
    x = (z * np.sqrt(es.values)) @ es.basis.T
    return Dataset(samples=x, seed=seed, meta={"m": m, "n": cov.shape[0]})


def empirical_covariance(d, subtract_mean: bool = False) -> np.ndarray:
    x = d.samples if isinstance(d, Dataset) else np.asarray(d, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("empty dataset")
    if subtract_mean:
        x = x - x.mean(axis=0)
    c = x.T @ x / x.shape[0]
    return 0.5 * (c + c.T)


def eigenvector_conservation(ref_basis: np.ndarray, test_basis: np.ndarray) -> np.ndarray:
    """Overlap of each test eigenvector with the span of the leading reference ones.

    Entry ``(n-1, a)`` is ``||P_n^T u_a||`` where ``P_n`` holds the first ``n``
    reference columns.
    """
    ref_basis = np.asarray(ref_basis, dtype=float)
    test_basis = np.asarray(test_basis, dtype=float)
    if ref_basis.shape != test_basis.shape or ref_basis.ndim != 2:
        raise ValueError(f"basis shapes differ: {ref_basis.shape} vs {test_basis.shape}")
    overlaps = (ref_basis.T @ test_basis) ** 2
    return np.sqrt(np.clip(np.cumsum(overlaps, axis=0), 0.0, 1.0))


def load_spectrum_csv(path) -> np.ndarray:
    path = Path(path)
    values = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not row[0].strip():
                continue
            text = row[0].strip()
            try:
                v = float(text)
            except ValueError:
                if lineno == 1 and not values:
                    continue  # header
                raise ValueError(f"{path}:{lineno}: cannot parse {text!r} as a number") from None
            if not v > 0:
                raise ValueError(f"{path}:{lineno}: eigenvalue must be positive, got {v}")
            values.append(v)
    if not values:
        raise ValueError(f"{path}: no eigenvalues found")
    return np.sort(np.array(values))[::-1]


def write_spectrum_csv(path, spectrum, header: str = "eigenvalue") -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(header + "\n")
        for v in np.sort(np.asarray(spectrum, dtype=float))[::-1]:
            fh.write(f"{float(v)!r}\n")
