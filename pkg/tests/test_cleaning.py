import numpy as np
import pytest

from overfit_ebm.cleaning import (CleanedCovariance, default_sub_sizes, fit_intercepts,
                                  l2_equivalent_clean, oracle_clean, polyfit_clean, rie_clean)
from overfit_ebm.gebm import Regularization, gradient_ascent_train, regularized_fixed_point
from overfit_ebm.metrics import coupling_error
from overfit_ebm.numerics import random_orthogonal, sym_eig
from overfit_ebm.spectra import (FIG1B, assemble_covariance, empirical_covariance,
                                 power_law_spectrum, sample_gaussian)


def _problem(n, rho, seed, spectrum=None):
    spec = power_law_spectrum(FIG1B, n) if spectrum is None else spectrum
    v = random_orthogonal(n, seed=seed)
    c = assemble_covariance(spec, v)
    data = sample_gaussian(c, int(round(rho * n)), seed=seed + 500)
    return spec, v, c, data, empirical_covariance(data)


def _off_diag_in_basis(cleaned, c_hat):
    p = sym_eig(c_hat).basis.T @ cleaned.matrix @ sym_eig(c_hat).basis
    return np.max(np.abs(p - np.diag(np.diag(p))))


def _final_e_j(cleaned, j_true):
    # unregularized training converges to the inverse of the training covariance
    return coupling_error((cleaned.basis / cleaned.values) @ cleaned.basis.T, j_true)


class TestRie:
    def test_huge_rho_is_identity(self):
        _, _, _, _, c_hat = _problem(40, 3.0, 1)
        out = rie_clean(c_hat, 1e12)
        np.testing.assert_allclose(out.values, sym_eig(c_hat).values, rtol=1e-9)

    def test_identity_population_shrinks_toward_one(self):
        wins = 0
        for s in range(20):
            _, _, _, _, c_hat = _problem(200, 2.0, s, spectrum=np.ones(200))
            raw = sym_eig(c_hat).values
            xi = rie_clean(c_hat, 2.0).values
            wins += np.sum((xi - 1) ** 2) < np.sum((raw - 1) ** 2)
        assert wins == 20

    def test_beats_raw_at_rho_2p8(self):
        spec, v, _, _, c_hat = _problem(100, 2.8, 3)
        j_true = (v / spec) @ v.T
        raw = CleanedCovariance(sym_eig(c_hat).values, sym_eig(c_hat).basis, "raw")
        assert _final_e_j(rie_clean(c_hat, 2.8), j_true) < _final_e_j(raw, j_true)

    def test_formula_direct(self):
        lam = np.array([3.0, 1.5, 0.7, 0.2])
        c_hat = np.diag(lam)
        eta = 0.05
        out = rie_clean(c_hat, 2.0, eta=eta)
        q = 0.5
        expect = []
        for k in range(4):
            g = sum(1 / (lam[k] - 1j * eta - lam[j]) for j in range(4) if j != k) / 4
            expect.append(lam[k] / abs(1 - q + q * lam[k] * g) ** 2)
        np.testing.assert_allclose(np.sort(out.values), np.sort(expect), rtol=1e-12)
        assert out.provenance["eta"] == eta

    def test_errors(self):
        with pytest.raises(ValueError):
            rie_clean(np.eye(3), 1.0)
        with pytest.raises(ValueError):
            rie_clean(np.zeros((3, 3)), 2.0)
        with pytest.raises(ValueError):
            rie_clean(np.eye(3), 2.0, eta=0.0)

    def test_default_broadening(self):
        lam = np.array([4.0, 2.0, 1.0, 1.0])
        assert rie_clean(np.diag(lam), 2.0).provenance["eta"] == pytest.approx(2.0 / 2.0)


class TestPolyfit:
    def test_exact_affine_recovery(self):
        sizes = np.array([120, 200, 350, 600])
        b = np.array([5.0, 1.0, 0.1])
        a = np.array([30.0, -4.0, 2.0])
        for nu in (1.0, 0.5):
            means = b[None] + a[None] * sizes[:, None] ** (-nu)
            got_b, got_a = fit_intercepts(sizes, means, nu)
            np.testing.assert_allclose(got_b, b, atol=1e-10)
            np.testing.assert_allclose(got_a, a, rtol=1e-8)

    def test_closer_to_population(self):
        better = 0
        for s in range(5):
            spec, _, _, data, c_hat = _problem(100, 1.66, s)
            raw = sym_eig(c_hat).values
            fit = polyfit_clean(data, nu=1.0, seed=s)
            better += np.mean((fit.values - spec) ** 2) < np.mean((raw - spec) ** 2)
        assert better == 5

    def test_deterministic_given_seed(self):
        *_, data, _ = _problem(30, 3.0, 4)
        a = polyfit_clean(data, repeats=1, seed=9)
        b = polyfit_clean(data, repeats=1, seed=9)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.provenance["repeats"] == 1 and a.provenance["seed"] == 9

    def test_size_validation(self):
        *_, data, _ = _problem(20, 3.0, 5)
        with pytest.raises(ValueError):
            polyfit_clean(data, sub_sizes=[20, 40])
        with pytest.raises(ValueError):
            polyfit_clean(data, sub_sizes=[30, 60])
        with pytest.raises(ValueError):
            polyfit_clean(data, sub_sizes=[30])
        with pytest.raises(ValueError):
            polyfit_clean(data, repeats=0)

    def test_default_sizes(self):
        s = default_sub_sizes(100, 150)
        assert s.size >= 2 and s.min() > 100 and s.max() < 150 and np.all(np.diff(s) > 0)
        assert default_sub_sizes(100, 1000).size == 8

    def test_clamps_positive(self):
        *_, data, _ = _problem(30, 1.2, 6)
        out = polyfit_clean(data, seed=0)
        assert np.all(out.values > 0)


class TestOracle:
    def test_population_input(self):
        spec, v, c, *_ = _problem(10, 2.0, 7)
        np.testing.assert_allclose(oracle_clean(spec, c).matrix, c, atol=1e-12)

    def test_permuted_spectrum(self):
        spec, _, _, _, c_hat = _problem(10, 2.0, 8)
        rng = np.random.default_rng(0)
        a = oracle_clean(spec, c_hat)
        b = oracle_clean(rng.permutation(spec), c_hat)
        np.testing.assert_array_equal(a.values, b.values)
        assert np.all(np.diff(a.values) <= 0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            oracle_clean(np.ones(3), np.eye(4))


class TestL2Equivalent:
    def test_small_lambda(self):
        *_, c_hat = _problem(20, 3.0, 9)
        np.testing.assert_allclose(l2_equivalent_clean(c_hat, 1e-12).matrix, c_hat, atol=1e-9)

    def test_single_mode(self):
        out = l2_equivalent_clean(np.diag([1.0, 3.0]), 2.0)
        assert sorted(out.values)[0] == pytest.approx(1 / regularized_fixed_point(1.0, 2.0))
        assert sorted(out.values)[0] == pytest.approx(2.0)

    def test_same_fixed_point_as_regularized_training(self):
        *_, c_hat = _problem(50, 3.0, 10, spectrum=np.geomspace(2.0, 0.5, 50))
        lam = 0.5
        cleaned = l2_equivalent_clean(c_hat, lam)
        es = sym_eig(c_hat)
        steps, rate = 6000, 0.05
        a = gradient_ascent_train(c_hat, np.eye(50), rate, steps, reg=Regularization("l2", lam),
                                  record_every=steps, mode_basis=es.basis)
        b = gradient_ascent_train(cleaned.matrix, np.eye(50), rate, steps, record_every=steps,
                                  mode_basis=es.basis)
        np.testing.assert_allclose(a.mode_values[-1], b.mode_values[-1], atol=1e-8)
        np.testing.assert_allclose(b.mode_values[-1], 1 / cleaned.values, atol=1e-8)

    def test_invalid_lambda(self):
        with pytest.raises(ValueError):
            l2_equivalent_clean(np.eye(2), 0.0)


def test_every_cleaner_keeps_basis():
    spec, _, _, data, c_hat = _problem(40, 3.0, 11)
    for out in (rie_clean(c_hat, 3.0), polyfit_clean(data, seed=1), oracle_clean(spec, c_hat),
                l2_equivalent_clean(c_hat, 0.3)):
        assert _off_diag_in_basis(out, c_hat) < 1e-10
        m = out.matrix
        assert np.array_equal(m, m.T) and np.linalg.eigvalsh(m).min() > 0
