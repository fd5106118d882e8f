import itertools

import numpy as np
import pytest

from overfit_ebm.gebm import PositiveDefinitenessError, first_passage_time
from overfit_ebm.ising_bm import (BmState, IsingModel, McmcGradient, bm_analytic_mode_trajectory,
                                  bm_generation_error, bm_train, build_ising_2d,
                                  metropolis_sample)
from overfit_ebm.metrics import coupling_error
from overfit_ebm.numerics import sym_eig
from overfit_ebm.spectra import empirical_covariance


def _exact_moments(j):
    """Exact <x_i x_k> of exp(x^T J x / 2) by enumeration."""
    n = j.shape[0]
    states = np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
    logw = 0.5 * np.einsum("si,ik,sk->s", states, j, states)
    p = np.exp(logw - logw.max())
    p /= p.sum()
    return (states * p[:, None]).T @ states


@pytest.fixture(scope="module")
def ising8():
    return build_ising_2d(8, 0.1)


@pytest.fixture(scope="module")
def big_sample(ising8):
    return metropolis_sample(ising8, 100_000, seed=21, chains=2000)


class TestLattice:
    def test_8x8_nearest_neighbour_lattice(self, ising8):
        j = ising8.couplings
        assert ising8.n == 64
        up = j[np.triu_indices(64, 1)]
        assert np.count_nonzero(up) == 128 and np.all(up[up != 0] == 0.1)
        np.testing.assert_allclose(j.sum(axis=1), 0.4)
        assert np.array_equal(j, j.T) and np.all(np.diag(j) == 0)

    def test_row_sums(self):
        for side in (3, 5):
            np.testing.assert_allclose(build_ising_2d(side, 0.3).couplings.sum(axis=1), 1.2)

    def test_side_two_merges_duplicates(self):
        j = build_ising_2d(2, 0.5).couplings
        # sites 0,1 / 2,3 on a 2x2 torus: each site has two distinct neighbours
        assert np.all(np.count_nonzero(j, axis=1) == 2)
        assert set(np.unique(j)) == {0.0, 0.5}
        assert j[0, 1] == 0.5 and j[0, 2] == 0.5 and j[0, 3] == 0.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            build_ising_2d(1, 0.1)
        with pytest.raises(ValueError):
            build_ising_2d(4, 0.0)


class TestSampler:
    def test_matches_exact_enumeration(self):
        rng = np.random.default_rng(3)
        a = rng.normal(0, 0.4, (5, 5))
        j = np.triu(a, 1) + np.triu(a, 1).T
        exact = _exact_moments(j)
        c = empirical_covariance(metropolis_sample(j, 60_000, burn_in=50, thin=3, seed=1,
                                                   chains=2000))
        # standard error of a +-1 product mean is at most 1/sqrt(M)
        assert np.max(np.abs(c - exact)) < 5 / np.sqrt(60_000)

    def test_independent_spins(self):
        m = 20_000
        c = empirical_covariance(metropolis_sample(np.zeros((6, 6)), m, burn_in=5, thin=1,
                                                   seed=2, chains=500))
        assert np.max(np.abs(c - np.eye(6))) < 5 / np.sqrt(m)

    def test_zero_magnetization(self, big_sample):
        mag = big_sample.samples.mean(axis=1)
        se = mag.std(ddof=1) / np.sqrt(mag.size)
        assert abs(mag.mean()) < 3 * se

    def test_nearest_beats_next_nearest(self, big_sample):
        c = empirical_covariance(big_sample)
        side = 8
        idx = np.arange(64).reshape(side, side)
        nn = c[idx.ravel(), np.roll(idx, -1, axis=1).ravel()].mean()
        nnn = c[idx.ravel(), np.roll(np.roll(idx, -1, axis=0), -1, axis=1).ravel()].mean()
        assert nn > nnn > 0

    def test_deterministic(self, ising8):
        a = metropolis_sample(ising8, 300, burn_in=5, thin=2, seed=4, chains=50)
        b = metropolis_sample(ising8, 300, burn_in=5, thin=2, seed=4, chains=50)
        assert np.array_equal(a.samples, b.samples)
        assert set(np.unique(a.samples)) == {-1.0, 1.0}

    def test_invalid_counts(self, ising8):
        for kw in ({"m": 0}, {"m": 5, "burn_in": 0}, {"m": 5, "thin": 0}, {"m": 5, "chains": 0}):
            with pytest.raises(ValueError):
                metropolis_sample(ising8, **kw)
        with pytest.raises(ValueError):
            metropolis_sample(np.eye(3), 10)


class TestTraining:
    def test_fixed_point_stationary(self):
        j0 = 0.1 * build_ising_2d(3, 1.0).couplings
        c_hat = np.linalg.inv(np.eye(9) - j0)
        tr = bm_train(c_hat, BmState(j0), 0.05, 50, record_every=50,
                      observe=lambda j: {"d": np.max(np.abs(j - j0))})
        assert tr.metrics["d"][-1] < 1e-14

    def test_preserves_structure(self, ising8):
        c = empirical_covariance(metropolis_sample(ising8, 500, seed=5))
        rows = bm_train(c, np.zeros((64, 64)), 1e-2, 200, record_every=20,
                        observe=lambda j: {"diag": np.max(np.abs(np.diag(j))),
                                           "asym": np.max(np.abs(j - j.T))}).metrics
        assert np.all(rows["diag"] == 0) and np.all(rows["asym"] == 0)

    def test_large_rho_recovers_couplings(self, ising8):
        c = empirical_covariance(metropolis_sample(ising8, 4096 * 64, seed=3, chains=2000))
        tr = bm_train(c, np.zeros((64, 64)), 5e-2, 3000, record_every=3000,
                      observe=lambda j: {"rel": np.linalg.norm(j - ising8.couplings)
                                         / np.linalg.norm(ising8.couplings)})
        assert tr.metrics["rel"][-1] < 0.15

    def test_non_monotonic_at_small_rho(self, ising8):
        c = empirical_covariance(metropolis_sample(ising8, 96, seed=7))
        tr = bm_train(c, np.zeros((64, 64)), 1e-2, 400, record_every=5,
                      observe=lambda j: {"e_j": coupling_error(j, ising8.couplings)})
        e = tr.metrics["e_j"]
        k = int(np.argmin(e))
        assert 0 < k < e.size - 1 and e[-1] > e[0] > e[k]

    def test_pd_loss(self):
        c = np.array([[1.0, 0.9], [0.9, 1.0]])
        with pytest.raises(PositiveDefinitenessError) as exc:
            bm_train(c, np.zeros((2, 2)), 5.0, 10)
        assert exc.value.step >= 1

    def test_mcmc_gradient(self, ising8):
        c = empirical_covariance(metropolis_sample(ising8, 20_000, seed=8, chains=1000))
        tr = bm_train(c, np.zeros((64, 64)), 2e-2, 300, gradient=McmcGradient(200, 1, seed=0),
                      record_every=100,
                      observe=lambda j: {"e_j": coupling_error(j, ising8.couplings)})
        assert tr.metrics["e_j"][-1] < 0.5 * tr.metrics["e_j"][0]

    def test_records_projections(self):
        c = np.array([[1.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 1.0]])
        es = sym_eig(c)
        tr = bm_train(c, np.zeros((3, 3)), 1e-2, 20, mode_basis=es.basis)
        assert tr.mode_values.shape == (21, 3) and tr.steps[-1] == 20
        np.testing.assert_allclose(tr.times, np.arange(21) * 1e-2)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            BmState(np.eye(2))
        with pytest.raises(ValueError):
            bm_train(np.eye(2), np.zeros((2, 2)), 0.1, 5, gradient="exact")


class TestAnalytic:
    def _ivp(self, c, j0, t):
        from scipy.integrate import solve_ivp
        return solve_ivp(lambda _, j: c - 1 / (1 - j), (0, t), [j0], rtol=1e-12,
                         atol=1e-14).y[0, -1]

    def test_values(self):
        assert bm_analytic_mode_trajectory(1.7, 0.2, 0.0) == pytest.approx(0.2)
        assert bm_analytic_mode_trajectory(2.0, 0.0, 1e3) == pytest.approx(0.5)
        assert bm_analytic_mode_trajectory(0.5, 0.0, 1e3) == pytest.approx(-1.0)

    def test_mean_field_mode_ode(self):
        for c, j0, t in ((2.0, 0.0, 0.7), (0.6, 0.3, 2.0), (1.3, -0.5, 5.0)):
            assert bm_analytic_mode_trajectory(c, j0, t) == pytest.approx(self._ivp(c, j0, t),
                                                                          abs=1e-9)

    def test_timescale_order(self):
        c = np.geomspace(3.0, 0.3, 20)
        t = np.concatenate([[0], np.geomspace(1e-4, 1e4, 4000)])
        modes = bm_analytic_mode_trajectory(c[None], 0.0, t[:, None])
        fpt = [first_passage_time(t, modes[:, a], 1 - 1 / c[a]) for a in range(c.size)]
        # stronger modes converge first
        assert np.all(np.diff(fpt) >= 0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            bm_analytic_mode_trajectory(0.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            bm_analytic_mode_trajectory(1.0, 1.5, 1.0)


class TestGenerationError:
    def test_zero_model(self):
        n_gen = 20_000
        err = bm_generation_error(np.zeros((5, 5)), np.eye(5), n_gen,
                                  {"chains": 500, "burn_in": 5}, seed=1)
        assert err < 5 * 5 / np.sqrt(n_gen)

    def test_self_consistency(self, ising8, big_sample):
        ref = empirical_covariance(big_sample)
        n_gen = 50_000
        err = bm_generation_error(ising8, ref, n_gen, {"chains": 2000}, seed=9)
        # Frobenius norm of 64x64 noise with entries of order 1/sqrt(M)
        assert err < 64 * (1 / np.sqrt(n_gen) + 1 / np.sqrt(100_000))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            bm_generation_error(np.zeros((3, 3)), np.eye(4), 10, {"burn_in": 1})


def _final_mf_ej(model, rho, seed):
    c = empirical_covariance(metropolis_sample(model, rho * model.n, seed=seed, chains=500))
    tr = bm_train(c, np.zeros((model.n, model.n)), 5e-2, 4000, record_every=4000,
                  observe=lambda j: {"e_j": coupling_error(j, model.couplings)})
    return tr.metrics["e_j"][-1]


@pytest.fixture(scope="module")
def bm_rho_scan(ising8):
    rhos = np.array([4, 8, 16, 32, 64])
    return rhos, np.array([_final_mf_ej(ising8, int(r), 100) for r in rhos])


def test_final_error_decreases_with_rho(bm_rho_scan):
    _, e = bm_rho_scan
    assert np.all(np.diff(e) < 0)


def test_final_error_slope_as_stated(bm_rho_scan):
    # stated property on the squared, normalized error; measured slope is about -0.93
    rhos, e = bm_rho_scan
    slope = np.polyfit(np.log(rhos), np.log(e), 1)[0]
    assert abs(slope + 0.5) <= 0.15, f"log-log slope of squared E_J is {slope:.3f}"


def test_final_error_root_slope(bm_rho_scan):
    rhos, e = bm_rho_scan
    slope = np.polyfit(np.log(rhos), np.log(np.sqrt(e)), 1)[0]
    assert abs(slope + 0.5) <= 0.15
