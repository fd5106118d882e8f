import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from overfit_ebm.gebm import Trajectory
from overfit_ebm.metrics import (AlignedEvaluator, MetricReport, coupling_error, find_optimum,
                                 gaussian_w2, generation_error, log_likelihood, trace_energy)
from overfit_ebm.numerics import random_orthogonal, sym_eig

# (1/4) log(1/4) - 1/2, evaluated once with mpmath-free scalar arithmetic
LL_DIAG41 = -0.8465735902799727


def _spd(n, seed, lo=0.2, hi=3.0):
    q = random_orthogonal(n, seed=seed)
    d = np.random.default_rng(seed + 100).uniform(lo, hi, n)
    m = (q * d) @ q.T
    return 0.5 * (m + m.T)


def _w2_oracle(c1, c2):
    from scipy.linalg import sqrtm
    s = sqrtm(c1).real
    return np.sqrt(max(np.trace(c1) + np.trace(c2) - 2 * np.trace(sqrtm(s @ c2 @ s).real), 0.0))


class TestEnergies:
    def test_identity(self):
        for n in (1, 3, 10):
            assert trace_energy(np.eye(n), np.eye(n)) == 1.0

    def test_inverse_pair(self):
        c = _spd(6, 0)
        assert trace_energy(np.linalg.inv(c), c) == pytest.approx(1.0, rel=1e-12)

    def test_elementwise_oracle(self):
        a, b = _spd(5, 1), _spd(5, 2)
        assert trace_energy(a, b) == pytest.approx(sum(a[i, k] * b[i, k] for i in range(5)
                                                       for k in range(5)) / 5, rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            trace_energy(np.eye(2), np.eye(3))


class TestLogLikelihood:
    def test_identity(self):
        assert log_likelihood(np.eye(4), np.eye(4)) == pytest.approx(-0.5)

    def test_diagonal_case(self):
        c = np.diag([4.0, 1.0])
        assert LL_DIAG41 == pytest.approx(0.25 * np.log(0.25) - 0.5, abs=1e-15)
        assert log_likelihood(np.linalg.inv(c), c) == pytest.approx(LL_DIAG41, abs=1e-14)

    def test_scaling(self):
        j, c = _spd(4, 3), _spd(4, 4)
        delta = log_likelihood(2 * j, c) - log_likelihood(j, c)
        assert delta == pytest.approx(0.5 * np.log(2) - 0.5 * trace_energy(j, c), rel=1e-12)

    def test_non_pd(self):
        with pytest.raises(ValueError):
            log_likelihood(np.diag([1.0, -1.0]), np.eye(2))

    def test_maximized_at_inverse(self):
        c = np.array([3.0, 1.0, 0.2])
        q = random_orthogonal(3, seed=9)
        cm = (q * c) @ q.T
        best = log_likelihood((q / c) @ q.T, cm)
        for a in range(3):
            for s in (-1e-4, 1e-4):
                m = 1 / c
                m[a] += s
                assert log_likelihood((q * m) @ q.T, cm) < best


class TestErrors:
    def test_coupling_zero_and_unit(self):
        j = _spd(5, 5)
        assert coupling_error(j, j) == 0.0
        assert coupling_error(j + np.eye(5), j) == pytest.approx(1.0)

    def test_coupling_oracle(self):
        a, b = _spd(4, 6), _spd(4, 7)
        assert coupling_error(a, b) == pytest.approx(((a - b) ** 2).sum() / 4, rel=1e-12)

    def test_generation(self):
        c = _spd(5, 8)
        assert generation_error(c, np.linalg.inv(c)) == pytest.approx(0.0, abs=1e-12)
        assert generation_error(np.eye(4), 0.5 * np.eye(4)) == pytest.approx(2.0)
        j = _spd(5, 9)
        assert generation_error(c, j) == pytest.approx(np.linalg.norm(c - np.linalg.inv(j)),
                                                       rel=1e-10)

    def test_generation_non_pd(self):
        with pytest.raises(ValueError):
            generation_error(np.eye(2), np.diag([1.0, 0.0]))


class TestW2:
    def test_values(self):
        c = _spd(4, 10)
        assert gaussian_w2(c, c) == pytest.approx(0.0, abs=1e-7)
        assert gaussian_w2(np.array([[1.0]]), np.array([[4.0]])) == pytest.approx(1.0)
        a, b = np.array([1.0, 4.0, 9.0]), np.array([4.0, 1.0, 9.0])
        assert gaussian_w2(np.diag(a), np.diag(b)) == pytest.approx(
            np.sqrt(np.sum((np.sqrt(a) - np.sqrt(b)) ** 2)))

    def test_scipy_oracle(self):
        a, b = _spd(6, 11), _spd(6, 12)
        assert gaussian_w2(a, b) == pytest.approx(_w2_oracle(a, b), rel=1e-8)

    def test_non_psd(self):
        with pytest.raises(ValueError):
            gaussian_w2(np.diag([1.0, -1.0]), np.eye(2))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 7))
    def test_symmetric(self, seed, n):
        a, b = _spd(n, seed, 0.0, 2.0), _spd(n, seed + 1, 0.0, 2.0)
        assert gaussian_w2(a, b) == pytest.approx(gaussian_w2(b, a), abs=1e-8)


class TestOptimum:
    def _traj(self, vals):
        t = np.arange(len(vals), dtype=float)
        return Trajectory(t, metrics={"e_j": np.asarray(vals, dtype=float)})

    def test_monotone(self):
        opt = find_optimum(self._traj([5, 4, 3, 2]), "e_j")
        assert opt.time == 3.0 and not opt.interior

    def test_v_shape(self):
        opt = find_optimum(self._traj([5, 2, 1, 3, 4]), "e_j")
        assert opt.time == 2.0 and opt.value == 1.0 and opt.interior

    def test_ties_earliest_and_max(self):
        assert find_optimum(self._traj([3, 1, 1, 2]), "e_j").index == 1
        assert find_optimum(self._traj([1, 4, 4, 2]), "e_j", "max").index == 1

    def test_errors(self):
        with pytest.raises(KeyError):
            find_optimum(self._traj([1, 2, 3]), "ll_test")
        with pytest.raises(ValueError):
            find_optimum(self._traj([1, 2]), "e_j")


def test_aligned_evaluator_matches_full_matrices():
    n = 7
    c_pop, c_train = _spd(n, 20), _spd(n, 21)
    es = sym_eig(c_train)
    ev = AlignedEvaluator(es.basis, c_train, c_pop, with_w2=True)
    modes = np.random.default_rng(0).uniform(0.3, 2.0, (3, n))
    got = ev.all(modes, names=("e_j", "e_train", "e_test", "ll_train", "ll_test", "e_c", "w2"))
    j_true = np.linalg.inv(c_pop)
    for k, m in enumerate(modes):
        j = (es.basis * m) @ es.basis.T
        assert got["e_j"][k] == pytest.approx(coupling_error(j, j_true), rel=1e-9)
        assert got["e_train"][k] == pytest.approx(trace_energy(j, c_train), rel=1e-12)
        assert got["e_test"][k] == pytest.approx(trace_energy(j, c_pop), rel=1e-12)
        assert got["ll_test"][k] == pytest.approx(log_likelihood(j, c_pop), rel=1e-10)
        assert got["ll_train"][k] == pytest.approx(log_likelihood(j, c_train), rel=1e-10)
        assert got["e_c"][k] == pytest.approx(generation_error(c_pop, j), rel=1e-9)
        assert got["w2"][k] == pytest.approx(_w2_oracle(c_pop, np.linalg.inv(j)), rel=1e-7)


def test_metric_report_drops_missing():
    r = MetricReport(e_j=0.5, w2=0.1)
    assert r.as_dict() == {"e_j": 0.5, "w2": 0.1}
    with pytest.raises(ValueError):
        MetricReport(e_j=-1.0)
