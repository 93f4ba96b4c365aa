import numpy as np
import pytest
from scipy import stats

from depsens import benchmarks as bm
from depsens.errors import DegenerateOutputError, ModelEvaluationError
from depsens.sobol_rt import centered_estimator, estimate_sobol_rt, janon_estimator, pick_freeze_design

GAMMA05 = bm.LinearGaussianParams(sigma=(1.0, 1.0, 2.0), gamma=0.5)
FAMILIES = ("s_full", "st_full", "s_ind", "st_ind")


class Counter:
    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, x):
        self.calls += x.shape[0]
        return self.fn(x)


class TestDesign:
    def test_hybrid_columns(self):
        des = pick_freeze_design(50, 4, 2, 0)
        np.testing.assert_array_equal(des.BA1[:, 0], des.A[:, 0])
        np.testing.assert_array_equal(des.BA1[:, 1:], des.B[:, 1:])
        np.testing.assert_array_equal(des.BAd[:, -1], des.A[:, -1])
        np.testing.assert_array_equal(des.BAd[:, :-1], des.B[:, :-1])
        assert des.ordering == (2, 3, 0, 1)

    def test_uniform(self):
        des = pick_freeze_design(5000, 2, 0, 1)
        crit = stats.kstwo.ppf(0.99, 5000)
        for mat in (des.A, des.B):
            assert mat.min() > 0 and mat.max() <= 1
            for k in range(2):
                assert stats.kstest(mat[:, k], "uniform").statistic < crit

    def test_rejects_small_n(self):
        with pytest.raises(ValueError):
            pick_freeze_design(1, 3)


class TestEstimators:
    @pytest.fixture
    def outputs(self):
        rng = np.random.default_rng(0)
        return rng.standard_normal(20_000), rng.standard_normal(20_000)

    def test_janon_identical_is_one(self, outputs):
        yA, yB = outputs
        closed, _ = janon_estimator(yA, yB, yA)
        assert closed == pytest.approx(1.0, abs=1e-12)

    def test_janon_independent_is_zero(self, outputs):
        yA, yB = outputs
        closed, total = janon_estimator(yA, yB, np.random.default_rng(1).permutation(yA))
        assert abs(closed) < 3 / np.sqrt(yA.size)

    def test_janon_total_when_hybrid_equals_b(self, outputs):
        yA, yB = outputs
        _, total = janon_estimator(yA, yB, yB)
        assert total == pytest.approx(0.0, abs=1e-12)

    def test_centered_identical_tends_to_one(self):
        rng = np.random.default_rng(2)
        yA, yB = rng.standard_normal((2, 100_000))
        closed, _ = centered_estimator(yA, yB, yA)
        assert closed == pytest.approx(1.0, abs=0.01)

    @pytest.mark.parametrize("est", [janon_estimator, centered_estimator])
    def test_degenerate(self, est):
        with pytest.raises(DegenerateOutputError):
            est(np.ones(10), np.ones(10), np.ones(10))

    def test_broadcasts(self, outputs):
        yA, yB = outputs
        stacked = janon_estimator(np.stack([yA, yA]), np.stack([yB, yB]), np.stack([yA, yB]))
        assert stacked[0].shape == (2,)

    def test_estimators_agree_in_mean(self):
        truth = bm.analytic_indices_linear(GAMMA05)
        reps = {"janon": [], "centered": []}
        rng = np.random.default_rng(3)
        for _ in range(200):
            seed = int(rng.integers(2**32))
            for name in reps:
                est = estimate_sobol_rt(GAMMA05.model(), GAMMA05.distribution(), 500, name, n_boot=0, rng=seed)
                reps[name].append(est.points("s_full"))
        a, b = np.array(reps["janon"]), np.array(reps["centered"])
        se = np.sqrt(a.var(axis=0, ddof=1) / 200 + b.var(axis=0, ddof=1) / 200)
        assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) < 2 * se + 1e-3)
        assert np.all(np.abs(a.mean(axis=0) - truth.s_full) < 0.03)


class TestEstimateSobolRt:
    def test_cost(self):
        model = Counter(GAMMA05.model())
        est = estimate_sobol_rt(model, GAMMA05.distribution(), 100, n_boot=0, rng=0)
        assert model.calls == est.cost == 1200

    def test_gamma05_against_oracle(self):
        truth = bm.analytic_indices_linear(GAMMA05)
        est = estimate_sobol_rt(GAMMA05.model(), GAMMA05.distribution(), 10_000, n_boot=300, rng=1)
        for kind in FAMILIES:
            for i, e in enumerate(getattr(est, kind)):
                se = e.width / (2 * 1.645)
                assert abs(e.point - truth.get(kind)[i]) < 3 * se + 1e-3, (kind, i)

    def test_independent_equalities(self):
        p = bm.LinearGaussianParams()
        est = estimate_sobol_rt(p.model(), p.distribution(), 5000, n_boot=200, rng=2)
        truth = bm.analytic_indices_linear(p)
        for kind in FAMILIES:
            np.testing.assert_allclose(est.points(kind), truth.get(kind), atol=0.05)
        np.testing.assert_allclose(est.points("s_full"), est.points("s_ind"), atol=0.05)

    def test_reproducible(self):
        a = estimate_sobol_rt(GAMMA05.model(), GAMMA05.distribution(), 200, n_boot=20, rng=5)
        b = estimate_sobol_rt(GAMMA05.model(), GAMMA05.distribution(), 200, n_boot=20, rng=5)
        assert a == b

    def test_model_failure(self):
        def bad(x):
            y = x.sum(axis=1)
            y[3] = np.inf
            return y

        with pytest.raises(ModelEvaluationError) as info:
            estimate_sobol_rt(bad, GAMMA05.distribution(), 10, n_boot=0, rng=0)
        assert info.value.row == 3

    def test_interval_width_shrinks(self):
        w = []
        for N in (1000, 4000):
            est = estimate_sobol_rt(GAMMA05.model(), GAMMA05.distribution(), N, n_boot=300, rng=N)
            w.append(np.mean([e.width for e in est.s_full]))
        assert w[1] / w[0] == pytest.approx(0.5, abs=0.15)

    @pytest.mark.slow
    def test_error_rate(self):
        truth = bm.analytic_indices_linear(GAMMA05)
        ns = np.array([100, 1000, 10_000])
        errs = []
        for N in ns:
            e = [
                np.abs(estimate_sobol_rt(GAMMA05.model(), GAMMA05.distribution(), int(N), n_boot=0, rng=r).points("s_full") - truth.s_full).mean()
                for r in range(50)
            ]
            errs.append(np.mean(e))
        slope = np.polyfit(np.log(ns), np.log(errs), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.15)
