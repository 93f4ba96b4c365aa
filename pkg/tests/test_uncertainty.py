import csv
import warnings

import numpy as np
import pytest

from depsens import benchmarks as bm
from depsens.shapley import ShapleyConfig, shapley_effects
from depsens.uncertainty import (
    IntervalEstimate,
    bc_percentile,
    bootstrap_exact,
    bootstrap_random,
    clt_interval,
    exact_replicates,
    poc_experiment,
    random_replicates,
    write_poc_csv,
)

GAMMA05 = bm.LinearGaussianParams(sigma=(1.0, 1.0, 2.0), gamma=0.5)


class Counter:
    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, x):
        self.calls += x.shape[0]
        return self.fn(x)


def run(method="exact", n_o=100, m=None, seed=0, n_v=2000):
    return shapley_effects(GAMMA05.model(), GAMMA05.distribution(), ShapleyConfig(method, n_v, n_o, 3, m), seed=seed)


class TestBcPercentile:
    def test_normal_oracle(self):
        boot = 5.0 + np.random.default_rng(0).standard_normal(10_000)
        lo, hi = bc_percentile(boot, 5.0, 0.1)
        assert lo == pytest.approx(5 - 1.645, abs=0.05)
        assert hi == pytest.approx(5 + 1.645, abs=0.05)

    def test_median_is_plain_percentile(self):
        boot = np.random.default_rng(1).exponential(size=1001)
        med = np.median(boot)
        lo, hi = bc_percentile(boot, med, 0.2)
        np.testing.assert_allclose((lo, hi), np.quantile(boot, [0.1, 0.9]), rtol=0, atol=0)

    def test_downward_shift(self):
        boot = np.random.default_rng(2).standard_normal(5000)
        lo0, hi0 = bc_percentile(boot, 0.0, 0.1)
        lo, hi = bc_percentile(boot, -0.3, 0.1)
        assert lo < lo0 and hi < hi0

    def test_degenerate(self):
        assert bc_percentile(np.full(50, 0.3), 0.3) == (0.3, 0.3)

    def test_point_outside_support_is_finite(self):
        lo, hi = bc_percentile(np.linspace(0, 1, 200), 5.0, 0.1)
        assert np.isfinite(lo) and np.isfinite(hi)

    def test_drops_nan(self):
        boot = np.r_[np.random.default_rng(3).standard_normal(999), np.nan]
        assert np.isfinite(bc_percentile(boot, 0.0)).all()


class TestIntervalEstimate:
    def test_covers(self):
        est = IntervalEstimate(0.5, 0.4, 0.6, 0.9, "clt")
        assert est.covers(0.4) and est.covers(0.6) and not est.covers(0.61)
        assert est.width == pytest.approx(0.2)


class TestBootstrap:
    def test_no_model_calls(self):
        model = Counter(GAMMA05.model())
        res = shapley_effects(model, GAMMA05.distribution(), ShapleyConfig(n_v=500, n_o=50, n_i=3), seed=0)
        before = model.calls
        bootstrap_exact(res, 100, 0.1, 1)
        assert model.calls == before

    def test_exact_replicates_sum_to_one(self):
        res = run()
        b = res.blocks
        reps = exact_replicates(b.y1, b.inner_var, b.perms, 200, 5)
        np.testing.assert_allclose(reps[:, 0].sum(axis=1), 1.0, atol=1e-12)

    def test_include_original(self):
        res = run()
        b = res.blocks
        reps = exact_replicates(b.y1, b.inner_var, b.perms, 20, 5, include_original=True)
        np.testing.assert_allclose(reps[0, 0], res.sh, atol=1e-14)
        reps = random_replicates(b.y1, b.inner_var, b.perms, 20, 5, include_original=True)
        np.testing.assert_allclose(reps[0, 1], res.s_full, atol=1e-14)

    def test_same_seed_same_indices(self):
        # resampling depends on shapes and seed only, not on output values
        res = run()
        b = res.blocks
        a = exact_replicates(b.y1, b.inner_var, b.perms, 30, 9)
        c = exact_replicates(2 * b.y1, 4 * b.inner_var, b.perms, 30, 9)
        np.testing.assert_allclose(a, c, rtol=1e-12)

    def test_exact_intervals_contain_point(self):
        res = run(n_o=200)
        ints = bootstrap_exact(res, 300, 0.1, 2)
        for kind in ("sh", "s_full", "st_ind"):
            assert len(ints[kind]) == 3
            for est in ints[kind]:
                assert est.lo <= est.hi
                assert est.method == "boot-bca-block" and est.n_boot == 300

    def test_random_width_stabilizes(self):
        res = run("random", n_o=1, m=3000)
        w500 = np.array([e.width for e in bootstrap_random(res, 500, 0.1, 3)["sh"]])
        w2000 = np.array([e.width for e in bootstrap_random(res, 2000, 0.1, 4)["sh"]])
        np.testing.assert_allclose(w2000, w500, rtol=0.1)

    def test_reproducible(self):
        res = run()
        a = bootstrap_exact(res, 50, 0.1, 11)
        b = bootstrap_exact(res, 50, 0.1, 11)
        assert a == b

    def test_requires_blocks(self):
        res = run()
        res.blocks = None
        with pytest.raises(ValueError):
            bootstrap_exact(res, 10)


class TestClt:
    def test_warns_small_m(self):
        res = run("random", n_o=1, m=20)
        with pytest.warns(RuntimeWarning):
            ints = clt_interval(res)
        assert len(ints["sh"]) == 3

    def test_width_scaling(self):
        w = []
        for m in (1000, 4000):
            res = run("random", n_o=1, m=m, seed=m)
            w.append(np.mean([e.width for e in clt_interval(res)["sh"]]))
        assert w[1] / w[0] == pytest.approx(0.5, abs=0.1)

    def test_symmetric(self):
        res = run("random", n_o=1, m=500)
        for est in clt_interval(res, 0.05)["sh"]:
            assert est.point - est.lo == pytest.approx(est.hi - est.point)

    def test_agrees_with_bootstrap_at_large_m(self):
        res = run("random", n_o=1, m=10_000, n_v=20_000)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            clt = clt_interval(res)["sh"]
        boot = bootstrap_random(res, 1000, 0.1, 1)["sh"]
        for a, b in zip(clt, boot):
            assert a.width == pytest.approx(b.width, rel=0.15)


class TestPocExperiment:
    def test_report_and_csv(self, tmp_path):
        truth = bm.analytic_indices_linear(GAMMA05)
        grid = [ShapleyConfig(n_v=500, n_o=20, n_i=3), ShapleyConfig("random", 500, 1, 3, m=60)]
        reports = poc_experiment(GAMMA05.model(), GAMMA05.distribution(), truth, grid, runs=4, n_boot=50, seed=1)
        assert [r.budget for r in reports] == [20 * 3 * 6, 60 * 3]
        for rep in reports:
            for kind in ("sh", "s_full", "st_ind"):
                assert rep.poc[kind].shape == (3,)
                assert np.all((rep.poc[kind] >= 0) & (rep.poc[kind] <= 1))
            assert len(rep.rows) == 4 * 3 * 3
        summary, runs = tmp_path / "poc.csv", tmp_path / "runs.csv"
        write_poc_csv(reports, summary, runs)
        rows = list(csv.DictReader(open(summary)))
        assert len(rows) == 2 * 3 * 3
        assert set(rows[0]) == {"budget", "method", "No", "Ni", "m", "index", "input", "poc", "mean_abs_error"}
        assert len(list(csv.DictReader(open(runs)))) == 2 * 4 * 9

    def test_threads_do_not_change_results(self):
        truth = bm.analytic_indices_linear(GAMMA05)
        grid = [ShapleyConfig(n_v=300, n_o=10, n_i=3)]
        a = poc_experiment(GAMMA05.model(), GAMMA05.distribution(), truth, grid, runs=4, n_boot=30, seed=2)
        b = poc_experiment(GAMMA05.model(), GAMMA05.distribution(), truth, grid, runs=4, n_boot=30, seed=2, threads=3)
        assert a[0].rows == b[0].rows

    @pytest.mark.slow
    def test_exact_coverage_independent(self):
        p = bm.LinearGaussianParams(sigma=(1.0, 1.0, 2.0))
        truth = bm.analytic_indices_linear(p)
        grid = [ShapleyConfig(n_v=10_000, n_o=1000, n_i=3)]
        rep = poc_experiment(p.model(), p.distribution(), truth, grid, runs=100, n_boot=500, seed=0)[0]
        assert 0.82 <= rep.poc_mean("sh") <= 0.98
