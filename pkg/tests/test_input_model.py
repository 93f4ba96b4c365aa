import numpy as np
import pytest
from scipy import stats

from depsens.input_model import (
    InputDistribution,
    MarginSpec,
    all_orderings,
    circular_ordering,
    conditional_sample,
    inverse_rosenblatt,
    rosenblatt,
    sample,
)


def gaussian3(gamma=0.5):
    corr = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, gamma], [0.0, gamma, 1.0]])
    return InputDistribution.gaussian((0.2, 0.6, 1.0), corr)


def mixed(d=4, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(d, d))
    cov = a @ a.T + d * np.eye(d)
    s = np.sqrt(np.diag(cov))
    corr = cov / np.outer(s, s)
    margins = [MarginSpec.uniform(-np.pi, np.pi) if k % 2 else MarginSpec.normal(1.0, 2.0) for k in range(d)]
    return InputDistribution(tuple(margins), corr)


class TestMargins:
    def test_uniform_roundtrip(self):
        m = MarginSpec.uniform(-1.0, 3.0)
        x = np.linspace(-0.99, 2.99, 11)
        np.testing.assert_allclose(m.from_latent(m.to_latent(x)), x, rtol=1e-12)

    def test_uniform_support_rejected(self):
        with pytest.raises(ValueError, match="support"):
            MarginSpec.uniform(0, 1).to_latent([1.0])

    @pytest.mark.parametrize("kind,args", [("uniform", (1.0, 1.0)), ("normal", (0.0, -1.0)), ("beta", (0, 1))])
    def test_invalid(self, kind, args):
        with pytest.raises(ValueError):
            MarginSpec(kind, *args)

    def test_dict_roundtrip(self):
        for m in (MarginSpec.uniform(-2, 5), MarginSpec.normal(3, 0.5)):
            assert MarginSpec.from_dict(m.to_dict()) == m

    def test_dict_rejects_unknown_keys(self):
        with pytest.raises(ValueError, match="unknown keys"):
            MarginSpec.from_dict({"kind": "normal", "mu": 0.0, "sigma": 2.0})

    def test_normal_quantile_accuracy(self):
        m = MarginSpec.normal()
        u = np.array([1e-10, 1e-4, 0.025, 0.5, 0.975, 1 - 1e-4])
        np.testing.assert_allclose(m.ppf(u), stats.norm.ppf(u), atol=1e-9)


class TestDistribution:
    def test_not_positive_definite(self):
        corr = np.array([[1, 0.9, 0.9], [0.9, 1, -0.9], [0.9, -0.9, 1]])
        with pytest.raises(ValueError, match="positive definite"):
            InputDistribution.gaussian((1, 1, 1), corr)

    def test_bad_diagonal(self):
        with pytest.raises(ValueError):
            InputDistribution.gaussian((1, 1), np.array([[2.0, 0.0], [0.0, 1.0]]))

    def test_dict_roundtrip(self):
        dist = mixed(3)
        back = InputDistribution.from_dict(dist.to_dict())
        assert back.margins == dist.margins
        np.testing.assert_array_equal(back.corr, dist.corr)

    def test_independent_flag(self):
        assert InputDistribution.gaussian((1, 2)).is_independent
        assert not gaussian3().is_independent


class TestSample:
    def test_identity_copula(self):
        x = sample(InputDistribution.gaussian((1, 1, 1)), 100_000, 0)
        np.testing.assert_allclose(np.corrcoef(x.T), np.eye(3), atol=0.02)

    def test_correlated_pair(self):
        x = sample(gaussian3(0.5), 100_000, 1)
        assert np.corrcoef(x[:, 1], x[:, 2])[0, 1] == pytest.approx(0.5, abs=0.02)
        np.testing.assert_allclose(x.std(axis=0), (0.2, 0.6, 1.0), rtol=0.02)

    def test_uniform_support(self):
        corr = np.array([[1, 0.8, 0.3], [0.8, 1, 0.5], [0.3, 0.5, 1]])
        dist = InputDistribution(tuple(MarginSpec.uniform(-np.pi, np.pi) for _ in range(3)), corr)
        x = sample(dist, 20_000, 2)
        assert x.min() >= -np.pi and x.max() <= np.pi

    def test_reproducible(self):
        np.testing.assert_array_equal(sample(gaussian3(), 10, 5), sample(gaussian3(), 10, 5))


class TestOrderings:
    @pytest.mark.parametrize("i,expected", [(0, (0, 1, 2)), (1, (1, 2, 0)), (2, (2, 0, 1))])
    def test_circular(self, i, expected):
        assert circular_ordering(i, 3) == expected

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            circular_ordering(3, 3)

    def test_all_orderings(self):
        assert len(all_orderings(4)) == 24


class TestRosenblatt:
    def test_independent_is_marginal_cdf(self):
        dist = InputDistribution((MarginSpec.normal(0, 2), MarginSpec.uniform(0, 4)), np.eye(2))
        x = np.array([[1.0, 1.0], [-0.5, 3.0]])
        u = rosenblatt(dist, x, (1, 0))
        np.testing.assert_allclose(u[:, 0], x[:, 1] / 4)
        np.testing.assert_allclose(u[:, 1], stats.norm.cdf(x[:, 0], scale=2))

    def test_median_maps_to_half(self):
        corr = np.array([[1.0, 0.9], [0.9, 1.0]])
        dist = InputDistribution((MarginSpec.normal(1, 3), MarginSpec.uniform(-1, 5)), corr)
        x = np.array([m.median for m in dist.margins])
        np.testing.assert_allclose(rosenblatt(dist, x, (0, 1)), [0.5, 0.5], atol=1e-14)

    @pytest.mark.parametrize("order", all_orderings(4))
    def test_roundtrip_all_orderings(self, order):
        dist = mixed(4)
        x = sample(dist, 1000, 3)
        back = inverse_rosenblatt(dist, rosenblatt(dist, x, order), order)
        np.testing.assert_allclose(back, x, rtol=1e-10, atol=1e-10)
        u = 1.0 - np.random.default_rng(4).random((200, 4))
        np.testing.assert_allclose(rosenblatt(dist, inverse_rosenblatt(dist, u, order), order), u, atol=1e-10)

    @pytest.mark.parametrize("order", all_orderings(3))
    def test_uniform_and_independent(self, order):
        dist = mixed(3, seed=1)
        n = 10_000
        u = rosenblatt(dist, sample(dist, n, 7), order)
        crit = stats.kstwo.ppf(0.99, n)
        for k in range(3):
            assert stats.kstest(u[:, k], "uniform").statistic < crit
        c = np.corrcoef(u.T)
        assert np.abs(c[np.triu_indices(3, 1)]).max() < 3 / np.sqrt(n)

    def test_inverse_reproduces_law(self):
        dist = gaussian3(0.5)
        u = 1.0 - np.random.default_rng(0).random((100_000, 3))
        x = inverse_rosenblatt(dist, u, (2, 0, 1))
        np.testing.assert_allclose(x.mean(axis=0), 0.0, atol=0.02)
        cov = np.diag((0.2, 0.6, 1.0)) @ dist.corr @ np.diag((0.2, 0.6, 1.0))
        np.testing.assert_allclose(np.cov(x.T), cov, atol=0.02)

    def test_independent_inverse_is_quantile(self):
        dist = InputDistribution((MarginSpec.normal(0, 2), MarginSpec.uniform(0, 4)), np.eye(2))
        u = np.array([0.1, 0.7])
        np.testing.assert_allclose(inverse_rosenblatt(dist, u, (0, 1)), [2 * stats.norm.ppf(0.1), 2.8])

    @pytest.mark.parametrize("bad", [0.0, 1.0])
    def test_inverse_rejects_boundary(self, bad):
        with pytest.raises(ValueError):
            inverse_rosenblatt(gaussian3(), np.array([0.5, bad, 0.5]), (0, 1, 2))

    def test_rejects_non_permutation(self):
        with pytest.raises(ValueError):
            rosenblatt(gaussian3(), np.zeros(3), (0, 0, 1))


class TestConditionalSample:
    def test_gaussian_formula(self):
        dist = InputDistribution.gaussian((1, 1), np.array([[1.0, 0.5], [0.5, 1.0]]))
        x1 = conditional_sample(dist, [1], [1.0], [0], 100_000, 0)[:, 0]
        assert x1.mean() == pytest.approx(0.5, abs=0.02)
        assert x1.var() == pytest.approx(0.75, abs=0.02)

    def test_identity_copula_is_marginal(self):
        dist = InputDistribution((MarginSpec.uniform(0, 1), MarginSpec.normal(2, 3)), np.eye(2))
        x = conditional_sample(dist, [0], [0.9], [1], 50_000, 1)[:, 0]
        assert stats.kstest(x, "norm", args=(2, 3)).pvalue > 1e-3

    def test_empty_conditioning_equals_sample(self):
        dist = mixed(3)
        z = conditional_sample(dist, [], [], [0, 1, 2], 50, 9)
        np.testing.assert_allclose(z, sample(dist, 50, 9))

    def test_sequential_decomposition(self):
        dist = mixed(3, seed=2)
        n = 40_000
        rng = np.random.default_rng(11)
        x1 = conditional_sample(dist, [], [], [0], n, rng)
        x2 = conditional_sample(dist, [0], x1, [1], n, rng)
        x3 = conditional_sample(dist, [0, 1], np.column_stack([x1, x2]), [2], n, rng)
        seq = np.column_stack([x1, x2, x3])
        ref = sample(dist, n, 12)
        se = np.sqrt(ref.var(axis=0) * 2 / n)
        assert np.all(np.abs(seq.mean(axis=0) - ref.mean(axis=0)) < 3 * se)
        cs, cr = np.cov(seq.T), np.cov(ref.T)
        # standard error of a sample covariance entry, doubled for the difference
        se_cov = np.sqrt((np.outer(np.diag(cr), np.diag(cr)) + cr**2) * 2 / n)
        assert np.all(np.abs(cs - cr) < 3 * se_cov)

    @pytest.mark.parametrize("fixed,free", [([0], [0, 1]), ([0], [3]), ([0, 1, 2], [])])
    def test_invalid_index_sets(self, fixed, free):
        with pytest.raises(ValueError):
            conditional_sample(gaussian3(), fixed, np.zeros(len(fixed)), free, 5, 0)

    def test_conditioning_cached(self):
        dist = gaussian3()
        a = dist.conditioning([0], [1, 2])
        assert dist.conditioning([0], [1, 2]) is a
        assert a[0].shape == (1, 2)
