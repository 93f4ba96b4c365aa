"""Benchmark models and their reference sensitivity indices.

Three models are provided:

* ``linear``: ``Y = b0 + beta . X`` with ``X ~ N(0, Sigma)`` in three
  dimensions, pairwise correlations ``alpha`` (1-2), ``rho`` (1-3) and
  ``gamma`` (2-3);
* ``interactive``: ``Y = (b1 X1)(b2 X2)`` with a bivariate normal input;
* ``ishigami``: ``sin x1 + 7 sin^2 x2 + 0.1 x3^4 sin x1`` on ``[-pi, pi]^3``.

Closed-form indices are given for the two Gaussian models. The Ishigami
values hold for independent inputs only and were produced by
``tools/ishigami_oracle.py`` (tensor Gauss-Legendre quadrature).

:func:`monte_carlo_oracle` is a brute-force double-loop estimator of every
index for any model/distribution pair. It is slow and only meant for
cross-checking the closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations
from math import factorial

import numpy as np

from .input_model import InputDistribution, MarginSpec, as_generator, circular_ordering, inverse_rosenblatt

__all__ = [
    "IndexSet",
    "LinearGaussianParams",
    "InteractiveParams",
    "eval_linear",
    "eval_interactive",
    "eval_ishigami",
    "analytic_indices_linear",
    "analytic_indices_interactive",
    "variance_reduction_table",
    "oracle_ishigami_independent",
    "ishigami_distribution",
    "monte_carlo_oracle",
    "shapley_from_cost",
]


@dataclass
class IndexSet:
    """Reference values of every index family, one entry per input.

    ``st_cond`` maps ``(i, u)`` to the total index of ``X_i | X_u``;
    ``s_full_sets`` maps a sorted tuple of inputs to its closed full index.
    """

    sh: np.ndarray
    s_full: np.ndarray
    st_full: np.ndarray
    s_ind: np.ndarray
    st_ind: np.ndarray
    variance: float
    st_cond: dict = field(default_factory=dict)
    s_full_sets: dict = field(default_factory=dict)

    def get(self, kind: str) -> np.ndarray:
        return np.asarray(getattr(self, kind))


@dataclass(frozen=True)
class LinearGaussianParams:
    beta0: float = 0.0
    beta: tuple = (1.0, 1.0, 1.0)
    sigma: tuple = (0.2, 0.6, 1.0)
    alpha: float = 0.0
    rho: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if len(self.beta) != 3 or len(self.sigma) != 3:
            raise ValueError("the linear model has exactly three inputs")
        if min(self.sigma) <= 0:
            raise ValueError("standard deviations must be positive")
        if max(abs(self.alpha), abs(self.rho), abs(self.gamma)) > 1:
            raise ValueError("correlations must lie in [-1, 1]")

    @property
    def correlation(self) -> np.ndarray:
        a, r, g = self.alpha, self.rho, self.gamma
        return np.array([[1.0, a, r], [a, 1.0, g], [r, g, 1.0]])

    @property
    def covariance(self) -> np.ndarray:
        s = np.asarray(self.sigma, dtype=float)
        return self.correlation * np.outer(s, s)

    def distribution(self) -> InputDistribution:
        return InputDistribution.gaussian(self.sigma, self.correlation)

    def model(self):
        return lambda x: eval_linear(self, x)


@dataclass(frozen=True)
class InteractiveParams:
    beta: tuple = (1.0, 1.0)
    sigma: tuple = (1.0, 1.0)
    rho: float = 0.0

    def __post_init__(self):
        if min(self.sigma) <= 0:
            raise ValueError("standard deviations must be positive")
        if abs(self.rho) > 1:
            raise ValueError("rho must lie in [-1, 1]")

    @property
    def correlation(self) -> np.ndarray:
        return np.array([[1.0, self.rho], [self.rho, 1.0]])

    def distribution(self) -> InputDistribution:
        return InputDistribution.gaussian(self.sigma, self.correlation)

    def model(self):
        return lambda x: eval_interactive(self, x)


def eval_linear(params: LinearGaussianParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return params.beta0 + x @ np.asarray(params.beta, dtype=float)


def eval_interactive(params: InteractiveParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    b1, b2 = params.beta
    return (b1 * x[..., 0]) * (b2 * x[..., 1])


ISHIGAMI_A = 7.0
ISHIGAMI_B = 0.1


def eval_ishigami(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    return np.sin(x1) + ISHIGAMI_A * np.sin(x2) ** 2 + ISHIGAMI_B * x3**4 * np.sin(x1)


def ishigami_distribution(corr=None) -> InputDistribution:
    margins = tuple(MarginSpec.uniform(-np.pi, np.pi) for _ in range(3))
    return InputDistribution(margins, np.eye(3) if corr is None else corr)


def shapley_from_cost(cost: dict, d: int) -> np.ndarray:
    """Shapley values from a cost function given on every subset (sorted tuples)."""
    sh = np.zeros(d)
    for i in range(d):
        others = [k for k in range(d) if k != i]
        for size in range(d):
            w = factorial(size) * factorial(d - size - 1) / factorial(d)
            for u in combinations(others, size):
                sh[i] += w * (cost[tuple(sorted(u + (i,)))] - cost[u])
    return sh


def analytic_indices_interactive(params: InteractiveParams) -> IndexSet:
    """Indices of the two-input product model with correlated normal inputs."""
    b1, b2 = params.beta
    s1, s2 = params.sigma
    r2 = params.rho**2
    scale = (b1 * b2 * s1 * s2) ** 2
    variance = (1.0 + r2) * scale
    two = np.ones(2)
    return IndexSet(
        sh=0.5 * two,
        s_full=2.0 * r2 / (1.0 + r2) * two,
        st_full=1.0 * two,
        s_ind=0.0 * two,
        st_ind=(1.0 - r2) / (1.0 + r2) * two,
        variance=variance,
    )


def analytic_indices_linear(params: LinearGaussianParams) -> IndexSet:
    """Closed-form indices of the three-input linear Gaussian model.

    The Shapley effects are assembled from the conditional total indices,
    ``Sh_i = (S_i^full + ST_{i|j}/2 + ST_{i|k}/2 + ST_i^ind) / 3``.
    """
    a, r, g = params.alpha, params.rho, params.gamma
    if max(abs(a), abs(r), abs(g)) >= 1:
        raise ValueError("degenerate conditioning: a pairwise correlation has modulus 1")
    if np.linalg.eigvalsh(params.correlation).min() <= 0:
        raise ValueError("implied covariance matrix is not positive definite")
    b1, b2, b3 = (bb * s for bb, s in zip(params.beta, params.sigma))

    var = b1**2 + b2**2 + b3**2 + 2 * g * b2 * b3 + 2 * b1 * (a * b2 + r * b3)
    det = -1 + a**2 + g**2 + r**2 - 2 * a * g * r

    s_ind = np.array([b1**2 * det / (g**2 - 1), b2**2 * det / (r**2 - 1), b3**2 * det / (a**2 - 1)]) / var
    s_full = (
        np.array([(b1 + a * b2 + r * b3) ** 2, (a * b1 + b2 + g * b3) ** 2, (r * b1 + g * b2 + b3) ** 2])
        / var
    )
    pairs = {
        (0, 1): var - b3**2 * (g**2 + r**2 - 2 * a * g * r) / (a**2 - 1) - b3**2,
        (0, 2): var - b2**2 * (a**2 + g**2 - 2 * a * g * r) / (r**2 - 1) - b2**2,
        (1, 2): var - b1**2 * (a**2 + r**2 - 2 * a * g * r) / (g**2 - 1) - b1**2,
    }
    st_cond = {
        (0, (1,)): -((b1 * (a**2 - 1) + b3 * (a * g - r)) ** 2) / (a**2 - 1),
        (0, (2,)): -((b1 * (r**2 - 1) + b2 * (g * r - a)) ** 2) / (r**2 - 1),
        (1, (0,)): -((b2 * (a**2 - 1) + b3 * (a * r - g)) ** 2) / (a**2 - 1),
        (1, (2,)): -((b2 * (g**2 - 1) + b1 * (g * r - a)) ** 2) / (g**2 - 1),
        (2, (0,)): -((b3 * (r**2 - 1) + b2 * (a * r - g)) ** 2) / (r**2 - 1),
        (2, (1,)): -((b3 * (g**2 - 1) + b1 * (a * g - r)) ** 2) / (g**2 - 1),
    }
    st_cond = {k: v / var for k, v in st_cond.items()}
    for i in range(3):
        j, k = (m for m in range(3) if m != i)
        st_cond[(i, (j, k))] = s_ind[i]

    sets = {(i,): s_full[i] for i in range(3)}
    sets.update({k: v / var for k, v in pairs.items()})
    sets[(0, 1, 2)] = 1.0

    sh = np.empty(3)
    for i in range(3):
        j, k = (m for m in range(3) if m != i)
        sh[i] = (s_full[i] + 0.5 * st_cond[(i, (j,))] + 0.5 * st_cond[(i, (k,))] + s_ind[i]) / 3.0

    return IndexSet(
        sh=sh,
        s_full=s_full,
        st_full=s_full.copy(),
        s_ind=s_ind,
        st_ind=s_ind.copy(),
        variance=float(var),
        st_cond=st_cond,
        s_full_sets=sets,
    )


def variance_reduction_table(params: LinearGaussianParams, shrink: float, target: int) -> float:
    """Output variance after scaling the standard deviation of input ``target`` by ``shrink``."""
    if not 0 < shrink <= 1:
        raise ValueError("shrink must lie in (0, 1]")
    sigma = list(params.sigma)
    sigma[target] *= shrink
    reduced = replace(params, sigma=tuple(sigma))
    beta = np.asarray(reduced.beta, dtype=float)
    return float(beta @ reduced.covariance @ beta)


# Independent U[-pi, pi]^3, a = 7, b = 0.1 (tools/ishigami_oracle.py).
ISHIGAMI_VARIANCE = 13.844587940719254
ISHIGAMI_FIRST = (0.3139051911478115, 0.442411144790041, 0.0)
ISHIGAMI_TOTAL = (0.557588855209959, 0.4424111447900413, 0.2436836640621477)
ISHIGAMI_SHAPLEY = (0.43574702317888514, 0.442411144790041, 0.12184183203107378)


def oracle_ishigami_independent() -> IndexSet:
    first = np.array(ISHIGAMI_FIRST)
    total = np.array(ISHIGAMI_TOTAL)
    return IndexSet(
        sh=np.array(ISHIGAMI_SHAPLEY),
        s_full=first,
        st_full=total,
        s_ind=first.copy(),
        st_ind=total.copy(),
        variance=ISHIGAMI_VARIANCE,
    )


@dataclass
class OracleValue:
    value: float
    se: float


@dataclass
class MonteCarloOracle:
    """Double-loop estimates in variance units (not normalized) with standard errors.

    ``cost[J]`` estimates ``E[Var(Y | X_{-J})]``; the index fields hold the
    index multiplied by ``Var(Y)``.
    """

    variance: OracleValue
    cost: dict
    sh: list
    s_full: list
    st_full: list
    s_ind: list
    st_ind: list


def _expected_conditional_variance(model, dist, order, keep, n_outer, n_inner, rng, chunk=250):
    """Estimate ``E[Var(Y | U_keep)]`` for the Rosenblatt transform under ``order``.

    The coordinates at positions ``keep`` are drawn once per outer iteration
    and the remaining ones ``n_inner`` times.
    """
    keep = list(keep)
    d = dist.dim
    inner_vars = []
    for start in range(0, n_outer, chunk):
        k = min(chunk, n_outer - start)
        u = rng.random((k, n_inner, d))
        u[:, :, keep] = rng.random((k, 1, len(keep)))
        u = np.clip(u, 1e-16, 1 - 1e-16)
        y = np.asarray(model(inverse_rosenblatt(dist, u.reshape(-1, d), order))).reshape(k, n_inner)
        inner_vars.append(y.var(axis=1, ddof=1))
    v = np.concatenate(inner_vars)
    return OracleValue(float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size)))


def monte_carlo_oracle(model, dist: InputDistribution, n_outer: int = 2000, n_inner: int = 2000, rng=None):
    """Brute-force double-loop estimate of every index family.

    All expectations of conditional variances are computed with independent
    samples, so standard errors of linear combinations add in quadrature.
    """
    rng = as_generator(rng)
    d = dist.dim
    n_var = n_outer * n_inner
    u = np.clip(rng.random((n_var, d)), 1e-16, 1 - 1e-16)
    y = np.asarray(model(inverse_rosenblatt(dist, u, range(d))))
    var = float(y.var(ddof=1))
    # SE of the sample variance from the fourth central moment
    m4 = float(np.mean((y - y.mean()) ** 4))
    var_se = float(np.sqrt(max(m4 - var**2, 0.0) / n_var))
    variance = OracleValue(var, var_se)

    def ecv(order, keep):
        return _expected_conditional_variance(model, dist, order, keep, n_outer, n_inner, rng)

    cost = {(): OracleValue(0.0, 0.0), tuple(range(d)): variance}
    for size in range(1, d):
        for J in combinations(range(d), size):
            rest = [k for k in range(d) if k not in J]
            cost[J] = ecv(tuple(rest) + J, range(len(rest)))

    sh = []
    for i in range(d):
        others = [k for k in range(d) if k != i]
        coeffs: dict = {}
        for size in range(d):
            w = factorial(size) * factorial(d - size - 1) / factorial(d)
            for J in combinations(others, size):
                up = tuple(sorted(J + (i,)))
                coeffs[up] = coeffs.get(up, 0.0) + w
                coeffs[J] = coeffs.get(J, 0.0) - w
        value = sum(c * cost[J].value for J, c in coeffs.items())
        se = np.sqrt(sum((c * cost[J].se) ** 2 for J, c in coeffs.items()))
        sh.append(OracleValue(float(value), float(se)))

    def first_order(ecv_value):
        return OracleValue(var - ecv_value.value, float(np.hypot(var_se, ecv_value.se)))

    s_full, st_full, s_ind, st_ind = [None] * d, [None] * d, [None] * d, [None] * d
    for i in range(d):
        order = circular_ordering(i, d)
        last = order[-1]
        s_full[i] = first_order(ecv(order, [0]))
        st_full[i] = ecv(order, range(1, d))
        s_ind[last] = first_order(ecv(order, [d - 1]))
        st_ind[last] = ecv(order, range(d - 1))
    return MonteCarloOracle(variance, cost, sh, s_full, st_full, s_ind, st_ind)
