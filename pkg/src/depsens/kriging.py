"""Universal kriging metamodel and kriging-based Shapley estimation.

The process is ``H(x) = f(x)' beta + Z(x)`` with ``f(x) = (1, x_1..x_d)``
(or a constant) and ``Cov(Z(x), Z(x')) = sigma^2 r(x, x')`` for an
anisotropic Matern-5/2 correlation. Correlation lengths are chosen by
maximizing the restricted (REML) profile likelihood; ``beta`` is the GLS
estimate and ``sigma^2`` its closed-form REML value.

:func:`shapley_gp` replaces the model by joint realizations of the
conditioned process on one fixed Monte-Carlo design and bootstraps each
realization, giving an ``N_H x B`` sample whose row and column means
separate metamodel and Monte-Carlo variance (:func:`decompose_variance`).
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import cdist, pdist

from .errors import BudgetError
from .input_model import InputDistribution, as_generator
from .shapley import ShapleyConfig, _child, draw_inputs, seed_sequence
from .uncertainty import exact_replicates, random_replicates

__all__ = [
    "GPModel",
    "ShapleyGPDistribution",
    "lhs_design",
    "matern52",
    "fit_gp",
    "predict",
    "predict_cov",
    "sample_realization",
    "sample_realizations",
    "q2_score",
    "shapley_gp",
    "decompose_variance",
    "save_gp",
    "load_gp",
]

log = logging.getLogger(__name__)

NUGGET_LADDER = (1e-8, 1e-6, 1e-4)
DEFAULT_MAX_POINTS = 6000


def matern52(x1, x2, theta) -> np.ndarray:
    """Matern-5/2 correlation matrix between the rows of ``x1`` and ``x2``."""
    h = cdist(np.asarray(x1) / theta, np.asarray(x2) / theta)
    s = np.sqrt(5.0) * h
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def _trend_basis(x, trend):
    x = np.atleast_2d(x)
    if trend == "linear":
        return np.column_stack([np.ones(x.shape[0]), x])
    if trend == "constant":
        return np.ones((x.shape[0], 1))
    raise ValueError(f"unknown trend {trend!r}")


def lhs_design(n: int, d: int, rng=None, bounds=None, optimize: bool = False, n_restarts: int = 200, n_swaps: int = 2000):
    """Latin hypercube of ``n`` points in ``d`` dimensions.

    With ``optimize`` the minimum pairwise distance is increased, first by
    keeping the best of ``n_restarts`` random hypercubes, then by greedy
    within-column swaps. The first candidate is the design returned without
    optimization for the same seed, so optimizing never lowers the maximin
    criterion.
    """
    rng = as_generator(rng)

    def one():
        perm = np.argsort(rng.random((d, n)), axis=1).T
        return (perm + rng.random((n, d))) / n

    design = one()
    if optimize and n > 1:
        best, best_score = design, pdist(design).min()
        for _ in range(n_restarts - 1):
            cand = one()
            score = pdist(cand).min()
            if score > best_score:
                best, best_score = cand, score
        design = best.copy()
        for _ in range(n_swaps):
            j = rng.integers(d)
            a, b = rng.choice(n, size=2, replace=False)
            trial = design.copy()
            trial[[a, b], j] = trial[[b, a], j]
            score = pdist(trial).min()
            if score > best_score:
                design, best_score = trial, score
    if bounds is not None:
        bounds = np.asarray(bounds, dtype=float)
        design = bounds[:, 0] + design * (bounds[:, 1] - bounds[:, 0])
    return design


@dataclass
class GPModel:
    """Fitted conditional Gaussian process."""

    X: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    sigma2: float
    beta: np.ndarray
    nugget: float
    trend: str = "linear"
    kernel: str = "matern52"
    loglik: float = float("nan")
    _chol: np.ndarray = field(default=None, repr=False)
    _alpha: np.ndarray = field(default=None, repr=False)
    _F: np.ndarray = field(default=None, repr=False)
    _ftf_chol: np.ndarray = field(default=None, repr=False)
    _FtRinv: np.ndarray = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def residual(self) -> np.ndarray:
        return self.y - self._F @ self.beta

    def to_dict(self) -> dict:
        return {
            "kind": "universal-kriging",
            "kernel": self.kernel,
            "trend": self.trend,
            "design": self.X.tolist(),
            "observations": self.y.tolist(),
            "theta": self.theta.tolist(),
            "sigma2": self.sigma2,
            "beta": self.beta.tolist(),
            "nugget": self.nugget,
            "loglik": self.loglik,
        }


def _factorize(X, y, theta, nugget, trend):
    """GLS fit for fixed hyperparameters; returns a dict or raises LinAlgError."""
    n = X.shape[0]
    R = matern52(X, X, theta)
    R[np.diag_indices(n)] += nugget
    L = linalg.cholesky(R, lower=True)
    F = _trend_basis(X, trend)
    Ft = linalg.solve_triangular(L, F, lower=True)  # L^-1 F
    yt = linalg.solve_triangular(L, y, lower=True)
    ftf = Ft.T @ Ft
    C = linalg.cholesky(ftf, lower=True)
    beta = linalg.cho_solve((C, True), Ft.T @ yt)
    et = yt - Ft @ beta
    p = F.shape[1]
    sigma2 = float(et @ et) / (n - p)
    logdet_R = 2.0 * np.sum(np.log(np.diag(L)))
    logdet_F = 2.0 * np.sum(np.log(np.diag(C)))
    nll = 0.5 * ((n - p) * np.log(sigma2) + logdet_R + logdet_F)
    alpha = linalg.solve_triangular(L.T, et, lower=False)  # R^-1 (y - F beta)
    FtRinv = linalg.solve_triangular(L.T, Ft, lower=False).T  # F' R^-1
    return dict(L=L, F=F, C=C, beta=beta, sigma2=sigma2, nll=nll, alpha=alpha, FtRinv=FtRinv)


def _refine_mean(X, y, theta, fit, steps):
    """Mean weights of the nugget-free kriging system.

    The factor of ``R + nugget I`` preconditions an iterative refinement of
    ``[[R, F], [F', 0]] [alpha; beta] = [y; 0]``, so predictions interpolate
    the data well below the nugget level while variances keep the nugget.
    """
    L, F, C = fit["L"], fit["F"], fit["C"]
    R = matern52(X, X, theta)
    alpha, beta = fit["alpha"].copy(), fit["beta"].copy()

    def solve(r1, r2):
        t = linalg.cho_solve((L, True), r1)
        db = linalg.cho_solve((C, True), F.T @ t - r2)
        return linalg.cho_solve((L, True), r1 - F @ db), db

    scale = np.abs(y).max() or 1.0
    for _ in range(steps):
        r1 = y - R @ alpha - F @ beta
        r2 = -F.T @ alpha
        if np.abs(r1).max() <= 1e-9 * scale and np.abs(r2).max() <= 1e-12 * scale:
            break
        da, db = solve(r1, r2)
        alpha += da
        beta += db
    return alpha, beta


def _build(X, y, theta, sigma2, nugget, trend, loglik=float("nan"), refine=50):
    fit = _factorize(X, y, theta, nugget, trend)
    alpha, beta = _refine_mean(X, y, theta, fit, refine)
    return GPModel(
        X=X,
        y=y,
        theta=np.asarray(theta, dtype=float),
        sigma2=float(sigma2),
        beta=beta,
        nugget=nugget,
        trend=trend,
        loglik=loglik,
        _chol=fit["L"],
        _alpha=alpha,
        _F=fit["F"],
        _ftf_chol=fit["C"],
        _FtRinv=fit["FtRinv"],
    )


def fit_gp(
    X,
    y,
    nugget: float = 1e-8,
    theta_bounds=None,
    trend: str = "linear",
    n_starts: int = 10,
    seed=0,
) -> GPModel:
    """Fit correlation lengths by REML with a fixed multi-start budget.

    ``theta_bounds`` is a ``(d, 2)`` array; by default each length ranges
    over ``[0.01, 20]`` times the design span in that coordinate. If the
    correlation matrix is not numerically positive definite the nugget is
    raised along ``1e-8 -> 1e-6 -> 1e-4`` with a warning.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    if y.size != n:
        raise ValueError("X and y sizes differ")
    if n > 1 and pdist(X).min() < 1e-10:
        raise ValueError("design contains duplicate rows")
    p = _trend_basis(X[:1], trend).shape[1]
    if n <= p + 1:
        raise ValueError(f"need at least {p + 2} design points for a {trend} trend")
    if theta_bounds is None:
        span = np.ptp(X, axis=0)
        span[span == 0] = 1.0
        theta_bounds = np.column_stack([0.01 * span, 20.0 * span])
    theta_bounds = np.asarray(theta_bounds, dtype=float)
    log_bounds = np.log(theta_bounds)

    ladder = [v for v in NUGGET_LADDER if v >= nugget] or [nugget]
    if ladder[0] != nugget:
        ladder.insert(0, nugget)
    rng = np.random.default_rng(seed)
    starts = [log_bounds.mean(axis=1)]
    starts += list(log_bounds[:, 0] + lhs_design(n_starts - 1, d, rng) * np.diff(log_bounds, axis=1).ravel())

    for tau in ladder:

        def objective(log_theta):
            try:
                return _factorize(X, y, np.exp(log_theta), tau, trend)["nll"]
            except (linalg.LinAlgError, ValueError):
                return 1e25

        best = None
        for x0 in starts:
            res = optimize.minimize(objective, x0, method="L-BFGS-B", bounds=log_bounds, options={"maxiter": 200})
            if best is None or res.fun < best.fun:
                best = res
        if best.fun < 1e25:
            theta = np.exp(best.x)
            try:
                fit = _factorize(X, y, theta, tau, trend)
            except linalg.LinAlgError:
                fit = None
            if fit is not None:
                if tau != nugget:
                    warnings.warn(f"correlation matrix ill-conditioned; nugget raised to {tau:g}", RuntimeWarning, stacklevel=2)
                return _build(X, y, theta, fit["sigma2"], tau, trend, loglik=-float(best.fun))
    raise linalg.LinAlgError("could not factorize the correlation matrix even with the largest nugget")


def _cross(gp, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = matern52(gp.X, x, gp.theta)  # (n, N)
    f = _trend_basis(x, gp.trend).T  # (p, N)
    return x, r, f


def predict(gp: GPModel, x):
    """Kriging mean and variance (including trend-estimation uncertainty) at the rows of ``x``."""
    x, r, f = _cross(gp, x)
    mean = f.T @ gp.beta + r.T @ gp._alpha
    v = linalg.solve_triangular(gp._chol, r, lower=True)
    u = f - gp._FtRinv @ r
    w = linalg.solve_triangular(gp._ftf_chol, u, lower=True)
    var = gp.sigma2 * (1.0 - np.sum(v * v, axis=0) + np.sum(w * w, axis=0))
    return mean, np.maximum(var, 0.0)


def _cov_parts(gp, x):
    x, r, f = _cross(gp, x)
    mean = f.T @ gp.beta + r.T @ gp._alpha
    v = linalg.solve_triangular(gp._chol, r, lower=True)  # (n, N)
    u = f - gp._FtRinv @ r
    w = linalg.solve_triangular(gp._ftf_chol, u, lower=True)  # (p, N)
    return x, mean, v, w


def predict_cov(gp: GPModel, x):
    """Kriging mean and full conditional covariance matrix at the rows of ``x``."""
    x, mean, v, w = _cov_parts(gp, x)
    cov = matern52(x, x, gp.theta)
    cov -= v.T @ v
    cov += w.T @ w
    cov *= gp.sigma2
    return mean, cov


def _exact_factor(gp, x):
    mean, cov = predict_cov(gp, x)
    n = cov.shape[0]
    scale = gp.sigma2
    # jitter scales with sigma2, so add it only when the plain factor fails
    for jitter in (0.0, gp.nugget) + NUGGET_LADDER:
        try:
            cov[np.diag_indices(n)] += jitter * scale
            L = linalg.cholesky(cov, lower=True, overwrite_a=False, check_finite=False)
            if jitter > gp.nugget:
                warnings.warn(f"realization covariance needed jitter {jitter:g} * sigma2", RuntimeWarning, stacklevel=3)
            return mean, L
        except linalg.LinAlgError:
            cov[np.diag_indices(n)] -= jitter * scale
    raise linalg.LinAlgError("conditional covariance is not positive definite")


def _pivoted_factor(gp, x, tol, max_rank):
    """Low-rank factor ``G`` (rank x N) and residual diagonal of the conditional covariance.

    Pivoted Cholesky stopping when every remaining diagonal entry is below
    ``tol * sigma2``. The residual is returned so callers can add it back as
    independent noise, which keeps the marginal variances exact.
    """
    x, mean, v, w = _cov_parts(gp, x)
    N = x.shape[0]
    diag = gp.sigma2 * (1.0 - np.sum(v * v, axis=0) + np.sum(w * w, axis=0))
    diag = np.maximum(diag, 0.0)
    max_rank = min(max_rank, N)
    G = np.zeros((max_rank, N))
    thresh = tol * gp.sigma2
    k = 0
    while k < max_rank:
        j = int(np.argmax(diag))
        if diag[j] <= thresh:
            break
        col = matern52(x, x[j : j + 1], gp.theta)[:, 0]
        col -= v.T @ v[:, j]
        col += w.T @ w[:, j]
        col *= gp.sigma2
        if k:
            col -= G[:k].T @ G[:k, j]
        g = col / np.sqrt(diag[j])
        G[k] = g
        diag -= g * g
        diag[j] = 0.0
        np.maximum(diag, 0.0, out=diag)
        k += 1
    if k == max_rank and diag.max() > thresh:
        warnings.warn(
            f"pivoted factor reached max_rank={max_rank} with residual {diag.max():.3g}", RuntimeWarning, stacklevel=3
        )
    return mean, G[:k], diag


def sample_realizations(
    gp: GPModel,
    x,
    size: int,
    rng=None,
    method: str = "exact",
    max_points: int = DEFAULT_MAX_POINTS,
    tol: float = 1e-6,
    max_rank: int = 6000,
):
    """Joint draws of the conditioned process at the rows of ``x``, shape ``(size, N)``.

    ``exact`` uses a dense Cholesky factor of the ``N x N`` conditional
    covariance and refuses ``N > max_points``. ``pivoted`` builds a pivoted
    Cholesky factor truncated at a diagonal residual of ``tol * sigma2``
    and adds the residual as independent noise; memory is ``rank x N``.
    """
    rng = as_generator(rng)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    N = x.shape[0]
    if method == "exact":
        if N > max_points:
            raise BudgetError(
                f"{N} points exceed the exact realization cap of {max_points}; "
                "reduce n_v/n_o or use method='pivoted'"
            )
        mean, L = _exact_factor(gp, x)
        return mean + rng.standard_normal((size, N)) @ L.T
    if method == "pivoted":
        mean, G, resid = _pivoted_factor(gp, x, tol, max_rank)
        log.info("pivoted factor rank %d for %d points", G.shape[0], N)
        out = rng.standard_normal((size, G.shape[0])) @ G
        out += rng.standard_normal((size, N)) * np.sqrt(resid)
        out += mean
        return out
    raise ValueError(f"unknown sampling method {method!r}")


def sample_realization(gp: GPModel, x, rng=None, **kwargs) -> np.ndarray:
    """One joint draw of the conditioned process at the rows of ``x``."""
    return sample_realizations(gp, x, 1, rng, **kwargs)[0]


def q2_score(gp: GPModel, x_test, y_test) -> float:
    """Predictivity coefficient ``1 - SS_res / SS_tot`` on held-out data."""
    y_test = np.asarray(y_test, dtype=float)
    ss_tot = np.sum((y_test - y_test.mean()) ** 2)
    if ss_tot <= 0:
        raise ValueError("test outputs have zero variance")
    mean, _ = predict(gp, x_test)
    return float(1.0 - np.sum((y_test - mean) ** 2) / ss_tot)


def save_gp(gp: GPModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(gp.to_dict(), fh, indent=1)


def load_gp(path) -> GPModel:
    with open(path) as fh:
        data = json.load(fh)
    if data.get("kernel") != "matern52":
        raise ValueError(f"unsupported kernel {data.get('kernel')!r}")
    X = np.asarray(data["design"], dtype=float)
    y = np.asarray(data["observations"], dtype=float)
    return _build(
        X, y, np.asarray(data["theta"]), data["sigma2"], data["nugget"], data["trend"],
        loglik=data.get("loglik", float("nan")),
    )


@dataclass
class ShapleyGPDistribution:
    """``samples[kind]`` has shape ``(N_H, B, d)``; row ``k`` is one realization,
    column ``l`` one bootstrap resample (``l = 0`` is the unresampled estimate),
    shared by all realizations."""

    samples: dict
    decomposition: dict
    config: ShapleyConfig
    n_points: int

    def mean(self, kind: str = "sh") -> np.ndarray:
        return self.samples[kind].mean(axis=(0, 1))


def decompose_variance(samples) -> dict:
    """Split the spread of an ``(N_H, B)`` (or ``(N_H, B, d)``) sample.

    ``metamodel`` is the variance of the row means (over realizations),
    ``mc`` the variance of the column means (over bootstrap resamples);
    ``total`` is the variance of all entries and ``residual`` what the two
    components leave unexplained. Tiny negative values are clipped to zero.
    """
    s = np.asarray(samples, dtype=float)
    if s.shape[0] < 2 or s.shape[1] < 2:
        raise ValueError("need at least two realizations and two bootstrap samples")
    flat = s.reshape((-1,) + s.shape[2:])
    meta = s.mean(axis=1).var(axis=0, ddof=1)
    mc = s.mean(axis=0).var(axis=0, ddof=1)
    total = flat.var(axis=0, ddof=1)
    if np.any(meta < 0) or np.any(mc < 0):
        warnings.warn("clipping negative variance component", RuntimeWarning, stacklevel=2)
    meta, mc = np.maximum(meta, 0.0), np.maximum(mc, 0.0)
    return {"metamodel": meta, "mc": mc, "total": total, "residual": total - meta - mc}


def shapley_gp(
    gp: GPModel,
    dist: InputDistribution,
    config: ShapleyConfig,
    n_h: int = 300,
    n_boot: int = 100,
    seed=None,
    sampler: str = "exact",
    max_points: int = DEFAULT_MAX_POINTS,
    chunk: int = 25,
    **sampler_kwargs,
) -> ShapleyGPDistribution:
    """Distribution of Shapley estimates under metamodel and Monte-Carlo error.

    The Monte-Carlo inputs are drawn once; each of ``n_h`` realizations of
    the conditioned process is evaluated on all of them and bootstrapped
    ``n_boot - 1`` times with resampling indices shared across realizations.
    """
    ss = seed_sequence(seed)
    d = dist.dim
    x1, perms, x2 = draw_inputs(dist, config, ss.spawn(1)[0])
    n_v = x1.shape[0]
    X = np.concatenate([x1, x2.reshape(-1, d)])
    N = X.shape[0]
    if sampler == "exact" and N > max_points:
        raise BudgetError(f"{N} points exceed the realization cap of {max_points}")

    if sampler == "exact":
        mean, L = _exact_factor(gp, X)

        def draw(k, rng):
            return mean + rng.standard_normal((k, N)) @ L.T

    elif sampler == "pivoted":
        mean, G, resid = _pivoted_factor(gp, X, sampler_kwargs.get("tol", 1e-6), sampler_kwargs.get("max_rank", 6000))
        log.info("pivoted factor rank %d for %d points", G.shape[0], N)
        sd = np.sqrt(resid)

        def draw(k, rng):
            return mean + rng.standard_normal((k, G.shape[0])) @ G + rng.standard_normal((k, N)) * sd

    else:
        raise ValueError(f"unknown sampler {sampler!r}")

    real_rng = _child(ss, 7)
    boot_seed = np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (8,))
    replicate = exact_replicates if config.method == "exact" else random_replicates
    out = np.empty((n_h, n_boot, 3, d))
    for start in range(0, n_h, chunk):
        k = min(chunk, n_h - start)
        Y = draw(k, real_rng)
        for j in range(k):
            y1 = Y[j, :n_v]
            inner_var = Y[j, n_v:].reshape(x2.shape[:-1]).var(axis=-1, ddof=1)
            out[start + j] = replicate(y1, inner_var, perms, n_boot, boot_seed, include_original=True)
    samples = {"sh": out[:, :, 0], "s_full": out[:, :, 1], "st_ind": out[:, :, 2]}
    decomposition = {kind: decompose_variance(s) for kind, s in samples.items()}
    return ShapleyGPDistribution(samples, decomposition, config, N)
