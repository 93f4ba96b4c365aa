"""Dependent input distributions: parametric margins tied by a Gaussian copula.

All sampling and transform routines work in a latent standard-normal space
``z`` where the copula correlation matrix is the covariance. A margin maps a
latent coordinate to model units through ``F_i^{-1}(Phi(z_i))``; for normal
margins this is the affine map ``mean + std * z`` and is applied directly.

Input indices are 0-based throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.special import ndtr, ndtri

__all__ = [
    "MarginSpec",
    "InputDistribution",
    "as_generator",
    "circular_ordering",
    "all_orderings",
    "sample",
    "rosenblatt",
    "inverse_rosenblatt",
    "conditional_sample",
]


def as_generator(rng) -> np.random.Generator:
    """Accept a seed, ``SeedSequence`` or ``Generator`` and return a ``Generator``."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class MarginSpec:
    """A one-dimensional margin: ``uniform(lower, upper)`` or ``normal(mean, std)``."""

    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind == "uniform":
            if not self.b > self.a:
                raise ValueError(f"uniform margin needs upper > lower, got [{self.a}, {self.b}]")
        elif self.kind == "normal":
            if not self.b > 0:
                raise ValueError(f"normal margin needs std > 0, got {self.b}")
        else:
            raise ValueError(f"unknown margin kind {self.kind!r}")

    @classmethod
    def uniform(cls, lower: float, upper: float) -> "MarginSpec":
        return cls("uniform", float(lower), float(upper))

    @classmethod
    def normal(cls, mean: float = 0.0, std: float = 1.0) -> "MarginSpec":
        return cls("normal", float(mean), float(std))

    @property
    def median(self) -> float:
        return 0.5 * (self.a + self.b) if self.kind == "uniform" else self.a

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            return np.clip((x - self.a) / (self.b - self.a), 0.0, 1.0)
        return ndtr((x - self.a) / self.b)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "uniform":
            return self.a + (self.b - self.a) * u
        return self.a + self.b * ndtri(u)

    def to_latent(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "normal":
            return (x - self.a) / self.b
        u = (x - self.a) / (self.b - self.a)
        if np.any((u <= 0.0) | (u >= 1.0)):
            raise ValueError(f"value outside the open support ({self.a}, {self.b})")
        return ndtri(u)

    def from_latent(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "normal":
            return self.a + self.b * z
        return self.a + (self.b - self.a) * ndtr(z)

    @property
    def variance(self) -> float:
        if self.kind == "uniform":
            return (self.b - self.a) ** 2 / 12.0
        return self.b**2

    def to_dict(self) -> dict:
        if self.kind == "uniform":
            return {"kind": "uniform", "lower": self.a, "upper": self.b}
        return {"kind": "normal", "mean": self.a, "std": self.b}

    @classmethod
    def from_dict(cls, spec: dict) -> "MarginSpec":
        kind = spec["kind"]
        allowed = {"uniform": {"kind", "lower", "upper"}, "normal": {"kind", "mean", "std"}}.get(kind)
        if allowed is not None and set(spec) - allowed:
            raise ValueError(f"unknown keys for a {kind} margin: {sorted(set(spec) - allowed)}")
        if kind == "uniform":
            return cls.uniform(spec["lower"], spec["upper"])
        if kind == "normal":
            return cls.normal(spec.get("mean", 0.0), spec.get("std", 1.0))
        raise ValueError(f"unknown margin kind {kind!r}")


@dataclass(frozen=True, eq=False)
class InputDistribution:
    """Random vector with the given margins and Gaussian-copula correlation.

    The correlation matrix is validated (symmetric, unit diagonal, positive
    definite) at construction. Conditioning factors are cached per pattern;
    the cache only ever grows with pure functions of the immutable matrix, so
    instances can be shared between threads.
    """

    margins: tuple[MarginSpec, ...]
    corr: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)
    _cache: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        margins = tuple(self.margins)
        corr = np.array(self.corr, dtype=float, copy=True)
        d = len(margins)
        if d == 0:
            raise ValueError("at least one margin is required")
        if corr.shape != (d, d):
            raise ValueError(f"correlation matrix has shape {corr.shape}, expected {(d, d)}")
        if not np.allclose(corr, corr.T, atol=1e-12):
            raise ValueError("correlation matrix is not symmetric")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise ValueError("correlation matrix must have a unit diagonal")
        try:
            chol = linalg.cholesky(corr, lower=True)
        except linalg.LinAlgError:
            raise ValueError("correlation matrix is not positive definite") from None
        corr.setflags(write=False)
        chol.setflags(write=False)
        object.__setattr__(self, "margins", margins)
        object.__setattr__(self, "corr", corr)
        object.__setattr__(self, "_chol", chol)

    @classmethod
    def independent(cls, margins: Sequence[MarginSpec]) -> "InputDistribution":
        return cls(tuple(margins), np.eye(len(margins)))

    @classmethod
    def gaussian(cls, std: Sequence[float], corr=None, mean=None) -> "InputDistribution":
        """Multivariate normal with the given standard deviations and correlation."""
        d = len(std)
        mean = np.zeros(d) if mean is None else mean
        corr = np.eye(d) if corr is None else corr
        return cls(tuple(MarginSpec.normal(m, s) for m, s in zip(mean, std)), corr)

    @property
    def dim(self) -> int:
        return len(self.margins)

    @property
    def is_independent(self) -> bool:
        return bool(np.all(self.corr == np.eye(self.dim)))

    def to_latent(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.column_stack([m.to_latent(x[:, j]) for j, m in enumerate(self.margins)])

    def from_latent(self, z, columns: Sequence[int] | None = None) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        columns = range(self.dim) if columns is None else columns
        return np.column_stack([self.margins[c].from_latent(z[:, j]) for j, c in enumerate(columns)])

    def marginal_ppf(self, u) -> np.ndarray:
        """Map points of the unit cube through the marginal quantiles, ignoring dependence."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return np.column_stack([m.ppf(u[:, j]) for j, m in enumerate(self.margins)])

    def ordered_cholesky(self, order: Sequence[int]) -> np.ndarray:
        order = tuple(int(i) for i in order)
        key = ("order", order)
        if key not in self._cache:
            idx = np.asarray(order)
            chol = linalg.cholesky(self.corr[np.ix_(idx, idx)], lower=True)
            chol.setflags(write=False)
            self._cache[key] = chol
        return self._cache[key]

    def conditioning(self, free: Sequence[int], fixed: Sequence[int]):
        """Regression matrix and Cholesky factor of ``z_free | z_fixed``.

        Returns ``(coef, chol)`` with ``E[z_free | z_fixed] = z_fixed @ coef.T``
        and ``Cov = chol @ chol.T``.
        """
        free = tuple(int(i) for i in free)
        fixed = tuple(int(i) for i in fixed)
        key = ("cond", free, fixed)
        if key not in self._cache:
            f = np.asarray(free, dtype=int)
            g = np.asarray(fixed, dtype=int)
            s11 = self.corr[np.ix_(f, f)]
            if g.size:
                s12 = self.corr[np.ix_(f, g)]
                s22 = self.corr[np.ix_(g, g)]
                coef = linalg.cho_solve(linalg.cho_factor(s22, lower=True), s12.T).T
                cov = s11 - coef @ s12.T
                cov = 0.5 * (cov + cov.T)
            else:
                coef = np.zeros((f.size, 0))
                cov = s11
            chol = linalg.cholesky(cov, lower=True) if f.size else np.zeros((0, 0))
            coef.setflags(write=False)
            chol.setflags(write=False)
            self._cache[key] = (coef, chol)
        return self._cache[key]

    def to_dict(self) -> dict:
        return {
            "margins": [m.to_dict() for m in self.margins],
            "correlation": self.corr.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "InputDistribution":
        margins = tuple(MarginSpec.from_dict(m) for m in spec["margins"])
        d = len(margins)
        corr = spec.get("correlation")
        corr = np.eye(d) if corr is None else np.asarray(corr, dtype=float).reshape(d, d)
        return cls(margins, corr)


def circular_ordering(i: int, d: int) -> tuple[int, ...]:
    """Left-circular shift of ``(0, ..., d-1)`` that starts at input ``i``."""
    if not 0 <= i < d:
        raise IndexError(f"ordering index {i} out of range for d={d}")
    return tuple((i + k) % d for k in range(d))


def all_orderings(d: int) -> list[tuple[int, ...]]:
    return list(permutations(range(d)))


def _check_ordering(order, d):
    order = tuple(int(i) for i in order)
    if sorted(order) != list(range(d)):
        raise ValueError(f"{order} is not a permutation of 0..{d - 1}")
    return order


def sample(dist: InputDistribution, n: int, rng=None) -> np.ndarray:
    """Draw ``n`` i.i.d. rows from ``dist``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = as_generator(rng)
    z = rng.standard_normal((n, dist.dim)) @ dist._chol.T
    return dist.from_latent(z)


def rosenblatt(dist: InputDistribution, x, order: Sequence[int]) -> np.ndarray:
    """Rosenblatt transform of ``x`` under ``order``.

    Column ``k`` of the result is the conditional CDF of ``X_{order[k]}`` given
    ``X_{order[:k]}``. Accepts a single point or an ``(n, d)`` array.
    """
    order = _check_ordering(order, dist.dim)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    z = dist.to_latent(x)[:, order]
    w = linalg.solve_triangular(dist.ordered_cholesky(order), z.T, lower=True).T
    u = ndtr(w)
    return u[0] if single else u


def inverse_rosenblatt(dist: InputDistribution, u, order: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`rosenblatt`; ``u`` must lie in the open unit cube."""
    order = _check_ordering(order, dist.dim)
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("inverse Rosenblatt needs u strictly inside (0, 1)")
    w = ndtri(u)
    z = np.empty_like(w)
    z[:, order] = w @ dist.ordered_cholesky(order).T
    x = dist.from_latent(z)
    return x[0] if single else x


def conditional_sample(
    dist: InputDistribution,
    fixed_idx: Sequence[int],
    fixed_values,
    free_idx: Sequence[int],
    n: int,
    rng=None,
) -> np.ndarray:
    """Draw ``X_free | X_fixed = fixed_values``; inputs in neither set are marginalized.

    ``fixed_values`` is either one vector (``n`` draws share it) or an array
    with ``n`` rows, one conditioning point per draw. Returns ``(n, |free|)``.
    """
    fixed_idx = [int(i) for i in fixed_idx]
    free_idx = [int(i) for i in free_idx]
    both = fixed_idx + free_idx
    if len(set(both)) != len(both) or not all(0 <= i < dist.dim for i in both) or not free_idx:
        raise ValueError("fixed and free indices must be disjoint, in range, and free must be non-empty")
    rng = as_generator(rng)
    coef, chol = dist.conditioning(free_idx, fixed_idx)
    eps = rng.standard_normal((n, len(free_idx))) @ chol.T
    if fixed_idx:
        vals = np.atleast_2d(np.asarray(fixed_values, dtype=float))
        zf = np.column_stack([dist.margins[c].to_latent(vals[:, j]) for j, c in enumerate(fixed_idx)])
        eps = eps + zf @ coef.T
    return dist.from_latent(eps, free_idx)
