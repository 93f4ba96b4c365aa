"""Shapley effects by exact or random permutations of the inputs.

For a permutation ``pi`` and prefix length ``p`` the cost of the set
``J = pi[:p]`` is ``c(J) = E[Var(Y | X_{-J})] / Var(Y)``. It is estimated
with ``No`` outer draws of ``X_{-J}`` and, for each, ``Ni`` conditional
draws of ``X_J``. By convention ``c({}) = 0`` and ``c(D) = 1`` so the
increments of every permutation telescope to one.

The increment of the input placed first is ``c({i})``, the independent
total index of ``X_i``; the increment of the input placed last is
``1 - c(D \\ {i})``, its full first-order index. Both are read off the
same evaluations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .errors import BudgetError, DegenerateOutputError, evaluate
from .input_model import InputDistribution, as_generator

__all__ = [
    "ShapleyConfig",
    "EvaluationBlocks",
    "ShapleyResult",
    "permutation_plan",
    "build_conditional_design",
    "estimate_cost",
    "shapley_effects",
    "extract_sobol_from_shapley",
    "reduce_costs",
    "seed_sequence",
]


def seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _child(ss: np.random.SeedSequence, *key: int) -> np.random.Generator:
    """Generator for a named sub-stream; depends only on ``ss`` and ``key``."""
    child = np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(key))
    return np.random.default_rng(child)


@dataclass(frozen=True)
class ShapleyConfig:
    """Budget of a Shapley run; total cost is ``n_v + m (d - 1) n_o n_i``."""

    method: str = "exact"
    n_v: int = 10_000
    n_o: int = 1_000
    n_i: int = 3
    m: int | None = None
    max_exact_dim: int = 8
    max_evaluations: int | None = None

    def __post_init__(self):
        if self.method not in ("exact", "random"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.n_v < 2 or self.n_o < 1:
            raise ValueError("n_v must be >= 2 and n_o >= 1")
        if self.n_i < 2:
            raise ValueError("n_i must be >= 2 for an unbiased inner variance")
        if self.method == "random" and (self.m is None or self.m < 1):
            raise ValueError("the random method needs m >= 1")

    def n_perms(self, d: int) -> int:
        return math.factorial(d) if self.method == "exact" else int(self.m)

    def cost(self, d: int) -> int:
        return self.n_v + self.n_perms(d) * (d - 1) * self.n_o * self.n_i


@dataclass
class EvaluationBlocks:
    """Raw outputs kept for estimation and bootstrap.

    ``y2[l, p, o, t]`` is the output for permutation ``l``, prefix length
    ``p + 1``, outer draw ``o`` and inner draw ``t``.
    """

    y1: np.ndarray
    y2: np.ndarray
    perms: np.ndarray

    @property
    def inner_var(self) -> np.ndarray:
        """Unbiased inner variances, shape ``(m, d - 1, n_o)``."""
        return self.y2.var(axis=-1, ddof=1)


@dataclass
class ShapleyResult:
    config: ShapleyConfig
    sh: np.ndarray
    s_full: np.ndarray
    st_ind: np.ndarray
    variance: float
    cost: int
    blocks: EvaluationBlocks
    increments: np.ndarray
    intervals: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.sh.size


def permutation_plan(d: int, method: str = "exact", m: int | None = None, rng=None, max_exact_dim: int = 8):
    """Permutations as an ``(m, d)`` integer array.

    ``exact`` lists all ``d!`` permutations in lexicographic order;
    ``random`` draws ``m`` uniform permutations with replacement.
    """
    if method == "exact":
        if d > max_exact_dim:
            raise BudgetError(f"exact method needs d <= {max_exact_dim} (d! = {math.factorial(d)})")
        return np.array(list(permutations(range(d))), dtype=np.intp).reshape(-1, d)
    if method == "random":
        if m is None or m < 1:
            raise ValueError("the random method needs m >= 1")
        rng = as_generator(rng)
        return np.argsort(rng.random((m, d)), axis=1).astype(np.intp)
    raise ValueError(f"unknown method {method!r}")


def build_conditional_design(dist: InputDistribution, perms: np.ndarray, n_o: int, n_i: int, seed=None):
    """Inputs for the conditional-variance loops, shape ``(m, d-1, n_o, n_i, d)``.

    Cells sharing the same set ``J`` are drawn together from one sub-stream
    keyed by ``J``, so the result does not depend on how the work is split.
    """
    ss = seed_sequence(seed)
    perms = np.asarray(perms, dtype=np.intp)
    m, d = perms.shape
    x = np.empty((m, d - 1, n_o, n_i, d))
    groups: dict = {}
    for l in range(m):
        for p in range(d - 1):
            J = tuple(sorted(int(k) for k in perms[l, : p + 1]))
            groups.setdefault(J, []).append((l, p))
    for J, cells in sorted(groups.items()):
        rest = [k for k in range(d) if k not in J]
        mask = sum(1 << k for k in J)
        rng = _child(ss, 1, mask)
        n_cells = len(cells)
        z = np.empty((n_cells, n_o, n_i, d))
        coef_r, chol_r = dist.conditioning(rest, [])
        z_rest = rng.standard_normal((n_cells, n_o, len(rest))) @ chol_r.T
        coef, chol = dist.conditioning(list(J), rest)
        z_J = rng.standard_normal((n_cells, n_o, n_i, len(J))) @ chol.T
        z_J += (z_rest @ coef.T)[:, :, None, :]
        z[..., rest] = z_rest[:, :, None, :]
        z[..., list(J)] = z_J
        xs = dist.from_latent(z.reshape(-1, d)).reshape(z.shape)
        ls, ps = zip(*cells)
        x[list(ls), list(ps)] = xs
    return x


def reduce_costs(costs: np.ndarray, perms: np.ndarray):
    """Shapley, full first-order and independent total estimates from costs.

    ``costs`` has shape ``(..., m, d - 1)`` (already normalized by the output
    variance) and ``perms`` ``(..., m, d)``. Returns ``(sh, s_full, st_ind,
    increments)`` where ``increments[..., l, i]`` is the increment of input
    ``i`` in permutation ``l``.
    """
    costs = np.asarray(costs, dtype=float)
    perms = np.asarray(perms)
    lead = costs.shape[:-1]
    ext = np.concatenate([np.zeros(lead + (1,)), costs, np.ones(lead + (1,))], axis=-1)
    diff = np.diff(ext, axis=-1)
    perms = np.broadcast_to(perms, diff.shape)
    increments = np.empty_like(diff)
    np.put_along_axis(increments, perms, diff, axis=-1)
    sh = increments.mean(axis=-2)

    d = diff.shape[-1]
    inputs = np.arange(d)
    first = perms[..., :1] == inputs  # (..., m, d)
    last = perms[..., -1:] == inputs
    with np.errstate(invalid="ignore", divide="ignore"):
        st_ind = (increments * first).sum(axis=-2) / first.sum(axis=-2)
        s_full = (increments * last).sum(axis=-2) / last.sum(axis=-2)
    return sh, s_full, st_ind, increments


def estimate_cost(blocks: EvaluationBlocks, J) -> float:
    """Normalized cost of the set ``J`` averaged over every stored slice for it."""
    d = blocks.perms.shape[1]
    J = frozenset(int(k) for k in J)
    if not J:
        return 0.0
    if len(J) == d:
        return 1.0
    variance = blocks.y1.var(ddof=1)
    if variance <= 0:
        raise DegenerateOutputError("output variance estimate is not positive")
    p = len(J) - 1
    rows = [l for l in range(blocks.perms.shape[0]) if frozenset(blocks.perms[l, : p + 1].tolist()) == J]
    if not rows:
        raise KeyError(f"no stored slice for J = {sorted(J)}")
    return float(blocks.inner_var[rows, p].mean() / variance)


def shapley_from_blocks(blocks: EvaluationBlocks):
    variance = blocks.y1.var(ddof=1)
    if variance <= 0:
        raise DegenerateOutputError("output variance estimate is not positive")
    d = blocks.perms.shape[1]
    if d == 1:
        one = np.ones(1)
        return one, one.copy(), one.copy(), np.ones((blocks.perms.shape[0], 1)), float(variance)
    costs = blocks.inner_var.mean(axis=-1) / variance
    sh, s_full, st_ind, inc = reduce_costs(costs, blocks.perms)
    return sh, s_full, st_ind, inc, float(variance)


def draw_inputs(dist: InputDistribution, config: ShapleyConfig, seed=None):
    """Sample ``x1`` (``n_v`` rows), the permutation plan and the conditional design."""
    ss = seed_sequence(seed)
    d = dist.dim
    perms = permutation_plan(d, config.method, config.m, _child(ss, 2), config.max_exact_dim)
    z = _child(ss, 0).standard_normal((config.n_v, d)) @ dist._chol.T
    x1 = dist.from_latent(z)
    x2 = build_conditional_design(dist, perms, config.n_o, config.n_i, ss)
    return x1, perms, x2


def shapley_effects(model, dist: InputDistribution, config: ShapleyConfig, seed=None) -> ShapleyResult:
    """Estimate Shapley effects, full first-order and independent total indices.

    ``model`` maps an ``(n, d)`` array to ``n`` outputs. The realized number
    of model evaluations is exactly ``config.cost(d)``.
    """
    d = dist.dim
    cost = config.cost(d)
    if config.max_evaluations is not None and cost > config.max_evaluations:
        raise BudgetError(f"run needs {cost} evaluations, budget is {config.max_evaluations}")
    x1, perms, x2 = draw_inputs(dist, config, seed)
    y1 = evaluate(model, x1)
    y2 = evaluate(model, x2.reshape(-1, d)).reshape(x2.shape[:-1]) if d > 1 else np.zeros((perms.shape[0], 0, config.n_o, config.n_i))
    blocks = EvaluationBlocks(y1=y1, y2=y2, perms=perms)
    sh, s_full, st_ind, inc, variance = shapley_from_blocks(blocks)
    realized = y1.size + y2.size
    return ShapleyResult(config, sh, s_full, st_ind, variance, realized, blocks, inc)


def extract_sobol_from_shapley(result: ShapleyResult):
    """``(s_full, st_ind)`` read from the first and last increments of each permutation."""
    if result.blocks is None:
        raise ValueError("result does not retain its evaluation blocks")
    _, s_full, st_ind, _, _ = shapley_from_blocks(result.blocks)
    return s_full, st_ind
