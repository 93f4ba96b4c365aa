"""Quadrature oracle for the Ishigami indices under independent U[-pi, pi] inputs.

Computes the closed-index variances Var(E[Y | X_u]) for every subset u with a
tensor Gauss-Legendre rule, then derives first-order, total and Shapley
indices. The printed constants are the ones pinned in ``depsens.benchmarks``.

    python tools/ishigami_oracle.py
"""

from itertools import combinations
from math import factorial

import numpy as np

A, B = 7.0, 0.1
NODES = 64


def ishigami(x1, x2, x3):
    return np.sin(x1) + A * np.sin(x2) ** 2 + B * x3**4 * np.sin(x1)


def main():
    t, w = np.polynomial.legendre.leggauss(NODES)
    x = np.pi * t
    w = w / 2.0  # uniform density on [-pi, pi]
    y = ishigami(*np.meshgrid(x, x, x, indexing="ij"))
    weights = [w, w, w]

    mean = np.einsum("ijk,i,j,k->", y, *weights)
    var = np.einsum("ijk,i,j,k->", (y - mean) ** 2, *weights)

    closed = {(): 0.0, (0, 1, 2): var}
    for size in (1, 2):
        for u in combinations(range(3), size):
            rest = [k for k in range(3) if k not in u]
            cond = y
            # integrate out the complement, highest axis first
            for k in sorted(rest, reverse=True):
                cond = np.tensordot(cond, weights[k], axes=([k], [0]))
            wu = np.einsum(",".join("abc"[: len(u)]) + "->" + "abc"[: len(u)], *[weights[k] for k in u])
            closed[u] = float(np.sum(wu * (cond - mean) ** 2))

    d = 3
    first = [closed[(i,)] / var for i in range(d)]
    total = [1.0 - closed[tuple(k for k in range(d) if k != i)] / var for i in range(d)]
    shap = []
    for i in range(d):
        others = [k for k in range(d) if k != i]
        acc = 0.0
        for size in range(d):
            for u in combinations(others, size):
                weight = factorial(size) * factorial(d - size - 1) / factorial(d)
                acc += weight * (closed[tuple(sorted(u + (i,)))] - closed[u])
        shap.append(acc / var)

    print(f"VARIANCE = {float(var)!r}")
    print(f"FIRST = {tuple(float(v) for v in first)!r}")
    print(f"TOTAL = {tuple(float(v) for v in total)!r}")
    print(f"SHAPLEY = {tuple(float(v) for v in shap)!r}")


if __name__ == "__main__":
    main()
