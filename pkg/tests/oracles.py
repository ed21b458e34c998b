"""Independent reference computations used as test oracles.

Everything here is deliberately written against the definitions (Riemann sums,
exhaustive enumeration, finite differences) rather than through the library's
own fast paths, so agreement is evidence and not tautology.
"""

from __future__ import annotations

import itertools

import numpy as np


def riemann_iterated_integrals(path_values, level):
    """Iterated integrals of a sampled path by left-Riemann sums.

    path_values: (n, d) samples on a fine grid.  Converges O(1/n); callers pick
    n to match their tolerance.  Returns a list of level arrays.
    """
    xs = np.asarray(path_values, dtype=float)
    n, d = xs.shape
    S = [np.zeros((d,) * k) for k in range(1, level + 1)]
    for i in range(n - 1):
        dx = xs[i + 1] - xs[i]
        # update top-down so each level uses the pre-update lower level
        for k in range(level, 1, -1):
            S[k - 1] = S[k - 1] + np.multiply.outer(S[k - 2], dx)
        S[0] = S[0] + dx
    return S


def pvar_exhaustive(values, p):
    """p-variation by enumerating every breakpoint subset containing both ends."""
    xs = np.asarray(values, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    n = len(xs)
    if n < 2:
        return 0.0
    dist = np.linalg.norm(xs[:, None, :] - xs[None, :, :], axis=2)
    interior = range(1, n - 1)
    best = dist[0, n - 1] ** p
    for r in range(1, n - 1):
        for combo in itertools.combinations(interior, r):
            chain = (0,) + combo + (n - 1,)
            total = 0.0
            for a, b in zip(chain[:-1], chain[1:]):
                total += dist[a, b] ** p
            best = max(best, total)
    return best ** (1.0 / p)


def stratonovich_midpoint_integral(xs, ys):
    """int x o dy by the midpoint rule on the sampling grid."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    mid = 0.5 * (xs[1:] + xs[:-1])
    return float(np.sum(mid * np.diff(ys)))


def fd_jacobian(f, x, eps=1e-6):
    """Central finite-difference Jacobian of f: R^m -> R^m."""
    x = np.asarray(x, dtype=float)
    m = x.size
    cols = []
    for j in range(m):
        e = np.zeros(m)
        e[j] = eps
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * eps))
    return np.stack(cols, axis=1)


def rho_var_2d_exhaustive(R, rho):
    """2-D rho-variation of a covariance sampled on a grid, by full enumeration.

    R: (n, n) kernel matrix on grid nodes.  Every partition of each axis drawn
    from the grid (all subsets containing both endpoints) is tried.
    """
    R = np.asarray(R, dtype=float)
    n = R.shape[0]
    interior = range(1, n - 1)

    def partitions():
        for r in range(0, n - 1):
            for combo in itertools.combinations(interior, r):
                yield (0,) + combo + (n - 1,)

    parts = list(partitions())
    best = 0.0
    for D in parts:
        for Dp in parts:
            block = R[np.ix_(D, Dp)]
            inc = block[1:, 1:] - block[:-1, 1:] - block[1:, :-1] + block[:-1, :-1]
            best = max(best, float(np.sum(np.abs(inc) ** rho)))
    return best ** (1.0 / rho)
