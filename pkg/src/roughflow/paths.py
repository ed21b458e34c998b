"""Piecewise-linear paths and their lifts to the truncated tensor group.

A path is stored by breakpoints (times, values); between breakpoints it is
linear, outside its span it is extended constantly (the usual convention for
finite windows of two-sided noise).  The signature lift anchors every path at
time 0 with the group identity; increments of a lift are exact signatures of
the underlying path, so Chen's relation holds by construction and the tests
can treat any violation as arithmetic noise.

p-variation quantities are computed over breakpoint/grid partitions by dynamic
programming, which is exact for piecewise-linear data: merging collinear
increments never decreases a partition sum when p >= 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ArgumentError
from .tensor_algebra import (
    MAX_LEVEL,
    GroupElement,
    batch_distance,
    batch_from_elements,
    batch_gather,
    batch_inv,
    batch_mul,
    geodesic_point,
    identity_element,
    segment_exponential,
    tensor_inv,
    tensor_mul,
)

_FLOAT_FMT = "%.17g"
_MAX_DP_NODES = 4096

__all__ = [
    "PiecewiseLinearPath",
    "SampledRoughPath",
    "Mollifier",
    "bump_mollifier",
    "signature_lift",
    "p_variation",
    "homogeneous_pvar_distance",
    "pvar_norm",
    "glued_pvar_distance",
    "shift_path",
    "mollify",
    "piecewise_linear_projection",
    "resample_lift",
    "chen_residual_max",
    "geometricity_residual_max",
]


def _as_times(times) -> np.ndarray:
    t = np.asarray(times, dtype=float).reshape(-1)
    if t.size < 2:
        raise ArgumentError("need at least two time nodes", count=t.size)
    if not np.all(np.isfinite(t)):
        raise ArgumentError("non-finite time nodes")
    if np.any(np.diff(t) <= 0):
        raise ArgumentError("times must be strictly increasing")
    return t


class PiecewiseLinearPath:
    """Continuous piecewise-linear function R -> R^d given by breakpoints."""

    __slots__ = ("times", "values")

    def __init__(self, times, values):
        t = _as_times(times)
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != t.size:
            raise ArgumentError("values must be (n,) or (n, d) matching times", shape=v.shape, nodes=t.size)
        if not np.all(np.isfinite(v)):
            raise ArgumentError("non-finite path values")
        t.flags.writeable = False
        v = v.copy()
        v.flags.writeable = False
        self.times = t
        self.values = v

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def value(self, t):
        """Linear interpolation at t (scalar or array); constant beyond the span."""
        tq = np.asarray(t, dtype=float)
        scalar = tq.ndim == 0
        tq = np.atleast_1d(tq)
        idx = np.clip(np.searchsorted(self.times, tq, side="right"), 1, self.times.size - 1)
        t0 = self.times[idx - 1]
        t1 = self.times[idx]
        lam = np.clip((tq - t0) / (t1 - t0), 0.0, 1.0)
        out = self.values[idx - 1] + lam[:, None] * (self.values[idx] - self.values[idx - 1])
        return out[0] if scalar else out

    def __call__(self, t):
        return self.value(t)

    def with_nodes(self, new_times) -> "PiecewiseLinearPath":
        """Insert breakpoints (values interpolated); the function is unchanged."""
        extra = np.unique(np.atleast_1d(np.asarray(new_times, dtype=float)))
        tol = 1e-12 * max(1.0, self.times[-1] - self.times[0])
        keep = []
        for t in extra:
            if np.min(np.abs(self.times - t)) <= tol:
                continue
            if keep and t - keep[-1] <= tol:
                continue
            keep.append(t)
        if not keep:
            return self
        t_all = np.sort(np.concatenate([self.times, np.asarray(keep)]))
        return PiecewiseLinearPath(t_all, self.value(t_all))

    def rebase(self, t0: float) -> "PiecewiseLinearPath":
        """Subtract the value at t0 so the path vanishes there."""
        return PiecewiseLinearPath(self.times, self.values - self.value(t0))

    def restrict(self, a: float, b: float) -> "PiecewiseLinearPath":
        if not (a < b):
            raise ArgumentError("empty restriction interval", interval=(a, b))
        p = self.with_nodes([a, b])
        mask = (p.times >= a - 1e-15 * max(1.0, abs(a))) & (p.times <= b + 1e-15 * max(1.0, abs(b)))
        return PiecewiseLinearPath(p.times[mask], p.values[mask])

    def to_json_dict(self) -> dict:
        return {"times": self.times.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "PiecewiseLinearPath":
        return cls(doc["times"], doc["values"])

    def to_csv(self, fileobj) -> None:
        """One row per node: t, x_1, ..., x_d with fixed 17-significant-digit floats."""
        cols = ["t"] + [f"x{i + 1}" for i in range(self.dim)]
        fileobj.write(",".join(cols) + "\n")
        for t, row in zip(self.times, self.values):
            cells = [_FLOAT_FMT % t] + [_FLOAT_FMT % v for v in row]
            fileobj.write(",".join(cells) + "\n")

    @classmethod
    def from_csv(cls, fileobj) -> "PiecewiseLinearPath":
        header = fileobj.readline()
        if not header.startswith("t"):
            raise ArgumentError("unrecognized path CSV header", header=header.strip())
        data = np.loadtxt(fileobj, delimiter=",", ndmin=2)
        return cls(data[:, 0], data[:, 1:])


class SampledRoughPath:
    """Group-valued path sampled on a time grid, anchored at the identity at 0."""

    __slots__ = ("times", "points", "p")

    def __init__(self, times, points: Sequence[GroupElement], p: float = 1.0):
        t = _as_times(times)
        if len(points) != t.size:
            raise ArgumentError("one group point per time node", nodes=t.size, points=len(points))
        first = points[0]
        for g in points:
            if g.dim != first.dim or g.level != first.level:
                raise ArgumentError("points live in different truncated groups")
        if not (p >= 1.0):
            raise ArgumentError("regularity bookkeeping p must be >= 1", p=p)
        self.times = t
        self.points = list(points)
        self.p = float(p)

    @property
    def dim(self) -> int:
        return self.points[0].dim

    @property
    def level(self) -> int:
        return self.points[0].level

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def node_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        spacing = np.min(np.diff(self.times))
        if abs(self.times[i] - t) > 1e-9 * max(spacing, 1.0) + 1e-12:
            raise ArgumentError("time is not a grid node; resample_lift first", t=t, nearest=float(self.times[i]))
        return i

    def point(self, t: float) -> GroupElement:
        return self.points[self.node_index(t)]

    def increment(self, s: float, t: float) -> GroupElement:
        """Group increment between grid nodes: point(s)^{-1} (x) point(t)."""
        return tensor_mul(tensor_inv(self.point(s)), self.point(t))

    def batched_levels(self):
        return batch_from_elements(self.points)

    def to_json_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "p": self.p,
            "points": [g.to_json_dict() for g in self.points],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SampledRoughPath":
        return cls(doc["times"], [GroupElement.from_json_dict(g) for g in doc["points"]], doc.get("p", 1.0))


def signature_lift(x: PiecewiseLinearPath, level: int, p: float = 1.0) -> SampledRoughPath:
    """Exact step-level signature lift of a piecewise-linear path.

    Each segment contributes its group exponential; points are running products
    anchored at the identity at time 0 (inserted as a node when the span covers
    it, the left endpoint otherwise).  Increments of the result are therefore
    exact signatures and satisfy Chen's relation identically.
    """
    if level > MAX_LEVEL:
        raise ArgumentError("lift level above supported ceiling", level=level, max_level=MAX_LEVEL)
    lo, hi = x.span
    if lo <= 0.0 <= hi:
        x = x.with_nodes([0.0])
        anchor = int(np.argmin(np.abs(x.times)))
    else:
        anchor = 0
    x = x.rebase(x.times[anchor])
    increments = np.diff(x.values, axis=0)
    n = x.times.size
    points: list[GroupElement | None] = [None] * n
    points[anchor] = identity_element(x.dim, level)
    for i in range(anchor, n - 1):
        points[i + 1] = tensor_mul(points[i], segment_exponential(increments[i], level))
    for i in range(anchor - 1, -1, -1):
        points[i] = tensor_mul(points[i + 1], segment_exponential(-increments[i], level))
    return SampledRoughPath(x.times, points, p)


def _restrict_nodes(x: PiecewiseLinearPath, interval) -> np.ndarray:
    if interval is None:
        return x.values
    a, b = float(interval[0]), float(interval[1])
    return x.restrict(a, b).values


def p_variation(x: PiecewiseLinearPath, p: float, interval=None) -> float:
    """p-variation over breakpoint partitions (exact for piecewise-linear paths).

    Dynamic programme over breakpoints: f(i) = max_{j<i} f(j) + |x_i - x_j|^p,
    answer f(last)^{1/p}.
    """
    if not (p >= 1.0):
        raise ArgumentError("p must be >= 1", p=p)
    values = _restrict_nodes(x, interval)
    n = values.shape[0]
    if n > _MAX_DP_NODES:
        raise ArgumentError("too many breakpoints for the quadratic programme", nodes=n, limit=_MAX_DP_NODES)
    dist = np.linalg.norm(values[:, None, :] - values[None, :, :], axis=2)
    weights = dist**p
    f = np.zeros(n)
    for i in range(1, n):
        f[i] = np.max(f[:i] + weights[:i, i])
    return float(f[-1] ** (1.0 / p))


def _pair_increment_levels(lift: SampledRoughPath, i_idx, j_idx):
    levels = lift.batched_levels()
    inv_levels = batch_inv(levels, lift.dim)
    return batch_mul(batch_gather(inv_levels, i_idx), batch_gather(levels, j_idx), lift.dim)


def _dp_max_sum(weight: np.ndarray) -> float:
    n = weight.shape[0]
    f = np.zeros(n)
    for i in range(1, n):
        f[i] = np.max(f[:i] + weight[:i, i])
    return float(f[-1])


def _node_window(lift: SampledRoughPath, interval):
    if interval is None:
        return np.arange(lift.times.size)
    a, b = float(interval[0]), float(interval[1])
    sel = np.where((lift.times >= a - 1e-12) & (lift.times <= b + 1e-12))[0]
    if sel.size < 2:
        raise ArgumentError("interval contains fewer than two grid nodes", interval=(a, b))
    return sel


def homogeneous_pvar_distance(x: SampledRoughPath, y: SampledRoughPath, p: float, interval=None) -> float:
    """Homogeneous p-variation distance of two lifts on a common grid.

    max over levels k of (sup over grid partitions of sum |pi_k of the increment
    difference|^{p/k})^{1/p}.  Lifts on different grids are resampled onto the
    union grid first (geodesic completion); spans must agree.
    """
    if x.dim != y.dim or x.level != y.level:
        raise ArgumentError("lifts live in different truncated groups",
                            left=(x.dim, x.level), right=(y.dim, y.level))
    if not (p >= 1.0):
        raise ArgumentError("p must be >= 1", p=p)
    if x.times.size != y.times.size or not np.allclose(x.times, y.times, atol=1e-12, rtol=0):
        if not np.allclose([x.times[0], x.times[-1]], [y.times[0], y.times[-1]], atol=1e-9, rtol=0):
            raise ArgumentError("lift spans differ; cannot resample onto a common grid",
                                left=x.span, right=y.span)
        union = np.union1d(np.round(x.times, 15), np.round(y.times, 15))
        x = resample_lift(x, union)
        y = resample_lift(y, union)
    sel = _node_window(x, interval)
    n = sel.size
    if n > _MAX_DP_NODES:
        raise ArgumentError("too many grid nodes for the quadratic programme", nodes=n, limit=_MAX_DP_NODES)
    iu = np.triu_indices(n, 1)
    i_idx, j_idx = sel[iu[0]], sel[iu[1]]
    inc_x = _pair_increment_levels(x, i_idx, j_idx)
    inc_y = _pair_increment_levels(y, i_idx, j_idx)
    best = 0.0
    for k in range(1, x.level + 1):
        norms = np.linalg.norm(inc_x[k - 1] - inc_y[k - 1], axis=1)
        w = np.zeros((n, n))
        w[iu] = norms ** (p / k)
        best = max(best, _dp_max_sum(w) ** (1.0 / p))
    return best


def pvar_norm(lift: SampledRoughPath, p: float, interval=None) -> float:
    """Homogeneous p-variation norm of a lift (distance to the constant identity)."""
    if not (p >= 1.0):
        raise ArgumentError("p must be >= 1", p=p)
    sel = _node_window(lift, interval)
    n = sel.size
    iu = np.triu_indices(n, 1)
    inc = _pair_increment_levels(lift, sel[iu[0]], sel[iu[1]])
    best = 0.0
    for k in range(1, lift.level + 1):
        norms = np.linalg.norm(inc[k - 1], axis=1)
        w = np.zeros((n, n))
        w[iu] = norms ** (p / k)
        best = max(best, _dp_max_sum(w) ** (1.0 / p))
    return best


def glued_pvar_distance(x: SampledRoughPath, y: SampledRoughPath, p: float, max_window: int = 8) -> float:
    """sum_m 2^{-m} (d_{p-var;[-m,m]} ^ 1) over growing windows clipped to the spans."""
    lo = max(x.times[0], y.times[0])
    hi = min(x.times[-1], y.times[-1])
    total = 0.0
    for m in range(1, max_window + 1):
        a, b = max(lo, -float(m)), min(hi, float(m))
        if b - a <= 0:
            break
        d = min(homogeneous_pvar_distance(x, y, p, interval=(a, b)), 1.0)
        total += 2.0 ** (-m) * d
        if a == lo and b == hi:
            # every larger window sees the same full span: geometric tail in closed form
            total += 2.0 ** (-m) * d
            break
    return total


def shift_path(x: PiecewiseLinearPath, h: float) -> PiecewiseLinearPath:
    """Time shift with re-basing: result(t) = x(t + h) - x(h)."""
    lo, hi = x.span
    if lo < h < hi:
        x = x.with_nodes([h])
    base = x.value(h)
    return PiecewiseLinearPath(x.times - h, x.values - base)


@dataclass(frozen=True)
class Mollifier:
    """Probability density with compact support used for convolution smoothing."""

    density: Callable[[np.ndarray], np.ndarray]
    support_radius: float

    def __post_init__(self):
        if not (self.support_radius > 0):
            raise ArgumentError("support radius must be positive", radius=self.support_radius)
        us, w = _simpson_nodes(-self.support_radius, self.support_radius, 1025)
        vals = np.asarray(self.density(us), dtype=float)
        if np.any(vals < -1e-12):
            raise ArgumentError("mollifier density must be nonnegative")
        mass = float(np.dot(w, vals))
        if abs(mass - 1.0) > 1e-8:
            raise ArgumentError("mollifier density does not integrate to 1", mass=mass)


def _simpson_nodes(a: float, b: float, n_nodes: int):
    if n_nodes < 3:
        n_nodes = 3
    if n_nodes % 2 == 0:
        n_nodes += 1
    us = np.linspace(a, b, n_nodes)
    h = (b - a) / (n_nodes - 1)
    w = np.full(n_nodes, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return us, w * h / 3.0


_BUMP_CONST = None


def _bump_normalizer() -> float:
    global _BUMP_CONST
    if _BUMP_CONST is None:
        us, w = _simpson_nodes(-1.0, 1.0, 8193)
        inner = np.zeros_like(us)
        mask = np.abs(us) < 1.0
        inner[mask] = np.exp(-1.0 / (1.0 - us[mask] ** 2))
        _BUMP_CONST = 1.0 / float(np.dot(w, inner))
    return _BUMP_CONST


def bump_mollifier(radius: float) -> Mollifier:
    """Standard smooth bump supported on [-radius, radius], numerically normalized."""
    c = _bump_normalizer() / radius

    def density(u):
        u = np.asarray(u, dtype=float)
        s = u / radius
        out = np.zeros_like(s)
        mask = np.abs(s) < 1.0
        out[mask] = c * np.exp(-1.0 / (1.0 - s[mask] ** 2))
        return out

    return Mollifier(density, float(radius))


def mollify(
    x: PiecewiseLinearPath,
    mu: Mollifier,
    interval=None,
    nodes_per_support: int = 64,
    refine: int = 1,
) -> PiecewiseLinearPath:
    """Convolution smoothing: result(t) = int (x(t - u) - x(-u)) mu(du).

    Composite Simpson quadrature over the mollifier support; the discrete
    weights are normalized to unit mass so constant-slope paths are fixed
    points exactly.  The output grid refines the input breakpoints, which makes
    smoothing commute with time shifts at common evaluation nodes.
    """
    r = mu.support_radius
    lo, hi = x.span
    if lo > -r or hi < r:
        raise ArgumentError("path span must cover the mollifier support around 0",
                            span=(lo, hi), radius=r)
    if interval is None:
        interval = (lo + r, hi - r)
    a, b = float(interval[0]), float(interval[1])
    if a < lo + r - 1e-12 or b > hi - r + 1e-12 or a >= b:
        raise ArgumentError("target interval must sit inside the span shrunk by the support radius",
                            interval=(a, b), admissible=(lo + r, hi - r))
    us, w = _simpson_nodes(-r, r, int(nodes_per_support))
    wq = w * np.asarray(mu.density(us), dtype=float)
    wq = wq / wq.sum()

    base = x.times
    if refine > 1:
        pieces = [np.linspace(base[i], base[i + 1], refine, endpoint=False) for i in range(base.size - 1)]
        base = np.concatenate(pieces + [base[-1:]])
    grid = base[(base >= a - 1e-12) & (base <= b + 1e-12)]
    extra = [a, b] + ([0.0] if a < 0.0 < b else [])
    for t in extra:
        if grid.size == 0 or np.min(np.abs(grid - t)) > 1e-12 * max(1.0, b - a):
            grid = np.append(grid, t)
    grid = np.sort(grid)

    query = grid[:, None] - us[None, :]
    vals = x.value(query.reshape(-1)).reshape(grid.size, us.size, x.dim)
    offset = x.value(-us)
    out = np.einsum("q,tqd->td", wq, vals - offset[None, :, :])
    return PiecewiseLinearPath(grid, out)


def piecewise_linear_projection(x, grid) -> PiecewiseLinearPath:
    """Values of x on an equidistant grid, joined piecewise linearly."""
    g = _as_times(grid)
    steps = np.diff(g)
    if np.max(np.abs(steps - steps[0])) > 1e-9 * steps[0]:
        raise ArgumentError("projection grid must be equidistant")
    if isinstance(x, PiecewiseLinearPath):
        vals = x.value(g)
    else:
        vals = np.asarray([np.atleast_1d(np.asarray(x(t), dtype=float)) for t in g])
    return PiecewiseLinearPath(g, vals)


def resample_lift(lift: SampledRoughPath, new_times) -> SampledRoughPath:
    """Evaluate a lift at new times inside its span.

    Grid nodes are returned exactly; strictly interior times use geodesic
    completion of the bracketing increment (linear interpolation at level 1,
    the group exponential of the scaled log at higher levels).
    """
    ts = _as_times(np.asarray(new_times, dtype=float))
    lo, hi = lift.span
    if ts[0] < lo - 1e-12 or ts[-1] > hi + 1e-12:
        raise ArgumentError("resample times outside the lift span", span=(lo, hi),
                            requested=(float(ts[0]), float(ts[-1])))
    spacing = np.min(np.diff(lift.times))
    points = []
    for t in ts:
        i = int(np.argmin(np.abs(lift.times - t)))
        if abs(lift.times[i] - t) <= 1e-9 * max(spacing, 1.0):
            points.append(lift.points[i])
            continue
        j = int(np.searchsorted(lift.times, t, side="right")) - 1
        j = min(max(j, 0), lift.times.size - 2)
        frac = (t - lift.times[j]) / (lift.times[j + 1] - lift.times[j])
        points.append(geodesic_point(lift.points[j], lift.points[j + 1], float(frac)))
    return SampledRoughPath(ts, points, lift.p)


def chen_residual_max(lift: SampledRoughPath, max_nodes: int = 64) -> float:
    """max over node triples s < u < t of |inc(s,u) (x) inc(u,t) - inc(s,t)|."""
    n = lift.times.size
    if n > max_nodes:
        raise ArgumentError("too many nodes for the all-triples sweep", nodes=n, limit=max_nodes)
    levels = lift.batched_levels()
    inv_levels = batch_inv(levels, lift.dim)
    pair_id = {}
    pairs_i, pairs_j = [], []
    for i in range(n):
        for j in range(i + 1, n):
            pair_id[(i, j)] = len(pairs_i)
            pairs_i.append(i)
            pairs_j.append(j)
    incs = batch_mul(batch_gather(inv_levels, np.array(pairs_i)), batch_gather(levels, np.array(pairs_j)), lift.dim)
    first, second, whole = [], [], []
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                first.append(pair_id[(i, j)])
                second.append(pair_id[(j, k)])
                whole.append(pair_id[(i, k)])
    if not first:
        return 0.0
    lhs = batch_mul(batch_gather(incs, np.array(first)), batch_gather(incs, np.array(second)), lift.dim)
    rhs = batch_gather(incs, np.array(whole))
    return float(np.max(batch_distance(lhs, rhs)))


def geometricity_residual_max(lift: SampledRoughPath) -> float:
    """max over node pairs of |Sym(pi_2(inc)) - 0.5 pi_1(inc) (x) pi_1(inc)|."""
    if lift.level < 2:
        return 0.0
    n = lift.times.size
    iu = np.triu_indices(n, 1)
    incs = _pair_increment_levels(lift, iu[0], iu[1])
    d = lift.dim
    lvl1 = incs[0]
    lvl2 = incs[1].reshape(-1, d, d)
    sym = 0.5 * (lvl2 + np.transpose(lvl2, (0, 2, 1)))
    outer = 0.5 * np.einsum("bi,bj->bij", lvl1, lvl1)
    return float(np.max(np.linalg.norm((sym - outer).reshape(len(lvl1), -1), axis=1)))
