"""Truncated tensor group over R^d.

Group elements are formal series 1 + a_1 + ... + a_N with a_k in (R^d)^{tensor k},
truncated beyond level N.  The scalar level is pinned to 1 and never stored; level
k is a dense float64 array of shape (d,)*k whose C-order flattening is the
lexicographic coefficient order used by the JSON form.

The flat norm is the maximum over levels (including the scalar 1) of the level
Frobenius norm.  Frobenius is compatible with the tensor product in the exact
sense |v (x) w| = |v| |w|, which several invariants below rely on.

Batched variants (leading axis = batch) back the all-pairs/all-triples
verification routines; they share the arithmetic with the scalar API.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ArgumentError

# Dense storage grows like d**N; level 4 is the supported ceiling.
MAX_LEVEL = 4

__all__ = [
    "MAX_LEVEL",
    "GroupElement",
    "identity_element",
    "segment_exponential",
    "tensor_mul",
    "tensor_inv",
    "flat_norm",
    "group_distance",
    "homogeneous_gauge",
    "group_log",
    "group_exp",
    "geodesic_point",
]


def _check_level(level: int) -> None:
    if not isinstance(level, (int, np.integer)) or level < 1:
        raise ArgumentError("truncation level must be a positive integer", level=level)
    if level > MAX_LEVEL:
        raise ArgumentError("truncation level above supported ceiling", level=level, max_level=MAX_LEVEL)


class GroupElement:
    """Point of the truncated tensor group with unit scalar part."""

    __slots__ = ("dim", "level", "levels")

    def __init__(self, dim: int, level: int, levels):
        _check_level(level)
        if dim < 1:
            raise ArgumentError("dimension must be positive", dim=dim)
        if len(levels) != level:
            raise ArgumentError("wrong number of level arrays", expected=level, got=len(levels))
        stored = []
        for k, arr in enumerate(levels, start=1):
            a = np.asarray(arr, dtype=float)
            want = (dim,) * k
            if a.shape != want:
                if a.size == dim**k:
                    a = a.reshape(want)
                else:
                    raise ArgumentError("level array has wrong shape", level=k, expected=want, got=a.shape)
            if not np.all(np.isfinite(a)):
                raise ArgumentError("non-finite coefficients", level=k)
            stored.append(a)
        self.dim = int(dim)
        self.level = int(level)
        self.levels = tuple(stored)

    def piece(self, k: int):
        """Level-k part; k = 0 returns the scalar 1.0."""
        if k == 0:
            return 1.0
        return self.levels[k - 1]

    def __repr__(self) -> str:
        return f"GroupElement(dim={self.dim}, level={self.level})"

    def to_json_dict(self) -> dict:
        return {
            "dim": self.dim,
            "level": self.level,
            "levels": [lvl.reshape(-1).tolist() for lvl in self.levels],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "GroupElement":
        return cls(int(doc["dim"]), int(doc["level"]), doc["levels"])


def identity_element(dim: int, level: int) -> GroupElement:
    return GroupElement(dim, level, [np.zeros((dim,) * k) for k in range(1, level + 1)])


def segment_exponential(increment, level: int) -> GroupElement:
    """Group exponential of a single linear segment with value increment v.

    Level k is v^{tensor k} / k!; for one segment this is the exact lift.
    """
    v = np.asarray(increment, dtype=float).reshape(-1)
    levels = []
    power = v.copy()
    levels.append(power)
    for k in range(2, level + 1):
        power = np.multiply.outer(power, v) / k
        levels.append(power)
    return GroupElement(v.size, level, levels)


def _check_pair(g: GroupElement, h: GroupElement) -> None:
    if g.dim != h.dim or g.level != h.level:
        raise ArgumentError(
            "group elements live in different truncated groups",
            left=(g.dim, g.level),
            right=(h.dim, h.level),
        )


def tensor_mul(g: GroupElement, h: GroupElement) -> GroupElement:
    """Truncated tensor product: level k of g (x) h is sum_i g_i (x) h_{k-i}."""
    _check_pair(g, h)
    out = []
    for k in range(1, g.level + 1):
        acc = g.levels[k - 1] + h.levels[k - 1]  # i = k and i = 0 terms
        for i in range(1, k):
            acc = acc + np.multiply.outer(g.levels[i - 1], h.levels[k - i - 1])
        out.append(acc)
    return GroupElement(g.dim, g.level, out)


def _nilpotent_mul(a, b, level):
    """Product of two series with zero scalar part (levels as lists, 1-indexed)."""
    out = [None] * level
    for k in range(2, level + 1):
        acc = None
        for i in range(1, k):
            if a[i - 1] is None or b[k - i - 1] is None:
                continue
            term = np.multiply.outer(a[i - 1], b[k - i - 1])
            acc = term if acc is None else acc + term
        out[k - 1] = acc
    return out


def tensor_inv(g: GroupElement) -> GroupElement:
    """Group inverse via the truncated Neumann series (1 + a)^{-1} = sum (-a)^j."""
    neg = [-lvl for lvl in g.levels]
    total = [lvl.copy() for lvl in neg]
    power = neg
    for _ in range(2, g.level + 1):
        power = _nilpotent_mul(power, neg, g.level)
        for k in range(g.level):
            if power[k] is not None:
                total[k] = total[k] + power[k]
    return GroupElement(g.dim, g.level, total)


def flat_norm(g: GroupElement) -> float:
    """max over levels 0..N of the level Frobenius norm (level 0 is the scalar 1)."""
    best = 1.0
    for lvl in g.levels:
        best = max(best, float(np.linalg.norm(lvl.reshape(-1))))
    return best


def group_distance(g: GroupElement, h: GroupElement) -> float:
    """Flat norm of the difference g - h (the scalar parts cancel)."""
    _check_pair(g, h)
    best = 0.0
    for a, b in zip(g.levels, h.levels):
        best = max(best, float(np.linalg.norm((a - b).reshape(-1))))
    return best


def homogeneous_gauge(g: GroupElement) -> float:
    """max_k |pi_k(g)|^{1/k}; scales linearly under dilation of the underlying path."""
    best = 0.0
    for k, lvl in enumerate(g.levels, start=1):
        best = max(best, float(np.linalg.norm(lvl.reshape(-1))) ** (1.0 / k))
    return best


def group_log(g: GroupElement):
    """Truncated series log(1 + a) = a - a^2/2 + a^3/3 - ...; returns level arrays."""
    a = [lvl.copy() for lvl in g.levels]
    total = [lvl.copy() for lvl in a]
    power = a
    sign = -1.0
    for j in range(2, g.level + 1):
        power = _nilpotent_mul(power, a, g.level)
        coeff = sign / j
        for k in range(g.level):
            if power[k] is not None:
                total[k] = total[k] + coeff * power[k]
        sign = -sign
    return total


def group_exp(levels, dim: int, level: int) -> GroupElement:
    """Truncated exp of a series with zero scalar part (inverse of group_log)."""
    a = [np.zeros((dim,) * k) if levels[k - 1] is None else np.asarray(levels[k - 1], dtype=float)
         for k in range(1, level + 1)]
    total = [lvl.copy() for lvl in a]
    power = a
    for j in range(2, level + 1):
        power = _nilpotent_mul(power, a, level)
        coeff = 1.0 / math.factorial(j)
        for k in range(level):
            if power[k] is not None:
                total[k] = total[k] + coeff * power[k]
    return GroupElement(dim, level, total)


def geodesic_point(g0: GroupElement, g1: GroupElement, frac: float) -> GroupElement:
    """Point at parameter frac on the one-parameter geodesic from g0 to g1.

    Realized as g0 (x) exp(frac * log(g0^{-1} (x) g1)); frac = 0 and 1 return the
    endpoints up to rounding.
    """
    inc = tensor_mul(tensor_inv(g0), g1)
    log_levels = group_log(inc)
    scaled = [frac * lvl for lvl in log_levels]
    return tensor_mul(g0, group_exp(scaled, g0.dim, g0.level))


# ---------------------------------------------------------------------------
# Batched arithmetic: levels stored flat as arrays of shape (B, d**k).
# Used by the all-pairs / all-triples verification sweeps where per-element
# Python dispatch would dominate the runtime.
# ---------------------------------------------------------------------------


def batch_identity(batch: int, dim: int, level: int):
    return [np.zeros((batch, dim**k)) for k in range(1, level + 1)]


def batch_from_elements(elements) -> list:
    """Stack GroupElements (same dim/level) into batched flat level arrays."""
    first = elements[0]
    for g in elements:
        _check_pair(first, g)
    return [
        np.stack([g.levels[k].reshape(-1) for g in elements])
        for k in range(first.level)
    ]


def batch_element(levels, index: int, dim: int) -> GroupElement:
    n = len(levels)
    return GroupElement(dim, n, [levels[k][index].reshape((dim,) * (k + 1)) for k in range(n)])


def batch_mul(a, b, dim: int):
    level = len(a)
    out = []
    for k in range(1, level + 1):
        acc = a[k - 1] + b[k - 1]
        for i in range(1, k):
            left = a[i - 1]
            right = b[k - i - 1]
            prod = np.einsum("bi,bj->bij", left, right).reshape(left.shape[0], -1)
            acc = acc + prod
        out.append(acc)
    return out


def _batch_nilpotent_mul(a, b, dim: int):
    level = len(a)
    out = [None] * level
    for k in range(2, level + 1):
        acc = None
        for i in range(1, k):
            if a[i - 1] is None or b[k - i - 1] is None:
                continue
            prod = np.einsum("bi,bj->bij", a[i - 1], b[k - i - 1]).reshape(a[i - 1].shape[0], -1)
            acc = prod if acc is None else acc + prod
        out[k - 1] = acc
    return out


def batch_inv(a, dim: int):
    level = len(a)
    neg = [-lvl for lvl in a]
    total = [lvl.copy() for lvl in neg]
    power = neg
    for _ in range(2, level + 1):
        power = _batch_nilpotent_mul(power, neg, dim)
        for k in range(level):
            if power[k] is not None:
                total[k] = total[k] + power[k]
    return total


def batch_segment_exponential(increments, level: int):
    v = np.asarray(increments, dtype=float)
    if v.ndim != 2:
        raise ArgumentError("expected a (batch, dim) increment array", shape=v.shape)
    levels = [v.copy()]
    power = v
    for k in range(2, level + 1):
        power = np.einsum("bi,bj->bij", power.reshape(v.shape[0], -1), v).reshape(v.shape[0], -1) / k
        levels.append(power)
    return levels


def batch_distance(a, b):
    """Per-element flat norm of the difference; returns shape (B,)."""
    best = None
    for x, y in zip(a, b):
        norms = np.linalg.norm(x - y, axis=1)
        best = norms if best is None else np.maximum(best, norms)
    return best


def batch_gather(levels, indices):
    return [lvl[indices] for lvl in levels]
