"""Two-sided Gaussian sample paths and covariance diagnostics.

Sampling is exact in law: the covariance matrix of the requested grid,
minus the node pinned at time zero, is factorized once and the factor is
reused across replications.  Replication seeds come from a counter-based
split of the root seed, so results are reproducible given (seed, grid)
and replications are independent.

The two-dimensional rho-variation of a covariance kernel is estimated on
finite grids: exhaustively for small grids, by alternating partition
optimization for larger ones.  Either way the returned value is attained
by an explicit pair of partitions, hence a certified lower bound of the
supremum over all partitions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ArgumentError, NumericalError
from .paths import PiecewiseLinearPath, SampledRoughPath, piecewise_linear_projection, signature_lift

# Dense Cholesky of the full two-sided grid: keep factorizations tractable.
MAX_CHOLESKY_NODES = 4096

# Grids above this size switch from exhaustive search to coordinate ascent.
_EXHAUSTIVE_GRID_LIMIT = 10

_GRID_COST_GUARD = 64


@dataclass(frozen=True)
class CovarianceKernel:
    """Covariance function R(s, t) of a centered scalar process.

    ``eval`` must accept numpy arrays and broadcast; ``name`` and
    ``params`` identify the kernel in configs and diagnostics.
    """

    eval: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str
    params: dict = field(default_factory=dict)

    def matrix(self, times: Sequence[float]) -> np.ndarray:
        """Symmetrized covariance matrix on the given times.

        Raises if the raw evaluation deviates from symmetry by more than
        1e-12 relative to the overall scale.
        """
        t = np.asarray(times, dtype=float)
        raw = np.asarray(self.eval(t[:, None], t[None, :]), dtype=float)
        sym = 0.5 * (raw + raw.T)
        scale = max(1.0, float(np.max(np.abs(sym))) if sym.size else 1.0)
        skew = float(np.max(np.abs(raw - sym))) if sym.size else 0.0
        if skew > 1e-12 * scale:
            raise NumericalError(
                "covariance kernel is not symmetric",
                kernel=self.name,
                max_asymmetry=skew,
            )
        return sym


def fbm_covariance(hurst: float) -> CovarianceKernel:
    """Fractional Brownian motion covariance with the given Hurst index.

    R(s, t) = (|s|^2H + |t|^2H - |t - s|^2H) / 2 on the whole line, the
    unique covariance of a centered process with stationary increments,
    value 0 at time 0 and variance |t|^2H.
    """
    h = float(hurst)
    if not 0.0 < h < 1.0:
        raise ArgumentError("hurst index must lie in (0, 1)", hurst=h)

    def r(s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        two_h = 2.0 * h
        return 0.5 * (np.abs(s) ** two_h + np.abs(t) ** two_h - np.abs(t - s) ** two_h)

    return CovarianceKernel(eval=r, name="fbm", params={"hurst": h})


def brownian_covariance() -> CovarianceKernel:
    """Two-sided Brownian covariance; equals min(s, t) for s, t >= 0."""
    base = fbm_covariance(0.5)
    return CovarianceKernel(eval=base.eval, name="bm", params={"hurst": 0.5})


def make_kernel(name: str, **params: float) -> CovarianceKernel:
    """Look up a covariance kernel by registry name."""
    key = name.lower()
    if key == "fbm":
        if "hurst" not in params:
            raise ArgumentError("fbm kernel requires a hurst parameter", name=name)
        return fbm_covariance(params["hurst"])
    if key in ("bm", "brownian"):
        return brownian_covariance()
    raise ArgumentError("unknown covariance kernel", name=name)


@dataclass(frozen=True)
class GaussianSampleConfig:
    """Equidistant sampling grid, component count, and root seed.

    The grid must contain time 0; the node there is pinned to the exact
    value 0 rather than sampled.
    """

    times: np.ndarray
    dim: int = 1
    seed: int = 0
    method: str = "cholesky"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ArgumentError("grid must be a 1-d array with at least two nodes")
        dt = np.diff(t)
        if np.any(dt <= 0.0):
            raise ArgumentError("grid times must be strictly increasing")
        span = float(t[-1] - t[0])
        if float(np.max(dt) - np.min(dt)) > 1e-9 * span:
            raise ArgumentError(
                "grid must be equidistant",
                min_spacing=float(np.min(dt)),
                max_spacing=float(np.max(dt)),
            )
        zero = int(np.argmin(np.abs(t)))
        if abs(float(t[zero])) > 1e-12 * span:
            raise ArgumentError("grid must contain time 0", nearest=float(t[zero]))
        t = t.copy()
        t[zero] = 0.0
        t.flags.writeable = False
        object.__setattr__(self, "times", t)
        if int(self.dim) < 1:
            raise ArgumentError("dim must be a positive integer", dim=self.dim)
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "seed", int(self.seed))
        if self.method != "cholesky":
            raise ArgumentError("unsupported sampling method", method=self.method)
        if t.size - 1 > MAX_CHOLESKY_NODES:
            raise ArgumentError(
                "grid exceeds the dense factorization guard",
                nodes=int(t.size - 1),
                limit=MAX_CHOLESKY_NODES,
            )

    @property
    def spacing(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def zero_index(self) -> int:
        return int(np.argmin(np.abs(self.times)))


def uniform_grid(t_min: float, t_max: float, n_steps: int) -> np.ndarray:
    """Equidistant grid of n_steps + 1 nodes on [t_min, t_max] hitting 0."""
    a, b = float(t_min), float(t_max)
    n = int(n_steps)
    if not b > a:
        raise ArgumentError("empty time interval", t_min=a, t_max=b)
    if n < 1:
        raise ArgumentError("need at least one step", n_steps=n_steps)
    if not a <= 0.0 <= b:
        raise ArgumentError("interval must contain time 0", t_min=a, t_max=b)
    spacing = (b - a) / n
    k = (0.0 - a) / spacing
    if abs(k - round(k)) > 1e-9:
        raise ArgumentError(
            "time 0 does not land on a grid node",
            t_min=a,
            t_max=b,
            n_steps=n,
        )
    t = a + spacing * np.arange(n + 1)
    t[int(round(k))] = 0.0
    t[-1] = b
    return t


def _factor_covariance(c: np.ndarray, kernel_name: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        pass
    smallest = float(np.linalg.eigvalsh(c)[0])
    if smallest < -1e-8:
        raise NumericalError(
            "covariance matrix is not positive semidefinite",
            smallest_eigenvalue=smallest,
            kernel=kernel_name,
        )
    jitter = max(-smallest, 0.0) + 1e-14 * max(1.0, float(np.trace(c)) / len(c))
    for _ in range(3):
        try:
            return np.linalg.cholesky(c + jitter * np.eye(len(c)))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(
        "covariance factorization failed even with jitter",
        smallest_eigenvalue=smallest,
        kernel=kernel_name,
    )


def sample_gaussian_values(
    kernel: CovarianceKernel,
    config: GaussianSampleConfig,
    count: int = 1,
) -> np.ndarray:
    """Sampled node values, shape (count, len(times), dim).

    Replication i uses the i-th child of the root seed's split, so
    prefixes of a larger batch reproduce exactly.
    """
    if count < 1:
        raise ArgumentError("count must be positive", count=count)
    zero = config.zero_index
    reduced = np.delete(config.times, zero)
    cov = kernel.matrix(reduced)
    factor = _factor_covariance(cov, kernel.name)
    m = reduced.size
    children = np.random.SeedSequence(config.seed).spawn(count)
    draws = np.empty((count, m, config.dim))
    for i, child in enumerate(children):
        draws[i] = np.random.default_rng(child).standard_normal((m, config.dim))
    values = np.einsum("ij,cjd->cid", factor, draws)
    return np.insert(values, zero, 0.0, axis=1)


def sample_gaussian_paths(
    kernel: CovarianceKernel,
    config: GaussianSampleConfig,
    count: int = 1,
) -> list:
    """Independent sample paths, linearly interpolated between grid nodes."""
    values = sample_gaussian_values(kernel, config, count)
    return [PiecewiseLinearPath(config.times, values[i]) for i in range(count)]


def sample_gaussian_path(
    kernel: CovarianceKernel,
    config: GaussianSampleConfig,
) -> PiecewiseLinearPath:
    """Single sample path; equals the first entry of a batch of one."""
    return sample_gaussian_paths(kernel, config, 1)[0]


def _rect_sum(row_diffed: np.ndarray, cols: np.ndarray, rho: float) -> float:
    cells = np.diff(row_diffed[:, cols], axis=1)
    return float(np.sum(np.abs(cells) ** rho))


def _rho_var_exhaustive(cov: np.ndarray, rho: float) -> float:
    g = len(cov)
    interior = g - 2
    subsets = []
    for mask in range(1 << interior):
        idx = [0]
        for k in range(interior):
            if mask >> k & 1:
                idx.append(k + 1)
        idx.append(g - 1)
        subsets.append(np.asarray(idx))
    row_diffed = [np.diff(cov[idx], axis=0) for idx in subsets]
    best = 0.0
    for dr in row_diffed:
        for cols in subsets:
            best = max(best, _rect_sum(dr, cols, rho))
    return best


def _best_rows_given_cols(cov: np.ndarray, cols: np.ndarray, rho: float):
    """Partition of the row axis maximizing the rho-sum, by dynamic programming."""
    col_diffed = np.diff(cov[:, cols], axis=1)
    pair = np.sum(
        np.abs(col_diffed[None, :, :] - col_diffed[:, None, :]) ** rho, axis=2
    )
    g = len(cov)
    score = np.full(g, -np.inf)
    score[0] = 0.0
    prev = np.zeros(g, dtype=int)
    for j in range(1, g):
        cand = score[:j] + pair[:j, j]
        best = int(np.argmax(cand))
        score[j] = cand[best]
        prev[j] = best
    idx = [g - 1]
    while idx[-1] != 0:
        idx.append(int(prev[idx[-1]]))
    return np.asarray(idx[::-1]), float(score[g - 1])


def _rho_var_ascent(cov: np.ndarray, rho: float) -> float:
    g = len(cov)
    cols = np.arange(g)
    best = -np.inf
    for _ in range(60):
        rows, _ = _best_rows_given_cols(cov, cols, rho)
        cols, value = _best_rows_given_cols(cov.T, rows, rho)
        if value <= best * (1.0 + 1e-15) + 1e-300:
            break
        best = value
    return max(best, 0.0)


def rho_variation_2d(
    kernel: CovarianceKernel,
    square,
    rho: float,
    grid_n: int,
) -> float:
    """Grid-restricted 2-d rho-variation of the kernel on square x square.

    Partitions are drawn from the uniform grid of grid_n nodes.  Small
    grids are searched exhaustively; larger ones run an alternating
    row/column partition ascent.  The result is attained by an explicit
    partition pair, hence a lower bound of the true supremum.
    """
    s, t = (float(square[0]), float(square[1]))
    if not t > s:
        raise ArgumentError("square must have positive side", start=s, stop=t)
    rho = float(rho)
    if rho < 1.0:
        raise ArgumentError("rho must be at least 1", rho=rho)
    grid_n = int(grid_n)
    if grid_n < 2:
        raise ArgumentError("need at least two grid nodes", grid_n=grid_n)
    if grid_n > _GRID_COST_GUARD:
        raise ArgumentError(
            "grid size exceeds the cost guard",
            grid_n=grid_n,
            limit=_GRID_COST_GUARD,
        )
    grid = np.linspace(s, t, grid_n)
    cov = kernel.matrix(grid)
    if grid_n <= _EXHAUSTIVE_GRID_LIMIT:
        best = _rho_var_exhaustive(cov, rho)
    else:
        best = _rho_var_ascent(cov, rho)
    return best ** (1.0 / rho)


def rho_variation_scaling(
    kernel: CovarianceKernel,
    rho: float,
    depth: int = 4,
    grid_n: int = 9,
    base_square=(0.0, 1.0),
) -> dict:
    """Rho-variation on nested squares [a, a + side]^2 with halving sides.

    Returns sides, values, the fitted log-log slope, and the empirical
    constant max(value / side^(1/rho)).  Purely diagnostic: no reference
    value for the constant is asserted anywhere.
    """
    a, b = float(base_square[0]), float(base_square[1])
    sides = (b - a) * 0.5 ** np.arange(int(depth))
    values = np.array(
        [rho_variation_2d(kernel, (a, a + side), rho, grid_n) for side in sides]
    )
    positive = values > 0.0
    if np.count_nonzero(positive) >= 2:
        slope = float(
            np.polyfit(np.log(sides[positive]), np.log(values[positive]), 1)[0]
        )
    else:
        slope = float("nan")
    constant = float(np.max(values / sides ** (1.0 / rho)))
    return {
        "sides": [float(v) for v in sides],
        "values": [float(v) for v in values],
        "slope": slope,
        "constant": constant,
    }


def dyadic_grid(level: int, span=(0.0, 1.0)) -> np.ndarray:
    """Nodes k 2^-level inside [a, b]; endpoints must be such nodes."""
    level = int(level)
    if level < 0:
        raise ArgumentError("dyadic level must be nonnegative", level=level)
    a, b = float(span[0]), float(span[1])
    if not b > a:
        raise ArgumentError("empty span", start=a, stop=b)
    spacing = 2.0 ** (-level)
    ka, kb = a / spacing, b / spacing
    if abs(ka - round(ka)) > 1e-9 or abs(kb - round(kb)) > 1e-9:
        raise ArgumentError(
            "span endpoints are not dyadic at this level",
            start=a,
            stop=b,
            level=level,
        )
    return np.arange(round(ka), round(kb) + 1, dtype=float) * spacing


def dyadic_lift_sequence(
    x: PiecewiseLinearPath,
    levels: Sequence[int],
    level_count: int = 2,
    p: float = 2.5,
) -> list:
    """Signature lifts of dyadic piecewise-linear projections of a path.

    For each requested dyadic level n the path is projected onto the grid
    of spacing 2^-n over its span and lifted to level_count tensor
    levels.  The sequence approximates the limiting rough-path lift; the
    antisymmetric part of the second level carries the running area.
    """
    if not isinstance(x, PiecewiseLinearPath):
        raise ArgumentError("expected a piecewise-linear path")
    span = (float(x.times[0]), float(x.times[-1]))
    data_spacing = float(np.max(np.diff(x.times)))
    lifts = []
    for n in levels:
        spacing = 2.0 ** (-int(n))
        if data_spacing > spacing * (1.0 + 1e-9):
            raise ArgumentError(
                "requested dyadic level is finer than the sampled data",
                level=int(n),
                data_spacing=data_spacing,
            )
        grid = dyadic_grid(int(n), span)
        projected = piecewise_linear_projection(x, grid)
        lifts.append(signature_lift(projected, level_count, p=p))
    return lifts
