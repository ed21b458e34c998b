"""Acceptance suite: one test per shipped guarantee, tolerances pinned.

Each test states a user-facing promise of the library (group laws, Chen
and geometricity of lifts, cocycle behaviour of shifts, driver axioms,
solver accuracy, drift transformation, Lyapunov estimation, end-to-end
determinism) and verifies it at desk scale against independent oracles.
Run with -v to get one pass/fail line per guarantee.
"""

import json
import math
import time

import numpy as np
import pytest
import scipy.linalg

from oracles import pvar_exhaustive, rho_var_2d_exhaustive
from roughflow.cli import main as cli_main
from roughflow.cocycle import (
    dyadic_noise,
    noise_from_path,
    regenerated_shift,
    cocycle_residual,
    weak_cocycle_residual,
)
from roughflow.drivers import (
    ConstantField,
    DecayField,
    LinearField,
    VectorFieldFamily,
    corrupt_driver_cell,
    decay_fields,
    decaying_linear_fields,
    driver_additivity_residual,
    driver_chen_residual,
    driver_cocycle_residual,
    driver_from_rough_path,
    driver_leibniz_residual,
    gaussian_driver,
    shear_pair_fields,
)
from roughflow.gaussian import (
    brownian_covariance,
    fbm_covariance,
    rho_variation_2d,
    rho_variation_scaling,
)
from roughflow.paths import (
    PiecewiseLinearPath,
    chen_residual_max,
    geometricity_residual_max,
    p_variation,
    shift_path,
    signature_lift,
)
from roughflow.rde import (
    DriftSpec,
    RDEProblem,
    SolverControl,
    drift_transform_solve,
    rds_cocycle_residual,
    solve_rde,
    top_lyapunov_estimate,
)
from roughflow.tensor_algebra import (
    GroupElement,
    batch_distance,
    batch_identity,
    batch_inv,
    batch_mul,
    group_distance,
    identity_element,
    tensor_inv,
    tensor_mul,
)

import roughflow

CONFIG_DIR = __import__("pathlib").Path(roughflow.__file__).parent / "configs"


# ----------------------------------------------------------------- helpers


def _random_times(rng, nodes, lo=0.02, hi=0.5):
    return np.concatenate([[0.0], np.cumsum(rng.uniform(lo, hi, size=nodes - 1))])


def _smooth_path_1d(n=1025, span=(0.0, 1.0), amp=0.3, drift=0.5):
    t = np.linspace(span[0], span[1], n)
    vals = amp * np.sin(2.0 * np.pi * t) + drift * t
    return PiecewiseLinearPath(t, vals[:, None])


def _line_path(n=129, span=(0.0, 1.0)):
    t = np.linspace(span[0], span[1], n)
    return PiecewiseLinearPath(t, t[:, None])


def _brownian_path(seed, n, span, dim=1, scale=1.0):
    rng = np.random.default_rng(seed)
    t = np.linspace(span[0], span[1], n)
    steps = rng.normal(scale=scale * math.sqrt(t[1] - t[0]), size=(n, dim))
    steps[0] = 0.0
    return PiecewiseLinearPath(t, np.cumsum(steps, axis=0))


def _brownian_lift(seed, nodes=17, dim=2, span=(0.0, 1.0), scale=0.3, p=2.2):
    rng = np.random.default_rng(seed)
    t = np.linspace(span[0], span[1], nodes)
    vals = np.cumsum(rng.normal(scale=scale, size=(nodes, dim)), axis=0)
    return signature_lift(PiecewiseLinearPath(t, vals), 2, p=p)


def _scalar_family(matrix=((1.0,),)):
    return VectorFieldFamily([LinearField(matrix)])


def _rand_batch(rng, count, dim, level):
    return [rng.uniform(-1.0, 1.0, size=(count, dim**k)) for k in range(1, level + 1)]


# ------------------------------------------------------------- guarantees


def test_c01_tensor_group_laws():
    # associativity and two-sided inverses on 10^4 random triples, d<=4, N<=3
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst_assoc = worst_inv = 0.0
    per = 850  # 12 (d, N) combos x 850 = 10200 triples
    for dim in (1, 2, 3, 4):
        for level in (1, 2, 3):
            g = _rand_batch(rng, per, dim, level)
            h = _rand_batch(rng, per, dim, level)
            k = _rand_batch(rng, per, dim, level)
            lhs = batch_mul(batch_mul(g, h, dim), k, dim)
            rhs = batch_mul(g, batch_mul(h, k, dim), dim)
            worst_assoc = max(worst_assoc, float(np.max(batch_distance(lhs, rhs))))
            inv = batch_inv(g, dim)
            ident = batch_identity(per, dim, level)
            for prod in (batch_mul(g, inv, dim), batch_mul(inv, g, dim)):
                worst_inv = max(worst_inv, float(np.max(batch_distance(prod, ident))))
    # tie the batch route to the per-element route on a spot sample
    for _ in range(50):
        dim, level = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        g, h, k = (
            GroupElement(
                dim, level, [rng.uniform(-1, 1, (dim,) * j) for j in range(1, level + 1)]
            )
            for _ in range(3)
        )
        worst_assoc = max(
            worst_assoc,
            group_distance(tensor_mul(tensor_mul(g, h), k), tensor_mul(g, tensor_mul(h, k))),
        )
        worst_inv = max(
            worst_inv,
            group_distance(tensor_mul(g, tensor_inv(g)), identity_element(dim, level)),
        )
    elapsed = time.perf_counter() - start
    assert worst_assoc < 1e-12
    assert worst_inv < 1e-12
    assert elapsed < 5.0


def test_c02_chen_and_geometricity_of_lifts():
    # 10^3 random piecewise-linear paths, <=32 breakpoints, d<=3, N in {2,3}
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    worst_chen = worst_geo = 0.0
    for i in range(1000):
        nodes = int(rng.integers(3, 34))
        dim = int(rng.integers(1, 4))
        level = 2 if i % 2 else 3
        t = _random_times(rng, nodes)
        vals = np.cumsum(rng.normal(scale=0.4, size=(nodes, dim)), axis=0)
        lift = signature_lift(PiecewiseLinearPath(t, vals), level)
        worst_chen = max(worst_chen, chen_residual_max(lift))
        worst_geo = max(worst_geo, geometricity_residual_max(lift))
    elapsed = time.perf_counter() - start
    assert worst_chen < 1e-12
    assert worst_geo < 1e-10
    assert elapsed < 30.0


def test_c03_shift_identity_on_lifted_increments():
    # S(theta_h x)_{s-h,t-h} = S(x)_{s,t} at breakpoint-aligned h, 200 cases
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(200):
        nodes = int(rng.integers(5, 18))
        dim = int(rng.integers(1, 4))
        t = _random_times(rng, nodes, lo=0.05, hi=0.5)
        vals = np.cumsum(rng.normal(scale=0.5, size=(nodes, dim)), axis=0)
        x = PiecewiseLinearPath(t, vals)
        j = int(rng.integers(1, nodes - 1))
        h = float(t[j])
        lift = signature_lift(x, 2)
        lift_shifted = signature_lift(shift_path(x, h), 2)
        for _ in range(3):
            a, b = np.sort(rng.choice(np.arange(j, nodes), size=2, replace=False))
            worst = max(
                worst,
                group_distance(
                    lift.increment(float(t[a]), float(t[b])),
                    lift_shifted.increment(float(t[a]) - h, float(t[b]) - h),
                ),
            )
    assert worst < 1e-12


def test_c04_pvariation_dp_matches_exhaustive_enumeration():
    # 500 paths, <=14 breakpoints, against full subset enumeration
    rng = np.random.default_rng(404)
    for i in range(500):
        nodes = 15 if i % 25 == 0 else int(rng.integers(4, 13))
        dim = int(rng.integers(1, 4))
        t = _random_times(rng, nodes)
        vals = rng.normal(scale=1.0, size=(nodes, dim))
        x = PiecewiseLinearPath(t, vals)
        for p in (1.0, 1.5, 2.0, 2.5):
            assert p_variation(x, p) == pytest.approx(
                pvar_exhaustive(x.values, p), rel=1e-12
            )


def test_c05_dyadic_fbm_lift_cocycle():
    # aligned shifts hold at every level; an off-grid shift genuinely fails
    start = time.perf_counter()
    worst_aligned = 0.0
    for hi, hurst in enumerate((0.4, 0.5, 0.75)):
        kernel = fbm_covariance(hurst)
        for level in (4, 5, 6, 7):
            noise = dyadic_noise(
                kernel, level, dim=2, seed=50 + hi, level_count=2, p=2.6
            )[0]
            for s, t in ((0.25, 0.5), (-0.375, 0.5), (0.125, 0.25)):
                # dual route: group shift vs re-lift of the stored path
                res = cocycle_residual(noise, s, t, shifted=regenerated_shift(noise, s))
                worst_aligned = max(worst_aligned, res)
        coarse = dyadic_noise(kernel, 4, dim=2, seed=90 + hi, level_count=2, p=2.6)[0]
        for h in (0.2371, -0.2371):
            assert weak_cocycle_residual(coarse.path, 2.0**-4, h, p=2.6) > 1e-4
    elapsed = time.perf_counter() - start
    assert worst_aligned < 1e-10
    assert elapsed < 120.0


def test_c06_two_parameter_rho_variation():
    # Brownian kernel on the unit square at rho=1 has variation exactly 1
    value = rho_variation_2d(brownian_covariance(), (0.0, 1.0), 1.0, 8)
    assert abs(value - 1.0) < 1e-12
    grid = np.linspace(0.0, 1.0, 8)
    oracle = rho_var_2d_exhaustive(brownian_covariance().matrix(grid), 1.0)
    assert abs(value - oracle) < 1e-12
    # fBm H=0.4: diagonal-square scaling exponent near 1/rho = 2H = 0.8
    report = rho_variation_scaling(fbm_covariance(0.4), 1.25, depth=4, grid_n=9)
    assert abs(report["slope"] - 0.8) <= 0.15 * 0.8


def test_c07_driver_axioms_and_fault_injection():
    rng = np.random.default_rng(707)
    pts = rng.uniform(-2.0, 2.0, size=(100, 2))
    drivers = [
        driver_from_rough_path(shear_pair_fields(), _brownian_lift(701, nodes=17)),
        driver_from_rough_path(
            VectorFieldFamily([LinearField([[0.3, 1.0], [-1.0, 0.3]])]),
            _brownian_lift(703, nodes=17, dim=1),
        ),
        gaussian_driver(
            decay_fields(3, 2, eta=1.0, seed=7), _brownian_lift(702, nodes=17, dim=3), 3
        ),
    ]
    for driver in drivers:
        g = driver.grid
        s, u, t = float(g[2]), float(g[len(g) // 2]), float(g[-3])
        assert driver_additivity_residual(driver, s, u, t, pts) < 1e-10
        assert driver_chen_residual(driver, s, u, t, pts) < 1e-8
        assert driver_leibniz_residual(driver, s, t, pts) < 1e-6
    clean = drivers[0]
    g = clean.grid
    bad = corrupt_driver_cell(clean, float(g[2]), float(g[12]), [0.01, -0.006])
    assert driver_chen_residual(bad, float(g[2]), float(g[7]), float(g[12]), pts) > 1e-3


def test_c08_gaussian_driver_series_and_shift_cocycle():
    start = time.perf_counter()
    rng = np.random.default_rng(808)
    t = np.linspace(0.0, 1.0, 65)
    betas = signature_lift(
        PiecewiseLinearPath(t, np.cumsum(rng.normal(scale=0.25, size=(65, 12)), axis=0)),
        2,
        p=2.5,
    )
    sigma = decaying_linear_fields(12, 2, decay=0.5, seed=8)
    pts = rng.uniform(-2.0, 2.0, size=(12, 2))
    windows = [(0.0, 0.5), (0.25, 1.0), (0.0, 1.0)]
    truncated = {k: gaussian_driver(sigma, betas, truncation=k) for k in (4, 8, 12)}

    def sup_change(small, large, op):
        return max(
            float(np.max(np.abs(getattr(large, op)(s, u, pts) - getattr(small, op)(s, u, pts))))
            for s, u in windows
        )

    for op in ("V", "W"):
        gap_4_to_8 = sup_change(truncated[4], truncated[8], op)
        gap_8_to_12 = sup_change(truncated[8], truncated[12], op)
        assert gap_8_to_12 <= gap_4_to_8 / 4.0

    # shift cocycle of the driver at grid-aligned h, series and plain builds
    t2 = np.linspace(-1.0, 1.0, 17)
    noise12 = noise_from_path(
        PiecewiseLinearPath(t2, np.cumsum(rng.normal(scale=0.2, size=(17, 12)), axis=0)),
        2,
        p=2.5,
    )
    noise2 = noise_from_path(
        PiecewiseLinearPath(t2, np.cumsum(rng.normal(scale=0.3, size=(17, 2)), axis=0)),
        2,
        p=2.2,
    )
    assert driver_cocycle_residual(sigma, noise12, 0.25, 0.0, 0.5, pts) < 1e-8
    assert driver_cocycle_residual(shear_pair_fields(), noise2, 0.25, 0.0, 0.5, pts) < 1e-8
    elapsed = time.perf_counter() - start
    assert elapsed < 120.0


def test_c09_rde_exponential_solutions_and_convergence_order():
    # scalar exponential at step 1e-3
    path = _smooth_path_1d(n=1025, amp=0.2, drift=0.5)
    lift = signature_lift(path, 2)
    sol = solve_rde(RDEProblem(_scalar_family(), lift, np.array([1.0]), (0.0, 1.0)), 1e-3)
    exact_terminal = math.exp(path.value(1.0)[0] - path.value(0.0)[0])
    assert abs(sol.states[-1, 0] - exact_terminal) < 1e-6

    # matrix exponential along a straight line
    a_mat = np.array([[0.0, 1.0], [-1.0, 0.0]])
    sigma = VectorFieldFamily([LinearField(a_mat)])
    y0 = np.array([1.0, 0.5])
    sol2 = solve_rde(
        RDEProblem(sigma, signature_lift(_line_path(n=2), 2), y0, (0.0, 1.0)), 1e-3
    )
    assert np.max(np.abs(sol2.states[-1] - scipy.linalg.expm(a_mat) @ y0)) < 1e-6

    # empirical order on a smooth driver
    exact = scipy.linalg.expm(a_mat) @ y0
    steps = [2.0**-k for k in range(4, 10)]
    errors = []
    for step in steps:
        sol3 = solve_rde(
            RDEProblem(sigma, signature_lift(_line_path(n=2), 2), y0, (0.0, 1.0)), step
        )
        errors.append(np.max(np.abs(sol3.states[-1] - exact)))
    slope = np.polyfit(np.log2(steps), np.log2(errors), 1)[0]
    assert slope >= 1.9


def test_c10_taylor_remainder_exponent():
    # whole-cell error vs a much finer solve over dyadic spans 2^-4 .. 2^-9
    p = 2.2
    lift = signature_lift(_brownian_path(11, 2**12 + 1, (0.0, 1.0), dim=2, scale=0.5), 2, p=p)
    sigma = VectorFieldFamily(
        [DecayField([1.0, 0.3], eta=0.5), DecayField([-0.2, 1.0], eta=1.0)]
    )
    y0 = np.array([0.3, -0.2])
    spans = [2.0**-k for k in range(4, 10)]
    anchors = [0.0, 0.25, 0.375, 0.5]
    errors = []
    for span in spans:
        worst = 0.0
        for s in anchors:
            window = (s, s + span)
            fine = solve_rde(RDEProblem(sigma, lift, y0, window, p=p), span / 256.0)
            one_step = solve_rde(RDEProblem(sigma, lift, y0, window, p=p), span)
            worst = max(worst, float(np.max(np.abs(one_step.states[-1] - fine.states[-1]))))
        errors.append(worst)
    slope = np.polyfit(np.log2(spans), np.log2(errors), 1)[0]
    assert slope >= 3.0 / p - 0.1


def test_c11_drift_transformation():
    # closed form: dy = y dx - y dt gives y_t = y0 exp(x_{0,t} - t)
    path = _smooth_path_1d(n=1025, amp=0.4, drift=0.2)
    lift = signature_lift(path, 2)
    problem = RDEProblem(_scalar_family(), lift, np.array([1.25]), (0.0, 1.0))
    flow = drift_transform_solve(problem, DriftSpec(LinearField([[-1.0]])), 1e-3)
    for t_end in (0.5, 1.0):
        got = flow.map(0.0, t_end, problem.y0)[0]
        exact = 1.25 * math.exp(path.value(t_end)[0] - path.values[0, 0] - t_end)
        assert abs(got - exact) < 1e-5

    # cross-scheme agreement with a joint Euler reference loop
    path2 = _smooth_path_1d(n=1001, amp=0.1, drift=0.2)
    lift2 = signature_lift(path2, 2)
    problem2 = RDEProblem(_scalar_family(), lift2, np.array([1.0]), (0.0, 1.0))
    flow2 = drift_transform_solve(problem2, DriftSpec(LinearField([[-0.1]])), 1e-3)
    y = 1.0
    for k in range(1000):
        dx = path2.values[k + 1, 0] - path2.values[k, 0]
        y = y + y * dx + 0.5 * y * dx * dx - 0.1 * y * 1e-3
    assert abs(flow2.map(0.0, 1.0, problem2.y0)[0] - y) < 1e-4

    # semiflow composition through an arbitrary interior time
    path3 = _smooth_path_1d(n=513, amp=0.3, drift=0.1)
    problem3 = RDEProblem(
        _scalar_family(), signature_lift(path3, 2), np.array([1.0]), (0.0, 1.0)
    )
    flow3 = drift_transform_solve(problem3, DriftSpec(LinearField([[-0.5]])), 2**-6)
    y0 = np.array([0.8])
    through = flow3.map(0.33, 1.0, flow3.map(0.0, 0.33, y0))
    assert np.max(np.abs(through - flow3.map(0.0, 1.0, y0))) < 1e-6


def _shear_flow(step, drift=None):
    t = np.linspace(0.0, 1.0, 1001)
    x = np.stack(
        [0.3 * np.sin(2 * np.pi * t) + 0.2 * t, 0.25 * np.cos(3 * np.pi * t) - 0.25],
        axis=1,
    )
    x -= x[0]
    noise = noise_from_path(PiecewiseLinearPath(t, x), 2, p=2.2)
    problem = RDEProblem(
        shear_pair_fields(), noise.omega, np.array([0.2, -0.4]), (0.0, 1.0), p=2.2,
        noise=noise,
    )
    if drift is None:
        return solve_rde(problem, step).flow
    return drift_transform_solve(problem, drift, step)


def test_c12_rds_cocycle_for_driftless_and_drifted_flows():
    start = time.perf_counter()
    rng = np.random.default_rng(1212)
    pts = rng.uniform(-0.5, 0.5, size=(50, 2))
    driftless = _shear_flow(1e-3)
    assert rds_cocycle_residual(driftless, 0.25, 0.75, 0.25, pts) < 1e-5
    # window covering time zero adds the one-parameter comparison to the max
    assert rds_cocycle_residual(driftless, 0.0, 0.5, 0.25, pts) < 1e-5
    drifted = _shear_flow(5e-3, drift=DriftSpec(LinearField(-np.eye(2))))
    assert rds_cocycle_residual(drifted, 0.0, 0.5, 0.25, pts) < 1e-5
    assert rds_cocycle_residual(drifted, 0.25, 0.75, 0.25, pts) < 1e-5
    elapsed = time.perf_counter() - start
    assert elapsed < 180.0


def test_c13_lyapunov_exponent_sanity():
    # pure contraction: exponent -1 to within 0.01
    t = np.linspace(0.0, 60.0, 61)
    lift = signature_lift(PiecewiseLinearPath(t, np.zeros((61, 1))), 2)
    problem = RDEProblem(
        VectorFieldFamily([ConstantField([0.0])]), lift, np.array([1.0]), (0.0, 60.0)
    )
    flow = drift_transform_solve(
        problem, DriftSpec(LinearField([[-1.0]])), 0.5, SolverControl(drift_substeps=4)
    )
    est = top_lyapunov_estimate([flow], np.array([1.0]))
    assert abs(est.value + 1.0) <= 0.01

    # scalar linear multiplicative noise: exponent 0 within 3 standard errors
    span = (0.0, 100.0)
    nodes = 100 * 128 + 1
    flows = []
    for seed in range(200):
        lift = signature_lift(_brownian_path(1300 + seed, nodes, span), 2, p=2.2)
        prob = RDEProblem(_scalar_family(), lift, np.array([1.0]), span, p=2.2)
        flows.append(solve_rde(prob, 2.0**-7, SolverControl(blowup_limit=1e300)).flow)
    est = top_lyapunov_estimate(flows, np.array([1.0]))
    assert est.samples == 200
    assert abs(est.value) <= 3.0 * est.stderr


def test_c14_bundled_configs_are_deterministic(tmp_path, capsys):
    for name in ("fbm_cocycle", "linear_rde"):
        outs = []
        for run in ("a", "b"):
            out = tmp_path / name / run
            assert cli_main(["run", str(CONFIG_DIR / f"{name}.json"), "--out", str(out)]) == 0
            outs.append(out)
        first, second = outs
        files = sorted(p.name for p in first.iterdir())
        assert files == sorted(p.name for p in second.iterdir())
        for fname in files:
            if fname.endswith("_record.jsonl"):
                strip = lambda lines: [
                    {k: v for k, v in json.loads(line).items() if k != "wall_time_s"}
                    for line in lines
                ]
                assert strip((first / fname).read_text().splitlines()) == strip(
                    (second / fname).read_text().splitlines()
                )
            else:
                assert (first / fname).read_bytes() == (second / fname).read_bytes()
    capsys.readouterr()
