"""Fractional Brownian motion, kernel variation, and truncated driver series.

Run: python3 demos/fbm_driver_series.py
"""

import numpy as np

from roughflow import (
    PiecewiseLinearPath,
    decaying_linear_fields,
    driver_chen_residual,
    dyadic_noise,
    fbm_covariance,
    gaussian_driver,
    rho_variation_2d,
    rho_variation_scaling,
    signature_lift,
)

hurst = 0.4
kernel = fbm_covariance(hurst)

# The kernel's 2-d rho-variation controls whether lifts exist at all.
# For fBm the natural index is rho = 1/(2H); values on shrinking diagonal
# squares scale like side^(1/rho).
rho = 1.0 / (2.0 * hurst)
print(f"fBm H={hurst}: rho = {rho}")
print("  unit-square rho-variation:", f"{rho_variation_2d(kernel, (0.0, 1.0), rho, 8):.4f}")
report = rho_variation_scaling(kernel, rho, depth=4, grid_n=9)
print(f"  diagonal scaling exponent {report['slope']:.3f} (ideal {1.0 / rho})")

# Exact dyadic samples with joint level-2 data, straight from the kernel.
noise = dyadic_noise(kernel, level=7, dim=2, seed=3, level_count=2, p=2.6)[0]
print("sampled dyadic lift:", noise.omega.times.size, "nodes on", noise.span)

# A driver series: many vector fields, geometrically shrinking, each paired
# with its own scalar path. Truncation error fades at the same rate.
rng = np.random.default_rng(11)
t = np.linspace(0.0, 1.0, 129)
betas = signature_lift(
    PiecewiseLinearPath(t, np.cumsum(rng.normal(scale=0.2, size=(129, 10)), axis=0)),
    2,
    p=2.5,
)
sigma = decaying_linear_fields(10, 2, decay=0.5, seed=11)
pts = rng.uniform(-1.5, 1.5, size=(8, 2))
previous = None
print("truncation sweep (sup-box change in V over [0, 1]):")
for k in (2, 4, 6, 8, 10):
    driver = gaussian_driver(sigma, betas, truncation=k)
    v = driver.V(0.0, 1.0, pts)
    if previous is not None:
        print(f"  K={k:2d}: change {np.max(np.abs(v - previous)):.3e}")
    previous = v

full = gaussian_driver(sigma, betas, truncation=10)
grid = full.grid
chen = driver_chen_residual(full, float(grid[8]), float(grid[64]), float(grid[120]), pts)
print(f"driver Chen residual at K=10: {chen:.2e}")
