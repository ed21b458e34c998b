"""roughflow: numerical rough-path lifts, rough drivers, and the flows they generate."""

from .cocycle import (
    NoiseRealization,
    ShiftMap,
    StationarityReport,
    cocycle_residual,
    dyadic_noise,
    gaussian_noise,
    noise_distance,
    noise_from_path,
    regenerated_shift,
    shift_omega,
    stationarity_diagnostic,
    weak_cocycle_residual,
)
from .drivers import (
    BoxSpec,
    BracketField,
    CallableField,
    ConstantField,
    DecayField,
    LinearField,
    Poly1DField,
    RoughDriver,
    VectorField,
    VectorFieldFamily,
    corrupt_driver_cell,
    decay_fields,
    decaying_linear_fields,
    driver_additivity_residual,
    driver_chen_residual,
    driver_cocycle_residual,
    driver_from_rough_path,
    driver_leibniz_residual,
    driver_norm,
    field_family_registry,
    gaussian_driver,
    lie_bracket,
    make_field_family,
    rotation_fields,
    series_vector_part,
    shear_pair_fields,
)
from .errors import (
    ArgumentError,
    ConfigError,
    DivergenceError,
    NumericalError,
    RoughflowError,
)
from .gaussian import (
    CovarianceKernel,
    GaussianSampleConfig,
    brownian_covariance,
    dyadic_grid,
    dyadic_lift_sequence,
    fbm_covariance,
    make_kernel,
    rho_variation_2d,
    rho_variation_scaling,
    sample_gaussian_path,
    sample_gaussian_paths,
    sample_gaussian_values,
    uniform_grid,
)
from .rde import (
    DriftGrowthReport,
    DriftSpec,
    FlowMap,
    LyapunovEstimate,
    RDEProblem,
    RDESolution,
    SolverControl,
    drift_growth_check,
    drift_transform_solve,
    rds_cocycle_residual,
    solve_driver_flow,
    solve_rde,
    top_lyapunov_estimate,
)
from .paths import (
    Mollifier,
    PiecewiseLinearPath,
    SampledRoughPath,
    bump_mollifier,
    chen_residual_max,
    geometricity_residual_max,
    glued_pvar_distance,
    homogeneous_pvar_distance,
    mollify,
    p_variation,
    piecewise_linear_projection,
    pvar_norm,
    resample_lift,
    shift_path,
    signature_lift,
)
from .tensor_algebra import (
    MAX_LEVEL,
    GroupElement,
    flat_norm,
    geodesic_point,
    group_distance,
    group_exp,
    group_log,
    homogeneous_gauge,
    identity_element,
    segment_exponential,
    tensor_inv,
    tensor_mul,
)

__version__ = "0.1.0"
