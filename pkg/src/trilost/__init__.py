"""Line-of-sight triangulation methods with analytic covariance propagation.

Linear solvers (direct linear transform, dual-line-matrix, collinearity,
explicit-range), optimal two-view polynomial correction, the optimally
weighted linear n-view solver, and triangulation under known relative
dynamics, plus a seeded Monte Carlo engine, scenario builders, and Bundler
reconstruction tooling.
"""

__version__ = "0.1.0"

from .errors import (
    AmbiguousNullSpace,
    CoincidentCameras,
    DataError,
    DegenerateBaseline,
    IndexOutOfRange,
    MalformedHeader,
    MissingMethod,
    NoRealRoot,
    NonIsotropicNoise,
    NotUnit,
    NumericalError,
    OutOfEnvelope,
    ParallelRays,
    RankDeficient,
    TooFewObservations,
    TrilostError,
    TruncatedFile,
    Unobservable,
    WrongArity,
)
from .geometry import (
    LeastSquaresBackend,
    Rotation,
    dehomogenize,
    null_direction,
    skew,
    solve_stacked,
    stack_condition_number,
)
from .camera import (
    CameraIntrinsics,
    ImagePlanePoint,
    LosObservation,
    PixelCovariance,
    PixelPoint,
    camera_from_fov,
    fov_to_dx,
    image_plane_covariance,
    image_plane_to_pixel,
    image_plane_to_unit_vector,
    pixel_to_image_plane,
    qmm_covariance,
    qmm_dominates,
    unit_vector_covariance,
)
from .linear import (
    LosNormalization,
    SolveDiagnostics,
    TriangulationEstimate,
    collinearity_rows,
    collinearity_triangulate,
    dlt_covariance,
    dlt_system,
    dlt_triangulate,
    explicit_range_covariance_n2,
    explicit_range_system,
    explicit_range_triangulate,
    law_of_cosines_residual,
    plucker_matrix_dual,
    plucker_triangulate,
)
from .optimal import (
    epipolar_setup,
    hs_covariance,
    hs_polynomial,
    hs_triangulate,
    lost_covariance,
    lost_gamma,
    lost_rows,
    lost_triangulate,
    lost_weights,
    quat_coeffs,
    quat_triangulate,
    residual_cov_pseudoinverse,
)
from .dynamic import (
    CwStm,
    DoubleIntegratorStm,
    DynamicObservation,
    StateEstimate6,
    StaticStm,
    StmProvider,
    cw_stm,
    dynamic_covariance,
    dynamic_dlt,
    dynamic_system,
    observability_report,
)
from .montecarlo import (
    MethodStats,
    MonteCarloReport,
    PairStats,
    precision_loss,
    run_monte_carlo,
)
from .scenarios import (
    RelnavScenario,
    ScenarioConfig,
    VisibilityRule,
    analytic_precision_loss,
    analytic_total_std,
    build_moon_point_scenario,
    build_relnav_scenario,
    build_trn_scenario,
    build_uranus_grid,
    moon_visibility,
    pointing_attitude,
)
from .bundler import (
    BundlerCamera,
    BundlerDataset,
    BundlerPoint,
    BundlerView,
    ReconstructionReport,
    bundler_camera_frame,
    parse_bundler,
    point_observations,
    retriangulate,
    synthetic_dataset,
    write_bundler,
)

__all__ = [name for name in dir() if not name.startswith("_")]
