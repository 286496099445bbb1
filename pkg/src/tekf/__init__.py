"""Transformation-based consistent extended Kalman filtering."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    ContractViolation,
    DegenerateGeometryError,
    DivergenceError,
    EstimationError,
    FirstEstimateCache,
    GaussianBelief,
    LinearizationPolicy,
    Measurement,
    NoiseSpec,
    SingularInnovationError,
    SystemModel,
    ekf_predict,
    ekf_update,
    propagate_mean,
    stack_measurements,
    wrap_angle,
)
from .observability import (  # noqa: E402
    MismatchReport,
    ObservabilityMatrix,
    SubspaceBasis,
    build_observability_matrix,
    kernel_basis,
    mismatch_report,
    principal_angles,
    subspace_contains,
    subspace_equal,
)
from .transform import (  # noqa: E402
    Tekf1State,
    Transformation,
    TransformDesignError,
    UpdateMode,
    identity_transformation,
    solve_exact_update,
    tekf1_init,
    tekf1_predict,
    tekf1_update,
    tekf2_step,
    tekf2_update,
    transformation_from_basis,
    verify_constant_F,
)
