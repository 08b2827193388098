"""Variable Bregman majorization-minimization for Poisson reconstruction."""

from .bregman import (
    MajorantKind,
    MajorantSpec,
    PiecewiseLogQuadratic,
    SeparableLegendre,
    bregman_distance,
    coeff_maj1,
    coeff_maj2,
    coeff_maj4,
    coeff_maj5,
    coeff_maj6,
    coeff_maj7,
    coeff_maj8,
    coeff_maj9,
    curvature_c_tau,
    hessian_characterization_check,
    majorization_check,
    order_check,
    varphi_maj3,
)
from .errors import ConfigError, DomainError, SolverError
from .linalg import ImageGrid, SparseNonnegOperator, adjoint_check, apply_adjoint, apply_forward
from .poisson import PoissonModel, kl_gradient, kl_lipschitz, kl_value
from .regularizer import GradientOperator, RegularizerParams, reg_gradient, reg_lipschitz, reg_value
from .simulator import (
    Ellipse,
    PhantomSpec,
    ScanGeometry,
    build_projector,
    phantom_generate,
    poisson_sample,
    simulate,
)
from .solver import (
    IterateHistory,
    ReconProblem,
    SolverConfig,
    mlem_run,
    nrmse,
    residual_w,
    vbmm_run,
    vbmm_step,
)

__version__ = "0.1.0"
