"""Graph MBO threshold dynamics on point-cloud similarity graphs.

Subpackages: kernel_graph (graphs from clouds), operators (graph calculus and
heat semigroup), mbo (the threshold dynamics and its energies), continuum
(samplers, TL^2, limit experiments), euclid_grid (localized energies on
Euclidean grids), io (serialization), cli (experiment runner).
"""

from .errors import (
    ConfigError,
    ConvergenceError,
    DimensionError,
    GraphMboError,
    IsolatedVertexError,
    MethodError,
    PaddingError,
    QuadratureError,
    SigmaValidationError,
    ToleranceError,
    UnsupportedDensityError,
)
from .kernel_graph import (
    KernelConstants,
    KernelProfile,
    PointCloud,
    SimilarityGraph,
    build_graph,
    epsilon_scale,
    kernel_constants,
    reweight_lambda,
)
from .operators import (
    GraphOperator,
    dirichlet_energy,
    dissipation_audit,
    heat_apply,
    infinity_laplacian_solve,
    vertex_inner,
)
from .mbo import (
    EnergyReport,
    ForcingField,
    LabelField,
    SurfaceTension,
    forced_energy,
    forcing_from_labels,
    lipschitz_forcing,
    mbo_run,
    mbo_step,
    movement_functional,
    thresholding_energy,
    uniform_sigma,
    validate_sigma,
)
from .continuum import (
    DensityModel,
    SweepResult,
    TransportPlan,
    degree_convergence_experiment,
    dirichlet_consistency_experiment,
    flat_torus,
    greedy_plan,
    heat_consistency_experiment,
    monotonicity_sweep,
    one_step_consistency_experiment,
    relaxed_monotonicity_audit,
    sample_cloud,
    tl2_distance,
    uniform_sphere,
)
from .euclid_grid import (
    BumpFunction,
    Grid,
    GridField,
    half_plane_field,
    heat_convolve,
    localized_energy,
    monotonicity_audit,
    random_smooth_two_phase,
    standard_bump,
    tilde_energy,
)

__version__ = "0.1.0"
