"""Partial-identification bounds and uniformly valid confidence intervals for
policy relevant treatment effects under multidimensional unobserved
heterogeneity.

The pipeline: a constant-spline discretization of the heterogeneity space,
moment equality rows from indicator instrument functions, a convex relaxation
of the bilinear response-propensity products via product envelopes, linear
shape restrictions, bound computation by linear programming, and regularized
support-function inference with a Monte Carlo coverage harness.
"""

from .model import (
    BOUNDED,
    EMPTY,
    UNBOUNDED,
    BasisLayout,
    BoundsResult,
    ConstraintSystem,
    EnvelopeBounds,
    InstrumentSpace,
    MtrCoefficients,
    QuadratureError,
    SolverFailure,
    SpecificationError,
    ValidationReport,
    VPartition,
    validate_spec,
)
from .weights import TargetSpec, WeightSpec, target_coefficients, weights_for
from .dgp import (
    Dataset,
    DgpSpec,
    MomentSet,
    bernstein_eval,
    bernstein_mean,
    cell_averages,
    dgp_factory,
    empirical_moments,
    local_departure_dgp,
    population_moments,
    propensity,
    random_coefficient_dgp,
    sample,
    true_coefficients,
    true_target,
)
from .assemble import (
    IvLikeSet,
    RestrictionSet,
    WObservations,
    assemble_population,
    assemble_sample,
    assemble_system,
    build_partition,
    make_layout,
)
from .solver import SolveOutcome, solve_lp, solve_lp_with_extra_row, solve_regularized
from .bounds import (
    TinyProblem,
    bounds_from_system,
    brute_force_bilinear,
    cvr_bounds,
    hv_bounds,
    manski_bounds,
    mst_bounds,
    tiny_to_system,
)
from .inference import (
    CoverageReport,
    InferenceResult,
    SampleInfeasible,
    TuningSelection,
    coverage_experiment,
    covers,
    estimate_bounds,
    select_tuning,
)

__version__ = "0.1.0"
