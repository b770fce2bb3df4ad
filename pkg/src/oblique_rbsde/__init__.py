"""Solvers and verification tools for multi-dimensional reflected BSDEs with
oblique reflection: a switched lower barrier and a fixed upper barrier."""

from .exceptions import (
    ConfigError,
    ContractionError,
    HypothesisError,
    InternalConsistencyError,
    OracleGuardError,
    PicardNonConvergence,
    ProjectionNonConvergence,
    RBSDEError,
    SpecStructureError,
    VerificationFailure,
)
from .lattice import FULL_TREE, RECOMBINING, Lattice, build_lattice, cond_expect, cond_expect_dw
from .model import (
    GeneralCosts,
    GeneratorSpec,
    GridSpec,
    LinearCosts,
    ProblemSpec,
    ScalarField,
    TimeFunction,
    ValidationReport,
    eval_h,
    validate_hypotheses,
)
from .solvers import (
    BACKENDS,
    Solution,
    SolverOptions,
    driver_step,
    oblique_project,
    residuals,
    solve,
    solve_direct,
    solve_penalty_oblique,
    solve_penalty_upper,
    solve_picard,
)
from .switching import (
    OracleResult,
    StoppingRule,
    SwitchingStrategy,
    enumerate_oracle,
    evaluate_game,
    evaluate_switched,
    extract_optimal_strategy,
    verify_representation,
)

__version__ = "0.1.0"
