"""Post-selection inference for L1-penalized GLMs by thinning the score variable."""

__version__ = "0.1.0"

from .errors import (
    ConditioningError,
    ConfigError,
    DegenerateError,
    DivergenceError,
    DomainError,
    MatrixValidityError,
    PreconditionError,
    ScoreThinError,
)
from .glm import (
    BERNOULLI,
    GAUSSIAN,
    POISSON,
    Dataset,
    GlmFamily,
    ScoreVariance,
    get_family,
    hessian,
    loss,
    overdispersion,
    score,
    score_variance,
)
from .inference import (
    Interval,
    SandwichEstimate,
    SelectiveFit,
    confidence_interval,
    fixed_model_fit,
    sandwich_cluster,
    sandwich_gradient,
    sandwich_outcome,
    select_and_infer,
)
from .solver import (
    PenalizedProblem,
    SolverResult,
    default_lambda,
    kkt_residual,
    soft_threshold,
    solve_penalized,
    solve_submodel,
    support_of,
)
from .thinning import (
    GradientNoise,
    ThinnedPair,
    gradient_noise_from_outcome_noise,
    make_rng,
    matched_gradient_noise,
    pilot_fit,
    thin_gradient,
    thin_outcomes,
)
