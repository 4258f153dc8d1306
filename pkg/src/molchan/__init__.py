"""Training-based CIR estimation for diffusive molecular communication links."""

__version__ = "0.1.0"

from .bounds import ErrorStats, cr_bound, error_stats, fisher_matrix, lsse_error_upper_bound, prior_mean_cir
from .channel import (
    DEFAULT_SCENARIO,
    Cir,
    ObservationVector,
    PhysicalScenario,
    TrainingSequence,
    choose_symbol_params,
    concentration_at,
    design_matrix,
    mean_observations,
    peak_sample_time,
    simulate_observations,
    synthesize_cir,
)
from .design import DesignCriterionValue, design_objective, isi_free_sequence, search_optimal_sequence
from .errors import (
    ConfigurationError,
    DomainError,
    EstimationFailure,
    InsufficientDataError,
    MolchanError,
    NoConvergenceError,
    SearchFailure,
    SingularDesignError,
)
from .estimators import (
    EstimateReport,
    estimate_isifree,
    estimate_lsse,
    estimate_ml,
    lsse_filter_matrix,
    ml_loglikelihood,
    solve_ml_stationary,
)
from .experiment import ExperimentSpec, ResultRow, emit_results, run_experiment
