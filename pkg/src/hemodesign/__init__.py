"""Bayesian experimental design for feedback-regulated hematopoiesis dynamics."""

from .config import ConfigError, RunConfig, default_config, load_config, parse_config
from .dataio import (
    DataFormatError,
    load_dataset,
    load_truth,
    write_dataset,
    write_truth,
)
from .design_search import (
    UtilityReport,
    expected_utility,
    export_heatmaps,
    fold_changes,
    grid_search,
    reference_grid,
    select_optimal,
)
from .evidence import EvidenceError, bayes_factor, log_marginal_bridge
from .fitting import FitResult, FitSettings, fit_dataset, solution_bands
from .model import (
    Dataset,
    Design,
    HierarchicalModel,
    HierarchicalParams,
    MouseRecord,
    sample_truth,
    simulate_dataset,
)
from .ode import (
    IntegrationError,
    OdeParams,
    Trajectory,
    rhs,
    solve,
    solve_with_sensitivities,
    steady_state,
)
from .priors import PriorSpec, prior_profile, priors_from_table
from .sampler import (
    PosteriorSamples,
    SamplerConfig,
    SamplerError,
    bulk_ess,
    diagnostics,
    sample_posterior,
    split_rhat,
)
from .utility import (
    DesignUtility,
    UtilityEstimate,
    joint_utility,
    kde_marginal,
    marginal_utility,
)

__all__ = [
    "ConfigError",
    "DataFormatError",
    "Dataset",
    "Design",
    "DesignUtility",
    "EvidenceError",
    "FitResult",
    "FitSettings",
    "HierarchicalModel",
    "HierarchicalParams",
    "IntegrationError",
    "MouseRecord",
    "OdeParams",
    "PosteriorSamples",
    "PriorSpec",
    "RunConfig",
    "SamplerConfig",
    "SamplerError",
    "Trajectory",
    "UtilityEstimate",
    "UtilityReport",
    "bayes_factor",
    "bulk_ess",
    "default_config",
    "diagnostics",
    "expected_utility",
    "export_heatmaps",
    "fit_dataset",
    "fold_changes",
    "grid_search",
    "joint_utility",
    "kde_marginal",
    "load_config",
    "load_dataset",
    "load_truth",
    "log_marginal_bridge",
    "marginal_utility",
    "parse_config",
    "prior_profile",
    "priors_from_table",
    "reference_grid",
    "rhs",
    "sample_posterior",
    "sample_truth",
    "select_optimal",
    "simulate_dataset",
    "solution_bands",
    "solve",
    "solve_with_sensitivities",
    "split_rhat",
    "steady_state",
    "write_dataset",
    "write_truth",
    "__version__",
]

__version__ = "0.1.0"
