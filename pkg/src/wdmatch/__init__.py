"""Cross-domain linear classification with a shared orthogonal projection,
source instance weighting and first-moment distribution matching."""

from .data import (
    DomainDataset,
    SyntheticShiftSpec,
    generate_synthetic_pair,
    load_dataset,
    save_dataset,
    standardize_pair,
    synthetic_pair_with_hidden_labels,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    InfeasibleProblemError,
    ParseError,
    ValidationError,
)
from .evaluate import (
    ExperimentConfig,
    accuracy,
    baseline_source_only,
    baseline_target_only,
    run_cv,
    transfer_benefit_trial,
    write_report,
)
from .model import (
    HyperParams,
    ObjectiveTerms,
    SourceWeights,
    TransferModel,
    classify_source,
    classify_target,
    hinge_losses,
    matching_distance,
    objective,
    project,
    target_mean,
    weighted_source_mean,
)
from .neighborhood import (
    NeighborhoodGraph,
    build_graph,
    build_knn,
    reconstruction_operator,
    reconstruction_residuals,
    solve_reconstruction,
)
from .optimizer import (
    OptState,
    fit,
    min_trace_rows,
    solve_pi,
    solve_theta,
    solve_w,
    subgradients,
    update_phi_psi,
)
from .qp import BoxEqQP, QPSolution, project_feasible, projected_gradient_oracle, solve_qp

__version__ = "0.1.0"

__all__ = [
    "BoxEqQP",
    "ConfigError",
    "ConvergenceError",
    "DomainDataset",
    "ExperimentConfig",
    "HyperParams",
    "InfeasibleProblemError",
    "NeighborhoodGraph",
    "ObjectiveTerms",
    "OptState",
    "ParseError",
    "QPSolution",
    "SourceWeights",
    "SyntheticShiftSpec",
    "TransferModel",
    "ValidationError",
    "accuracy",
    "baseline_source_only",
    "baseline_target_only",
    "build_graph",
    "build_knn",
    "classify_source",
    "classify_target",
    "fit",
    "generate_synthetic_pair",
    "hinge_losses",
    "load_dataset",
    "matching_distance",
    "min_trace_rows",
    "objective",
    "project",
    "project_feasible",
    "projected_gradient_oracle",
    "reconstruction_operator",
    "reconstruction_residuals",
    "run_cv",
    "save_dataset",
    "solve_pi",
    "solve_qp",
    "solve_reconstruction",
    "solve_theta",
    "solve_w",
    "standardize_pair",
    "subgradients",
    "synthetic_pair_with_hidden_labels",
    "target_mean",
    "transfer_benefit_trial",
    "update_phi_psi",
    "weighted_source_mean",
    "write_report",
]
