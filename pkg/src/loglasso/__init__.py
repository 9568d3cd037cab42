"""Group-lasso model selection for hierarchical log-linear models."""

from .complex import (
    FactorSet,
    InteractionClass,
    SimplicialComplex,
    all_subsets,
    complement_class,
    downward_closure,
    interaction_graph,
    maximal_elements,
)
from .design import (
    Design,
    TableShape,
    assemble_design,
    block_matrix,
    contrast_matrix,
    model_dimension,
    projector,
    saturated_design,
)
from .glasso import (
    FitResult,
    PenaltyConfig,
    SolverConfig,
    fit,
    kkt_report,
    lambda_path,
    null_lambda,
    select_model,
    smoothed_mle_check,
)
from .model import (
    BlockedVector,
    CellDistribution,
    ContingencyTable,
    fit_mle,
    fisher_info,
    gradient,
    hessian,
    log_likelihood,
    mean_map,
    sample_table,
)

__version__ = "0.1.0"
