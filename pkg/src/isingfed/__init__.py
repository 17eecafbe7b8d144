"""Low-rank embeddings of binary-vector data under a pairwise Ising model.

The package samples ground-truth Ising distributions, fits a bi-factored
low-rank estimate with a single round of gradient communication across data
sites, runs four convex spectral baselines for comparison, and provides the
metrics and harness needed to benchmark all of them deterministically.
"""

from .baselines import BaselineMethod, GradientSource, baseline_fit, baseline_step
from .federation import (
    DirectoryTransport,
    GradientMessage,
    InProcessTransport,
    Partition,
    ProtocolError,
    TcpTransport,
    aggregate,
    decode_message,
    encode_message,
    make_correction,
    make_partition,
    run_round,
    site_gradient,
)
from .harness import (
    ExperimentConfig,
    ResultRow,
    cell_seed,
    run_cell,
    run_grid,
    run_pipeline,
    simulate_cell_data,
)
from .kernels import (
    BinaryDataset,
    ParameterMatrix,
    conditional_prob,
    local_field,
    per_sample_grad,
    pseudo_nll,
    pseudo_nll_grad,
)
from .metrics import auc, embed, frob_error, kg_edges, pair_scores, phenotype_score
from .optimize import (
    DivergenceError,
    FitResult,
    OptimizerConfig,
    balance_gradient,
    centralized_fit,
    convex_init,
    daniel_fit,
    surrogate_gradient_theta,
    symmetric_init_from,
)
from .sampling import (
    ExactTable,
    GroundTruth,
    exact_sample,
    exact_table,
    gibbs_sample,
    load_dataset,
    make_ground_truth,
)
from .spectral import (
    FactorPair,
    SpectralOp,
    apply_spectral,
    factorize_rank_d,
    operator_norm,
    procrustes_distance,
)

__version__ = "0.1.0"
