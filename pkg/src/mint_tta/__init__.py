"""Test-time adaptation by pseudo-label inter-class variance maximization,
with closed-form and Monte Carlo verification of embedding variance
collapse under a synthetic corruption model."""

from .engine import (
    BatchResult,
    GradAccumulator,
    MeanAccumulator,
    MintConfig,
    MintState,
    adjust_text,
    ascent_step,
    batch_gradient,
    batch_objective,
    init_state,
    predict,
    process_batch,
)
from .errors import DataError, MintError, UsageError, VerificationFailure
from .metrics import (
    EmbeddingSet,
    VarianceReport,
    compute_variance_report,
    decomposition_residual,
    pearson_correlation,
)
from .synthetic import (
    LatentBatch,
    NormWeights,
    TextEmbeddings,
    default_latent_params,
    embed,
    make_text_embeddings,
    sample_latents,
    stream,
)
from .theory import (
    LatentParams,
    TheoryCov,
    flip_cov,
    flip_labeler,
    gt_limits,
    intra_decrease_condition,
    mc_measure,
    perfect_cov,
    pl_inter_gradients,
    pl_inter_limit,
    text_labeler,
)

__version__ = "0.1.0"
