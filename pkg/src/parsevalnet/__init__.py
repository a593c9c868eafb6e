"""Parseval networks in plain numpy.

Layer-wise Lipschitz control through orthonormality retraction and
convex aggregation, gradient-based attacks, and the matching
bound/spectrum diagnostics.
"""

from .attacks import AttackSpec, adversarial_batch, epsilon_for_snr, fgsm, snr
from .checkpoint import load_checkpoint, save_checkpoint
from .constraints import (
    conv_rescale,
    parseval_gap,
    parseval_penalty,
    retraction_step,
    sample_row_subset,
    simplex_project,
)
from .diagnostics import (
    CovarianceDimension,
    SpectrumHistogram,
    local_cov_dim,
    spectrum_histogram,
)
from .errors import (
    CheckpointError,
    ConvergenceError,
    DataFormatError,
    DimensionError,
    GraphError,
    TrainingDivergedError,
)
from .graph import (
    Batch,
    ForwardState,
    Grads,
    Graph,
    NodeSpec,
    Params,
    backward,
    batch_log_loss,
    forward,
    init_params,
    log_loss,
    predict,
    tight_frame_init,
    unfold,
)
from .linalg import (
    inf_operator_norm,
    matmul,
    orthonormal_rows_init,
    singular_values,
    spectral_norm,
)
from .lipschitz import LipschitzReport, empirical_gap_check, graph_bound, node_constant
from .models import build_mlp
from .rng import make_rng
from .training import (
    Checkpoint,
    CurvePoint,
    EpochMetrics,
    TrainConfig,
    evaluate,
    robustness_curve,
    train,
)

__version__ = "0.1.0"
