"""Label-noise learning with a revisable transition matrix."""

from .config import ExperimentConfig, StageConfig, TrainConfig
from .correction import backward_loss, batch_objective, forward_loss, reweight_loss
from .datasets import Dataset, GaussianMixtureSpec, generate_gaussian_mixture, load_csv, load_idx
from .errors import (
    AggregationError,
    ConfigError,
    DataError,
    DataFormatError,
    NumericError,
    SingularMatrixError,
    TRevisionError,
)
from .estimation import estimate_transition, select_pseudo_anchors, train_noisy_posterior
from .noise import build_symmetric, corrupt_labels, estimation_error, project_to_valid
from .numerics import MLP, init_mlp
from .revision import (
    BoundInputs,
    RevisionState,
    generalization_bound,
    run_t_revision,
    stage2_initialize,
    stage2_revise,
)

__version__ = "0.1.0"
