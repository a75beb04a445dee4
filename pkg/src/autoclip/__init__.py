"""Auto-tuned template weighting for zero-shot classifiers on embeddings."""

from .aggregators import (
    Max,
    Mean,
    PredictionResult,
    SoftmaxWeighting,
    TopR,
    aggregate_max,
    aggregate_mean,
    aggregate_softmax_weighting,
    aggregate_topr,
    entropy_bits,
    predict,
)
from .embedding import class_scores, normalize, pairwise_similarities
from .engine import (
    AutoClip,
    AutoclipConfig,
    AutoclipResult,
    ObjectiveKind,
    aggregate_batch,
    autoclip_classify,
    batch_classify,
    grad_fd,
    grad_rho,
    logsumexp,
    objective_value,
)
from .estimator import ZeroShotClassifier, make_method
from .exceptions import (
    AutoclipError,
    ConfigError,
    FormatError,
    IoError,
    ManifestError,
    NormalizationError,
    SampleError,
    ScoreError,
    ShapeError,
)
from .stepsize import BisectionParams, StepSizeSolution, solve_step_size

__version__ = "0.1.0"
