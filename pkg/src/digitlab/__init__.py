"""digitlab: a desk-scale laboratory for digit-level training objectives.

Number-span parsing with place-value weighting, five penalty losses with
analytic gradients and a finite-difference oracle, synthetic arithmetic
data, a small hand-backpropagated autoregressive trainer, and the matching
evaluation metrics.
"""

from .config import ExperimentConfig, config_hash, load_experiment_config
from .data import ArithTask, ConfigError, Sample, Split, TaskKind, default_vocab, gen_task
from .evaluation import EvalResult, evaluate_samples
from .losses import (
    LossOutput,
    PenaltySpec,
    Rho,
    Variant,
    ce_loss,
    combined_loss,
    del_penalty,
    digit_entropy_penalty,
    digit_sigmoid,
    digit_softmax,
    dist2_penalty,
    dist2_target,
    finite_diff_grad,
    focal_penalty,
    gradient_check,
    ntl_penalty,
    soft_target_entropy,
)
from .metrics import (
    EntropyReport,
    MetricsReport,
    PlaceMetrics,
    cosine_distance_matrix,
    entropy_decomposition,
    global_log_mae,
    ideal_distance_matrix,
    per_place_metrics,
    task_accuracy,
)
from .model import (
    Arch,
    ModelConfig,
    ModelState,
    digit_embeddings,
    greedy_decode,
    init_model,
    model_backward,
    model_forward,
)
from .numbers import (
    DecimalMode,
    NumberSpan,
    PlaceWeightParams,
    TokenClass,
    TokenKind,
    Vocab,
    classify_token,
    decode_number,
    find_number_spans,
    place_weight,
    span_place_weights,
)
from .train import (
    NumericalError,
    TrainConfig,
    load_checkpoint,
    lr_at_step,
    save_checkpoint,
    train_loop,
)

__version__ = "0.1.0"
