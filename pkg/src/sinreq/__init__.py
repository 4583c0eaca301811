"""Quantization-aware training with a sinusoidal regularizer.

The periodic penalty sin²(π·(w + Δ)/step), averaged per layer and weighted
into the training objective, has its minima exactly on the quantization
levels of the layer's scheme (DoReFa, WRPN, or plain uniform), so ordinary
gradient descent pulls weights toward quantizable values while it minimizes
the task loss.
"""

from .analyze import (
    LayerEpochMetrics,
    RunRecord,
    TrajectoryTracker,
    frac_near_level,
    histogram,
    quant_error,
    sinreq_value,
    write_histogram_csv,
    write_metrics_csv,
    write_trajectory_csvs,
)
from .config import (
    SCHEMA_VERSION,
    AnalysisSettings,
    DatasetConfig,
    ExperimentConfig,
    ScheduleConfig,
    TrainSettings,
    build_train_config,
    load_config,
    parse_config,
)
from .data import (
    Dataset,
    load_idx,
    load_idx_images,
    load_idx_labels,
    make_blobs,
    make_spirals,
    split_dataset,
    write_idx_images,
    write_idx_labels,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DegenerateScaleError,
    DimensionError,
    DivergenceError,
    IdxParseError,
    NonFiniteError,
    ParameterError,
    SinreqError,
)
from .model import (
    ForwardMode,
    LayerKind,
    LayerSpec,
    Model,
    ModelSpec,
    forward,
    init,
    load_checkpoint,
    load_into,
    save_checkpoint,
    snapped_clone,
)
from .quantize import (
    LevelGeometry,
    QuantizerSpec,
    Scheme,
    apply_quantizer,
    dorefa_quantize,
    level_geometry,
    snap_to_levels,
    wrpn_quantize,
)
from .regularizers import (
    LayerRegularizer,
    RegularizerConfig,
    sinreq_loss,
    total_loss,
    weight_decay_loss,
)
from .schedule import LambdaSchedule, ScheduleKind, lambda_at
from .tensor import (
    Tensor,
    add,
    backward,
    conv2d,
    matmul,
    reduce_mean,
    relu,
    reshape,
    scale,
    sin_sq_affine,
    softmax_cross_entropy,
    square,
    ste,
    zero_grads,
)
from .train import (
    OptimizerState,
    StepMetrics,
    TrainConfig,
    TrainMode,
    evaluate_accuracy,
    evaluate_quantized,
    fit,
    train_step,
)

__version__ = "0.1.0"
