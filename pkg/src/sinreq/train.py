"""Training engine: SGD with momentum over the combined objective.

Each step runs the mode-appropriate forward pass (full precision, or
quantized with straight-through gradients), assembles task loss plus weight
decay plus the per-layer periodic penalty with the scheduled strength for the
current step, backpropagates, and applies v <- momentum·v - lr·grad;
w <- w + v to the shadow weights. Biases receive task gradients only; they
are excluded from weight decay, from the periodic penalty, and from
quantization.

Runs are strictly sequential and deterministic given the config seed, which
drives initialization (by the caller), batch shuffling, and trajectory
sampling. A non-finite loss or parameter aborts with a DivergenceError that
carries the failing step and the records collected so far.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np

from .analyze import (
    LayerEpochMetrics,
    RunRecord,
    TrajectoryTracker,
    frac_near_level,
    quant_error,
    sinreq_value,
)
from .errors import ConfigError, DivergenceError, NonFiniteError, ParameterError
from .model import ForwardMode, Model, forward, snapped_clone
from .quantize import QuantizerSpec, level_geometry
from .regularizers import RegularizerConfig, _assemble_total_loss
from .schedule import LambdaSchedule, lambda_at
from .tensor import backward, softmax_cross_entropy, zero_grads


class TrainMode(str, enum.Enum):
    FP_BASELINE = "fp_baseline"
    FP_SINREQ = "fp_sinreq"
    STE_QUANTIZED = "ste_quantized"
    STE_QUANTIZED_SINREQ = "ste_quantized_sinreq"


SINREQ_MODES = frozenset((TrainMode.FP_SINREQ, TrainMode.STE_QUANTIZED_SINREQ))
STE_MODES = frozenset((TrainMode.STE_QUANTIZED, TrainMode.STE_QUANTIZED_SINREQ))


@dataclass
class TrainConfig:
    mode: TrainMode
    epochs: int
    batch_size: int
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    # one schedule for all layers, or a per-layer map; None keeps the static
    # lambda_q values from the regularizer config
    schedule: Union[LambdaSchedule, Mapping[str, LambdaSchedule], None] = None
    eval_quantize: bool = False
    trajectories_per_layer: int = 10

    def __post_init__(self):
        self.mode = TrainMode(self.mode)
        if self.epochs < 0:
            raise ParameterError("epochs cannot be negative")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be positive")
        if not self.learning_rate > 0.0:
            raise ParameterError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError("momentum must be in [0, 1)")


@dataclass(frozen=True)
class StepMetrics:
    """Loss terms measured on the graph that produced this step's update."""

    step: int
    task_loss: float
    weight_decay: float
    total_loss: float
    sinreq: Mapping[str, float]
    lambda_q: Mapping[str, float]


@dataclass
class OptimizerState:
    """Classical momentum buffers, one per parameter tensor."""

    velocity: dict

    @classmethod
    def for_model(cls, model: Model) -> "OptimizerState":
        return cls({name: np.zeros_like(p.data) for name, p in _named_params(model)})


def _named_params(model: Model):
    for layer in model.spec.trainable_layers():
        w, b = model.params[layer.name]
        yield f"{layer.name}.weight", w
        yield f"{layer.name}.bias", b


def _effective_lambda(cfg: TrainConfig, layer: str, t: int) -> float:
    if cfg.mode not in SINREQ_MODES:
        return 0.0
    sched = cfg.schedule
    if isinstance(sched, Mapping):
        sched = sched.get(layer)
    if sched is None:
        return cfg.regularizer.per_layer[layer].lambda_q
    return lambda_at(sched, t)


def _forward_mode(mode: TrainMode) -> ForwardMode:
    return ForwardMode.QUANTIZED_STE if mode in STE_MODES else ForwardMode.FULL_PRECISION


def train_step(model: Model, batch, cfg: TrainConfig, opt: OptimizerState, t: int) -> StepMetrics:
    """One optimizer step on `batch`; returns the loss terms it minimized."""
    xb, yb = batch
    weights = model.weights_by_layer()
    lam = {name: _effective_lambda(cfg, name, t) for name in weights}
    eff = cfg.regularizer.with_lambda_q(lam)
    try:
        logits = forward(model, xb, _forward_mode(cfg.mode))
        task = softmax_cross_entropy(logits, yb)
        loss, wd_value, sinreq_values = _assemble_total_loss(task, weights, eff)
    except NonFiniteError as exc:
        raise DivergenceError(t, "non-finite loss") from exc
    params = model.parameters()
    zero_grads(params)
    backward(loss, params)
    for name, p in _named_params(model):
        v = opt.velocity[name]
        v *= cfg.momentum
        v -= cfg.learning_rate * p.grad
        p.data += v
        if not np.isfinite(p.data).all():
            raise DivergenceError(t, f"non-finite parameter {name}")
    return StepMetrics(
        step=t,
        task_loss=float(task.data[0]),
        weight_decay=wd_value,
        total_loss=float(loss.data[0]),
        sinreq=sinreq_values,
        lambda_q=lam,
    )


def evaluate_accuracy(model: Model, ds, mode: ForwardMode = ForwardMode.FULL_PRECISION) -> float:
    if len(ds) == 0:
        return 0.0
    logits = forward(model, ds.x, mode).data
    return float(np.mean(np.argmax(logits, axis=1) == ds.y))


def _geometries(model: Model, specs=None):
    out = {}
    for layer in model.spec.trainable_layers():
        spec = (specs or {}).get(layer.name, layer.quant)
        if spec is None:
            raise ConfigError(f"layer {layer.name!r} has no quantizer spec")
        out[layer.name] = spec if not isinstance(spec, QuantizerSpec) else level_geometry(spec)
    return out


def evaluate_quantized(model: Model, ds, specs=None):
    """(accuracy with shadow weights, accuracy with weights snapped to levels).

    The model itself is untouched; snapping happens on a clone. `specs` may
    override the per-layer QuantizerSpec (or give LevelGeometry directly);
    by default each layer's own spec is used.
    """
    geoms = _geometries(model, specs)
    pre = evaluate_accuracy(model, ds, ForwardMode.FULL_PRECISION)
    post = evaluate_accuracy(snapped_clone(model, geoms), ds, ForwardMode.FULL_PRECISION)
    return pre, post


def _record_accuracy(model: Model, ds, cfg: TrainConfig, geoms) -> float:
    if cfg.eval_quantize:
        return evaluate_accuracy(snapped_clone(model, geoms), ds, ForwardMode.FULL_PRECISION)
    return evaluate_accuracy(model, ds, _forward_mode(cfg.mode))


def fit(model: Model, train_set, val_set, cfg: TrainConfig, on_epoch=None):
    """Run the full training loop, returning one RunRecord per epoch.

    Batches are drawn by seeded shuffling each epoch. Epoch records hold the
    mean task/total loss over the epoch's steps and end-of-epoch accuracy,
    per-layer penalty values, quantization-error metrics, and trajectory
    samples. `on_epoch(epoch, model, record)` runs after each epoch if given.
    """
    trainable = [layer.name for layer in model.spec.trainable_layers()]
    if set(cfg.regularizer.per_layer) != set(trainable):
        raise ConfigError(
            f"regularizer covers {sorted(cfg.regularizer.per_layer)}, "
            f"model has {sorted(trainable)}"
        )
    if cfg.mode in STE_MODES:
        for layer in model.spec.trainable_layers():
            if layer.quant is None:
                raise ConfigError(f"mode {cfg.mode.value} needs a quantizer on {layer.name!r}")
    if len(train_set) == 0:
        raise ConfigError("training split is empty")
    records = []
    if cfg.epochs == 0:
        return records
    rng = np.random.default_rng(cfg.seed)
    opt = OptimizerState.for_model(model)
    min_weights = min(model.params[name][0].size for name in trainable)
    tracker = TrajectoryTracker(model, min(cfg.trajectories_per_layer, min_weights), cfg.seed)
    geoms = {name: cfg.regularizer.per_layer[name].geometry for name in trainable}
    t = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(train_set))
        task_sum = total_sum = 0.0
        n_steps = 0
        last = None
        try:
            for start in range(0, len(train_set), cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                last = train_step(model, (train_set.x[idx], train_set.y[idx]), cfg, opt, t)
                task_sum += last.task_loss
                total_sum += last.total_loss
                n_steps += 1
                t += 1
        except DivergenceError as exc:
            exc.records = records
            raise
        per_layer = {
            name: LayerEpochMetrics(
                sinreq_loss=sinreq_value(model.params[name][0].data, geoms[name]),
                lambda_q=last.lambda_q[name],
                quant_error=quant_error(model.params[name][0].data, geoms[name]),
                frac_near_level=frac_near_level(model.params[name][0].data, geoms[name]),
            )
            for name in trainable
        }
        record = RunRecord(
            epoch=epoch,
            train_acc=_record_accuracy(model, train_set, cfg, geoms),
            val_acc=_record_accuracy(model, val_set, cfg, geoms),
            task_loss=task_sum / n_steps,
            total_loss=total_sum / n_steps,
            per_layer=per_layer,
            trajectories=tracker.sample(model),
        )
        records.append(record)
        if on_epoch is not None:
            on_epoch(epoch, model, record)
    return records
