"""Training objectives: weight decay, the periodic penalty, and their sum.

All three builders return graph nodes from the tensor core, so gradients of
the combined objective reach the shadow weights through ordinary backprop.
The periodic penalty for one layer is the mean of sin²(π·(w + Δ)/step) over
the layer's weights, with step and Δ taken from the layer's quantizer
geometry; it vanishes exactly on the quantization levels and its gradient
pulls each weight toward the nearest one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigError, ParameterError
from .quantize import LevelGeometry
from .tensor import Tensor, add, reduce_mean, scale, sin_sq_affine, square


@dataclass(frozen=True)
class LayerRegularizer:
    """Per-layer penalty strength and the level geometry its minima follow."""

    lambda_q: float
    geometry: LevelGeometry

    def __post_init__(self):
        object.__setattr__(self, "lambda_q", float(self.lambda_q))
        if not math.isfinite(self.lambda_q) or self.lambda_q < 0.0:
            raise ParameterError("lambda_q must be finite and non-negative")


@dataclass(frozen=True)
class RegularizerConfig:
    """Weight-decay strength plus one LayerRegularizer per trainable layer."""

    lambda_wd: float = 0.0
    per_layer: Mapping[str, LayerRegularizer] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "lambda_wd", float(self.lambda_wd))
        if not math.isfinite(self.lambda_wd) or self.lambda_wd < 0.0:
            raise ParameterError("lambda_wd must be finite and non-negative")

    def with_lambda_q(self, values: Mapping[str, float]) -> "RegularizerConfig":
        """Copy of this config with per-layer strengths replaced."""
        per_layer = {
            name: LayerRegularizer(values.get(name, entry.lambda_q), entry.geometry)
            for name, entry in self.per_layer.items()
        }
        return RegularizerConfig(self.lambda_wd, per_layer)


def weight_decay_loss(weights, lambda_wd: float) -> Tensor:
    """(λ/2)·Σ w² over all given weight tensors, as a scalar graph node."""
    lambda_wd = float(lambda_wd)
    if not math.isfinite(lambda_wd) or lambda_wd < 0.0:
        raise ParameterError("lambda_wd must be finite and non-negative")
    weights = list(weights)
    if lambda_wd == 0.0 or not weights:
        return Tensor(np.zeros(1))
    total = None
    for w in weights:
        # mean(w²)·(λ·n/2) == (λ/2)·Σw², keeping reduce_mean the only reduction
        term = scale(reduce_mean(square(w)), 0.5 * lambda_wd * w.size)
        total = term if total is None else add(total, term)
    return total


def sinreq_loss(weights: Tensor, g: LevelGeometry) -> Tensor:
    """Mean of sin²(π·(w + Δ)/step) over one layer's weights."""
    return reduce_mean(sin_sq_affine(weights, g.period, g.delta))


def _assemble_total_loss(task, weights_by_layer, cfg):
    """Build the combined objective; also report each term's value.

    Terms with zero strength are measured but never added to the graph, so a
    fully switched-off configuration returns the task node itself and the
    training trajectory is bit-identical to an unregularized run.
    """
    missing = [name for name in weights_by_layer if name not in cfg.per_layer]
    if missing:
        raise ConfigError(f"regularizer config missing layer(s): {', '.join(missing)}")
    total = task
    wd_value = 0.0
    if cfg.lambda_wd > 0.0:
        wd = weight_decay_loss(weights_by_layer.values(), cfg.lambda_wd)
        wd_value = float(wd.data[0])
        total = add(total, wd)
    sinreq_values = {}
    for name, w in weights_by_layer.items():
        entry = cfg.per_layer[name]
        node = sinreq_loss(w, entry.geometry)
        sinreq_values[name] = float(node.data[0])
        if entry.lambda_q > 0.0:
            total = add(total, scale(node, entry.lambda_q))
    return total, wd_value, sinreq_values


def total_loss(task: Tensor, weights_by_layer: Mapping[str, Tensor], cfg: RegularizerConfig) -> Tensor:
    """task + (λ/2)·Σw² + Σ_layers λ_q·sinreq_loss(layer), one scalar node."""
    total, _, _ = _assemble_total_loss(task, weights_by_layer, cfg)
    return total
