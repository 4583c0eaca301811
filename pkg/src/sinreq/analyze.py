"""Run metrics and figure data: quantization error, histograms, trajectories.

Everything here is read-only over model snapshots. CSV exports are the
machine-readable form of the usual convergence figures: one metrics row per
epoch, per-epoch weight histograms, and per-layer weight trajectories.
Decimal values are written with 9 significant digits so repeated runs of the
same configuration produce byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import DimensionError, ParameterError
from .quantize import LevelGeometry, snap_to_levels
from .regularizers import sinreq_loss
from .tensor import Tensor

# "near a level" means within this fraction of the level spacing
NEAR_LEVEL_REL_EPS = 0.05


@dataclass(frozen=True)
class LayerEpochMetrics:
    sinreq_loss: float
    lambda_q: float
    quant_error: float
    frac_near_level: float

    def __post_init__(self):
        if self.quant_error < 0.0:
            raise ParameterError("quant_error cannot be negative")
        if not 0.0 <= self.frac_near_level <= 1.0:
            raise ParameterError("frac_near_level must be in [0, 1]")


@dataclass(frozen=True)
class RunRecord:
    """Per-epoch training metrics plus sampled weight trajectories."""

    epoch: int
    train_acc: float
    val_acc: float
    task_loss: float
    total_loss: float
    per_layer: Mapping[str, LayerEpochMetrics]
    trajectories: Mapping[str, tuple]

    def __post_init__(self):
        for acc in (self.train_acc, self.val_acc):
            if not 0.0 <= acc <= 1.0:
                raise ParameterError("accuracies must be in [0, 1]")


def quant_error(w, g: LevelGeometry) -> float:
    """Mean absolute distance from each weight to its nearest level."""
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0:
        raise DimensionError("quant_error of an empty tensor")
    return float(np.mean(np.abs(w - snap_to_levels(w, g))))


def frac_near_level(w, g: LevelGeometry, rel_eps: float = NEAR_LEVEL_REL_EPS) -> float:
    """Fraction of weights within rel_eps·period of a quantization level."""
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0:
        raise DimensionError("frac_near_level of an empty tensor")
    return float(np.mean(np.abs(w - snap_to_levels(w, g)) <= rel_eps * g.period))


def sinreq_value(w, g: LevelGeometry) -> float:
    """The periodic penalty of a raw weight array, without building a graph."""
    return float(sinreq_loss(Tensor(np.asarray(w, dtype=np.float64)), g).data[0])


def histogram(w, bins: int, lo: float, hi: float) -> np.ndarray:
    """Equal-width bin counts over [lo, hi]; out-of-range values clamp to the edge bins."""
    if bins < 1:
        raise ParameterError("need at least one bin")
    if not lo < hi:
        raise ParameterError(f"invalid histogram range [{lo}, {hi}]")
    w = np.asarray(w, dtype=np.float64).ravel()
    idx = np.floor((w - lo) / (hi - lo) * bins).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    return np.bincount(idx, minlength=bins)


class TrajectoryTracker:
    """Samples a fixed set of weight indices per layer over a run.

    Indices are chosen once (seeded, without replacement) and never change,
    so each tracked weight traces a single line across epochs.
    """

    def __init__(self, model, per_layer: int, seed: int):
        if per_layer < 1:
            raise ParameterError("must track at least one weight per layer")
        rng = np.random.default_rng(seed)
        self.indices = {}
        for layer in model.spec.trainable_layers():
            w = model.params[layer.name][0]
            if per_layer > w.size:
                raise ParameterError(
                    f"layer {layer.name!r} has {w.size} weights, cannot track {per_layer}"
                )
            self.indices[layer.name] = np.sort(rng.choice(w.size, size=per_layer, replace=False))

    def sample(self, model):
        out = {}
        for name, idx in self.indices.items():
            flat = model.params[name][0].data.ravel()
            out[name] = tuple((int(i), float(flat[i])) for i in idx)
        return out


def _fmt(x) -> str:
    return format(float(x), ".9g")


def metrics_header(layer_names) -> list:
    cols = ["epoch", "train_acc", "val_acc", "task_loss", "total_loss"]
    for name in layer_names:
        cols.extend(
            (
                f"{name}_sinreq_loss",
                f"{name}_lambda_q",
                f"{name}_quant_error",
                f"{name}_frac_near_level",
            )
        )
    return cols


def write_metrics_csv(path, records) -> None:
    """One row per epoch in the fixed column order, header mandatory."""
    layer_names = list(records[0].per_layer) if records else []
    lines = [",".join(metrics_header(layer_names))]
    for rec in records:
        row = [str(rec.epoch), _fmt(rec.train_acc), _fmt(rec.val_acc), _fmt(rec.task_loss), _fmt(rec.total_loss)]
        for name in layer_names:
            m = rec.per_layer[name]
            row.extend((_fmt(m.sinreq_loss), _fmt(m.lambda_q), _fmt(m.quant_error), _fmt(m.frac_near_level)))
        lines.append(",".join(row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_histogram_csv(path, counts, lo: float, hi: float) -> None:
    counts = np.asarray(counts)
    edges = np.linspace(lo, hi, len(counts) + 1)
    lines = ["bin_lo,bin_hi,count"]
    for i, count in enumerate(counts):
        lines.append(f"{_fmt(edges[i])},{_fmt(edges[i + 1])},{int(count)}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_trajectory_csvs(out_dir, records) -> None:
    """traj_<layer>.csv: epoch column plus one column per tracked weight index."""
    import os

    if not records:
        return
    for name in records[0].trajectories:
        idx = [i for i, _ in records[0].trajectories[name]]
        lines = [",".join(["epoch"] + [f"w{i}" for i in idx])]
        for rec in records:
            vals = [_fmt(v) for _, v in rec.trajectories[name]]
            lines.append(",".join([str(rec.epoch)] + vals))
        with open(os.path.join(out_dir, f"traj_{name}.csv"), "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
