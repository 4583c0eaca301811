"""Experiment configuration: a strict, versioned JSON schema.

Unknown keys anywhere in the document are rejected rather than ignored, so a
misspelled strength or schedule field fails loudly instead of silently
training the wrong experiment. Parsing resolves defaults, which means the
config echoed into a run directory re-parses to an equal ExperimentConfig.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Union

from .data import load_idx, make_blobs, make_spirals, split_dataset
from .errors import ConfigError
from .model import LayerKind, LayerSpec, ModelSpec
from .quantize import QuantizerSpec, Scheme, level_geometry
from .regularizers import LayerRegularizer, RegularizerConfig
from .schedule import LambdaSchedule, ScheduleKind
from .train import TrainConfig, TrainMode

SCHEMA_VERSION = 1

_REQUIRED = object()


class _Section:
    """A JSON object whose keys must all be consumed."""

    def __init__(self, raw, ctx):
        if not isinstance(raw, dict):
            raise ConfigError(f"{ctx} must be a JSON object")
        self._raw = dict(raw)
        self._ctx = ctx

    def take(self, key, default=_REQUIRED):
        if key in self._raw:
            return self._raw.pop(key)
        if default is _REQUIRED:
            raise ConfigError(f"{self._ctx}: missing required key {key!r}")
        return default

    def finish(self):
        if self._raw:
            raise ConfigError(f"{self._ctx}: unknown key(s) {sorted(self._raw)}")


def _as_int(value, ctx):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{ctx} must be an integer, got {value!r}")
    return value


def _as_num(value, ctx):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{ctx} must be a number, got {value!r}")
    return float(value)


def _as_str(value, ctx):
    if not isinstance(value, str):
        raise ConfigError(f"{ctx} must be a string, got {value!r}")
    return value


def _as_bool(value, ctx):
    if not isinstance(value, bool):
        raise ConfigError(f"{ctx} must be a boolean, got {value!r}")
    return value


@dataclass(frozen=True)
class ScheduleConfig:
    """Schedule as configured; horizons may be epoch-based until resolved."""

    kind: ScheduleKind
    value: float = 0.0
    start: float = 0.0
    end: float = 0.0
    horizon_steps: Optional[int] = None
    horizon_epochs: Optional[int] = None

    def resolve(self, steps_per_epoch: int) -> LambdaSchedule:
        if self.kind is ScheduleKind.CONSTANT:
            return LambdaSchedule.constant(self.value)
        horizon = (
            self.horizon_steps
            if self.horizon_steps is not None
            else self.horizon_epochs * steps_per_epoch
        )
        return LambdaSchedule.exponential(self.start, self.end, horizon)


@dataclass(frozen=True)
class DatasetConfig:
    kind: str
    classes: int = 0
    samples_per_class: int = 0
    noise: float = 0.0
    seed: int = 0
    dim: int = 2
    turns: float = 1.75
    images: str = ""
    labels: str = ""
    train_fraction: float = 0.8
    val_fraction: float = 0.2
    split_seed: int = 0

    def build(self):
        """Materialize the dataset and return its (train, val) splits."""
        if self.kind == "blobs":
            ds = make_blobs(self.classes, self.samples_per_class, self.noise, self.seed, self.dim)
        elif self.kind == "spirals":
            ds = make_spirals(self.classes, self.samples_per_class, self.noise, self.seed, self.turns)
        else:
            ds = load_idx(self.images, self.labels)
        return split_dataset(ds, self.train_fraction, self.val_fraction, self.split_seed)


@dataclass(frozen=True)
class TrainSettings:
    mode: TrainMode
    epochs: int
    batch_size: int
    learning_rate: float
    momentum: float
    seed: int
    lambda_wd: float
    lambda_q: Union[float, Mapping[str, float]]
    schedule: Union[ScheduleConfig, Mapping[str, ScheduleConfig], None]
    eval_quantize: bool
    init_checkpoint: Optional[str]


@dataclass(frozen=True)
class AnalysisSettings:
    histogram_bins: int = 40
    histogram_range: tuple = (-1.2, 1.2)
    trajectories_per_layer: int = 10


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    dataset: DatasetConfig
    train: TrainSettings
    analysis: AnalysisSettings
    output_dir: str

    def to_json_dict(self) -> dict:
        return _to_json_dict(self)


def _parse_quant(raw, ctx) -> QuantizerSpec:
    sec = _Section(raw, ctx)
    scheme = _as_str(sec.take("scheme"), f"{ctx}.scheme")
    bitwidth = _as_int(sec.take("bitwidth"), f"{ctx}.bitwidth")
    sec.finish()
    try:
        return QuantizerSpec(Scheme(scheme), bitwidth)
    except ValueError as exc:
        raise ConfigError(f"{ctx}: {exc}") from exc


def _parse_layer(raw, index) -> LayerSpec:
    ctx = f"model.layers[{index}]"
    sec = _Section(raw, ctx)
    name = _as_str(sec.take("name"), f"{ctx}.name")
    kind = _as_str(sec.take("kind"), f"{ctx}.kind")
    try:
        kind = LayerKind(kind)
    except ValueError as exc:
        raise ConfigError(f"{ctx}: unknown layer kind {kind!r}") from exc
    kwargs = {}
    if kind is LayerKind.DENSE:
        kwargs["in_features"] = _as_int(sec.take("in_features"), f"{ctx}.in_features")
        kwargs["out_features"] = _as_int(sec.take("out_features"), f"{ctx}.out_features")
        kwargs["quant"] = _parse_quant(sec.take("quant"), f"{ctx}.quant")
    elif kind is LayerKind.CONV2D:
        kwargs["in_channels"] = _as_int(sec.take("in_channels"), f"{ctx}.in_channels")
        kwargs["out_channels"] = _as_int(sec.take("out_channels"), f"{ctx}.out_channels")
        kwargs["kernel_size"] = _as_int(sec.take("kernel_size"), f"{ctx}.kernel_size")
        kwargs["stride"] = _as_int(sec.take("stride", 1), f"{ctx}.stride")
        kwargs["padding"] = _as_int(sec.take("padding", 0), f"{ctx}.padding")
        kwargs["quant"] = _parse_quant(sec.take("quant"), f"{ctx}.quant")
    sec.finish()
    return LayerSpec(name=name, kind=kind, **kwargs)


def _parse_model(raw) -> ModelSpec:
    sec = _Section(raw, "model")
    input_shape = sec.take("input_shape")
    if not isinstance(input_shape, list) or not input_shape:
        raise ConfigError("model.input_shape must be a non-empty list of integers")
    input_shape = tuple(_as_int(s, "model.input_shape entry") for s in input_shape)
    layers_raw = sec.take("layers")
    if not isinstance(layers_raw, list) or not layers_raw:
        raise ConfigError("model.layers must be a non-empty list")
    layers = tuple(_parse_layer(layer, i) for i, layer in enumerate(layers_raw))
    sec.finish()
    return ModelSpec(input_shape, layers)


def _parse_dataset(raw) -> DatasetConfig:
    sec = _Section(raw, "dataset")
    kind = _as_str(sec.take("kind"), "dataset.kind")
    if kind not in ("blobs", "spirals", "idx_digits"):
        raise ConfigError(f"dataset.kind must be blobs, spirals, or idx_digits, got {kind!r}")
    kwargs = {"kind": kind}
    if kind == "idx_digits":
        kwargs["images"] = _as_str(sec.take("images"), "dataset.images")
        kwargs["labels"] = _as_str(sec.take("labels"), "dataset.labels")
    else:
        kwargs["classes"] = _as_int(sec.take("classes"), "dataset.classes")
        kwargs["samples_per_class"] = _as_int(
            sec.take("samples_per_class"), "dataset.samples_per_class"
        )
        kwargs["noise"] = _as_num(sec.take("noise"), "dataset.noise")
        kwargs["seed"] = _as_int(sec.take("seed"), "dataset.seed")
        if kind == "blobs":
            kwargs["dim"] = _as_int(sec.take("dim", 2), "dataset.dim")
        else:
            kwargs["turns"] = _as_num(sec.take("turns", 1.75), "dataset.turns")
    split = _Section(sec.take("split"), "dataset.split")
    kwargs["train_fraction"] = _as_num(split.take("train"), "dataset.split.train")
    kwargs["val_fraction"] = _as_num(split.take("val"), "dataset.split.val")
    split.finish()
    if abs(kwargs["train_fraction"] + kwargs["val_fraction"] - 1.0) > 1e-9:
        raise ConfigError("dataset.split fractions must sum to 1")
    kwargs["split_seed"] = _as_int(sec.take("split_seed", 0), "dataset.split_seed")
    sec.finish()
    return DatasetConfig(**kwargs)


def _parse_schedule(raw, ctx) -> ScheduleConfig:
    sec = _Section(raw, ctx)
    kind = _as_str(sec.take("kind"), f"{ctx}.kind")
    try:
        kind = ScheduleKind(kind)
    except ValueError as exc:
        raise ConfigError(f"{ctx}: unknown schedule kind {kind!r}") from exc
    if kind is ScheduleKind.CONSTANT:
        cfg = ScheduleConfig(kind, value=_as_num(sec.take("value"), f"{ctx}.value"))
    else:
        start = _as_num(sec.take("start"), f"{ctx}.start")
        end = _as_num(sec.take("end"), f"{ctx}.end")
        horizon_steps = sec.take("horizon_steps", None)
        horizon_epochs = sec.take("horizon_epochs", None)
        if (horizon_steps is None) == (horizon_epochs is None):
            raise ConfigError(f"{ctx}: give exactly one of horizon_steps/horizon_epochs")
        if horizon_steps is not None:
            horizon_steps = _as_int(horizon_steps, f"{ctx}.horizon_steps")
        if horizon_epochs is not None:
            horizon_epochs = _as_int(horizon_epochs, f"{ctx}.horizon_epochs")
        cfg = ScheduleConfig(
            kind, start=start, end=end, horizon_steps=horizon_steps, horizon_epochs=horizon_epochs
        )
    sec.finish()
    return cfg


def _parse_train(raw, trainable_names) -> TrainSettings:
    sec = _Section(raw, "train")
    mode = _as_str(sec.take("mode"), "train.mode")
    try:
        mode = TrainMode(mode)
    except ValueError as exc:
        raise ConfigError(f"train.mode: unknown mode {mode!r}") from exc
    lambda_q = sec.take("lambda_q", 1.0)
    if isinstance(lambda_q, dict):
        extra = set(lambda_q) - set(trainable_names)
        missing = set(trainable_names) - set(lambda_q)
        if extra or missing:
            raise ConfigError(
                f"train.lambda_q map must cover the trainable layers exactly "
                f"(extra={sorted(extra)}, missing={sorted(missing)})"
            )
        lambda_q = {k: _as_num(v, f"train.lambda_q[{k!r}]") for k, v in lambda_q.items()}
    else:
        lambda_q = _as_num(lambda_q, "train.lambda_q")
    schedule_raw = sec.take("schedule", None)
    if schedule_raw is None:
        schedule = None
    elif isinstance(schedule_raw, dict) and "per_layer" in schedule_raw:
        outer = _Section(schedule_raw, "train.schedule")
        per_layer_raw = outer.take("per_layer")
        outer.finish()
        if not isinstance(per_layer_raw, dict):
            raise ConfigError("train.schedule.per_layer must be an object")
        unknown = set(per_layer_raw) - set(trainable_names)
        if unknown:
            raise ConfigError(f"train.schedule.per_layer: unknown layer(s) {sorted(unknown)}")
        schedule = {
            name: _parse_schedule(v, f"train.schedule.per_layer[{name!r}]")
            for name, v in per_layer_raw.items()
        }
    else:
        schedule = _parse_schedule(schedule_raw, "train.schedule")
    settings = TrainSettings(
        mode=mode,
        epochs=_as_int(sec.take("epochs"), "train.epochs"),
        batch_size=_as_int(sec.take("batch_size"), "train.batch_size"),
        learning_rate=_as_num(sec.take("learning_rate", 0.05), "train.learning_rate"),
        momentum=_as_num(sec.take("momentum", 0.9), "train.momentum"),
        seed=_as_int(sec.take("seed", 0), "train.seed"),
        lambda_wd=_as_num(sec.take("lambda_wd", 0.0), "train.lambda_wd"),
        lambda_q=lambda_q,
        schedule=schedule,
        eval_quantize=_as_bool(sec.take("eval_quantize", False), "train.eval_quantize"),
        init_checkpoint=(
            None
            if (ckpt := sec.take("init_checkpoint", None)) is None
            else _as_str(ckpt, "train.init_checkpoint")
        ),
    )
    sec.finish()
    return settings


def _parse_analysis(raw) -> AnalysisSettings:
    if raw is None:
        return AnalysisSettings()
    sec = _Section(raw, "analysis")
    bins = _as_int(sec.take("histogram_bins", 40), "analysis.histogram_bins")
    rng = sec.take("histogram_range", [-1.2, 1.2])
    if not isinstance(rng, list) or len(rng) != 2:
        raise ConfigError("analysis.histogram_range must be [lo, hi]")
    rng = (
        _as_num(rng[0], "analysis.histogram_range[0]"),
        _as_num(rng[1], "analysis.histogram_range[1]"),
    )
    per_layer = _as_int(sec.take("trajectories_per_layer", 10), "analysis.trajectories_per_layer")
    sec.finish()
    return AnalysisSettings(bins, rng, per_layer)


def parse_config(doc) -> ExperimentConfig:
    """Validate a parsed JSON document against the schema."""
    sec = _Section(doc, "config")
    version = _as_int(sec.take("schema_version"), "schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version {version} not supported (this build speaks {SCHEMA_VERSION})"
        )
    model = _parse_model(sec.take("model"))
    trainable = [layer.name for layer in model.trainable_layers()]
    cfg = ExperimentConfig(
        model=model,
        dataset=_parse_dataset(sec.take("dataset")),
        train=_parse_train(sec.take("train"), trainable),
        analysis=_parse_analysis(sec.take("analysis", None)),
        output_dir=_as_str(sec.take("output_dir"), "output_dir"),
    )
    sec.finish()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(json.load(fh))


def _schedule_to_json(s: ScheduleConfig) -> dict:
    if s.kind is ScheduleKind.CONSTANT:
        return {"kind": "constant", "value": s.value}
    out = {"kind": "exponential", "start": s.start, "end": s.end}
    if s.horizon_steps is not None:
        out["horizon_steps"] = s.horizon_steps
    else:
        out["horizon_epochs"] = s.horizon_epochs
    return out


def _to_json_dict(cfg: ExperimentConfig) -> dict:
    layers = []
    for layer in cfg.model.layers:
        entry = {"name": layer.name, "kind": layer.kind.value}
        if layer.kind is LayerKind.DENSE:
            entry["in_features"] = layer.in_features
            entry["out_features"] = layer.out_features
        elif layer.kind is LayerKind.CONV2D:
            entry["in_channels"] = layer.in_channels
            entry["out_channels"] = layer.out_channels
            entry["kernel_size"] = layer.kernel_size
            entry["stride"] = layer.stride
            entry["padding"] = layer.padding
        if layer.quant is not None:
            entry["quant"] = {"scheme": layer.quant.scheme.value, "bitwidth": layer.quant.bitwidth}
        layers.append(entry)
    ds = cfg.dataset
    dataset = {"kind": ds.kind}
    if ds.kind == "idx_digits":
        dataset["images"] = ds.images
        dataset["labels"] = ds.labels
    else:
        dataset["classes"] = ds.classes
        dataset["samples_per_class"] = ds.samples_per_class
        dataset["noise"] = ds.noise
        dataset["seed"] = ds.seed
        if ds.kind == "blobs":
            dataset["dim"] = ds.dim
        else:
            dataset["turns"] = ds.turns
    dataset["split"] = {"train": ds.train_fraction, "val": ds.val_fraction}
    dataset["split_seed"] = ds.split_seed
    tr = cfg.train
    if tr.schedule is None:
        schedule = None
    elif isinstance(tr.schedule, Mapping):
        schedule = {"per_layer": {k: _schedule_to_json(v) for k, v in tr.schedule.items()}}
    else:
        schedule = _schedule_to_json(tr.schedule)
    train = {
        "mode": tr.mode.value,
        "epochs": tr.epochs,
        "batch_size": tr.batch_size,
        "learning_rate": tr.learning_rate,
        "momentum": tr.momentum,
        "seed": tr.seed,
        "lambda_wd": tr.lambda_wd,
        "lambda_q": dict(tr.lambda_q) if isinstance(tr.lambda_q, Mapping) else tr.lambda_q,
        "schedule": schedule,
        "eval_quantize": tr.eval_quantize,
    }
    if tr.init_checkpoint is not None:
        train["init_checkpoint"] = tr.init_checkpoint
    return {
        "schema_version": SCHEMA_VERSION,
        "output_dir": cfg.output_dir,
        "model": {"input_shape": list(cfg.model.input_shape), "layers": layers},
        "dataset": dataset,
        "train": train,
        "analysis": {
            "histogram_bins": cfg.analysis.histogram_bins,
            "histogram_range": list(cfg.analysis.histogram_range),
            "trajectories_per_layer": cfg.analysis.trajectories_per_layer,
        },
    }


def build_train_config(cfg: ExperimentConfig, steps_per_epoch: int) -> TrainConfig:
    """Resolve config-level settings into a runnable TrainConfig."""
    tr = cfg.train
    per_layer = {}
    for layer in cfg.model.trainable_layers():
        if layer.quant is None:
            raise ConfigError(f"layer {layer.name!r} has no quantizer spec")
        lam = tr.lambda_q[layer.name] if isinstance(tr.lambda_q, Mapping) else tr.lambda_q
        per_layer[layer.name] = LayerRegularizer(lam, level_geometry(layer.quant))
    if tr.schedule is None:
        schedule = None
    elif isinstance(tr.schedule, Mapping):
        schedule = {k: v.resolve(steps_per_epoch) for k, v in tr.schedule.items()}
    else:
        schedule = tr.schedule.resolve(steps_per_epoch)
    return TrainConfig(
        mode=tr.mode,
        epochs=tr.epochs,
        batch_size=tr.batch_size,
        learning_rate=tr.learning_rate,
        momentum=tr.momentum,
        seed=tr.seed,
        regularizer=RegularizerConfig(tr.lambda_wd, per_layer),
        schedule=schedule,
        eval_quantize=tr.eval_quantize,
        trajectories_per_layer=cfg.analysis.trajectories_per_layer,
    )


def with_mode(cfg: ExperimentConfig, mode: TrainMode, output_dir: str) -> ExperimentConfig:
    """Copy of `cfg` with a different training mode and output directory."""
    return replace(cfg, train=replace(cfg.train, mode=mode), output_dir=output_dir)
