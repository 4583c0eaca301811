"""Network definition, initialization, forward passes, and checkpoints.

A model is a flat stack of layers (dense, conv2d, relu, flatten) whose shapes
are verified once when the spec is built, not at first forward. Trainable
layers hold a full-precision shadow weight and bias; the quantized view used
by the STE forward mode is always derived on the fly and never stored, so the
shadow copy remains the single source of truth that gradient updates mutate.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CheckpointError, ConfigError, DimensionError
from .quantize import QuantizerSpec, apply_quantizer
from .tensor import Tensor, add, conv2d, matmul, relu, reshape, ste

CHECKPOINT_MAGIC = b"SINREQCK"
CHECKPOINT_VERSION = 1
_DTYPE_F64 = 1


class LayerKind(str, enum.Enum):
    DENSE = "dense"
    CONV2D = "conv2d"
    RELU = "relu"
    FLATTEN = "flatten"


class ForwardMode(str, enum.Enum):
    FULL_PRECISION = "full_precision"
    QUANTIZED_STE = "quantized_ste"


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the stack; only the fields for its kind are set.

    Dense uses in_features/out_features with weight layout [in, out] acting on
    row-vector batches. Conv2d uses in_channels/out_channels/kernel_size with
    stride and padding. `quant` is allowed on trainable layers only.
    """

    name: str
    kind: LayerKind
    in_features: Optional[int] = None
    out_features: Optional[int] = None
    in_channels: Optional[int] = None
    out_channels: Optional[int] = None
    kernel_size: Optional[int] = None
    stride: int = 1
    padding: int = 0
    quant: Optional[QuantizerSpec] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))

    @property
    def trainable(self) -> bool:
        return self.kind in (LayerKind.DENSE, LayerKind.CONV2D)


@dataclass(frozen=True)
class ModelSpec:
    """Layer stack plus the per-sample input shape it consumes."""

    input_shape: tuple
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        _check_composition(self)

    def trainable_layers(self):
        return [layer for layer in self.layers if layer.trainable]


def _conv_out(size, kernel, stride, padding, name):
    out, rem = divmod(size + 2 * padding - kernel, stride)
    out += 1
    if rem != 0 or out <= 0:
        raise ConfigError(
            f"layer {name!r}: spatial size {size} with kernel {kernel}, "
            f"stride {stride}, padding {padding} gives no integral output"
        )
    return out


def _check_composition(spec: ModelSpec):
    """Walk the stack symbolically and reject any shape mismatch up front."""
    names = [layer.name for layer in spec.layers]
    if len(set(names)) != len(names):
        raise ConfigError("layer names must be unique")
    shape = spec.input_shape
    for layer in spec.layers:
        if layer.quant is not None and not layer.trainable:
            raise ConfigError(f"layer {layer.name!r}: only dense/conv2d layers can quantize")
        if layer.kind is LayerKind.DENSE:
            if layer.in_features is None or layer.out_features is None:
                raise ConfigError(f"layer {layer.name!r}: dense needs in/out features")
            if shape != (layer.in_features,):
                raise ConfigError(
                    f"layer {layer.name!r}: expects {layer.in_features} features, "
                    f"previous layer produces {shape}"
                )
            shape = (layer.out_features,)
        elif layer.kind is LayerKind.CONV2D:
            if None in (layer.in_channels, layer.out_channels, layer.kernel_size):
                raise ConfigError(f"layer {layer.name!r}: conv2d needs channels and kernel size")
            if len(shape) != 3 or shape[0] != layer.in_channels:
                raise ConfigError(
                    f"layer {layer.name!r}: expects [C={layer.in_channels},H,W], got {shape}"
                )
            h = _conv_out(shape[1], layer.kernel_size, layer.stride, layer.padding, layer.name)
            w = _conv_out(shape[2], layer.kernel_size, layer.stride, layer.padding, layer.name)
            shape = (layer.out_channels, h, w)
        elif layer.kind is LayerKind.FLATTEN:
            shape = (int(np.prod(shape)),)
        # relu leaves the shape unchanged
    if len(shape) != 1:
        raise ConfigError(f"model must end with flat logits, got output shape {shape}")


class Model:
    """Layer stack plus its full-precision shadow parameters."""

    def __init__(self, spec: ModelSpec, params):
        self.spec = spec
        self.params = params  # name -> (weight Tensor, bias Tensor)

    def parameters(self):
        out = []
        for layer in self.spec.trainable_layers():
            w, b = self.params[layer.name]
            out.extend((w, b))
        return out

    def weights_by_layer(self):
        return {layer.name: self.params[layer.name][0] for layer in self.spec.trainable_layers()}

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def clone(self) -> "Model":
        params = {
            name: (
                Tensor(w.data.copy(), requires_grad=True),
                Tensor(b.data.copy(), requires_grad=True),
            )
            for name, (w, b) in self.params.items()
        }
        return Model(self.spec, params)


def init(spec: ModelSpec, seed: int) -> Model:
    """Glorot-uniform weights, zero biases, deterministic in `seed`."""
    rng = np.random.default_rng(seed)
    params = {}
    for layer in spec.trainable_layers():
        if layer.kind is LayerKind.DENSE:
            shape = (layer.in_features, layer.out_features)
            fan_in, fan_out = layer.in_features, layer.out_features
            bias_size = layer.out_features
        else:
            shape = (layer.out_channels, layer.in_channels, layer.kernel_size, layer.kernel_size)
            fan_in = layer.in_channels * layer.kernel_size**2
            fan_out = layer.out_channels * layer.kernel_size**2
            bias_size = layer.out_channels
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-bound, bound, shape)
        params[layer.name] = (
            Tensor(weight, requires_grad=True),
            Tensor(np.zeros(bias_size), requires_grad=True),
        )
    return Model(spec, params)


def forward(model: Model, x, mode: ForwardMode = ForwardMode.FULL_PRECISION) -> Tensor:
    """Run the stack on a batch, returning the logits node.

    QUANTIZED_STE swaps each quantized layer's weight for its quantized value
    while keeping the identity Jacobian, so gradients land on the shadow copy
    unchanged. Shadow weights are never mutated here.
    """
    mode = ForwardMode(mode)
    h = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    expected = model.spec.input_shape
    if h.shape[1:] != expected:
        raise DimensionError(f"input shape {h.shape} does not match (batch,)+{expected}")
    for layer in model.spec.layers:
        if layer.kind is LayerKind.RELU:
            h = relu(h)
        elif layer.kind is LayerKind.FLATTEN:
            h = reshape(h, (h.shape[0], h.size // h.shape[0]))
        else:
            w, b = model.params[layer.name]
            if mode is ForwardMode.QUANTIZED_STE:
                if layer.quant is None:
                    raise ConfigError(
                        f"layer {layer.name!r} has no quantizer spec but mode is quantized"
                    )
                w = ste(w, apply_quantizer(w.data, layer.quant))
            if layer.kind is LayerKind.DENSE:
                h = add(matmul(h, w), b)
            else:
                h = add(conv2d(h, w, layer.stride, layer.padding), b)
    return h


def snapped_clone(model: Model, geometries) -> Model:
    """Copy of the model with each layer's weights snapped to its level set."""
    from .quantize import snap_to_levels

    clone = model.clone()
    for layer in model.spec.trainable_layers():
        if layer.name not in geometries:
            raise ConfigError(f"no level geometry for layer {layer.name!r}")
        w, b = clone.params[layer.name]
        snapped = Tensor(snap_to_levels(w.data, geometries[layer.name]), requires_grad=True)
        clone.params[layer.name] = (snapped, b)
    return clone


def _param_records(model: Model):
    for layer in model.spec.trainable_layers():
        w, b = model.params[layer.name]
        yield f"{layer.name}.weight", w
        yield f"{layer.name}.bias", b


def save_checkpoint(model: Model, path) -> None:
    """Write all parameter tensors in the fixed little-endian binary layout."""
    records = list(_param_records(model))
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(records)))
        for name, tensor in records:
            encoded = name.encode("utf-8")
            arr = tensor.data
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BI", _DTYPE_F64, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8", copy=False).tobytes())


def load_checkpoint(path):
    """Parse a checkpoint into an ordered {record name: float64 array} dict."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {blob[:8]!r}")
    if len(blob) < 16:
        raise CheckpointError("truncated checkpoint header")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    offset = 16
    out = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            dtype_tag, rank = struct.unpack_from("<BI", blob, offset)
            offset += 5
            dims = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
        except struct.error as exc:
            raise CheckpointError("truncated checkpoint record header") from exc
        if dtype_tag != _DTYPE_F64:
            raise CheckpointError(f"unknown dtype tag {dtype_tag} for {name!r}")
        n_bytes = 8 * int(np.prod(dims, dtype=np.int64))
        if offset + n_bytes > len(blob):
            raise CheckpointError(f"truncated data for {name!r}")
        out[name] = np.frombuffer(blob[offset : offset + n_bytes], dtype="<f8").reshape(dims).copy()
        offset += n_bytes
    if offset != len(blob):
        raise CheckpointError(f"{len(blob) - offset} trailing bytes after last record")
    return out


def load_into(model: Model, path) -> None:
    """Load a checkpoint into `model`, requiring an exact name/shape match."""
    loaded = load_checkpoint(path)
    expected = {name: t for name, t in _param_records(model)}
    if set(loaded) != set(expected):
        raise CheckpointError(
            f"checkpoint records {sorted(loaded)} do not match model {sorted(expected)}"
        )
    for name, arr in loaded.items():
        tensor = expected[name]
        if arr.shape != tensor.data.shape:
            raise CheckpointError(
                f"{name}: checkpoint shape {arr.shape} != model shape {tensor.data.shape}"
            )
        tensor.data[...] = arr
