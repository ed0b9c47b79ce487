"""Declarative sequential models: specs, parameter init, depth-indexed slicing.

A :class:`ModelSpec` is an ordered layer list that can be validated, sliced at
a copy depth ``d`` (counted from the output end, non-parametric layers
included), widened, serialized into run configs, and instantiated into a
:class:`Model` with He-initialized parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np

import randlab.tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor


@dataclass(frozen=True)
class Conv:
    c_in: int
    c_out: int
    k: int
    stride: int = 1
    pad: int = 0


@dataclass(frozen=True)
class Dense:
    d_in: int
    d_out: int


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class MaxPool:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dropout:
    p: float


LayerSpec = Union[Conv, Dense, Relu, MaxPool, Flatten, Dropout]

Shape = Union[int, tuple[int, int, int]]

_KINDS = {Conv: "conv", Dense: "dense", Relu: "relu", MaxPool: "maxpool", Flatten: "flatten", Dropout: "dropout"}


def layer_to_dict(layer: LayerSpec) -> dict:
    d = {"kind": _KINDS[type(layer)]}
    if isinstance(layer, Conv):
        d.update(c_in=layer.c_in, c_out=layer.c_out, k=layer.k, stride=layer.stride, pad=layer.pad)
    elif isinstance(layer, Dense):
        d.update(d_in=layer.d_in, d_out=layer.d_out)
    elif isinstance(layer, Dropout):
        d.update(p=layer.p)
    return d


def layer_from_dict(d: dict) -> LayerSpec:
    kind = d.get("kind")
    try:
        if kind == "conv":
            return Conv(int(d["c_in"]), int(d["c_out"]), int(d["k"]), int(d.get("stride", 1)), int(d.get("pad", 0)))
        if kind == "dense":
            return Dense(int(d["d_in"]), int(d["d_out"]))
        if kind == "relu":
            return Relu()
        if kind == "maxpool":
            return MaxPool()
        if kind == "flatten":
            return Flatten()
        if kind == "dropout":
            return Dropout(float(d["p"]))
    except KeyError as exc:
        raise ConfigError(f"layer {d!r} missing field {exc}") from exc
    raise ConfigError(f"unknown layer kind {kind!r}")


def _shape_after(layer: LayerSpec, shape: Shape, index: int) -> Shape:
    """Activation shape after ``layer`` given its input ``shape``."""
    where = f"layer {index} ({_KINDS[type(layer)]})"
    if isinstance(layer, Conv):
        if not isinstance(shape, tuple):
            raise ConfigError(f"{where}: needs (channels, h, w) input, got {shape} features")
        c, h, w = shape
        if c != layer.c_in:
            raise ConfigError(f"{where}: expects {layer.c_in} channels, gets {c}")
        if layer.k % 2 == 0:
            raise ConfigError(f"{where}: kernel size must be odd, got {layer.k}")
        if h + 2 * layer.pad < layer.k or w + 2 * layer.pad < layer.k:
            raise ConfigError(f"{where}: kernel {layer.k} exceeds padded input {h}x{w}")
        span_h = h + 2 * layer.pad - layer.k
        span_w = w + 2 * layer.pad - layer.k
        if span_h % layer.stride or span_w % layer.stride:
            raise ConfigError(f"{where}: non-integer output size")
        return (layer.c_out, span_h // layer.stride + 1, span_w // layer.stride + 1)
    if isinstance(layer, Dense):
        if not isinstance(shape, int):
            raise ConfigError(f"{where}: needs flat features, got shape {shape}; add a flatten layer")
        if shape != layer.d_in:
            raise ConfigError(f"{where}: expects {layer.d_in} features, gets {shape}")
        return layer.d_out
    if isinstance(layer, MaxPool):
        if not isinstance(shape, tuple):
            raise ConfigError(f"{where}: needs (channels, h, w) input")
        c, h, w = shape
        if h % 2 or w % 2:
            raise ConfigError(f"{where}: needs even spatial dims, got {h}x{w}")
        return (c, h // 2, w // 2)
    if isinstance(layer, Flatten):
        return int(np.prod(shape)) if isinstance(shape, tuple) else shape
    if isinstance(layer, Dropout):
        if not (0.0 <= layer.p < 1.0):
            raise ConfigError(f"{where}: dropout probability must be in [0, 1), got {layer.p}")
        return shape
    return shape  # Relu


@dataclass(frozen=True)
class ModelSpec:
    """Ordered layer list plus the activation shape it consumes."""

    layers: tuple[LayerSpec, ...]
    input_shape: Shape

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if isinstance(self.input_shape, list):
            object.__setattr__(self, "input_shape", tuple(self.input_shape))

    def validate(self) -> "ModelSpec":
        self.activation_shapes()
        return self

    def activation_shapes(self) -> list[Shape]:
        """Shape entering each layer, plus the final output shape (length n+1)."""
        shapes: list[Shape] = [self.input_shape]
        for i, layer in enumerate(self.layers):
            shapes.append(_shape_after(layer, shapes[-1], i))
        return shapes

    @property
    def output_shape(self) -> Shape:
        return self.activation_shapes()[-1]

    def to_dict(self) -> dict:
        shape = self.input_shape
        return {"layers": [layer_to_dict(l) for l in self.layers], "input_shape": list(shape) if isinstance(shape, tuple) else shape}

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        shape = d["input_shape"]
        return ModelSpec(tuple(layer_from_dict(l) for l in d["layers"]), tuple(shape) if isinstance(shape, list) else int(shape))


def split_at_depth(spec: ModelSpec, d: int) -> tuple[ModelSpec, ModelSpec]:
    """Slice ``spec`` so the suffix keeps the last ``d`` layers.

    ``d`` counts every layer (parametric or not) from the output end; ``d=1``
    keeps only the final layer, ``d=len(layers)`` makes the prefix empty.
    """
    total = len(spec.layers)
    if not 1 <= d <= total:
        raise ConfigError(f"copy depth must be in [1, {total}], got {d}")
    shapes = spec.activation_shapes()
    cut = total - d
    prefix = ModelSpec(spec.layers[:cut], spec.input_shape)
    suffix = ModelSpec(spec.layers[cut:], shapes[cut])
    return prefix, suffix


def widen_suffix(spec: ModelSpec, d: int, factor: float) -> ModelSpec:
    """Multiply the hidden dimensions of the depth-``d`` suffix by ``factor``.

    The suffix input and the final output dimension are preserved; widened
    dims round up.  Used for head-capacity control experiments.
    """
    if factor < 1.0:
        raise ConfigError(f"widen factor must be >= 1, got {factor}")
    prefix, suffix = split_at_depth(spec, d)
    parametric = [i for i, l in enumerate(suffix.layers) if isinstance(l, (Conv, Dense))]
    if len(parametric) < 2:
        raise ConfigError("suffix has no hidden dimension to widen")
    last = parametric[-1]
    widened: list[LayerSpec] = []
    cur = suffix.input_shape
    for i, layer in enumerate(suffix.layers):
        if isinstance(layer, Conv):
            c_out = layer.c_out if i == last else math.ceil(layer.c_out * factor)
            layer = Conv(cur[0], c_out, layer.k, layer.stride, layer.pad)
        elif isinstance(layer, Dense):
            d_out = layer.d_out if i == last else math.ceil(layer.d_out * factor)
            layer = Dense(cur, d_out)
        widened.append(layer)
        cur = _shape_after(layer, cur, i)
    out = ModelSpec(prefix.layers + tuple(widened), spec.input_shape)
    return out.validate()


# ---------------------------------------------------------------------------
# named presets (desk-scale stand-ins for large sequential CNNs)


def toy_mlp(input_shape: Shape, n_classes: int, hidden: tuple[int, int] = (64, 32), dropout: float = 0.0) -> ModelSpec:
    flat = input_shape if isinstance(input_shape, int) else int(np.prod(input_shape))
    h1, h2 = hidden
    layers: list[LayerSpec] = [Flatten(), Dense(flat, h1), Relu()]
    if dropout > 0.0:
        layers.append(Dropout(dropout))
    layers += [Dense(h1, h2), Relu()]
    if dropout > 0.0:
        layers.append(Dropout(dropout))
    layers.append(Dense(h2, n_classes))
    return ModelSpec(tuple(layers), input_shape).validate()


def toy_cnn(
    input_shape: tuple[int, int, int],
    n_classes: int,
    channels: tuple[int, int] = (4, 8),
    hidden: int = 16,
    dropout: float = 0.0,
) -> ModelSpec:
    c, h, w = input_shape
    c1, c2 = channels
    flat = c2 * (h // 4) * (w // 4)
    layers: list[LayerSpec] = [
        Conv(c, c1, 3, 1, 1),
        Relu(),
        MaxPool(),
        Conv(c1, c2, 3, 1, 1),
        Relu(),
        MaxPool(),
        Flatten(),
        Dense(flat, hidden),
        Relu(),
    ]
    if dropout > 0.0:
        layers.append(Dropout(dropout))
    layers.append(Dense(hidden, n_classes))
    return ModelSpec(tuple(layers), input_shape).validate()


PRESETS = {"toy_mlp": toy_mlp, "toy_cnn": toy_cnn}


# ---------------------------------------------------------------------------
# instantiated models


@dataclass
class Model:
    """A built sequential network: spec plus one parameter dict per layer."""

    spec: ModelSpec
    params: list[dict[str, Tensor]] = field(default_factory=list)

    def named_params(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer_params in enumerate(self.params):
            for name, tensor in layer_params.items():
                out[f"{prefix}layer{i}.{name}"] = tensor
        return out

    def param_count(self) -> int:
        return int(np.sum([t.data.size for t in self.named_params().values()], dtype=np.int64))

    def has_dropout(self) -> bool:
        return any(isinstance(l, Dropout) for l in self.spec.layers)

    def draw_dropout_masks(self, batch: int, rng: np.random.Generator) -> list[np.ndarray]:
        """Inverted-scaling masks for every dropout layer, in layer order."""
        masks = []
        shapes = self.spec.activation_shapes()
        for i, layer in enumerate(self.spec.layers):
            if isinstance(layer, Dropout):
                shape = shapes[i]
                full = (batch, *shape) if isinstance(shape, tuple) else (batch, shape)
                keep = rng.random(size=full) >= layer.p
                masks.append(keep.astype(np.float64) / (1.0 - layer.p))
        return masks

    def forward(
        self,
        x: Tensor,
        mode: str = "eval",
        rng: np.random.Generator | None = None,
        masks: list[np.ndarray] | None = None,
        frozen: bool = False,
    ) -> Tensor:
        """Apply the layer stack.

        ``mode`` is "train" or "eval"; dropout only fires in train mode and
        draws its masks from ``rng`` unless ``masks`` pre-supplies them (the
        twin-pass head routing shares masks that way).  ``frozen=True`` feeds
        detached parameter views so gradients pass through but never reach
        the weights.
        """
        if mode not in ("train", "eval"):
            raise ConfigError(f"forward mode must be 'train' or 'eval', got {mode!r}")
        out = x
        mask_ix = 0
        for i, layer in enumerate(self.spec.layers):
            p = self.params[i]
            if frozen:
                p = {k: v.detach() for k, v in p.items()}
            if isinstance(layer, Conv):
                out = T.add(T.conv2d(out, p["w"], stride=layer.stride, pad=layer.pad), p["b"])
            elif isinstance(layer, Dense):
                out = T.add(T.matmul(out, T.transpose(p["w"])), p["b"])
            elif isinstance(layer, Relu):
                out = T.relu(out)
            elif isinstance(layer, MaxPool):
                out = T.maxpool2x2(out)
            elif isinstance(layer, Flatten):
                out = T.flatten(out)
            elif isinstance(layer, Dropout):
                if mode == "train" and layer.p > 0.0:
                    if masks is not None:
                        mask = masks[mask_ix]
                        mask_ix += 1
                    elif rng is not None:
                        keep = rng.random(size=out.shape) >= layer.p
                        mask = keep.astype(np.float64) / (1.0 - layer.p)
                    else:
                        raise ConfigError("train-mode dropout needs an rng or precomputed masks")
                    out = T.mul(out, Tensor(mask))
        return out


def _he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


def build(spec: ModelSpec, rng: np.random.Generator) -> Model:
    """Instantiate ``spec`` with He-normal weights and zero biases.

    Draw order is layer order, so a fixed seed fixes every parameter.
    """
    spec.validate()
    params: list[dict[str, Tensor]] = []
    for layer in spec.layers:
        if isinstance(layer, Conv):
            fan_in = layer.c_in * layer.k * layer.k
            params.append(
                {
                    "w": Tensor(_he_normal(rng, (layer.c_out, layer.c_in, layer.k, layer.k), fan_in), requires_grad=True),
                    "b": Tensor(np.zeros(layer.c_out), requires_grad=True),
                }
            )
        elif isinstance(layer, Dense):
            params.append(
                {
                    "w": Tensor(_he_normal(rng, (layer.d_out, layer.d_in), layer.d_in), requires_grad=True),
                    "b": Tensor(np.zeros(layer.d_out), requires_grad=True),
                }
            )
        else:
            params.append({})
    return Model(spec, params)


def batched_input(spec: ModelSpec, x: np.ndarray) -> Tensor:
    """Wrap a raw input batch, checking it against the spec's input shape."""
    expected = spec.input_shape
    got = x.shape[1:]
    if isinstance(expected, int):
        if got != (expected,):
            raise DimensionError(f"input batch has shape {got}, spec wants ({expected},)")
    elif got != expected:
        raise DimensionError(f"input batch has shape {got}, spec wants {expected}")
    return Tensor(x)
