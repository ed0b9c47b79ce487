"""SGD with momentum, cosine schedule, seeded streams, and the epoch loop.

Every source of randomness lives in its own named stream, so attaching
random-label heads never shifts a draw the baseline network would have made:
head initialization and head dropout consume ``init_heads``-derived streams,
never ``init_base`` or ``dropout``.  With the regularizer off, the baseline
trajectory is therefore bit-identical with and without heads.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

import randlab.tensor as T
from .data import Dataset, batches
from .errors import ConfigError, TrainingDiverged
from .heads import (
    MultiHeadModel,
    SingleOutputModel,
    class_from_rnd,
    forward_all,
    rnd_label_accuracy,
)
from .losses import (
    class_loss,
    composite_objectives,
    label_smoothing_loss,
    reg_loss,
    rnd_loss,
)
from .network import Model, batched_input
from .tensor import ClampCounter, Tape, Tensor

STREAM_NAMES = ("init_base", "init_heads", "data_order", "dropout", "rnd_labels", "augment")
_SALTS = {name: i for i, name in enumerate(STREAM_NAMES)}


class RngStreams:
    """Independent named PCG64 streams; consuming one never advances another."""

    def __init__(self, seeds: int | dict[str, int]):
        if isinstance(seeds, int):
            self.seeds = {name: int(seeds) for name in STREAM_NAMES}
        else:
            unknown = set(seeds) - set(STREAM_NAMES)
            if unknown:
                raise ConfigError(f"unknown stream names {sorted(unknown)}; valid: {list(STREAM_NAMES)}")
            missing = set(STREAM_NAMES) - set(seeds)
            if missing:
                raise ConfigError(f"missing seeds for streams {sorted(missing)}")
            self.seeds = {name: int(seeds[name]) for name in STREAM_NAMES}
        self._streams = {name: self._make(name) for name in STREAM_NAMES}

    def _make(self, name: str, *extra: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence((self.seeds[name], _SALTS[name], *extra))))

    def stream(self, name: str) -> np.random.Generator:
        return self._streams[name]

    def derive(self, name: str, *key: int) -> np.random.Generator:
        """A fresh stream keyed off ``name``'s seed; independent of the original."""
        return self._make(name, 1, *key)

    def state(self) -> dict:
        return {name: gen.bit_generator.state for name, gen in self._streams.items()}

    def restore(self, state: dict) -> None:
        for name, bg_state in state.items():
            self._streams[name].bit_generator.state = bg_state


# ---------------------------------------------------------------------------
# optimizer and schedule


class SgdOptimizer:
    """Momentum SGD with classic L2-coupled weight decay on weights only.

    Per step: g = grad + wd * param (weights), v = mu * v + g,
    param = param - lr * v.
    """

    def __init__(self, params: dict[str, Tensor], momentum: float = 0.9, weight_decay: float = 0.0):
        if weight_decay < 0:
            raise ConfigError(f"weight decay must be >= 0, got {weight_decay}")
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocities = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, lr: float) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged(f"non-finite gradient in {name}")
            if self.weight_decay and name.endswith(".w"):
                g = g + self.weight_decay * p.data
            v = self.velocities[name]
            v *= self.momentum
            v += g
            p.data -= lr * v

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Half-cosine decay from ``base_lr`` at step 0 to 0 at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass(frozen=True)
class Schedule:
    total_steps: int
    base_lr: float

    def at(self, step: int) -> float:
        return cosine_lr(step, self.total_steps, self.base_lr)


def augment_flip(x: np.ndarray, stream: np.random.Generator | None = None, force: bool | None = None) -> np.ndarray:
    """Mirror each image along its width with probability 0.5."""
    if x.ndim != 4:
        raise ConfigError(f"horizontal flip needs (batch, c, h, w) input, got shape {x.shape}")
    if force is not None:
        return x[..., ::-1].copy() if force else x
    flip = stream.random(size=len(x)) < 0.5
    out = x.copy()
    out[flip] = out[flip, :, :, ::-1]
    return out


# ---------------------------------------------------------------------------
# the epoch loop


@dataclass
class MetricsRecord:
    """One epoch of results; rnd fields are None for the baseline variant."""

    epoch: int
    train_class_acc: float
    test_class_acc: float
    rnd_label_acc: float | None
    class_loss: float | None
    rnd_loss: float | None
    reg_loss: float | None
    lr: float
    clamp_count: int

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class TrainSettings:
    """Loss wiring and loop constants shared by every epoch of a run."""

    variant: str = "multihead"  # multihead | single_output | baseline
    reg_weight: float = 0.0
    smoothing: float = 0.0
    batch_size: int = 16
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 200
    augment: bool = False
    metric_mode: str = "true_class"


def make_optimizers(model, settings: TrainSettings) -> dict[str, SgdOptimizer]:
    if isinstance(model, Model):
        groups = {"model": model.named_params("model.")}
    else:
        groups = model.param_groups()
    return {
        group: SgdOptimizer(params, settings.momentum, settings.weight_decay)
        for group, params in groups.items()
    }


def _class_term(p: Tensor, y: np.ndarray, settings: TrainSettings, clamps: ClampCounter) -> Tensor:
    if settings.smoothing > 0.0:
        return label_smoothing_loss(p, y, settings.smoothing, clamps)
    return class_loss(p, y, clamps)


def evaluate_class_accuracy(model, ds: Dataset, batch_size: int = 256) -> float:
    """Eval-mode accuracy of the class prediction over a dataset."""
    correct = 0
    for batch in batches(ds, batch_size):
        x = batched_input(_input_spec(model), batch.inputs)
        if isinstance(model, Model):
            pred = model.forward(x).data.argmax(axis=1)
        else:
            out = forward_all(model, x)
            scores = out.p.data if out.p is not None else class_from_rnd(out.phat.data)
            pred = scores.argmax(axis=1)
        correct += int((pred == batch.labels).sum())
    return correct / len(ds)


def _input_spec(model):
    if isinstance(model, Model):
        return model.spec
    if model.feature_extractor.spec.layers:
        return model.feature_extractor.spec
    return model.rnd_heads[0].spec


def train_epoch(
    model: Model | MultiHeadModel | SingleOutputModel,
    train_ds: Dataset,
    test_ds: Dataset | None,
    settings: TrainSettings,
    optimizers: dict[str, SgdOptimizer],
    schedule: Schedule,
    streams: RngStreams,
    epoch: int,
    global_step: int,
) -> tuple[MetricsRecord, int]:
    """One pass over the data: forward, one routed backward, one step per group.

    Returns the epoch record and the advanced global step counter.  The
    schedule is stepped per optimizer step, not per epoch.
    """
    headed = not isinstance(model, Model)
    variant = settings.variant
    want_reg = headed and (variant == "single_output" or settings.reg_weight > 0.0)
    data_rng = streams.stream("data_order")
    dropout_rng = streams.stream("dropout")
    heads_dropout_rng = streams.derive("init_heads", 0xD0)
    clamps = ClampCounter()

    seen = correct = rnd_correct = 0
    loss_sums = {"class": 0.0, "rnd": 0.0, "reg": 0.0}
    lr = schedule.at(global_step)

    for batch in batches(train_ds, settings.batch_size, data_rng):
        inputs = batch.inputs
        if settings.augment:
            inputs = augment_flip(inputs, streams.stream("augment"))
        x = batched_input(_input_spec(model), inputs)
        y = batch.labels
        m = len(y)

        with Tape() as tape:
            if not headed:
                p = T.exp(T.log_softmax(model.forward(x, "train", rng=dropout_rng)))
                out_p, out_phat = p, None
                cls = _class_term(p, y, settings, clamps)
                obj = composite_objectives("baseline", cls, None, None, 0.0)
                values = {"class": cls.item(), "rnd": None, "reg": None}
            else:
                out = forward_all(model, x, "train", base_rng=dropout_rng, heads_rng=heads_dropout_rng, want_reg=want_reg)
                out_p, out_phat = out.p, out.phat
                s = batch.rnd_labels
                if s is None:
                    raise ConfigError("headed variants need random labels on the training set")
                rnd = rnd_loss(out.phat, y, s, clamps)
                reg = reg_loss(out.phat_reg, y, clamps) if want_reg else None
                cls = _class_term(out.p, y, settings, clamps) if out.p is not None else None
                obj = composite_objectives(variant, cls, rnd, reg, settings.reg_weight)
                values = {
                    "class": None if cls is None else cls.item(),
                    "rnd": rnd.item(),
                    "reg": None if reg is None else reg.item(),
                }
            if not math.isfinite(obj.total.item()):
                raise TrainingDiverged("non-finite training loss", epoch=epoch, step=global_step)
            tape.backward(obj.total)

        lr = schedule.at(global_step)
        for opt in optimizers.values():
            opt.step(lr)
            opt.zero_grad()
        global_step += 1

        seen += m
        for key, v in values.items():
            if v is not None:
                loss_sums[key] += v * m
        if out_p is not None:
            pred = out_p.data.argmax(axis=1)
        else:
            pred = class_from_rnd(out_phat.data).argmax(axis=1)
        correct += int((pred == y).sum())
        if headed:
            rnd_correct += int(round(rnd_label_accuracy(out_phat.data, y, batch.rnd_labels, settings.metric_mode) * m))

    test_acc = evaluate_class_accuracy(model, test_ds) if test_ds is not None else float("nan")
    record = MetricsRecord(
        epoch=epoch,
        train_class_acc=correct / seen,
        test_class_acc=test_acc,
        rnd_label_acc=rnd_correct / seen if headed else None,
        class_loss=None if variant == "single_output" else loss_sums["class"] / seen,
        rnd_loss=loss_sums["rnd"] / seen if headed else None,
        reg_loss=loss_sums["reg"] / seen if (headed and want_reg) else None,
        lr=lr,
        clamp_count=clamps.count,
    )
    return record, global_step


def named_model_params(model) -> dict[str, Tensor]:
    if isinstance(model, Model):
        return model.named_params("model.")
    out: dict[str, Tensor] = {}
    for params in model.param_groups().values():
        out.update(params)  # group dicts already carry distinct prefixes
    return out


# ---------------------------------------------------------------------------
# checkpoints: versioned binary dump of parameters, velocities, stream states

_CKPT_MAGIC = b"RLCK"
_CKPT_VERSION = 1


def save_checkpoint(path, model, optimizers: dict[str, SgdOptimizer], streams: RngStreams, meta: dict | None = None) -> None:
    arrays: dict[str, np.ndarray] = {f"param/{k}": v.data for k, v in named_model_params(model).items()}
    for group, opt in optimizers.items():
        for name, vel in opt.velocities.items():
            arrays[f"velocity/{group}/{name}"] = vel
    index = []
    offset = 0
    for name, arr in arrays.items():
        nbytes = arr.size * 8
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += nbytes
    header = {
        "version": _CKPT_VERSION,
        "meta": meta or {},
        "streams": streams.state(),
        "arrays": index,
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<IQ", _CKPT_VERSION, len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict:
    """Read a checkpoint into {"meta", "streams", "arrays": name->ndarray}."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise ConfigError(f"not a checkpoint file (magic {magic!r})")
        version, header_len = struct.unpack("<IQ", fh.read(12))
        if version != _CKPT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len))
        payload = fh.read()
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arrays[entry["name"]] = np.frombuffer(payload, dtype="<f8", count=count, offset=start).reshape(shape).copy()
    return {"meta": header["meta"], "streams": header["streams"], "arrays": arrays}


def restore_checkpoint(model, optimizers: dict[str, SgdOptimizer], streams: RngStreams, snapshot: dict) -> None:
    arrays = snapshot["arrays"]
    for name, p in named_model_params(model).items():
        p.data[:] = arrays[f"param/{name}"]
    for group, opt in optimizers.items():
        for name, vel in opt.velocities.items():
            vel[:] = arrays[f"velocity/{group}/{name}"]
    streams.restore(snapshot["streams"])
