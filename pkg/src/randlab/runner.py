"""Experiment driver: run configs, single runs, grid sweeps, reports.

A run is fully determined by one JSON document.  Outputs land in the run
directory as ``config.resolved.json``, ``metrics.jsonl`` (one record per
epoch, appended and flushed mid-run), ``rnd_labels.json``, ``checkpoint.bin``
(rewritten each epoch, so a divergent run keeps its last good state), and
``result.json``.  Sweeps add one subdirectory per member run plus a
``summary.csv`` with the final metrics of every member.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .data import BlobSpec, Dataset, assign_rnd_labels, gen_blobs, load_idx_dataset
from .errors import ConfigError, RandlabError, TrainingDiverged
from .heads import build_multihead, build_single_output
from .losses import VARIANTS
from .network import ModelSpec, PRESETS, build, toy_cnn, toy_mlp
from .training import (
    MetricsRecord,
    RngStreams,
    Schedule,
    TrainSettings,
    evaluate_class_accuracy,
    make_optimizers,
    save_checkpoint,
    train_epoch,
)

SWEEP_AXES = {
    "reg_weight": ("train", "reg_weight"),
    "smoothing": ("train", "smoothing"),
    "dropout": ("model", "dropout"),
    "weight_decay": ("train", "weight_decay"),
    "copy_depth": ("heads", "copy_depth"),
    "lr": ("train", "lr"),
}

# full-scale reference settings (large-budget profile); desk defaults otherwise
PROFILES = {
    "fullscale": {"train": {"lr": 0.5, "batch": 256, "epochs": 200}, "heads": {"n_rnd": 10}},
}


@dataclass
class ModelCfg:
    preset: str = "toy_mlp"  # toy_mlp | toy_cnn | custom
    hidden: tuple[int, int] = (64, 32)
    channels: tuple[int, int] = (4, 8)
    cnn_hidden: int = 16
    dropout: float = 0.0
    layers: list | None = None  # custom preset: layer dicts
    input_shape: Any = None  # custom preset


@dataclass
class DataCfg:
    kind: str = "blobs"  # blobs | idx
    classes: int = 4
    train_per_class: int = 16
    test_per_class: int = 32
    shape: Any = 8  # flat feature count or [c, h, w]
    std: float = 0.5
    spacing: float = 1.0
    seed: int = 0
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None


@dataclass
class HeadsCfg:
    n_rnd: int = 2
    copy_depth: Any = 1  # int, or "full" for the whole layer stack
    widen: float = 1.0
    metric_mode: str = "true_class"  # or "joint"


@dataclass
class TrainCfg:
    epochs: int = 200
    batch: int = 16
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    reg_weight: float = 0.0
    smoothing: float = 0.0
    augment: bool = False


@dataclass
class RunConfig:
    variant: str = "multihead"  # multihead | single_output | baseline
    model: ModelCfg = field(default_factory=ModelCfg)
    data: DataCfg = field(default_factory=DataCfg)
    heads: HeadsCfg = field(default_factory=HeadsCfg)
    train: TrainCfg = field(default_factory=TrainCfg)
    seeds: Any = 0  # root seed int, or {stream name: seed}
    out_dir: str | None = None
    profile: str | None = None

    # -- construction ------------------------------------------------------

    @staticmethod
    def from_dict(doc: dict) -> "RunConfig":
        doc = dict(doc)
        profile = doc.get("profile")
        if profile is not None:
            if profile not in PROFILES:
                raise ConfigError(f"unknown profile {profile!r}", field="profile")
            base = PROFILES[profile]
            for section, values in base.items():
                merged = dict(values)
                merged.update(doc.get(section, {}))
                doc[section] = merged
        cfg = RunConfig()
        sections = {"model": ModelCfg, "data": DataCfg, "heads": HeadsCfg, "train": TrainCfg}
        for key, value in doc.items():
            if key in sections:
                if not isinstance(value, dict):
                    raise ConfigError(f"expected an object, got {type(value).__name__}", field=key)
                names = {f.name for f in dataclasses.fields(sections[key])}
                unknown = set(value) - names
                if unknown:
                    raise ConfigError(f"unknown fields {sorted(unknown)}", field=key)
                setattr(cfg, key, sections[key](**value))
            elif key in ("variant", "seeds", "out_dir", "profile"):
                setattr(cfg, key, value)
            else:
                raise ConfigError("unknown config section", field=key)
        for section in ("model", "heads"):
            c = getattr(cfg, section)
            for name in ("hidden", "channels"):
                if hasattr(c, name) and isinstance(getattr(c, name), list):
                    setattr(c, name, tuple(getattr(c, name)))
        if isinstance(cfg.data.shape, list):
            cfg.data.shape = tuple(cfg.data.shape)
        return cfg.validate()

    @staticmethod
    def from_json(path) -> "RunConfig":
        with open(path) as fh:
            return RunConfig.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        for section in ("model", "heads"):
            for name in ("hidden", "channels"):
                if name in doc[section] and isinstance(doc[section][name], tuple):
                    doc[section][name] = list(doc[section][name])
        if isinstance(doc["data"]["shape"], tuple):
            doc["data"]["shape"] = list(doc["data"]["shape"])
        return doc

    # -- validation --------------------------------------------------------

    def validate(self) -> "RunConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"must be one of {VARIANTS}, got {self.variant!r}", field="variant")
        t, h, d, m = self.train, self.heads, self.data, self.model
        checks = [
            (t.reg_weight >= 0, "train.reg_weight", "must be >= 0"),
            (0 <= t.smoothing < 1, "train.smoothing", "must be in [0, 1)"),
            (t.epochs >= 1, "train.epochs", "must be >= 1"),
            (t.batch >= 1, "train.batch", "must be >= 1"),
            (t.lr > 0, "train.lr", "must be > 0"),
            (t.weight_decay >= 0, "train.weight_decay", "must be >= 0"),
            (h.n_rnd >= 2, "heads.n_rnd", "must be >= 2"),
            (h.widen >= 1, "heads.widen", "must be >= 1"),
            (h.metric_mode in ("true_class", "joint"), "heads.metric_mode", "must be true_class or joint"),
            (0 <= m.dropout < 1, "model.dropout", "must be in [0, 1)"),
            (d.kind in ("blobs", "idx"), "data.kind", "must be blobs or idx"),
            (d.classes >= 2, "data.classes", "must be >= 2"),
        ]
        if not (h.copy_depth == "full" or (isinstance(h.copy_depth, int) and h.copy_depth >= 1)):
            checks.append((False, "heads.copy_depth", 'must be a positive depth or "full"'))
        if d.kind == "idx":
            for name in ("train_images", "train_labels", "test_images", "test_labels"):
                checks.append((getattr(d, name) is not None, f"data.{name}", "required for idx datasets"))
        for ok, where, msg in checks:
            if not ok:
                raise ConfigError(msg, field=where)
        return self

    # -- resolution --------------------------------------------------------

    def load_datasets(self) -> tuple[Dataset, Dataset]:
        d = self.data
        if d.kind == "blobs":
            spec = BlobSpec(d.classes, d.train_per_class, d.test_per_class, d.shape, d.std, d.spacing, d.seed)
            return gen_blobs(spec)
        train = load_idx_dataset(d.train_images, d.train_labels, d.classes, "train")
        test = load_idx_dataset(d.test_images, d.test_labels, d.classes, "test")
        return train, test

    def model_spec(self, input_shape) -> ModelSpec:
        m = self.model
        if m.preset == "toy_mlp":
            return toy_mlp(input_shape, self.data.classes, m.hidden, m.dropout)
        if m.preset == "toy_cnn":
            if isinstance(input_shape, int):
                raise ConfigError("toy_cnn needs image-shaped data", field="model.preset")
            return toy_cnn(input_shape, self.data.classes, m.channels, m.cnn_hidden, m.dropout)
        if m.preset == "custom":
            if m.layers is None:
                raise ConfigError("custom preset needs model.layers", field="model.layers")
            shape = m.input_shape if m.input_shape is not None else input_shape
            return ModelSpec.from_dict({"layers": m.layers, "input_shape": shape}).validate()
        raise ConfigError(f"unknown preset {m.preset!r} (have {sorted(PRESETS)} and custom)", field="model.preset")

    def resolve_copy_depth(self, spec: ModelSpec) -> int:
        return len(spec.layers) if self.heads.copy_depth == "full" else int(self.heads.copy_depth)

    def train_settings(self) -> TrainSettings:
        t = self.train
        return TrainSettings(
            variant=self.variant,
            reg_weight=t.reg_weight,
            smoothing=t.smoothing,
            batch_size=t.batch,
            base_lr=t.lr,
            momentum=t.momentum,
            weight_decay=t.weight_decay,
            epochs=t.epochs,
            augment=t.augment,
            metric_mode=self.heads.metric_mode,
        )


@dataclass
class RunResult:
    status: str  # "ok" | "diverged"
    out_dir: Path | None
    records: list[MetricsRecord]
    error: str | None = None

    @property
    def final(self) -> MetricsRecord | None:
        return self.records[-1] if self.records else None


def build_run_model(config: RunConfig, spec: ModelSpec, streams: RngStreams):
    d = config.resolve_copy_depth(spec)
    if config.variant == "baseline":
        return build(spec, streams.stream("init_base"))
    if config.variant == "multihead":
        return build_multihead(
            spec, d, config.data.classes, config.heads.n_rnd,
            streams.stream("init_base"), streams.stream("init_heads"), config.heads.widen,
        )
    return build_single_output(
        spec, d, config.data.classes, config.heads.n_rnd,
        streams.stream("init_base"), streams.stream("init_heads"),
    )


def run(config: RunConfig, out_dir: str | Path | None = None, on_epoch: Callable[[MetricsRecord], None] | None = None) -> RunResult:
    """Execute one configured run, writing every artifact into the run directory."""
    config.validate()
    target = Path(out_dir) if out_dir is not None else (Path(config.out_dir) if config.out_dir else None)
    if target is None:
        raise ConfigError("no output directory given", field="out_dir")
    target.mkdir(parents=True, exist_ok=True)

    train_ds, test_ds = config.load_datasets()
    streams = RngStreams(config.seeds)
    spec = config.model_spec(_data_shape(train_ds))
    resolved = config.to_dict()
    resolved["heads"]["copy_depth"] = config.resolve_copy_depth(spec)
    (target / "config.resolved.json").write_text(json.dumps(resolved, indent=2) + "\n")

    rnd_map: dict[str, int] = {}
    if config.variant != "baseline":
        s = assign_rnd_labels(len(train_ds), config.heads.n_rnd, streams.stream("rnd_labels"))
        train_ds = train_ds.with_rnd_labels(s)
        rnd_map = {str(i): int(v) for i, v in enumerate(s)}
    (target / "rnd_labels.json").write_text(json.dumps({"n_rnd": config.heads.n_rnd, "labels": rnd_map}) + "\n")

    model = build_run_model(config, spec, streams)
    settings = config.train_settings()
    optimizers = make_optimizers(model, settings)
    steps_per_epoch = math.ceil(len(train_ds) / settings.batch_size)
    schedule = Schedule(steps_per_epoch * settings.epochs, settings.base_lr)

    records: list[MetricsRecord] = []
    status, error = "ok", None
    step = 0
    with open(target / "metrics.jsonl", "w") as metrics_file:
        for epoch in range(settings.epochs):
            try:
                record, step = train_epoch(
                    model, train_ds, test_ds, settings, optimizers, schedule, streams, epoch, step
                )
            except TrainingDiverged as exc:
                status, error = "diverged", str(exc)
                break
            records.append(record)
            metrics_file.write(record.to_json() + "\n")
            metrics_file.flush()
            save_checkpoint(target / "checkpoint.bin", model, optimizers, streams, meta={"epoch": epoch})
            if on_epoch is not None:
                on_epoch(record)

    result = RunResult(status, target, records, error)
    (target / "result.json").write_text(
        json.dumps({"status": status, "epochs_completed": len(records), "error": error}) + "\n"
    )
    return result


def _data_shape(ds: Dataset):
    shape = ds.inputs.shape[1:]
    return shape[0] if len(shape) == 1 else tuple(shape)


# ---------------------------------------------------------------------------
# sweeps

SUMMARY_COLUMNS = [
    "run",
    "axis",
    "value",
    "axis2",
    "value2",
    "final_train_acc",
    "final_test_acc",
    "final_rnd_acc",
    "n_rnd",
    "status",
]


def apply_axis(config: RunConfig, axis: str, value) -> RunConfig:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; valid: {sorted(SWEEP_AXES)}", field="axis")
    section, fieldname = SWEEP_AXES[axis]
    doc = config.to_dict()
    doc[section][fieldname] = value
    return RunConfig.from_dict(doc)


@dataclass
class SweepResult:
    out_dir: Path
    rows: list[dict]


def sweep(
    base: RunConfig,
    axes: list[tuple[str, list]],
    out_dir: str | Path,
    on_epoch: Callable[[MetricsRecord], None] | None = None,
) -> SweepResult:
    """One run per grid point; failures are recorded and the sweep continues."""
    if not axes or not all(values for _, values in axes):
        raise ConfigError("sweep needs at least one axis with values", field="axis")
    if len(axes) > 2:
        raise ConfigError("at most two sweep axes are supported", field="axis")
    target = Path(out_dir)
    target.mkdir(parents=True, exist_ok=True)
    rows = []
    grid = list(itertools.product(*(values for _, values in axes)))
    for i, combo in enumerate(grid):
        assignments = list(zip((name for name, _ in axes), combo))
        cfg = base
        label_parts = []
        for axis, value in assignments:
            cfg = apply_axis(cfg, axis, value)
            label_parts.append(f"{axis}={value}")
        run_name = f"run_{i:03d}_" + "_".join(label_parts).replace(" ", "")
        row = {c: "" for c in SUMMARY_COLUMNS}
        row.update(run=run_name, axis=assignments[0][0], value=assignments[0][1], n_rnd=base.heads.n_rnd)
        if len(assignments) > 1:
            row.update(axis2=assignments[1][0], value2=assignments[1][1])
        try:
            result = run(cfg, target / run_name, on_epoch=on_epoch)
            row["status"] = result.status
            if result.final is not None:
                row["final_train_acc"] = result.final.train_class_acc
                row["final_test_acc"] = result.final.test_class_acc
                if result.final.rnd_label_acc is not None:
                    row["final_rnd_acc"] = result.final.rnd_label_acc
            resolved = json.loads((target / run_name / "config.resolved.json").read_text())
            for col, axis_name in (("value", row["axis"]), ("value2", row["axis2"])):
                if axis_name == "copy_depth":
                    row[col] = resolved["heads"]["copy_depth"]  # "full" -> layer count
        except RandlabError as exc:
            row["status"] = f"error: {exc}"
        rows.append(row)
    with open(target / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return SweepResult(target, rows)


# ---------------------------------------------------------------------------
# reporting


def load_metrics(run_dir: str | Path) -> list[dict]:
    path = Path(run_dir) / "metrics.jsonl"
    if not path.exists():
        raise ConfigError(f"no metrics.jsonl under {run_dir}")
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def report(run_dir: str | Path) -> dict:
    """Condense a run directory into headline numbers."""
    rows = load_metrics(run_dir)
    if not rows:
        raise ConfigError(f"metrics.jsonl under {run_dir} is empty")
    final = rows[-1]
    best_test = max(r["test_class_acc"] for r in rows)
    out = {
        "epochs": len(rows),
        "final_train_acc": final["train_class_acc"],
        "final_test_acc": final["test_class_acc"],
        "best_test_acc": best_test,
        "final_rnd_acc": final["rnd_label_acc"],
        "clamp_events": sum(r["clamp_count"] for r in rows),
    }
    result_path = Path(run_dir) / "result.json"
    if result_path.exists():
        out["status"] = json.loads(result_path.read_text())["status"]
    return out


# ---------------------------------------------------------------------------
# model-based capacity estimation (ERM supremum via the standard trainer)


def fit_binary_model(
    inputs: np.ndarray,
    labels: np.ndarray,
    seed: int,
    hidden: tuple[int, int] = (16, 8),
    epochs: int = 30,
    lr: float = 0.1,
    batch: int = 8,
) -> tuple[Callable[[np.ndarray], np.ndarray], float]:
    """Train a small two-class dense net; returns (predict, train_error)."""
    ds = Dataset(inputs, labels, 2)
    streams = RngStreams(int(seed))
    spec = toy_mlp(_data_shape(ds), 2, hidden)
    model = build(spec, streams.stream("init_base"))
    settings = TrainSettings(variant="baseline", epochs=epochs, batch_size=batch, base_lr=lr)
    optimizers = make_optimizers(model, settings)
    steps = math.ceil(len(ds) / batch) * epochs
    schedule = Schedule(steps, lr)
    step = 0
    for epoch in range(epochs):
        _, step = train_epoch(model, ds, None, settings, optimizers, schedule, streams, epoch, step)

    def predict(x: np.ndarray) -> np.ndarray:
        from .network import batched_input

        return model.forward(batched_input(spec, x)).data.argmax(axis=1)

    train_error = 1.0 - evaluate_class_accuracy(model, ds)
    return predict, train_error
