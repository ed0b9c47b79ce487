"""randlab: desk-scale lab for measuring and regularizing sample memorization.

A hand-built float64 autodiff engine, sequential conv/dense networks with
depth-indexed slicing, per-class random-label prediction heads, the matching
loss trio with strict gradient routing, a deterministic SGD training loop,
and an experiment runner that writes figure-ready JSONL/CSV logs.
"""

from .data import Batch, BlobSpec, Dataset, assign_rnd_labels, batches, gen_blobs, load_idx_dataset, read_idx, write_idx
from .errors import (
    ConfigError,
    DimensionError,
    DomainError,
    IdxFormatError,
    RandlabError,
    TapeError,
    TrainingDiverged,
)
from .heads import (
    MultiHeadModel,
    MultiHeadOutputs,
    SingleOutputModel,
    build_multihead,
    build_single_output,
    class_from_rnd,
    forward_all,
    rnd_label_accuracy,
)
from .losses import (
    LossBundle,
    class_loss,
    composite_objectives,
    label_smoothing_loss,
    reg_loss,
    rnd_loss,
)
from .network import (
    Conv,
    Dense,
    Dropout,
    Flatten,
    MaxPool,
    Model,
    ModelSpec,
    Relu,
    build,
    split_at_depth,
    toy_cnn,
    toy_mlp,
    widen_suffix,
)
from .rademacher import (
    ConstantClass,
    RademacherEstimate,
    SingletonClass,
    ThresholdClass,
    TrainedModelClass,
    bound_eval,
    rademacher_binary,
)
from .runner import RunConfig, RunResult, SweepResult, report, run, sweep
from .tensor import ClampCounter, Tape, Tensor
from .training import (
    MetricsRecord,
    RngStreams,
    Schedule,
    SgdOptimizer,
    TrainSettings,
    augment_flip,
    cosine_lr,
    load_checkpoint,
    restore_checkpoint,
    save_checkpoint,
    train_epoch,
)

__all__ = [
    "Batch",
    "BlobSpec",
    "ClampCounter",
    "ConfigError",
    "ConstantClass",
    "Conv",
    "Dataset",
    "Dense",
    "DimensionError",
    "DomainError",
    "Dropout",
    "Flatten",
    "IdxFormatError",
    "LossBundle",
    "MaxPool",
    "MetricsRecord",
    "Model",
    "ModelSpec",
    "MultiHeadModel",
    "MultiHeadOutputs",
    "RademacherEstimate",
    "RandlabError",
    "Relu",
    "RngStreams",
    "RunConfig",
    "RunResult",
    "Schedule",
    "SgdOptimizer",
    "SingleOutputModel",
    "SingletonClass",
    "SweepResult",
    "Tape",
    "TapeError",
    "Tensor",
    "ThresholdClass",
    "TrainSettings",
    "TrainedModelClass",
    "TrainingDiverged",
    "assign_rnd_labels",
    "augment_flip",
    "batches",
    "bound_eval",
    "build",
    "build_multihead",
    "build_single_output",
    "class_from_rnd",
    "class_loss",
    "composite_objectives",
    "cosine_lr",
    "forward_all",
    "gen_blobs",
    "label_smoothing_loss",
    "load_checkpoint",
    "load_idx_dataset",
    "rademacher_binary",
    "read_idx",
    "reg_loss",
    "report",
    "restore_checkpoint",
    "rnd_label_accuracy",
    "rnd_loss",
    "run",
    "save_checkpoint",
    "split_at_depth",
    "sweep",
    "toy_cnn",
    "toy_mlp",
    "train_epoch",
    "widen_suffix",
    "write_idx",
]

__version__ = "0.1.0"
