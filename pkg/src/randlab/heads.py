"""Multi-head models: a baseline classifier plus per-class random-label heads.

The feature extractor is the network prefix up to the copy depth ``d``; the
class head is the original suffix; each of the N random heads is a structural
copy of that suffix with the final dense layer re-targeted at the n random
labels and freshly initialized.  Heads are parameter-independent probes: the
class path never reads them.

Gradient routing happens at graph level inside :func:`forward_all`:

* ``phat`` comes from heads applied to *detached* features, so the random
  label loss can only reach head parameters;
* ``phat_reg`` (when requested) comes from *frozen-parameter* heads applied to
  live features, so the uniformity regularizer can only reach the feature
  extractor.

Both passes share dropout masks, so their forward values agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

import randlab.tensor as T
from .errors import ConfigError
from .network import Dense, Model, ModelSpec, build, split_at_depth, widen_suffix
from .tensor import Tensor


@dataclass
class MultiHeadModel:
    feature_extractor: Model
    class_head: Model
    rnd_heads: list[Model]
    n_classes: int
    n_rnd: int
    copy_depth: int
    joint_softmax: bool = False  # per-head n-way softmax by default

    def param_groups(self) -> dict[str, dict[str, Tensor]]:
        groups = {
            "feature_extractor": self.feature_extractor.named_params("features."),
            "class_head": self.class_head.named_params("class_head."),
            "rnd_heads": {},
        }
        for j, head in enumerate(self.rnd_heads):
            groups["rnd_heads"].update(head.named_params(f"rnd_head{j}."))
        return groups


@dataclass
class SingleOutputModel:
    """Head-only variant: class predictions come from summing head mass.

    All N*n head logits share one joint softmax; with per-head normalization
    the per-head sums are identically 1 and carry no class signal.
    """

    feature_extractor: Model
    rnd_heads: list[Model]
    n_classes: int
    n_rnd: int
    copy_depth: int
    joint_softmax: bool = True

    class_head: None = None

    def param_groups(self) -> dict[str, dict[str, Tensor]]:
        groups = {"feature_extractor": self.feature_extractor.named_params("features."), "rnd_heads": {}}
        for j, head in enumerate(self.rnd_heads):
            groups["rnd_heads"].update(head.named_params(f"rnd_head{j}."))
        return groups


@dataclass
class MultiHeadOutputs:
    """One batch of predictions; all probability tensors."""

    p: Tensor | None  # (batch, N); None for the single-output variant
    phat: Tensor  # (batch, N, n), gradient-live to head parameters only
    phat_reg: Tensor | None  # (batch, N, n), gradient-live to features only
    features: Tensor


def _head_spec(suffix: ModelSpec, n_rnd: int) -> ModelSpec:
    last = suffix.layers[-1]
    if not isinstance(last, Dense):
        raise ConfigError("model must end in a dense classification layer")
    return ModelSpec(suffix.layers[:-1] + (Dense(last.d_in, n_rnd),), suffix.input_shape)


def _checked(spec: ModelSpec, d: int, n_classes: int, n_rnd: int) -> tuple[ModelSpec, ModelSpec]:
    spec.validate()
    if n_rnd < 2:
        raise ConfigError(f"need at least 2 random labels, got {n_rnd}")
    last = spec.layers[-1] if spec.layers else None
    if not isinstance(last, Dense) or last.d_out != n_classes:
        raise ConfigError(f"final layer must be Dense(.., {n_classes}) to classify {n_classes} classes")
    return split_at_depth(spec, d)


def build_multihead(
    spec: ModelSpec,
    d: int,
    n_classes: int,
    n_rnd: int,
    rng_base: np.random.Generator,
    rng_heads: np.random.Generator,
    head_widen: float = 1.0,
) -> MultiHeadModel:
    """Split at depth ``d`` and attach N freshly-initialized random heads.

    Base parameters (prefix + class head) consume only ``rng_base``, in the
    same order a plain ``build(spec, rng_base)`` would, so a multi-head model
    and a baseline built from equal seeds share the baseline bit for bit.
    ``head_widen > 1`` widens only the head copies, not the class head.
    """
    prefix, suffix = _checked(spec, d, n_classes, n_rnd)
    feature_extractor = build(prefix, rng_base)
    class_head = build(suffix, rng_base)
    head_template = _head_spec(suffix, n_rnd)
    if head_widen > 1.0:
        head_template = ModelSpec(
            widen_suffix(head_template, len(head_template.layers), head_widen).layers,
            head_template.input_shape,
        )
    heads = [build(head_template, rng_heads) for _ in range(n_classes)]
    return MultiHeadModel(feature_extractor, class_head, heads, n_classes, n_rnd, d)


def build_single_output(
    spec: ModelSpec,
    d: int,
    n_classes: int,
    n_rnd: int,
    rng_base: np.random.Generator,
    rng_heads: np.random.Generator,
) -> SingleOutputModel:
    prefix, suffix = _checked(spec, d, n_classes, n_rnd)
    feature_extractor = build(prefix, rng_base)
    heads = [build(_head_spec(suffix, n_rnd), rng_heads) for _ in range(n_classes)]
    return SingleOutputModel(feature_extractor, heads, n_classes, n_rnd, d)


def _normalize_heads(logits: Tensor, joint: bool) -> Tensor:
    """(batch, N, n) logits -> probabilities, per head or jointly over N*n."""
    if joint:
        b, n_heads, n_rnd = logits.shape
        flat = T.log_softmax(T.flatten(logits))
        return T.reshape(T.exp(flat), (b, n_heads, n_rnd))
    return T.exp(T.log_softmax(logits))


def forward_all(
    model: MultiHeadModel | SingleOutputModel,
    x: Tensor,
    mode: str = "eval",
    base_rng: np.random.Generator | None = None,
    heads_rng: np.random.Generator | None = None,
    want_reg: bool = False,
) -> MultiHeadOutputs:
    """One shared feature pass fanned out to the class head and all rnd heads."""
    features = model.feature_extractor.forward(x, mode, rng=base_rng)
    p = None
    if model.class_head is not None:
        p = T.exp(T.log_softmax(model.class_head.forward(features, mode, rng=base_rng)))

    detached = features.detach()
    batch = x.shape[0]
    head_logits = []
    frozen_logits = []
    for head in model.rnd_heads:
        masks = None
        if mode == "train" and head.has_dropout():
            if heads_rng is None:
                raise ConfigError("train-mode heads with dropout need a heads rng")
            masks = head.draw_dropout_masks(batch, heads_rng)
        head_logits.append(head.forward(detached, mode, masks=masks))
        if want_reg:
            frozen_logits.append(head.forward(features, mode, masks=masks, frozen=True))

    phat = _normalize_heads(T.stack(head_logits, axis=1), model.joint_softmax)
    phat_reg = None
    if want_reg:
        phat_reg = _normalize_heads(T.stack(frozen_logits, axis=1), model.joint_softmax)
    return MultiHeadOutputs(p=p, phat=phat, phat_reg=phat_reg, features=features)


def class_from_rnd(phat: np.ndarray) -> np.ndarray:
    """Class scores from head mass: ``score[j] = sum_i phat[j, i]``.

    Only informative under a joint softmax; with per-head normalization every
    score is identically 1.  Argmax ties resolve to the lowest index.
    """
    if phat.ndim != 3:
        raise ConfigError(f"expected (batch, heads, labels) probabilities, got shape {phat.shape}")
    return phat.sum(axis=2)


def predict_class(outputs_p: np.ndarray) -> np.ndarray:
    return outputs_p.argmax(axis=1)


def rnd_label_accuracy(phat: np.ndarray, y: np.ndarray, s: np.ndarray, mode: str = "true_class") -> float:
    """Fraction of samples whose random label is recovered from the heads.

    ``true_class`` scores the argmax inside the head of the true class;
    ``joint`` requires the grid argmax over all (class, random label) pairs to
    land exactly on (y, s).
    """
    y = np.asarray(y, dtype=np.int64)
    s = np.asarray(s, dtype=np.int64)
    if mode == "true_class":
        rows = phat[np.arange(len(y)), y]  # (batch, n)
        return float((rows.argmax(axis=1) == s).mean())
    if mode == "joint":
        b, n_heads, n_rnd = phat.shape
        flat_arg = phat.reshape(b, -1).argmax(axis=1)
        return float(((flat_arg // n_rnd == y) & (flat_arg % n_rnd == s)).mean())
    raise ConfigError(f"unknown random-label accuracy mode {mode!r}")
