"""The three training losses, label smoothing, and per-group objectives.

All losses take probability tensors (rows summing to 1) and integer label
arrays, reduce by the batch mean, and clamp probabilities at ``CLAMP_FLOOR``
before the log so a collapsed head yields a large finite loss instead of an
infinity; clamp events are counted for diagnostics.

Routing is a property of the tensors fed in, not of the loss code: ``phat``
from :func:`randlab.heads.forward_all` only reaches head parameters and
``phat_reg`` only reaches the feature extractor, so the objectives below
compose by plain addition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

import randlab.tensor as T
from .errors import ConfigError, DimensionError
from .tensor import ClampCounter, Tensor

CLAMP_FLOOR = 1e-12

VARIANTS = ("multihead", "single_output", "baseline")


def _check_labels(labels, size: int, bound: int, what: str) -> np.ndarray:
    idx = np.asarray(labels, dtype=np.int64)
    if idx.shape != (size,):
        raise DimensionError(f"{what} shape {idx.shape} does not match batch size {size}")
    if idx.size and (idx.min() < 0 or idx.max() >= bound):
        raise DimensionError(f"{what} out of range [0, {bound})")
    return idx


def class_loss(p: Tensor, y, clamps: ClampCounter | None = None) -> Tensor:
    """Mean cross-entropy against the true class: ``mean(-log p[y])``."""
    y = _check_labels(y, p.shape[0], p.shape[1], "class labels")
    picked = T.clamp_floor(T.gather(p, y), CLAMP_FLOOR, clamps)
    return T.scale(T.mean(T.log(picked)), -1.0)


def rnd_loss(phat: Tensor, y, s, clamps: ClampCounter | None = None) -> Tensor:
    """Mean cross-entropy of the true-class head against the random label."""
    if phat.ndim != 3:
        raise DimensionError(f"expected (batch, heads, labels) probabilities, got {phat.shape}")
    y = _check_labels(y, phat.shape[0], phat.shape[1], "class labels")
    s = _check_labels(s, phat.shape[0], phat.shape[2], "random labels")
    picked = T.clamp_floor(T.gather(T.gather(phat, y), s), CLAMP_FLOOR, clamps)
    return T.scale(T.mean(T.log(picked)), -1.0)


def reg_loss(phat: Tensor, y, clamps: ClampCounter | None = None) -> Tensor:
    """Cross-entropy between uniform targets and the true-class head.

    ``mean_batch(-(1/n) * sum_i log phat[y, i])``; by the Gibbs inequality it
    is bounded below by ln(n), with equality only at a uniform head.
    """
    if phat.ndim != 3:
        raise DimensionError(f"expected (batch, heads, labels) probabilities, got {phat.shape}")
    y = _check_labels(y, phat.shape[0], phat.shape[1], "class labels")
    head_rows = T.clamp_floor(T.gather(phat, y), CLAMP_FLOOR, clamps)
    return T.scale(T.mean(T.mean(T.log(head_rows), axis=1)), -1.0)


def label_smoothing_loss(p: Tensor, y, delta: float, clamps: ClampCounter | None = None, form: str = "soft_targets") -> Tensor:
    """Cross-entropy against smoothed targets, in either algebraic form.

    ``soft_targets`` puts 1-delta on the true class and delta/(N-1) on each
    other class; ``rescaled`` folds that into a rescaled true-class term plus
    a uniform-target term over all classes.  The two agree to rounding, and
    delta=0 reproduces :func:`class_loss` bit for bit.
    """
    if not 0.0 <= delta < 1.0:
        raise ConfigError(f"smoothing factor must be in [0, 1), got {delta}")
    n_classes = p.shape[-1]
    y = _check_labels(y, p.shape[0], n_classes, "class labels")
    off = delta / (n_classes - 1)
    log_p = T.log(T.clamp_floor(p, CLAMP_FLOOR, clamps))
    if form == "soft_targets":
        targets = np.full(p.shape, off)
        targets[np.arange(p.shape[0]), y] = 1.0 - delta
        per_sample = T.sum(T.mul(log_p, Tensor(targets)), axis=1)
        return T.scale(T.mean(per_sample), -1.0)
    if form == "rescaled":
        true_term = T.scale(T.gather(log_p, y), -(1.0 - delta - off))
        uniform_term = T.scale(T.sum(log_p, axis=1), -off)
        return T.mean(T.add(true_term, uniform_term))
    raise ConfigError(f"unknown label smoothing form {form!r}")


@dataclass
class LossBundle:
    """Scalar loss values for one batch or epoch, for records and reports."""

    class_loss: float | None
    rnd_loss: float | None
    reg_loss: float | None
    reg_weight: float
    smoothing: float

    def validate(self, n_rnd: int | None = None) -> "LossBundle":
        for name, v in (("class", self.class_loss), ("rnd", self.rnd_loss), ("reg", self.reg_loss)):
            if v is not None and not math.isfinite(v):
                raise ConfigError(f"{name} loss is not finite: {v}")
        if self.reg_loss is not None and n_rnd is not None and self.reg_loss < math.log(n_rnd) - 1e-9:
            raise ConfigError(f"reg loss {self.reg_loss} below its uniform-head floor ln({n_rnd})")
        return self


@dataclass
class CompositeObjectives:
    """Per-parameter-group scalar objectives plus their single-backward sum."""

    per_group: dict[str, Tensor]
    total: Tensor


def composite_objectives(
    variant: str,
    class_term: Tensor | None,
    rnd_term: Tensor | None,
    reg_term: Tensor | None,
    reg_weight: float,
) -> CompositeObjectives:
    """Assemble the training objective for each parameter group.

    multihead: features train on class + reg_weight*reg, the class head on
    class, the heads on rnd.  baseline: class only.  single_output: features
    train on reg alone and heads on rnd; reg_weight is not used.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    if reg_weight < 0:
        raise ConfigError(f"regularization weight must be >= 0, got {reg_weight}")
    if variant == "baseline":
        per_group = {"feature_extractor": class_term, "class_head": class_term}
        total = class_term
    elif variant == "single_output":
        per_group = {"feature_extractor": reg_term, "rnd_heads": rnd_term}
        total = T.add(reg_term, rnd_term)
    else:
        feature_term = class_term
        terms = [class_term, rnd_term]
        if reg_weight > 0.0:
            if reg_term is None:
                raise ConfigError("multihead objective with reg_weight > 0 needs a reg term")
            scaled = T.scale(reg_term, reg_weight)
            feature_term = T.add(class_term, scaled)
            terms = [feature_term, rnd_term]
        per_group = {"feature_extractor": feature_term, "class_head": class_term, "rnd_heads": rnd_term}
        total = terms[0]
        for t in terms[1:]:
            total = T.add(total, t)
    missing = [k for k, v in per_group.items() if v is None]
    if missing:
        raise ConfigError(f"variant {variant!r} objective missing loss terms for {missing}")
    return CompositeObjectives(per_group, total)
