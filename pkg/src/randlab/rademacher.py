"""Empirical complexity estimation for binary (+/-1) hypothesis classes.

The quantity estimated is the expectation over uniform sign vectors of the
best achievable correlation ``sup_h (1/m) sum_i sigma_i h(x_i)``.  Two modes:

* exact enumeration over all 2^m sign vectors when the class's outputs can be
  materialized (small m, class size bounded);
* Monte-Carlo sampling over sign draws, with the supremum taken exactly for
  enumerable classes or approximated by empirical-risk-minimization training
  for model-based classes.

The ERM route is an approximation from below, so outputs are always labeled
an estimate, never the complexity itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import ConfigError

MAX_ENUM_POINTS = 20
MAX_ENUM_HYPOTHESES = 1 << 16


class HypothesisClass(Protocol):
    def outputs(self, inputs: np.ndarray) -> np.ndarray | None:
        """All hypotheses' +/-1 outputs, shape (n_hypotheses, m); None if not enumerable."""

    def erm_fit(self, inputs: np.ndarray, signs: np.ndarray, stream: np.random.Generator) -> np.ndarray:
        """+/-1 predictions of the best-found hypothesis for the given signs."""


class ConstantClass:
    """The two constant classifiers {+1, -1}."""

    def outputs(self, inputs: np.ndarray) -> np.ndarray:
        m = len(inputs)
        return np.stack([np.ones(m), -np.ones(m)])

    def erm_fit(self, inputs: np.ndarray, signs: np.ndarray, stream) -> np.ndarray:
        best = 1.0 if signs.sum() >= 0 else -1.0
        return np.full(len(inputs), best)


class SingletonClass:
    """Only the constant +1 classifier; its complexity estimate is E|mean sigma| -> 0."""

    def outputs(self, inputs: np.ndarray) -> np.ndarray:
        return np.ones((1, len(inputs)))

    def erm_fit(self, inputs: np.ndarray, signs: np.ndarray, stream) -> np.ndarray:
        return np.ones(len(inputs))


class ThresholdClass:
    """1-d threshold functions x -> sign(x - t), both orientations."""

    def outputs(self, inputs: np.ndarray) -> np.ndarray:
        x = np.asarray(inputs, dtype=np.float64).reshape(-1)
        order = np.argsort(x, kind="stable")
        m = len(x)
        outs = []
        for cut in range(m + 1):
            base = np.ones(m)
            base[order[:cut]] = -1.0
            outs.append(base)
            outs.append(-base)
        return np.unique(np.stack(outs), axis=0)

    def erm_fit(self, inputs: np.ndarray, signs: np.ndarray, stream) -> np.ndarray:
        outs = self.outputs(inputs)
        scores = outs @ signs
        return outs[int(scores.argmax())]


class TrainedModelClass:
    """Hypothesis class realized by fitting a model to each sign draw.

    ``fit`` maps (inputs, 0/1 labels, stream) to a trained predictor returning
    class indices; predictions convert back to +/-1.  This reuses whatever
    optimizer stack the caller wires in, so the supremum approximation matches
    the trainer used everywhere else.
    """

    def __init__(self, fit: Callable[[np.ndarray, np.ndarray, np.random.Generator], Callable[[np.ndarray], np.ndarray]]):
        self._fit = fit

    def outputs(self, inputs: np.ndarray) -> None:
        return None

    def erm_fit(self, inputs: np.ndarray, signs: np.ndarray, stream) -> np.ndarray:
        labels = (signs > 0).astype(np.int64)
        predict = self._fit(inputs, labels, stream)
        return np.where(predict(inputs) > 0, 1.0, -1.0)


@dataclass(frozen=True)
class RademacherEstimate:
    value: float
    mode: str  # "enumerate" | "sample"
    trials: int
    std_err: float


def _all_sign_vectors(m: int) -> np.ndarray:
    if m > MAX_ENUM_POINTS:
        raise ConfigError(f"exact enumeration limited to {MAX_ENUM_POINTS} points, got {m}")
    codes = np.arange(1 << m, dtype=np.uint32)
    bits = (codes[:, None] >> np.arange(m)) & 1
    return bits.astype(np.float64) * 2.0 - 1.0


def rademacher_binary(
    hypotheses: HypothesisClass,
    inputs: Sequence | np.ndarray,
    trials: int | None = None,
    stream: np.random.Generator | None = None,
    mode: str = "auto",
) -> RademacherEstimate:
    """Estimate the sign-fitting capacity of ``hypotheses`` on ``inputs``.

    ``enumerate`` averages the exact supremum over every sign vector;
    ``sample`` draws ``trials`` sign vectors.  ``auto`` enumerates when the
    class is enumerable and the point count allows it.
    """
    inputs = np.asarray(inputs)
    m = len(inputs)
    if m < 1:
        raise ConfigError("need at least one input point")
    outs = hypotheses.outputs(inputs)
    if outs is not None and len(outs) > MAX_ENUM_HYPOTHESES:
        raise ConfigError(f"hypothesis class too large to enumerate ({len(outs)})")

    if mode == "auto":
        mode = "enumerate" if outs is not None and m <= MAX_ENUM_POINTS else "sample"
    if mode == "enumerate":
        if outs is None:
            raise ConfigError("class is not enumerable; use sampling mode")
        signs = _all_sign_vectors(m)
        sups = (signs @ outs.T).max(axis=1) / m
        return RademacherEstimate(float(sups.mean()), "enumerate", len(signs), 0.0)
    if mode != "sample":
        raise ConfigError(f"unknown mode {mode!r}")

    if trials is None or trials < 1:
        raise ConfigError("sampling mode needs trials >= 1")
    if stream is None:
        raise ConfigError("sampling mode needs a random stream")
    sups = np.empty(trials)
    for t in range(trials):
        sigma = stream.integers(0, 2, size=m).astype(np.float64) * 2.0 - 1.0
        if outs is not None:
            sups[t] = float((outs @ sigma).max()) / m
        else:
            h = hypotheses.erm_fit(inputs, sigma, stream)
            sups[t] = float((sigma * h).mean())
    std_err = float(sups.std(ddof=1) / math.sqrt(trials)) if trials > 1 else float("inf")
    return RademacherEstimate(float(sups.mean()), "sample", trials, std_err)


def bound_eval(empirical_risk: float, rademacher_estimate: float, m: int, confidence: float) -> float:
    """Generalization upper bound: risk + capacity + sqrt(log(1/conf) / 2m)."""
    if not 0.0 < confidence < 1.0:
        raise ConfigError(f"confidence parameter must be in (0, 1), got {confidence}")
    if m < 1:
        raise ConfigError(f"sample count must be >= 1, got {m}")
    return empirical_risk + rademacher_estimate + math.sqrt(math.log(1.0 / confidence) / (2.0 * m))
