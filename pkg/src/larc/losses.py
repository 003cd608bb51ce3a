"""Prediction sets and bounded monotone losses.

Sets always keep the candidates whose nonconformity score is at or below
the threshold. Rules of the form "keep if value > g" (beam selection,
confidence-thresholded classification) are mapped onto scores with
:func:`value_set_to_score_set`, so a higher threshold always means a larger
set and the controllers keep a single update sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

KINDS = ("miscoverage", "fnr", "regret")


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossSpec:
    kind: str = "miscoverage"
    bound: float = 1.0
    score_bound: float = 1.0

    def __post_init__(self) -> None:
        kind = {"best_ratio_regret": "regret", "false_negative_rate": "fnr"}.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise LossError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        if self.bound != 1.0:
            raise LossError("all supported losses are bounded by B = 1")
        if not self.score_bound > 0:
            raise LossError("score_bound must be positive")


@dataclass(frozen=True)
class SetOutcome:
    kept: tuple
    loss: float


def _finite_scores(scores) -> np.ndarray:
    arr = np.asarray(scores, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise LossError("scores must be finite")
    return arr


def build_set(scores: Sequence[float], threshold: float) -> list[int]:
    """Indices whose score is ``<= threshold``."""
    arr = _finite_scores(scores)
    return np.flatnonzero(arr <= threshold).tolist()


def miscoverage(score_of_truth: float, threshold: float) -> float:
    return 1.0 if score_of_truth > threshold else 0.0


def fnr(kept: Iterable[int], truth: Iterable[int]) -> float:
    """False negative ratio ``1 - |kept & truth| / |truth|``."""
    truth = set(truth)
    if not truth:
        raise LossError("false negative ratio is undefined for an empty truth set")
    return 1.0 - len(truth.intersection(kept)) / len(truth)


def best_ratio_regret(kept: Iterable[int], values: Sequence[float]) -> float:
    """``1 - max_{i in kept} v_i / max_i v_i``; an empty set scores the worst case 1."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise LossError("need at least one candidate")
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        raise LossError("values must be finite and strictly positive")
    kept = list(kept)
    if not kept:
        return 1.0
    return float(1.0 - v[kept].max() / v.max())


def value_set_to_score_set(values: Sequence[float], value_bound: float) -> list[float]:
    """Flip values into scores ``value_bound - v`` so "value > g" becomes "score <= bound - g"."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise LossError("values must be finite")
    if np.any(v > value_bound):
        raise LossError(f"value above value_bound {value_bound}")
    return np.maximum(value_bound - v, 0.0).tolist()


def evaluate(spec: LossSpec, threshold: float, scores: Sequence[float],
             truth: Optional[Iterable[int]] = None,
             values: Optional[Sequence[float]] = None) -> SetOutcome:
    """Build the set for ``threshold`` and score it under ``spec``.

    For miscoverage with a single score, that score is the score of the true
    label; with several candidate scores ``truth`` must name the true index.
    """
    if not math.isfinite(threshold):
        raise LossError(f"threshold must be finite, got {threshold}")
    if spec.kind == "miscoverage":
        arr = _finite_scores(scores)
        kept = tuple(np.flatnonzero(arr <= threshold).tolist())
        if truth is None:
            if arr.size != 1:
                raise LossError("miscoverage with several candidates needs a truth index")
            return SetOutcome(kept, miscoverage(float(arr[0]), threshold))
        truth = tuple(truth)
        if len(truth) != 1:
            raise LossError(f"miscoverage needs exactly one true index, got {len(truth)}; use the fnr loss for sets")
        (y,) = truth
        return SetOutcome(kept, 0.0 if y in kept else 1.0)
    kept = tuple(build_set(scores, threshold))
    if spec.kind == "fnr":
        if truth is None:
            raise LossError("fnr events need a truth set")
        return SetOutcome(kept, fnr(kept, truth))
    if values is None:
        raise LossError("regret events need per-candidate values")
    return SetOutcome(kept, best_ratio_regret(kept, values))
