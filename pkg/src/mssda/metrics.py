"""Vote protocols and confusion-matrix metrics for cross-subject evaluation.

A trained fold produces one hard label per target sample. The subject-vote
protocol collapses them into a single subject-level decision; the
segment-vote protocol first groups consecutive samples into fixed-length
segments (default 11, final remainder kept) and votes per segment. Both use
the same threshold rule: positive iff the positive fraction is >= theta, so
an exact tie counts as positive. Class 1 is the positive class throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InputError


def _check_binary(labels: np.ndarray, what: str) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and not np.isin(labels, (0, 1)).all():
        raise InputError(f"{what} must be binary (0/1); got values "
                         f"{sorted(set(np.unique(labels).tolist()))}")
    return labels.astype(np.int64)


def vote_subject(sample_labels: Sequence[int], theta: float = 0.5) -> int:
    """1 iff the fraction of positive labels is >= theta (ties go positive)."""
    labels = _check_binary(sample_labels, "sample labels")
    if labels.size == 0:
        raise InputError("vote_subject: empty label list")
    return int(labels.mean() >= theta)


def segment_vote(sample_labels: Sequence[int], segment_len: int = 11,
                 theta: float = 0.5) -> list[int]:
    """Vote over consecutive non-overlapping segments, remainder kept.

    The labels are taken in recording order; the final segment may be
    shorter than segment_len but still casts its own vote.
    """
    labels = _check_binary(sample_labels, "sample labels")
    if labels.size == 0:
        raise InputError("segment_vote: empty label list")
    if segment_len < 1:
        raise InputError(f"segment_len must be >= 1, got {segment_len}")
    return [vote_subject(labels[i:i + segment_len], theta)
            for i in range(0, len(labels), segment_len)]


@dataclass
class Metrics:
    """Confusion counts plus the derived ratios (positive class = 1).

    Ratios with a zero denominator are reported as 0.0 and named in
    `degenerate` so downstream tables can distinguish "0" from "undefined".
    """

    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    specificity: float
    accuracy: float
    f1: float
    degenerate: list[str] = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
            "precision": self.precision, "recall": self.recall,
            "specificity": self.specificity, "accuracy": self.accuracy,
            "f1": self.f1, "degenerate": list(self.degenerate),
        }


def metrics_from_counts(tp: int, fp: int, fn: int, tn: int) -> Metrics:
    """Derive all ratios from integer confusion counts."""
    if min(tp, fp, fn, tn) < 0:
        raise InputError("confusion counts must be nonnegative")
    degenerate: list[str] = []

    def ratio(num: int, den: int, name: str) -> float:
        if den == 0:
            degenerate.append(name)
            return 0.0
        return num / den

    precision = ratio(tp, tp + fp, "precision")
    recall = ratio(tp, tp + fn, "recall")
    specificity = ratio(tn, tn + fp, "specificity")
    accuracy = ratio(tp + tn, tp + fp + fn + tn, "accuracy")
    f1 = (ratio(0, 0, "f1") if precision + recall == 0
          else 2.0 * precision * recall / (precision + recall))
    return Metrics(tp=tp, fp=fp, fn=fn, tn=tn, precision=precision, recall=recall,
                   specificity=specificity, accuracy=accuracy, f1=f1,
                   degenerate=degenerate)


def confusion_counts(pred: Sequence[int], true: Sequence[int]) -> tuple[int, int, int, int]:
    """(TP, FP, FN, TN) with class 1 positive; lengths must match."""
    pred = _check_binary(pred, "predicted labels")
    true = _check_binary(true, "true labels")
    if pred.shape != true.shape:
        raise InputError(
            f"prediction/truth length mismatch: {pred.shape} vs {true.shape}")
    tp = int(np.sum((pred == 1) & (true == 1)))
    fp = int(np.sum((pred == 1) & (true == 0)))
    fn = int(np.sum((pred == 0) & (true == 1)))
    tn = int(np.sum((pred == 0) & (true == 0)))
    return tp, fp, fn, tn


def compute_metrics(pred: Sequence[int], true: Sequence[int]) -> Metrics:
    """Confusion-matrix metrics of binary predictions against truth."""
    return metrics_from_counts(*confusion_counts(pred, true))
