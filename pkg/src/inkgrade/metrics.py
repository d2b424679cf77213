"""Evaluation metrics: edit-distance character accuracy, confusion counts
and quadratic weighted kappa.

QWK uses the quadratic penalty w[i,j] = (i-j)^2 / (N-1)^2 with the expected
matrix formed from the two marginal histograms and normalized to the same
total as the observed matrix; values above 0.8 are conventionally read as
almost perfect agreement, 0.61-0.8 as substantial.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyReferenceError, UndefinedKappaError


@dataclass(frozen=True)
class RatingPair:
    """Aligned integer score sequences from two raters."""

    system: tuple[int, ...]
    human: tuple[int, ...]
    n_ranks: int

    def __post_init__(self):
        if len(self.system) != len(self.human) or not self.system:
            raise ValueError("rating sequences must be non-empty and equal length")
        for r in (*self.system, *self.human):
            if not 0 <= r < self.n_ranks:
                raise ValueError(f"rank {r} outside [0, {self.n_ranks})")


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[reference, predicted]."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(pairs: Sequence[tuple[int, int]], n_labels: int) -> ConfusionMatrix:
    """Count (predicted, reference) pairs into an n x n matrix."""
    counts = np.zeros((n_labels, n_labels), dtype=np.int64)
    for hyp, ref in pairs:
        counts[ref, hyp] += 1
    return ConfusionMatrix(counts)


def qwk(pair: RatingPair) -> float:
    """Quadratic weighted kappa between the two raters."""
    n = pair.n_ranks
    if n < 2:
        return 1.0  # a single rank category cannot disagree
    observed = np.zeros((n, n), dtype=np.float64)
    for h, s in zip(pair.human, pair.system):
        observed[h, s] += 1
    hist_h = observed.sum(axis=1)
    hist_s = observed.sum(axis=0)
    expected = np.outer(hist_h, hist_s) / observed.sum()
    idx = np.arange(n)
    weights = (idx[:, None] - idx[None, :]) ** 2 / (n - 1) ** 2
    denom = float((weights * expected).sum())
    if denom == 0.0:
        # Both raters constant: perfect iff they are identically constant.
        if float((weights * observed).sum()) == 0.0:
            return 1.0
        raise UndefinedKappaError("expected disagreement is zero but raters differ")
    return 1.0 - float((weights * observed).sum()) / denom


def agreement_label(kappa: float) -> str:
    """Conventional interpretation band for a kappa value."""
    if kappa > 0.8:
        return "almost perfect"
    if kappa > 0.6:
        return "substantial"
    if kappa > 0.4:
        return "moderate"
    return "weak"


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Minimal insert/delete/substitute count (two-row dynamic program)."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        current = [i]
        for j, y in enumerate(b, start=1):
            cost = 0 if x == y else 1
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost))
        previous = current
    return previous[-1]


def char_accuracy(hyp: Sequence, ref: Sequence) -> float:
    """1 - edit distance / reference length, floored at zero."""
    if len(ref) == 0:
        raise EmptyReferenceError("reference must be non-empty")
    return max(0.0, 1.0 - levenshtein(hyp, ref) / len(ref))


def corpus_char_accuracy(pairs: Sequence[tuple[Sequence, Sequence]]) -> float:
    """1 - total edit distance / total reference length over a corpus."""
    total_ref = sum(len(ref) for _, ref in pairs)
    if total_ref == 0:
        raise EmptyReferenceError("corpus references are empty")
    total_dist = sum(levenshtein(hyp, ref) for hyp, ref in pairs)
    return max(0.0, 1.0 - total_dist / total_ref)
