"""Confusion matrices and per-class precision/recall/F1 reports.

Metrics are kept as exact rationals alongside round-half-up integer
percents, so published tables can be reproduced cell for cell. Precision of
a class that was never predicted is reported as undefined ("n/a"), never
coerced to 0 or 100.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .embedding_store import EmbeddingSet
from .prompt_corpus import N_GENRES, GenreTag
from .tagger import TaggerParams, predict_batch

__all__ = [
    "ConfusionMatrix",
    "ClassMetrics",
    "EvaluationReport",
    "EvaluationError",
    "confusion_from_labels",
    "metrics_from_matrix",
    "evaluate",
    "percent_round_half_up",
]


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[true_class][predicted_class], non-negative integers."""

    counts: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        if len(self.counts) != N_GENRES or any(
            len(row) != N_GENRES for row in self.counts
        ):
            raise EvaluationError(f"matrix must be {N_GENRES}x{N_GENRES}")
        if any(c < 0 for row in self.counts for c in row):
            raise EvaluationError("matrix entries must be non-negative")

    @classmethod
    def from_rows(cls, rows) -> "ConfusionMatrix":
        return cls(tuple(tuple(int(c) for c in row) for row in rows))

    def row_sums(self) -> list[int]:
        return [sum(row) for row in self.counts]

    def col_sums(self) -> list[int]:
        return [sum(row[c] for row in self.counts) for c in range(N_GENRES)]

    def total(self) -> int:
        return sum(self.row_sums())

    def trace(self) -> int:
        return sum(self.counts[i][i] for i in range(N_GENRES))


def confusion_from_labels(true_labels, predicted_labels) -> ConfusionMatrix:
    rows = [[0] * N_GENRES for _ in range(N_GENRES)]
    for t, p in zip(true_labels, predicted_labels, strict=True):
        rows[int(t)][int(p)] += 1
    return ConfusionMatrix.from_rows(rows)


def percent_round_half_up(value: Fraction | None) -> int | None:
    """Exact rational -> integer percent, halves rounding up."""
    if value is None:
        return None
    return int(value * 100 + Fraction(1, 2))


@dataclass(frozen=True)
class ClassMetrics:
    """Exact per-class metrics; None marks an undefined value."""

    precision: Fraction | None
    recall: Fraction | None
    f1: Fraction | None

    @property
    def precision_pct(self) -> int | None:
        return percent_round_half_up(self.precision)

    @property
    def recall_pct(self) -> int | None:
        return percent_round_half_up(self.recall)

    @property
    def f1_pct(self) -> int | None:
        return percent_round_half_up(self.f1)


@dataclass(frozen=True)
class EvaluationReport:
    matrix: ConfusionMatrix
    per_class: tuple[ClassMetrics, ...]
    accuracy: Fraction | None
    n_per_class: tuple[int, ...]

    @property
    def accuracy_pct(self) -> int | None:
        return percent_round_half_up(self.accuracy)

    def to_dict(self) -> dict:
        def frac(value: Fraction | None) -> str | None:
            return None if value is None else f"{value.numerator}/{value.denominator}"

        return {
            "matrix": [list(row) for row in self.matrix.counts],
            "n_per_class": list(self.n_per_class),
            "per_class": {
                GenreTag(i).label: {
                    "precision": frac(m.precision),
                    "precision_pct": m.precision_pct,
                    "recall": frac(m.recall),
                    "recall_pct": m.recall_pct,
                    "f1": frac(m.f1),
                    "f1_pct": m.f1_pct,
                }
                for i, m in enumerate(self.per_class)
            },
            "accuracy": frac(self.accuracy),
            "accuracy_pct": self.accuracy_pct,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def text_table(self) -> str:
        """Aligned plain-text table in the published layout."""

        def pct(value: int | None) -> str:
            return "n/a" if value is None else f"{value}%"

        rows = [["Genre", "Precision", "Recall", "F1-Score"]]
        for i, m in enumerate(self.per_class):
            rows.append(
                [
                    GenreTag(i).label,
                    pct(m.precision_pct),
                    pct(m.recall_pct),
                    pct(m.f1_pct),
                ]
            )
        rows.append(["Accuracy", pct(self.accuracy_pct), "", ""])
        widths = [max(len(row[c]) for row in rows) for c in range(4)]
        lines = []
        for row in rows:
            cells = [row[0].ljust(widths[0])] + [
                row[c].rjust(widths[c]) for c in range(1, 4)
            ]
            lines.append("  ".join(cells).rstrip())
        return "\n".join(lines) + "\n"


def metrics_from_matrix(matrix: ConfusionMatrix) -> EvaluationReport:
    """Precision/recall/F1 per class plus overall accuracy, all exact."""
    row_sums = matrix.row_sums()
    col_sums = matrix.col_sums()
    per_class = []
    for c in range(N_GENRES):
        diag = matrix.counts[c][c]
        precision = Fraction(diag, col_sums[c]) if col_sums[c] > 0 else None
        recall = Fraction(diag, row_sums[c]) if row_sums[c] > 0 else None
        if precision is None or recall is None:
            f1 = None
        elif precision + recall == 0:
            f1 = Fraction(0)
        else:
            f1 = 2 * precision * recall / (precision + recall)
        per_class.append(ClassMetrics(precision=precision, recall=recall, f1=f1))
    total = matrix.total()
    accuracy = Fraction(matrix.trace(), total) if total > 0 else None
    return EvaluationReport(
        matrix=matrix,
        per_class=tuple(per_class),
        accuracy=accuracy,
        n_per_class=tuple(row_sums),
    )


def evaluate(params: TaggerParams, benchmark: EmbeddingSet) -> EvaluationReport:
    """Run the tagger over a labeled benchmark set and report its metrics."""
    if len(benchmark) == 0:
        raise EvaluationError("benchmark set is empty")
    x, y = benchmark.to_arrays()
    predictions = predict_batch(params, x)
    return metrics_from_matrix(confusion_from_labels(y, predictions))
