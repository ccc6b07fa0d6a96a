"""Classification evaluation over prediction records.

Confusion matrix, per-class precision/recall/F1, top-k accuracy, average
precision over ranked relevance, and best/worst class selection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from ..core import FoodClass, PredictionRecord
from ..errors import ValidationError


class UnknownClass(ValidationError):
    """A record referenced a class outside the declared class list."""


class MissingTopK(ValidationError):
    """top_k accuracy for k > 1 needs ranked lists that a record lacks."""


class EmptyRanking(ValidationError):
    """Average precision over an empty ranking is undefined."""


class BadN(ValidationError):
    """Asked for more best/worst classes than exist."""


@dataclass(frozen=True)
class ConfusionMatrix:
    """Row = true class, column = predicted class."""

    classes: tuple[FoodClass, ...]
    counts: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        n = len(self.classes)
        if len(self.counts) != n or any(len(row) != n for row in self.counts):
            raise ValidationError("counts must be an NxN grid matching the class list")
        if any(c < 0 for row in self.counts for c in row):
            raise ValidationError("counts must be non-negative")

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    def index_of(self, c: FoodClass) -> int:
        try:
            return self.classes.index(c)
        except ValueError:
            raise UnknownClass(f"class {c.id!r} is not in the matrix") from None

    def support(self, c: FoodClass) -> int:
        return sum(self.counts[self.index_of(c)])

    def row_normalized(self) -> tuple[tuple[float, ...], ...]:
        """Each row divided by its sum; all-zero rows stay all-zero."""
        rows = []
        for row in self.counts:
            total = sum(row)
            if total == 0:
                rows.append(tuple(0.0 for _ in row))
            else:
                rows.append(tuple(c / total for c in row))
        return tuple(rows)

    def accuracy(self) -> float:
        """Diagonal mass over total mass; 0.0 for an empty matrix."""
        total = self.total
        if total == 0:
            return 0.0
        return sum(self.counts[i][i] for i in range(len(self.classes))) / total


def build_confusion(
    records: Iterable[PredictionRecord], classes: Sequence[FoodClass]
) -> ConfusionMatrix:
    """Count (true, predicted) pairs into a matrix over the declared class list."""
    index = {c: i for i, c in enumerate(classes)}
    grid = [[0] * len(classes) for _ in classes]
    for record in records:
        if record.true_class not in index:
            raise UnknownClass(f"true class {record.true_class.id!r} not declared")
        if record.predicted_class not in index:
            raise UnknownClass(f"predicted class {record.predicted_class.id!r} not declared")
        grid[index[record.true_class]][index[record.predicted_class]] += 1
    return ConfusionMatrix(
        classes=tuple(classes), counts=tuple(tuple(row) for row in grid)
    )


@dataclass(frozen=True)
class PerClassScore:
    food_class: FoodClass
    precision: float
    recall: float
    f1: float
    support: int


def per_class_prf(cm: ConfusionMatrix, c: FoodClass) -> PerClassScore:
    """Precision, recall, and F1 for one class; zero denominators score 0."""
    i = cm.index_of(c)
    tp = cm.counts[i][i]
    fp = sum(cm.counts[r][i] for r in range(len(cm.classes))) - tp
    fn = sum(cm.counts[i]) - tp
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
    return PerClassScore(
        food_class=c, precision=precision, recall=recall, f1=f1, support=tp + fn
    )


def macro_prf(scores: Sequence[PerClassScore]) -> tuple[float, float, float]:
    """Unweighted mean of per-class precision, recall, and F1."""
    if not scores:
        return 0.0, 0.0, 0.0
    n = len(scores)
    return (
        sum(s.precision for s in scores) / n,
        sum(s.recall for s in scores) / n,
        sum(s.f1 for s in scores) / n,
    )


def top_k_accuracy(records: Sequence[PredictionRecord], k: int) -> float:
    """Fraction of records whose true class sits in the first k ranked predictions.

    k=1 reads the predicted class directly, so ranked lists are optional
    there; any larger k requires a top_k list of length >= k on every
    record.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if not records:
        return 0.0
    if k == 1:
        return sum(1 for r in records if r.correct) / len(records)
    hits = 0
    for record in records:
        if record.top_k is None or len(record.top_k) < k:
            raise MissingTopK(
                f"record {record.image_id!r} lacks a top_k list of length >= {k}"
            )
        if any(cls_ == record.true_class for cls_, _ in record.top_k[:k]):
            hits += 1
    return hits / len(records)


def average_precision(
    ranking: Sequence[tuple[object, bool]], mode: str = "standard"
) -> float:
    """Precision-at-relevant-positions summed down a ranked list.

    `standard` divides the sum by the number of relevant items (0.0 when
    none are relevant).  `paper-literal` returns the bare sum, which can
    exceed 1.
    """
    if not ranking:
        raise EmptyRanking("ranking must be non-empty")
    if mode not in ("standard", "paper-literal"):
        raise ValidationError(f"unknown average precision mode {mode!r}")
    hits = 0
    acc = 0.0
    for position, (_, relevant) in enumerate(ranking, start=1):
        if relevant:
            hits += 1
            acc += hits / position
    if mode == "paper-literal":
        return acc
    return acc / hits if hits > 0 else 0.0


def map_over_classes(
    rankings: dict[FoodClass, Sequence[tuple[object, bool]]], mode: str = "standard"
) -> float:
    """Mean of per-class average precision."""
    if not rankings:
        raise EmptyRanking("need at least one class ranking")
    values = [average_precision(r, mode=mode) for r in rankings.values()]
    return sum(values) / len(values)


def best_worst_classes(
    scores: Sequence[PerClassScore], n: int
) -> tuple[list[PerClassScore], list[PerClassScore]]:
    """(top n by f1 descending, bottom n by f1 ascending), ties by class id."""
    if n > len(scores):
        raise BadN(f"asked for {n} classes but only {len(scores)} scored")
    if n < 0:
        raise BadN(f"n must be >= 0, got {n}")
    best = sorted(scores, key=lambda s: (-s.f1, s.food_class.id))[:n]
    worst = sorted(scores, key=lambda s: (s.f1, s.food_class.id))[:n]
    return best, worst
