"""Numeric building blocks: softmax, cross-entropy, top-k, compound scaling.

Pure functions over plain sequences of floats.  Each guards its own domain
and raises a module-local subclass of ValidationError on violation.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

from .errors import ValidationError


class NonFinite(ValidationError):
    """An input contained NaN or an infinity."""


class ShapeMismatch(ValidationError):
    """Two sequences that must be the same length were not."""


class BadK(ValidationError):
    """k outside [1, len(sequence)]."""


class BadBase(ValidationError):
    """A scaling base outside its allowed range."""


def _require_finite(values: Sequence[float], what: str) -> None:
    for v in values:
        if not math.isfinite(v):
            raise NonFinite(f"{what} must be finite, got {v!r}")


def softmax(logits: Sequence[float]) -> list[float]:
    """Normalized exponentials, shifted by the max logit for stability.

    Requires at least two entries: a one-class distribution is degenerate
    and always hides a caller bug.
    """
    if len(logits) < 2:
        raise ShapeMismatch(f"softmax needs at least 2 logits, got {len(logits)}")
    _require_finite(logits, "logits")
    peak = max(logits)
    exps = [math.exp(v - peak) for v in logits]
    total = sum(exps)
    return [e / total for e in exps]


CROSS_ENTROPY_FLOOR = 1e-12


def cross_entropy(true_onehot: Sequence[float], predicted: Sequence[float]) -> float:
    """Categorical cross-entropy against a one-hot target.

    Predicted probabilities are floored at 1e-12 inside the log so a
    confident wrong prediction yields a large finite loss, never inf.
    """
    if len(true_onehot) != len(predicted):
        raise ShapeMismatch(
            f"target and prediction lengths differ: {len(true_onehot)} vs {len(predicted)}"
        )
    _require_finite(true_onehot, "target")
    _require_finite(predicted, "prediction")
    hot = [i for i, v in enumerate(true_onehot) if v != 0.0]
    if len(hot) != 1 or true_onehot[hot[0]] != 1.0:
        raise ValidationError("target must be one-hot: a single 1.0, all else 0.0")
    for p in predicted:
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"predicted probabilities must be in [0, 1], got {p}")
    return -math.log(max(predicted[hot[0]], CROSS_ENTROPY_FLOOR))


def top_k(probs: Sequence[float], k: int) -> list[int]:
    """Indices of the k largest probabilities, ties broken by ascending index."""
    if not 1 <= k <= len(probs):
        raise BadK(f"k must be in [1, {len(probs)}], got {k}")
    _require_finite(probs, "probabilities")
    order = sorted(range(len(probs)), key=lambda i: (-probs[i], i))
    return order[:k]


class ScaledDims(NamedTuple):
    depth: float
    width: float
    resolution: float
    constraint_residual: float


def compound_scaling(phi: float, alpha: float, beta: float, gamma: float) -> ScaledDims:
    """Scale depth, width, and resolution jointly from one coefficient.

    depth = alpha**phi, width = beta**phi, resolution = gamma**phi.  The
    residual reports how far alpha * beta**2 * gamma**2 sits from 2, the
    budget the base values are meant to respect; it is diagnostic, not
    enforced.  The bases carry no defaults: they are fitted quantities the
    caller must supply.
    """
    for name, base in (("alpha", alpha), ("beta", beta), ("gamma", gamma)):
        if not math.isfinite(base) or base < 1.0:
            raise BadBase(f"{name} must be finite and >= 1, got {base}")
    if not math.isfinite(phi) or phi < 0.0:
        raise BadBase(f"phi must be finite and >= 0, got {phi}")
    residual = abs(alpha * beta**2 * gamma**2 - 2.0)
    return ScaledDims(
        depth=alpha**phi,
        width=beta**phi,
        resolution=gamma**phi,
        constraint_residual=residual,
    )
