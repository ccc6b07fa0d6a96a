"""Semantic error propagation: how far wrong-class knowledge drifts.

For every misclassified image the knowledge generated for the predicted
class is compared against the knowledge for the true class: serialize
both, embed both, take 1 minus the dot product of the unit vectors.
Aggregates split pairs into a mismatch case (distance at or above a
threshold) and a similarity case (below it).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .core import FoodClass, GeneratedKnowledge
from .errors import SchemaError, TransportError, ValidationError
from .metrics.text import tokenize


class DimensionMismatch(ValidationError):
    """Vectors of different dimension cannot be compared."""


class ProviderMismatch(ValidationError):
    """Vectors from different providers live in unrelated spaces."""


class ProviderUnavailable(TransportError):
    """The embedding provider could not serve a request."""


class QuotaExceeded(TransportError):
    """The remote embedding service refused for rate or quota reasons."""


class AuthMissing(ValidationError):
    """The configured API-key environment variable is unset."""


class EmptyErrorSet(ValidationError):
    """The aggregate is a mean over misclassified pairs; zero pairs divide by zero."""


@dataclass(frozen=True)
class EmbeddingVector:
    """A unit-normalized embedding tagged with the provider that made it."""

    values: tuple[float, ...]
    provider_id: str

    def __post_init__(self):
        if not self.values:
            raise ValidationError("embedding must be non-empty")
        for v in self.values:
            if not math.isfinite(v):
                raise ValidationError(f"embedding values must be finite, got {v!r}")
        norm = math.sqrt(sum(v * v for v in self.values))
        if norm == 0.0:
            raise ValidationError("zero vector cannot be normalized")
        if abs(norm - 1.0) > 1e-9:
            object.__setattr__(
                self, "values", tuple(v / norm for v in self.values)
            )

    @property
    def dim(self) -> int:
        return len(self.values)


def cosine_distance(u: EmbeddingVector, v: EmbeddingVector) -> float:
    """1 minus the dot product; in [0, 2] for unit vectors."""
    if u.provider_id != v.provider_id:
        raise ProviderMismatch(
            f"cannot compare vectors from {u.provider_id!r} and {v.provider_id!r}"
        )
    if u.dim != v.dim:
        raise DimensionMismatch(f"dimensions differ: {u.dim} vs {v.dim}")
    distance = 1.0 - sum(a * b for a, b in zip(u.values, v.values))
    # rounding can push a hair past the closed interval
    return min(2.0, max(0.0, distance))


class EmbeddingProvider(Protocol):
    provider_id: str
    dim: int

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


STUB_DIM = 64


class StubEmbedder:
    """Deterministic hashed bag-of-tokens embedder, no model weights.

    Each token is hashed into one of 64 signed buckets; the accumulated
    vector is unit-normalized.  Shared tokens pull texts together, which
    is all the aggregate orderings need.
    """

    provider_id = "stub-hash-64"
    dim = STUB_DIM

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return [self._embed_one(text) for text in texts]

    def _embed_one(self, text: str) -> EmbeddingVector:
        acc = [0.0] * STUB_DIM
        for token in tokenize(text):
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            value = int.from_bytes(digest[:8], "big")
            index = value % STUB_DIM
            sign = 1.0 if (value // STUB_DIM) % 2 == 0 else -1.0
            acc[index] += sign
        if all(v == 0.0 for v in acc):
            # tokenless text (or exact cancellation): a fixed basis vector
            acc[0] = 1.0
        return EmbeddingVector(values=tuple(acc), provider_id=self.provider_id)


def text_key(text: str) -> str:
    """Lookup key for precomputed-embedding files: hex sha256 of the text."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class FileEmbeddingProvider:
    """Serves embeddings precomputed into a line-delimited JSON file.

    Each line carries text_sha256, provider_id, dim, and values.  A text
    absent from the file is a hard error, never silently re-embedded.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._vectors: dict[str, EmbeddingVector] = {}
        provider_id: str | None = None
        dim: int | None = None
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SchemaError(f"invalid JSON: {exc}", line=lineno) from exc
                try:
                    key = obj["text_sha256"]
                    pid = obj["provider_id"]
                    declared_dim = int(obj["dim"])
                    values = tuple(float(v) for v in obj["values"])
                except (KeyError, TypeError, ValueError) as exc:
                    raise SchemaError(f"bad embedding record: {exc}", line=lineno) from exc
                if len(values) != declared_dim:
                    raise SchemaError(
                        f"declared dim {declared_dim} but {len(values)} values",
                        line=lineno,
                    )
                if provider_id is None:
                    provider_id, dim = pid, declared_dim
                elif pid != provider_id or declared_dim != dim:
                    raise SchemaError(
                        "mixed providers or dimensions in one file", line=lineno
                    )
                self._vectors[key] = EmbeddingVector(values=values, provider_id=pid)
        if provider_id is None:
            raise SchemaError(f"embedding file {self.path} is empty")
        self.provider_id = provider_id
        self.dim = dim if dim is not None else 0

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        out = []
        for text in texts:
            key = text_key(text)
            if key not in self._vectors:
                raise ProviderUnavailable(
                    f"no precomputed embedding for text key {key[:12]}..."
                )
            out.append(self._vectors[key])
        return out


# transport: (endpoint, payload, headers, timeout_s) -> (status, response body)
EmbedTransport = Callable[[str, dict, dict, float], tuple[int, bytes]]


@dataclass(frozen=True)
class RemoteEmbeddingConfig:
    provider_id: str
    endpoint: str
    model: str
    api_key_env: str
    max_in_flight: int = 4
    timeout_ms: int = 30_000

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValidationError("max_in_flight must be >= 1")
        if self.timeout_ms <= 0:
            raise ValidationError("timeout_ms must be positive")


class RemoteEmbeddingProvider:
    """Client for an HTTP embedding service with a bounded in-flight limit.

    The transport is injectable so tests never open sockets.  The API key
    is read from the environment at call time and never stored.
    """

    def __init__(self, config: RemoteEmbeddingConfig, transport: EmbedTransport):
        self.config = config
        self.provider_id = config.provider_id
        self.dim = 0  # learned from the first response
        self._transport = transport

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        key = os.environ.get(self.config.api_key_env)
        if not key:
            raise AuthMissing(
                f"environment variable {self.config.api_key_env} is not set"
            )
        headers = {"authorization": f"Bearer {key}", "content-type": "application/json"}

        def fetch(text: str) -> EmbeddingVector:
            payload = {"model": self.config.model, "input": text}
            status, body = self._transport(
                self.config.endpoint, payload, headers, self.config.timeout_ms / 1000.0
            )
            if status == 429:
                raise QuotaExceeded(f"embedding service returned {status}")
            if status != 200:
                raise ProviderUnavailable(f"embedding service returned {status}")
            try:
                obj = json.loads(body)
                values = tuple(float(v) for v in obj["values"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ProviderUnavailable(f"unusable embedding response: {exc}") from exc
            return EmbeddingVector(values=values, provider_id=self.provider_id)

        with ThreadPoolExecutor(max_workers=self.config.max_in_flight) as pool:
            vectors = list(pool.map(fetch, texts))
        if vectors and self.dim == 0:
            self.dim = vectors[0].dim
        return vectors


def serialize_for_embedding(k: GeneratedKnowledge) -> str:
    """Canonical text for embedding: name, ingredients, steps, nutrition.

    Parts are joined with single spaces and internal whitespace collapsed,
    so structurally equal knowledge always serializes identically.
    """
    parts = [
        k.food_name,
        " ".join(k.recipe_ingredients),
        " ".join(k.recipe_steps),
        k.nutrition,
    ]
    joined = " ".join(part for part in parts if part)
    return " ".join(joined.split())


class CaseKind(str, Enum):
    MISMATCH = "mismatch"
    SIMILARITY = "similarity"


@dataclass(frozen=True)
class ErrorCase:
    kind: CaseKind
    threshold_used: float


DEFAULT_CASE_THRESHOLD = 0.5


def classify_error_case(d_sem: float, threshold: float = DEFAULT_CASE_THRESHOLD) -> ErrorCase:
    """Mismatch at or above the threshold, similarity below it."""
    if not 0.0 <= d_sem <= 2.0:
        raise ValidationError(f"d_sem must be in [0, 2], got {d_sem}")
    kind = CaseKind.MISMATCH if d_sem >= threshold else CaseKind.SIMILARITY
    return ErrorCase(kind=kind, threshold_used=threshold)


@dataclass(frozen=True)
class ErrorPair:
    """One misclassified image with knowledge for both involved classes."""

    image_id: str
    predicted_class: FoodClass
    true_class: FoodClass
    knowledge_pred: GeneratedKnowledge
    knowledge_true: GeneratedKnowledge


@dataclass(frozen=True)
class SepPair:
    image_id: str
    predicted_class: FoodClass
    true_class: FoodClass
    d_sem: float
    case: CaseKind


@dataclass(frozen=True)
class SepResult:
    per_pair: tuple[SepPair, ...]
    mean_overall: float
    mean_by_case: dict[CaseKind, float]
    threshold: float


def sep_aggregate(
    errors: Sequence[ErrorPair],
    provider: EmbeddingProvider,
    threshold: float = DEFAULT_CASE_THRESHOLD,
) -> SepResult:
    """Mean semantic distance over misclassified pairs, overall and per case."""
    if not errors:
        raise EmptyErrorSet("no misclassified pairs to aggregate")
    texts: list[str] = []
    for pair in errors:
        texts.append(serialize_for_embedding(pair.knowledge_pred))
        texts.append(serialize_for_embedding(pair.knowledge_true))
    vectors = provider.embed(texts)
    per_pair: list[SepPair] = []
    for i, pair in enumerate(errors):
        d_sem = cosine_distance(vectors[2 * i], vectors[2 * i + 1])
        case = classify_error_case(d_sem, threshold)
        per_pair.append(
            SepPair(
                image_id=pair.image_id,
                predicted_class=pair.predicted_class,
                true_class=pair.true_class,
                d_sem=d_sem,
                case=case.kind,
            )
        )
    mean_overall = sum(p.d_sem for p in per_pair) / len(per_pair)
    mean_by_case: dict[CaseKind, float] = {}
    for kind in CaseKind:
        members = [p.d_sem for p in per_pair if p.case is kind]
        if members:
            mean_by_case[kind] = sum(members) / len(members)
    return SepResult(
        per_pair=tuple(per_pair),
        mean_overall=mean_overall,
        mean_by_case=mean_by_case,
        threshold=threshold,
    )
