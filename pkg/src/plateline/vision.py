"""Sources of prediction records: files, a remote endpoint, and a stub.

The classifier itself is always external.  This module loads and
validates its outputs, talks to a hosted inference endpoint, or
fabricates predictions with configurable injected errors so downstream
behavior can be reproduced offline.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .core import FoodClass, PredictionRecord, dumps_line
from .errors import DuplicateId, SchemaError, TransportError, ValidationError
from .modelmath import softmax, top_k

SPLITS = ("train", "val", "test")

LOGIT_AGREEMENT_TOL = 1e-6

STUB_CORRECT_CONFIDENCE = 0.9
STUB_ERROR_CONFIDENCE = 0.6


class BadSpec(ValidationError):
    """A confusion spec whose rules are unusable."""


class BadResponse(TransportError):
    """The inference endpoint answered with something unusable."""


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    true_class: FoodClass
    split: str
    image_ref: str | None = None

    def __post_init__(self):
        if not self.image_id:
            raise ValidationError("image_id must be non-empty")
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        seen: set[str] = set()
        for entry in self.entries:
            if entry.image_id in seen:
                raise DuplicateId(f"duplicate image_id {entry.image_id!r}")
            seen.add(entry.image_id)

    @property
    def split_proportions(self) -> dict[str, float]:
        if not self.entries:
            return {}
        counts = {s: 0 for s in SPLITS}
        for entry in self.entries:
            counts[entry.split] += 1
        total = len(self.entries)
        return {s: c / total for s, c in counts.items() if c}

    def classes(self) -> list[FoodClass]:
        """Distinct true classes in first-appearance order."""
        seen: dict[FoodClass, None] = {}
        for entry in self.entries:
            seen.setdefault(entry.true_class, None)
        return list(seen)


def _iter_jsonl(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc}", line=lineno) from exc
            if not isinstance(obj, dict):
                raise SchemaError("each line must be a JSON object", line=lineno)
            yield lineno, obj


def load_manifest(path: str | Path, classes: Sequence[FoodClass] | None = None) -> DatasetManifest:
    """Read a manifest file; optionally pin entries to a declared class list."""
    allowed = set(classes) if classes is not None else None
    entries: list[ManifestEntry] = []
    for lineno, obj in _iter_jsonl(path):
        try:
            entry = ManifestEntry(
                image_id=obj["image_id"],
                true_class=FoodClass(obj["true_class"]),
                split=obj["split"],
                image_ref=obj.get("image_ref"),
            )
        except KeyError as exc:
            raise SchemaError(f"missing field {exc}", line=lineno) from exc
        except ValidationError as exc:
            raise SchemaError(str(exc), line=lineno) from exc
        if allowed is not None and entry.true_class not in allowed:
            raise SchemaError(
                f"class {entry.true_class.id!r} not in the declared class list",
                line=lineno,
            )
        entries.append(entry)
    try:
        manifest = DatasetManifest(entries=tuple(entries))
    except DuplicateId:
        raise
    metadata = dict(manifest.metadata)
    metadata["split_proportions"] = manifest.split_proportions
    return DatasetManifest(entries=manifest.entries, metadata=metadata)


def _check_logits(
    obj: dict, record: PredictionRecord, classes: Sequence[FoodClass], lineno: int
) -> PredictionRecord:
    """Recompute probabilities from logits and cross-check the stated fields."""
    logits = obj["logits"]
    if not isinstance(logits, list) or not all(
        isinstance(v, (int, float)) for v in logits
    ):
        raise SchemaError("logits must be a list of numbers", line=lineno)
    if len(logits) != len(classes):
        raise SchemaError(
            f"logits length {len(logits)} does not match class list ({len(classes)})",
            line=lineno,
        )
    probs = softmax([float(v) for v in logits])
    order = top_k(probs, len(probs))
    derived_top = tuple((classes[i], probs[i]) for i in order)
    if derived_top[0][0] != record.predicted_class:
        raise SchemaError(
            f"logits argmax is {derived_top[0][0].id!r}, "
            f"stated prediction is {record.predicted_class.id!r}",
            line=lineno,
        )
    if abs(derived_top[0][1] - record.confidence) > LOGIT_AGREEMENT_TOL:
        raise SchemaError(
            f"stated confidence {record.confidence} disagrees with softmax "
            f"{derived_top[0][1]:.8f}",
            line=lineno,
        )
    if record.top_k is not None:
        for (stated_cls, stated_p), (derived_cls, derived_p) in zip(
            record.top_k, derived_top
        ):
            if stated_cls != derived_cls or abs(stated_p - derived_p) > LOGIT_AGREEMENT_TOL:
                raise SchemaError(
                    f"stated top_k disagrees with logits at class {stated_cls.id!r}",
                    line=lineno,
                )
        return record
    return PredictionRecord(
        image_id=record.image_id,
        true_class=record.true_class,
        predicted_class=record.predicted_class,
        confidence=record.confidence,
        top_k=derived_top,
    )


def load_predictions(
    path: str | Path, classes: Sequence[FoodClass] | None = None
) -> list[PredictionRecord]:
    """Read a prediction file into validated records.

    Duplicate image ids are rejected.  When a line carries logits, a
    class list is required and the softmax/top-k are recomputed locally;
    any disagreement with the stated fields is a schema error.
    """
    records: list[PredictionRecord] = []
    seen: set[str] = set()
    for lineno, obj in _iter_jsonl(path):
        try:
            record = PredictionRecord.from_json_obj(obj)
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"missing or malformed field: {exc}", line=lineno) from exc
        except ValidationError as exc:
            raise SchemaError(str(exc), line=lineno) from exc
        if record.image_id in seen:
            raise DuplicateId(f"duplicate image_id {record.image_id!r} at line {lineno}")
        seen.add(record.image_id)
        if obj.get("logits") is not None:
            if classes is None:
                raise SchemaError(
                    "logits present but no class list supplied to order them",
                    line=lineno,
                )
            record = _check_logits(obj, record, classes, lineno)
        records.append(record)
    return records


def save_predictions(records: Iterable[PredictionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(dumps_line(record.to_json_obj()) + "\n")


@dataclass(frozen=True)
class ConfusionRule:
    from_class: FoodClass
    to_class: FoodClass
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise BadSpec(f"rule rate must be in [0, 1], got {self.rate}")
        if self.from_class == self.to_class:
            raise BadSpec(f"rule maps {self.from_class.id!r} onto itself")


@dataclass(frozen=True)
class ConfusionSpec:
    """Deterministic error-injection plan for the stub classifier."""

    rules: tuple[ConfusionRule, ...]
    seed: int

    def validate(self, classes: Sequence[FoodClass]) -> None:
        declared = set(classes)
        totals: dict[FoodClass, float] = {}
        for rule in self.rules:
            if rule.from_class not in declared or rule.to_class not in declared:
                raise BadSpec(
                    f"rule {rule.from_class.id}->{rule.to_class.id} references "
                    "a class outside the declared list"
                )
            totals[rule.from_class] = totals.get(rule.from_class, 0.0) + rule.rate
        for cls_, total in totals.items():
            if total > 1.0 + 1e-9:
                raise BadSpec(
                    f"total injected error rate for {cls_.id!r} is {total}, above 1"
                )


def load_confusion_spec(path: str | Path) -> ConfusionSpec:
    """Read a JSON confusion spec: {seed, rules: [{from, to, rate}, ...]}."""
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON in confusion spec: {exc}") from exc
    if not isinstance(obj, dict) or "seed" not in obj or "rules" not in obj:
        raise SchemaError("confusion spec needs seed and rules")
    try:
        rules = tuple(
            ConfusionRule(
                from_class=FoodClass(rule["from"]),
                to_class=FoodClass(rule["to"]),
                rate=float(rule["rate"]),
            )
            for rule in obj["rules"]
        )
        return ConfusionSpec(rules=rules, seed=int(obj["seed"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad confusion rule: {exc}") from exc


def stub_classify(
    manifest: DatasetManifest,
    spec: ConfusionSpec,
    classes: Sequence[FoodClass] | None = None,
) -> list[PredictionRecord]:
    """Predict every image correctly except per-rule injected errors.

    One uniform draw per image that has applicable rules decides, by a
    cumulative walk over the rules in declared order, whether the image
    flips to a rule's target.  Fixed seed means identical output lists.
    """
    declared = list(classes) if classes is not None else manifest.classes()
    spec.validate(declared)
    rules_by_class: dict[FoodClass, list[ConfusionRule]] = {}
    for rule in spec.rules:
        rules_by_class.setdefault(rule.from_class, []).append(rule)
    rng = random.Random(spec.seed)
    records: list[PredictionRecord] = []
    for entry in manifest.entries:
        predicted = entry.true_class
        confidence = STUB_CORRECT_CONFIDENCE
        applicable = rules_by_class.get(entry.true_class)
        if applicable:
            draw = rng.random()
            cumulative = 0.0
            for rule in applicable:
                cumulative += rule.rate
                if draw < cumulative:
                    predicted = rule.to_class
                    confidence = STUB_ERROR_CONFIDENCE
                    break
        records.append(
            PredictionRecord(
                image_id=entry.image_id,
                true_class=entry.true_class,
                predicted_class=predicted,
                confidence=confidence,
            )
        )
    return records


# transport: (endpoint, image bytes, headers, timeout_s) -> (status, response body)
ImageTransport = Callable[[str, bytes, dict, float], tuple[int, bytes]]


@dataclass(frozen=True)
class RemoteEndpointConfig:
    endpoint: str
    endpoint_id: str
    class_list_version: str
    timeout_ms: int = 30_000

    def __post_init__(self):
        if not self.endpoint or not self.endpoint_id:
            raise ValidationError("endpoint and endpoint_id must be non-empty")
        if self.timeout_ms <= 0:
            raise ValidationError("timeout_ms must be positive")


def remote_classify(
    image_id: str,
    true_class: FoodClass,
    image_bytes: bytes,
    config: RemoteEndpointConfig,
    classes: Sequence[FoodClass],
    transport: ImageTransport,
) -> PredictionRecord:
    """Classify one image via a hosted endpoint.

    The request is the binary image body plus a class-list version
    header.  The response carries either raw logits (softmax and ranking
    applied locally) or a ready top-k list, which is validated as-is.
    The endpoint id travels in run metadata, not on the record, so record
    files stay schema-identical across backends.
    """
    headers = {
        "content-type": "application/octet-stream",
        "x-class-list-version": config.class_list_version,
    }
    status, body = transport(
        config.endpoint, image_bytes, headers, config.timeout_ms / 1000.0
    )
    if status != 200:
        raise TransportError(f"inference endpoint returned {status}")
    try:
        obj = json.loads(body)
    except json.JSONDecodeError as exc:
        raise BadResponse(f"non-JSON endpoint response: {exc}") from exc
    if not isinstance(obj, dict):
        raise BadResponse("endpoint response must be a JSON object")
    if "logits" in obj:
        logits = obj["logits"]
        if not isinstance(logits, list) or len(logits) != len(classes):
            raise BadResponse(
                f"logits must be a list of length {len(classes)}"
            )
        try:
            probs = softmax([float(v) for v in logits])
        except (TypeError, ValueError, ValidationError) as exc:
            raise BadResponse(f"unusable logits: {exc}") from exc
        order = top_k(probs, len(probs))
        ranked = tuple((classes[i], probs[i]) for i in order)
        return PredictionRecord(
            image_id=image_id,
            true_class=true_class,
            predicted_class=ranked[0][0],
            confidence=ranked[0][1],
            top_k=ranked,
        )
    if "top_k" in obj:
        try:
            ranked = tuple((FoodClass(c), float(p)) for c, p in obj["top_k"])
            return PredictionRecord(
                image_id=image_id,
                true_class=true_class,
                predicted_class=ranked[0][0],
                confidence=ranked[0][1],
                top_k=ranked,
            )
        except (TypeError, ValueError, IndexError, ValidationError) as exc:
            raise BadResponse(f"unusable top_k: {exc}") from exc
    raise BadResponse("endpoint response carries neither logits nor top_k")
