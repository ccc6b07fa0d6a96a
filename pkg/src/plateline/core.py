"""Domain types shared by every stage of the pipeline.

All types are immutable value objects validated at construction, so they
are safe to share between concurrent tasks.  Canonical serialization is
line-delimited JSON with keys named exactly like the dataclass fields.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping
from urllib.parse import urlparse

from .errors import ValidationError

CLASS_ID_PATTERN = re.compile(r"[a-z0-9]+(?:_[a-z0-9]+)*\Z")

KNOWLEDGE_KEYS = ("food_name", "recipe", "calories", "nutrition", "youtube_tutorial_link")


@dataclass(frozen=True, order=True)
class FoodClass:
    """A canonical class label: lowercase words joined by underscores."""

    id: str

    def __post_init__(self):
        if not CLASS_ID_PATTERN.match(self.id):
            raise ValidationError(
                f"invalid class id {self.id!r}: expected lowercase words joined by underscores"
            )

    @property
    def display_name(self) -> str:
        """Human-facing name: every underscore replaced by a single space."""
        return self.id.replace("_", " ")

    @classmethod
    def from_display_name(cls, name: str) -> "FoodClass":
        return cls(name.replace(" ", "_"))


def _check_unit_interval(value: float, what: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{what} must be in [0, 1], got {value}")
    return value


@dataclass(frozen=True)
class PredictionRecord:
    """One image's ground truth and classifier output."""

    image_id: str
    true_class: FoodClass
    predicted_class: FoodClass
    confidence: float
    top_k: tuple[tuple[FoodClass, float], ...] | None = None

    def __post_init__(self):
        if not self.image_id:
            raise ValidationError("image_id must be non-empty")
        _check_unit_interval(self.confidence, "confidence")
        if self.top_k is not None:
            if not self.top_k:
                raise ValidationError("top_k, when present, must be non-empty")
            if self.top_k[0][0] != self.predicted_class:
                raise ValidationError("top_k[0] must be the predicted class")
            previous = None
            for cls_, prob in self.top_k:
                _check_unit_interval(prob, f"top_k probability for {cls_.id}")
                if previous is not None and prob > previous + 1e-12:
                    raise ValidationError("top_k probabilities must be non-increasing")
                previous = prob

    @property
    def correct(self) -> bool:
        return self.predicted_class == self.true_class

    def to_json_obj(self) -> dict[str, Any]:
        obj: dict[str, Any] = {
            "image_id": self.image_id,
            "true_class": self.true_class.id,
            "predicted_class": self.predicted_class.id,
            "confidence": self.confidence,
        }
        if self.top_k is not None:
            obj["top_k"] = [[cls_.id, prob] for cls_, prob in self.top_k]
        return obj

    @classmethod
    def from_json_obj(cls, obj: Mapping[str, Any]) -> "PredictionRecord":
        top_k = None
        if obj.get("top_k") is not None:
            top_k = tuple((FoodClass(c), float(p)) for c, p in obj["top_k"])
        return cls(
            image_id=obj["image_id"],
            true_class=FoodClass(obj["true_class"]),
            predicted_class=FoodClass(obj["predicted_class"]),
            confidence=float(obj["confidence"]),
            top_k=top_k,
        )


def _url_shaped(value: str) -> bool:
    """True when the string has a scheme and a host.  The URL is never fetched."""
    try:
        parsed = urlparse(value)
    except ValueError:
        return False
    return bool(parsed.scheme) and bool(parsed.netloc)


@dataclass(frozen=True)
class GeneratedKnowledge:
    """The five-key structured payload the generative stage must produce."""

    food_name: str
    recipe_ingredients: tuple[str, ...]
    recipe_steps: tuple[str, ...]
    calories: str
    nutrition: str
    youtube_tutorial_link: str

    def __post_init__(self):
        if not self.food_name:
            raise ValidationError("food_name must be non-empty")
        if not self.recipe_ingredients or not self.recipe_steps:
            raise ValidationError("recipe ingredients and steps must be non-empty")
        if not _url_shaped(self.youtube_tutorial_link):
            raise ValidationError(
                f"youtube_tutorial_link is not URL-shaped: {self.youtube_tutorial_link!r}"
            )

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "food_name": self.food_name,
            "recipe_ingredients": list(self.recipe_ingredients),
            "recipe_steps": list(self.recipe_steps),
            "calories": self.calories,
            "nutrition": self.nutrition,
            "youtube_tutorial_link": self.youtube_tutorial_link,
        }

    @classmethod
    def from_json_obj(cls, obj: Mapping[str, Any]) -> "GeneratedKnowledge":
        return cls(
            food_name=obj["food_name"],
            recipe_ingredients=tuple(obj["recipe_ingredients"]),
            recipe_steps=tuple(obj["recipe_steps"]),
            calories=obj["calories"],
            nutrition=obj["nutrition"],
            youtube_tutorial_link=obj["youtube_tutorial_link"],
        )

    def to_document(self) -> dict[str, Any]:
        """The wire shape requested from the LLM (nested 'recipe' object)."""
        return {
            "food_name": self.food_name,
            "recipe": {
                "ingredients": list(self.recipe_ingredients),
                "steps": list(self.recipe_steps),
            },
            "calories": self.calories,
            "nutrition": self.nutrition,
            "youtube_tutorial_link": self.youtube_tutorial_link,
        }


@dataclass(frozen=True)
class SchemaViolation:
    """Every missing or malformed key found while validating a candidate document."""

    missing_keys: tuple[str, ...] = ()
    wrong_shape_keys: tuple[str, ...] = ()

    def describe(self) -> str:
        parts = []
        if self.missing_keys:
            parts.append("missing: " + ", ".join(self.missing_keys))
        if self.wrong_shape_keys:
            parts.append("wrong shape: " + ", ".join(self.wrong_shape_keys))
        return "; ".join(parts) or "no violations"


def _string_list(value: Any) -> bool:
    return (
        isinstance(value, list)
        and len(value) > 0
        and all(isinstance(item, str) for item in value)
    )


def validate_knowledge(candidate: Any) -> GeneratedKnowledge | SchemaViolation:
    """Check a parsed document against the five-key knowledge schema.

    Total over arbitrary inputs: returns typed knowledge iff every key
    exists with the right shape, otherwise a SchemaViolation listing every
    missing and malformed key.  Never raises.
    """
    if not isinstance(candidate, Mapping):
        return SchemaViolation(missing_keys=KNOWLEDGE_KEYS)

    missing: list[str] = []
    wrong: list[str] = []

    def check_str(key: str, require_url: bool = False, require_nonempty: bool = False) -> str:
        value = candidate.get(key)
        if key not in candidate:
            missing.append(key)
            return ""
        if not isinstance(value, str):
            wrong.append(key)
            return ""
        if require_nonempty and not value:
            wrong.append(key)
        if require_url and not _url_shaped(value):
            wrong.append(key)
        return value

    food_name = check_str("food_name", require_nonempty=True)
    calories = check_str("calories")
    nutrition = check_str("nutrition")
    link = check_str("youtube_tutorial_link", require_url=True)

    ingredients: list[str] = []
    steps: list[str] = []
    if "recipe" not in candidate:
        missing.append("recipe")
    else:
        recipe = candidate["recipe"]
        if not isinstance(recipe, Mapping):
            wrong.append("recipe")
        else:
            if "ingredients" not in recipe:
                missing.append("recipe.ingredients")
            elif not _string_list(recipe["ingredients"]):
                wrong.append("recipe.ingredients")
            else:
                ingredients = list(recipe["ingredients"])
            if "steps" not in recipe:
                missing.append("recipe.steps")
            elif not _string_list(recipe["steps"]):
                wrong.append("recipe.steps")
            else:
                steps = list(recipe["steps"])

    if missing or wrong:
        return SchemaViolation(missing_keys=tuple(missing), wrong_shape_keys=tuple(wrong))
    return GeneratedKnowledge(
        food_name=food_name,
        recipe_ingredients=tuple(ingredients),
        recipe_steps=tuple(steps),
        calories=calories,
        nutrition=nutrition,
        youtube_tutorial_link=link,
    )


class ParseErrorKind(str, Enum):
    NO_JSON = "no_json"
    MALFORMED = "malformed"
    SCHEMA_VIOLATION = "schema_violation"


@dataclass(frozen=True)
class ParseError:
    """Why a raw LLM response did not yield a knowledge object."""

    kind: ParseErrorKind
    message: str
    raw_excerpt: str

    def __post_init__(self):
        if self.kind is ParseErrorKind.NO_JSON and not self.message.startswith(
            "No JSON object found"
        ):
            raise ValidationError("NoJson messages must begin 'No JSON object found'")

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "message": self.message,
            "raw_excerpt": self.raw_excerpt,
        }

    @classmethod
    def from_json_obj(cls, obj: Mapping[str, Any]) -> "ParseError":
        return cls(
            kind=ParseErrorKind(obj["kind"]),
            message=obj["message"],
            raw_excerpt=obj["raw_excerpt"],
        )


@dataclass(frozen=True)
class StageLatency:
    """Wall-clock milliseconds attributed to each stage of one record."""

    classify: float = 0.0
    generate: float = 0.0

    def to_json_obj(self) -> dict[str, float]:
        return {"classify": self.classify, "generate": self.generate}


@dataclass(frozen=True)
class PipelineRecord:
    """Full provenance for one image: prediction, prompt, raw response, outcome."""

    image_id: str
    prediction: PredictionRecord
    prompt_hash: str
    raw_response: str
    parse_outcome: GeneratedKnowledge | ParseError
    latency_ms: StageLatency = StageLatency()

    def __post_init__(self):
        if self.image_id != self.prediction.image_id:
            raise ValidationError("record image_id must match its prediction")

    @property
    def knowledge(self) -> GeneratedKnowledge | None:
        return self.parse_outcome if isinstance(self.parse_outcome, GeneratedKnowledge) else None

    @property
    def error(self) -> ParseError | None:
        return self.parse_outcome if isinstance(self.parse_outcome, ParseError) else None

    def to_json_obj(self) -> dict[str, Any]:
        obj: dict[str, Any] = {
            "image_id": self.image_id,
            "prediction": self.prediction.to_json_obj(),
            "prompt_hash": self.prompt_hash,
            "raw_response": self.raw_response,
        }
        # exactly one of knowledge/error is populated
        if isinstance(self.parse_outcome, GeneratedKnowledge):
            obj["knowledge"] = self.parse_outcome.to_json_obj()
        else:
            obj["error"] = self.parse_outcome.to_json_obj()
        obj["latency_ms"] = self.latency_ms.to_json_obj()
        return obj

    @classmethod
    def from_json_obj(cls, obj: Mapping[str, Any]) -> "PipelineRecord":
        has_knowledge = "knowledge" in obj
        has_error = "error" in obj
        if has_knowledge == has_error:
            raise ValidationError("record must carry exactly one of knowledge/error")
        outcome: GeneratedKnowledge | ParseError
        if has_knowledge:
            outcome = GeneratedKnowledge.from_json_obj(obj["knowledge"])
        else:
            outcome = ParseError.from_json_obj(obj["error"])
        latency = obj.get("latency_ms", {})
        return cls(
            image_id=obj["image_id"],
            prediction=PredictionRecord.from_json_obj(obj["prediction"]),
            prompt_hash=obj["prompt_hash"],
            raw_response=obj["raw_response"],
            parse_outcome=outcome,
            latency_ms=StageLatency(
                classify=float(latency.get("classify", 0.0)),
                generate=float(latency.get("generate", 0.0)),
            ),
        )

    def to_json_line(self) -> str:
        return dumps_line(self.to_json_obj())

    @classmethod
    def from_json_line(cls, line: str) -> "PipelineRecord":
        return cls.from_json_obj(json.loads(line))


@dataclass(frozen=True)
class EvalReport:
    """Computed tables plus run metadata; re-emitting from the same records is byte-identical."""

    run_id: str
    classification_table: dict[str, Any] = field(default_factory=dict)
    per_class_table: list[dict[str, Any]] = field(default_factory=list)
    generation_table: dict[str, Any] = field(default_factory=dict)
    sep_table: dict[str, Any] = field(default_factory=dict)
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_json_obj(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "classification_table": self.classification_table,
            "per_class_table": self.per_class_table,
            "generation_table": self.generation_table,
            "sep_table": self.sep_table,
            "metadata": self.metadata,
        }


def dumps_line(obj: Any) -> str:
    """One compact, deterministic JSON line (no trailing newline)."""
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))
