"""Evaluation toolkit for decoupled food-recognition pipelines.

A classifier names the dish; a generative model expands the name into
structured knowledge (recipe, calories, nutrition, tutorial link).  This
package runs that pipeline against pluggable backends, measures each
stage (classification metrics, text-overlap metrics, parse reliability),
and quantifies how far a misclassification drifts the generated
knowledge from what the true dish deserves.
"""

from .core import (
    FoodClass,
    GeneratedKnowledge,
    ParseError,
    ParseErrorKind,
    PipelineRecord,
    PredictionRecord,
    SchemaViolation,
    validate_knowledge,
)
from .errors import (
    BackendError,
    ConfigError,
    DataError,
    DuplicateId,
    PlatelineError,
    SchemaError,
    TransportError,
    ValidationError,
)
from .gateway import (
    DEFAULT_TEMPLATE,
    PromptTemplate,
    ProviderConfig,
    ResponseCache,
    build_prompt,
    extract_json_block,
    generate,
    parse_knowledge,
)
from .sep import (
    EmbeddingVector,
    ErrorPair,
    SepResult,
    StubEmbedder,
    classify_error_case,
    cosine_distance,
    sep_aggregate,
    serialize_for_embedding,
)

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "ConfigError",
    "DataError",
    "DEFAULT_TEMPLATE",
    "DuplicateId",
    "EmbeddingVector",
    "ErrorPair",
    "FoodClass",
    "GeneratedKnowledge",
    "ParseError",
    "ParseErrorKind",
    "PipelineRecord",
    "PlatelineError",
    "PredictionRecord",
    "PromptTemplate",
    "ProviderConfig",
    "ResponseCache",
    "SchemaError",
    "SchemaViolation",
    "SepResult",
    "StubEmbedder",
    "TransportError",
    "ValidationError",
    "build_prompt",
    "classify_error_case",
    "cosine_distance",
    "extract_json_block",
    "generate",
    "parse_knowledge",
    "sep_aggregate",
    "serialize_for_embedding",
    "validate_knowledge",
    "__version__",
]
