"""Evaluation metrics: classification, detection-side losses, text overlap."""

from .classification import (
    ConfusionMatrix,
    PerClassScore,
    average_precision,
    best_worst_classes,
    build_confusion,
    map_over_classes,
    per_class_prf,
    top_k_accuracy,
)
from .detection import BBox, ciou_loss, iou, yolo_composite_loss
from .text import (
    RougeL,
    bleu,
    brevity_penalty,
    corpus_bleu,
    lcs_length,
    load_reference_corpus,
    modified_ngram_precision,
    rouge_l,
    tokenize,
)

__all__ = [
    "BBox",
    "ConfusionMatrix",
    "PerClassScore",
    "RougeL",
    "average_precision",
    "best_worst_classes",
    "bleu",
    "brevity_penalty",
    "build_confusion",
    "ciou_loss",
    "corpus_bleu",
    "iou",
    "lcs_length",
    "load_reference_corpus",
    "map_over_classes",
    "modified_ngram_precision",
    "per_class_prf",
    "rouge_l",
    "tokenize",
    "top_k_accuracy",
    "yolo_composite_loss",
]
