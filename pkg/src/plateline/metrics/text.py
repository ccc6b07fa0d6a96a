"""Text-overlap metrics for generated recipes: BLEU-4 and ROUGE-L.

One canonical tokenizer feeds both metrics so scores are comparable.
BLEU composes modified n-gram precisions under uniform weights with a
brevity penalty; ROUGE-L is built on dynamic-programming LCS.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from pathlib import Path
from typing import NamedTuple, Sequence

from ..errors import SchemaError, ValidationError

_TOKEN = re.compile(r"\w+|[^\w\s]")


class NoReferences(ValidationError):
    """BLEU against zero references is undefined."""


class EmptyReference(ValidationError):
    """ROUGE-L needs a non-empty reference sequence."""


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and break punctuation into its own tokens."""
    return _TOKEN.findall(text.lower())


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def modified_ngram_precision(
    candidate: Sequence[str], references: Sequence[Sequence[str]], n: int
) -> tuple[int, int]:
    """(clipped matches, total candidate n-grams) for order n.

    Each candidate n-gram count is clipped by the maximum count of that
    n-gram in any single reference.  Returned as rational components so
    callers can smooth or pool across a corpus.
    """
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    cand_counts = _ngrams(candidate, n)
    total = sum(cand_counts.values())
    if total == 0:
        return 0, 0
    max_ref: Counter = Counter()
    for ref in references:
        for gram, count in _ngrams(ref, n).items():
            if count > max_ref[gram]:
                max_ref[gram] = count
    clipped = sum(min(count, max_ref[gram]) for gram, count in cand_counts.items())
    return clipped, total


def brevity_penalty(candidate_len: int, reference_len: int) -> float:
    """1 when the candidate is at least reference length, else exp(1 − r/c).

    A zero-length candidate returns 0.0; the exponential form is undefined
    there and the whole score collapses anyway.
    """
    if candidate_len < 0 or reference_len < 0:
        raise ValidationError("lengths must be >= 0")
    if candidate_len == 0:
        return 0.0
    if candidate_len >= reference_len:
        return 1.0
    return math.exp(1.0 - reference_len / candidate_len)


def closest_reference_length(candidate_len: int, references: Sequence[Sequence[str]]) -> int:
    """Reference length nearest the candidate's; ties go to the shorter."""
    return min(
        (len(ref) for ref in references),
        key=lambda length: (abs(length - candidate_len), length),
    )


def bleu(
    candidate: Sequence[str],
    references: Sequence[Sequence[str]],
    max_n: int = 4,
    smoothing: bool = False,
) -> float:
    """Sentence score: brevity penalty times the geometric mean of p_1..p_max_n.

    Weights are uniform (1/max_n).  Without smoothing any zero p_n zeroes
    the score; with smoothing each p_n gains 1 on both numerator and
    denominator.
    """
    if not references:
        raise NoReferences("need at least one reference")
    if max_n < 1:
        raise ValidationError(f"max_n must be >= 1, got {max_n}")
    if not candidate:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        clipped, total = modified_ngram_precision(candidate, references, n)
        if smoothing:
            clipped, total = clipped + 1, total + 1
        if clipped == 0 or total == 0:
            return 0.0
        log_sum += math.log(clipped / total) / max_n
    bp = brevity_penalty(len(candidate), closest_reference_length(len(candidate), references))
    return bp * math.exp(log_sum)


def corpus_bleu(
    pairs: Sequence[tuple[Sequence[str], Sequence[Sequence[str]]]],
    max_n: int = 4,
    smoothing: bool = False,
) -> float:
    """Corpus score: n-gram counts and lengths pooled over all pairs first."""
    if not pairs:
        raise NoReferences("need at least one candidate/reference pair")
    if any(not refs for _, refs in pairs):
        raise NoReferences("every candidate needs at least one reference")
    clipped_by_n = [0] * max_n
    total_by_n = [0] * max_n
    cand_len = 0
    ref_len = 0
    for candidate, references in pairs:
        for n in range(1, max_n + 1):
            clipped, total = modified_ngram_precision(candidate, references, n)
            clipped_by_n[n - 1] += clipped
            total_by_n[n - 1] += total
        cand_len += len(candidate)
        if candidate:
            ref_len += closest_reference_length(len(candidate), references)
        else:
            ref_len += min(len(ref) for ref in references)
    log_sum = 0.0
    for n in range(max_n):
        clipped, total = clipped_by_n[n], total_by_n[n]
        if smoothing:
            clipped, total = clipped + 1, total + 1
        if clipped == 0 or total == 0:
            return 0.0
        log_sum += math.log(clipped / total) / max_n
    return brevity_penalty(cand_len, ref_len) * math.exp(log_sum)


def lcs_length(x: Sequence[str], y: Sequence[str]) -> int:
    """Longest common subsequence length by the standard DP recurrence."""
    if not x or not y:
        return 0
    # single-row table; y is the inner dimension
    row = [0] * (len(y) + 1)
    for xi in x:
        prev_diag = 0
        for j, yj in enumerate(y, start=1):
            prev_row = row[j]
            if xi == yj:
                row[j] = prev_diag + 1
            elif row[j - 1] > row[j]:
                row[j] = row[j - 1]
            prev_diag = prev_row
    return row[len(y)]


class RougeL(NamedTuple):
    recall: float
    precision: float
    f_score: float


def rouge_l(
    candidate: Sequence[str], reference: Sequence[str], beta: float = 1.0
) -> RougeL:
    """LCS-based recall (over reference length), precision (over candidate
    length), and the beta-weighted F measure; all 0 when nothing overlaps."""
    if not reference:
        raise EmptyReference("reference must be non-empty")
    lcs = lcs_length(candidate, reference)
    recall = lcs / len(reference)
    precision = lcs / len(candidate) if candidate else 0.0
    denom = recall + beta**2 * precision
    if denom == 0.0:
        f_score = 0.0
    else:
        f_score = (1 + beta**2) * recall * precision / denom
    return RougeL(recall=recall, precision=precision, f_score=f_score)


def load_reference_corpus(path: str | Path) -> dict[str, list[str]]:
    """Read a line-delimited JSON reference file into class -> texts.

    Each line is an object with class_id and reference_text; repeated
    class ids accumulate (multi-reference scoring).
    """
    corpus: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc}", line=lineno) from exc
            if not isinstance(obj, dict) or "class_id" not in obj or "reference_text" not in obj:
                raise SchemaError(
                    "each line needs class_id and reference_text", line=lineno
                )
            if not isinstance(obj["reference_text"], str) or not obj["reference_text"]:
                raise SchemaError("reference_text must be a non-empty string", line=lineno)
            corpus.setdefault(obj["class_id"], []).append(obj["reference_text"])
    return corpus
