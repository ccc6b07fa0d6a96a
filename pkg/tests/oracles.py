"""Independent reference implementations used to cross-check the library.

Everything here is written the slow, obvious way straight from the
defining formulas, sharing no code with the package.  Tests treat any
disagreement as a library bug, so keep these naive.
"""

from __future__ import annotations

import math
from itertools import combinations
from typing import Sequence


def ngram_counts(tokens: Sequence[str], n: int) -> dict[tuple[str, ...], int]:
    counts: dict[tuple[str, ...], int] = {}
    for i in range(len(tokens) - n + 1):
        gram = tuple(tokens[i : i + n])
        counts[gram] = counts.get(gram, 0) + 1
    return counts


def clipped_precision(
    candidate: Sequence[str], references: Sequence[Sequence[str]], n: int
) -> tuple[int, int]:
    cand = ngram_counts(candidate, n)
    total = sum(cand.values())
    clipped = 0
    for gram, count in cand.items():
        best_ref = 0
        for ref in references:
            ref_count = ngram_counts(ref, n).get(gram, 0)
            if ref_count > best_ref:
                best_ref = ref_count
        clipped += min(count, best_ref)
    return clipped, total


def closest_ref_len(candidate_len: int, references: Sequence[Sequence[str]]) -> int:
    best = None
    for ref in references:
        length = len(ref)
        if best is None:
            best = length
            continue
        if abs(length - candidate_len) < abs(best - candidate_len):
            best = length
        elif abs(length - candidate_len) == abs(best - candidate_len) and length < best:
            best = length
    assert best is not None
    return best


def bleu_oracle(
    candidate: Sequence[str],
    references: Sequence[Sequence[str]],
    max_n: int = 4,
    smoothing: bool = False,
) -> float:
    """Sentence BLEU straight from the formula: BP * exp(sum w_n log p_n)."""
    if not candidate:
        return 0.0
    log_precision_sum = 0.0
    for n in range(1, max_n + 1):
        clipped, total = clipped_precision(candidate, references, n)
        if smoothing:
            clipped += 1
            total += 1
        if clipped == 0 or total == 0:
            return 0.0
        log_precision_sum += (1.0 / max_n) * math.log(clipped / total)
    r = closest_ref_len(len(candidate), references)
    c = len(candidate)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_precision_sum)


def corpus_bleu_oracle(
    pairs: Sequence[tuple[Sequence[str], Sequence[Sequence[str]]]],
    max_n: int = 4,
    smoothing: bool = False,
) -> float:
    """Corpus BLEU: pool clipped/total counts and lengths, then combine."""
    log_precision_sum = 0.0
    pooled = []
    for n in range(1, max_n + 1):
        clipped_all = 0
        total_all = 0
        for candidate, references in pairs:
            clipped, total = clipped_precision(candidate, references, n)
            clipped_all += clipped
            total_all += total
        pooled.append((clipped_all, total_all))
    for clipped_all, total_all in pooled:
        if smoothing:
            clipped_all += 1
            total_all += 1
        if clipped_all == 0 or total_all == 0:
            return 0.0
        log_precision_sum += (1.0 / max_n) * math.log(clipped_all / total_all)
    c = sum(len(candidate) for candidate, _ in pairs)
    r = 0
    for candidate, references in pairs:
        if candidate:
            r += closest_ref_len(len(candidate), references)
        else:
            r += min(len(ref) for ref in references)
    if c == 0:
        return 0.0
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_precision_sum)


def lcs_bruteforce(x: Sequence[str], y: Sequence[str]) -> int:
    """Longest common subsequence by enumerating every subsequence of x.

    Exponential in len(x); callers keep len(x) <= 8.
    """

    def is_subsequence(needle: Sequence[str], haystack: Sequence[str]) -> bool:
        position = 0
        for token in haystack:
            if position < len(needle) and needle[position] == token:
                position += 1
        return position == len(needle)

    best = 0
    for length in range(len(x), 0, -1):
        for indices in combinations(range(len(x)), length):
            subsequence = [x[i] for i in indices]
            if is_subsequence(subsequence, y):
                return length
    return best


def ap_oracle(flags: Sequence[bool], normalize: bool) -> float:
    """Average precision by literal accumulation of precision-at-hits."""
    hits = 0
    acc = 0.0
    for position, flag in enumerate(flags, start=1):
        if flag:
            hits += 1
            acc += hits / position
    if not normalize:
        return acc
    return acc / hits if hits else 0.0


def prf_by_counting(
    records: Sequence[tuple[str, str]], target: str
) -> tuple[float, float, float, int]:
    """(precision, recall, f1, support) for one class by direct counting
    over (true, predicted) label pairs."""
    tp = sum(1 for t, p in records if t == target and p == target)
    fp = sum(1 for t, p in records if t != target and p == target)
    fn = sum(1 for t, p in records if t == target and p != target)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (
        2 * precision * recall / (precision + recall)
        if precision + recall
        else 0.0
    )
    return precision, recall, f1, tp + fn
