"""Rendering of evaluation tables from persisted runs.

Every number in a rendered table comes straight from a metric operation;
this module formats, it never recomputes.  Rendering the same records
twice yields byte-identical Markdown, CSV, and JSON, so nothing here may
touch clocks or filesystem metadata.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

from .core import FoodClass, PipelineRecord, PredictionRecord
from .errors import DataError, SchemaError, ValidationError
from .metrics.classification import (
    ConfusionMatrix,
    average_precision,
    best_worst_classes,
    build_confusion,
    macro_prf,
    per_class_prf,
    top_k_accuracy,
)
from .metrics.text import corpus_bleu, rouge_l, tokenize
from .sep import SepResult, serialize_for_embedding

RATINGS_HEADER = ["provider", "dimension", "score"]

RATING_DIMENSIONS = ("relevance", "factual_accuracy", "coherence")

HISTOGRAM_BIN_WIDTH = 0.05
HISTOGRAM_RANGE = (0.0, 2.0)


class EmptyRecords(ValidationError):
    """A report over zero records has nothing to say."""


class MissingReferences(DataError):
    """Classes present in the records but absent from the reference corpus."""

    def __init__(self, classes: Sequence[str]):
        self.classes = tuple(sorted(classes))
        super().__init__(
            "no reference texts for classes: " + ", ".join(self.classes)
        )


class RangeError(DataError):
    """A rating score outside the 1-10 scale."""


def classification_report(
    records: Sequence[PredictionRecord],
    classes: Sequence[FoodClass],
    k_values: Sequence[int] = (1,),
    best_worst_n: int = 5,
    ap_mode: str = "standard",
) -> dict:
    """All classification tables as one plain dict.

    The per-class average-precision ranking is every record predicted as
    the class, ordered by descending confidence (image_id breaks ties);
    classes never predicted are skipped in the mean and listed.
    """
    if not records:
        raise EmptyRecords("no prediction records to score")
    cm = build_confusion(records, classes)
    scores = [per_class_prf(cm, c) for c in classes]
    macro_p, macro_r, macro_f1 = macro_prf(scores)
    n = min(best_worst_n, len(classes))
    best, worst = best_worst_classes(scores, n)

    rankings: dict[FoodClass, list[tuple[str, bool]]] = {}
    for c in classes:
        predicted_as_c = [r for r in records if r.predicted_class == c]
        predicted_as_c.sort(key=lambda r: (-r.confidence, r.image_id))
        rankings[c] = [(r.image_id, r.true_class == c) for r in predicted_as_c]
    ap_by_class = {
        c.id: average_precision(ranking, mode=ap_mode)
        for c, ranking in rankings.items()
        if ranking
    }
    skipped = sorted(c.id for c, ranking in rankings.items() if not ranking)
    mean_ap = (
        sum(ap_by_class.values()) / len(ap_by_class) if ap_by_class else 0.0
    )

    def score_row(s) -> dict:
        return {
            "class": s.food_class.id,
            "precision": s.precision,
            "recall": s.recall,
            "f1": s.f1,
            "support": s.support,
        }

    return {
        "record_count": len(records),
        "top_k_accuracy": {str(k): top_k_accuracy(records, k) for k in k_values},
        "macro_precision": macro_p,
        "macro_recall": macro_r,
        "macro_f1": macro_f1,
        "mean_average_precision": mean_ap,
        "average_precision_mode": ap_mode,
        "average_precision_by_class": ap_by_class,
        "classes_without_predictions": skipped,
        "per_class": [score_row(s) for s in scores],
        "best_classes": [score_row(s) for s in best],
        "worst_classes": [score_row(s) for s in worst],
        "confusion": {
            "classes": [c.id for c in classes],
            "counts": [list(row) for row in cm.counts],
            "normalized": [list(row) for row in cm.row_normalized()],
        },
    }


def candidate_text(record: PipelineRecord, field: str) -> str:
    """The text scored for one record: recipe steps only, or the full document."""
    knowledge = record.knowledge
    if knowledge is None:
        raise ValidationError(f"record {record.image_id!r} has no parsed knowledge")
    if field == "steps":
        return " ".join(knowledge.recipe_steps)
    if field == "full":
        return serialize_for_embedding(knowledge)
    raise ValidationError(f"unknown field selector {field!r}")


def generation_report(
    records: Sequence[PipelineRecord],
    references: dict[str, list[str]] | None,
    field: str = "steps",
    provider_id: str = "",
) -> dict:
    """Parse reliability always; BLEU-4 and ROUGE-L when references exist.

    Candidates are matched to references by the class the text was
    generated for (the predicted class).  Any parsed record whose class
    has no references is an error, never silently dropped.
    """
    if not records:
        raise EmptyRecords("no pipeline records to score")
    attempts = len(records)
    valid = [r for r in records if r.knowledge is not None]
    result: dict = {
        "provider_id": provider_id,
        "field": field,
        "attempts": attempts,
        "valid_parses": len(valid),
        "parse_reliability": len(valid) / attempts,
    }
    if references is None:
        return result
    uncovered = {
        r.prediction.predicted_class.id
        for r in valid
        if r.prediction.predicted_class.id not in references
    }
    if uncovered:
        raise MissingReferences(uncovered)
    pairs = []
    rouge_f_values = []
    for record in valid:
        candidate = tokenize(candidate_text(record, field))
        refs = [
            tokenize(text)
            for text in references[record.prediction.predicted_class.id]
        ]
        pairs.append((candidate, refs))
        per_ref = [rouge_l(candidate, ref).f_score for ref in refs if ref]
        rouge_f_values.append(max(per_ref) if per_ref else 0.0)
    result["bleu_4"] = corpus_bleu(pairs) if pairs else 0.0
    result["rouge_l_f"] = (
        sum(rouge_f_values) / len(rouge_f_values) if rouge_f_values else 0.0
    )
    result["scored_records"] = len(pairs)
    return result


def sep_report(sep: SepResult) -> dict:
    """Case means, overall mean, per-pair rows, and fixed-width histogram."""
    lo, hi = HISTOGRAM_RANGE
    bin_count = round((hi - lo) / HISTOGRAM_BIN_WIDTH)
    bins = [0] * bin_count
    for pair in sep.per_pair:
        index = int((pair.d_sem - lo) / HISTOGRAM_BIN_WIDTH)
        # the right edge of the last bin is closed
        bins[min(index, bin_count - 1)] += 1
    rows = sorted(sep.per_pair, key=lambda p: p.image_id)
    return {
        "pair_count": len(sep.per_pair),
        "threshold": sep.threshold,
        "mean_overall": sep.mean_overall,
        "mean_by_case": {kind.value: mean for kind, mean in sep.mean_by_case.items()},
        "per_pair": [
            {
                "image_id": p.image_id,
                "predicted_class": p.predicted_class.id,
                "true_class": p.true_class.id,
                "d_sem": p.d_sem,
                "case": p.case.value,
            }
            for p in rows
        ],
        "histogram": {
            "bin_width": HISTOGRAM_BIN_WIDTH,
            "range": list(HISTOGRAM_RANGE),
            "counts": bins,
        },
    }


def ingest_ratings(path: str | Path) -> list[dict]:
    """Mean human rating per (provider, dimension) from a strict CSV.

    An empty file is an empty section; everything else must match the
    declared header, dimensions, and 1-10 score range exactly.
    """
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return []
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if rows[0] != RATINGS_HEADER:
        raise SchemaError(
            f"ratings header must be {','.join(RATINGS_HEADER)!r}, "
            f"got {','.join(rows[0])!r}",
            line=1,
        )
    sums: dict[tuple[str, str], list[float]] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or row == [""]:
            continue
        if len(row) != 3:
            raise SchemaError(f"expected 3 columns, got {len(row)}", line=lineno)
        provider, dimension, raw_score = row
        if dimension not in RATING_DIMENSIONS:
            raise SchemaError(
                f"dimension must be one of {RATING_DIMENSIONS}, got {dimension!r}",
                line=lineno,
            )
        try:
            score = float(raw_score)
        except ValueError as exc:
            raise SchemaError(f"score {raw_score!r} is not a number", line=lineno) from exc
        if not 1.0 <= score <= 10.0:
            raise RangeError(f"line {lineno}: score {score} outside [1, 10]")
        sums.setdefault((provider, dimension), []).append(score)
    return [
        {
            "provider": provider,
            "dimension": dimension,
            "mean_score": sum(values) / len(values),
            "count": len(values),
        }
        for (provider, dimension), values in sorted(sums.items())
    ]


# --- formatting -----------------------------------------------------------

def _fmt_rate(value: float) -> str:
    return f"{value * 100:.2f}%"


def _fmt(value: float) -> str:
    return f"{value:.4f}"


def _md_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |"]
    lines.append("|" + "|".join(" --- " for _ in header) + "|")
    for row in rows:
        lines.append("| " + " | ".join(row) + " |")
    return lines


def render_markdown(
    run_id: str,
    classification: dict | None,
    generation: dict | None,
    sep: dict | None,
    qualitative: list[dict] | None,
    latency: dict | None = None,
) -> str:
    """The human-readable report; carries no clocks, so reruns are identical."""
    lines = [f"# Evaluation report: {run_id}", ""]

    if classification is not None:
        lines += ["## Classification", ""]
        acc_rows = [
            [f"Top-{k}", _fmt_rate(v)]
            for k, v in classification["top_k_accuracy"].items()
        ]
        acc_rows.append(["Macro precision", _fmt(classification["macro_precision"])])
        acc_rows.append(["Macro recall", _fmt(classification["macro_recall"])])
        acc_rows.append(["Macro F1", _fmt(classification["macro_f1"])])
        acc_rows.append(
            [
                f"mAP ({classification['average_precision_mode']})",
                _fmt(classification["mean_average_precision"]),
            ]
        )
        lines += _md_table(["Metric", "Value"], acc_rows)
        lines.append("")
        if classification["classes_without_predictions"]:
            lines.append(
                "Classes never predicted (skipped in mAP): "
                + ", ".join(classification["classes_without_predictions"])
            )
            lines.append("")

        def prf_rows(rows: list[dict]) -> list[list[str]]:
            return [
                [
                    r["class"],
                    _fmt(r["precision"]),
                    _fmt(r["recall"]),
                    _fmt(r["f1"]),
                    str(r["support"]),
                ]
                for r in rows
            ]

        header = ["Class", "Precision", "Recall", "F1", "Support"]
        lines += [f"### Best {len(classification['best_classes'])} classes by F1", ""]
        lines += _md_table(header, prf_rows(classification["best_classes"]))
        lines += ["", f"### Worst {len(classification['worst_classes'])} classes by F1", ""]
        lines += _md_table(header, prf_rows(classification["worst_classes"]))
        lines += ["", "### Per-class scores", ""]
        lines += _md_table(header, prf_rows(classification["per_class"]))
        lines.append("")

    if generation is not None:
        lines += ["## Generation", ""]
        gen_rows = [
            ["Provider", generation["provider_id"] or "(unknown)"],
            ["Scored field", generation["field"]],
            ["Attempts", str(generation["attempts"])],
            ["Valid parses", str(generation["valid_parses"])],
            ["Parse reliability", _fmt_rate(generation["parse_reliability"])],
        ]
        if "bleu_4" in generation:
            gen_rows.append(["Corpus BLEU-4", _fmt(generation["bleu_4"])])
            gen_rows.append(["Mean ROUGE-L F", _fmt(generation["rouge_l_f"])])
        lines += _md_table(["Metric", "Value"], gen_rows)
        lines.append("")

    if qualitative:
        lines += ["## Qualitative ratings (human, 1-10)", ""]
        lines += _md_table(
            ["Provider", "Dimension", "Mean score", "Ratings"],
            [
                [
                    r["provider"],
                    r["dimension"],
                    f"{r['mean_score']:.2f}",
                    str(r["count"]),
                ]
                for r in qualitative
            ],
        )
        lines.append("")

    if sep is not None:
        lines += ["## Semantic error propagation", ""]
        sep_rows = [["Overall mean", _fmt(sep["mean_overall"])]]
        for case in ("mismatch", "similarity"):
            if case in sep["mean_by_case"]:
                sep_rows.append([f"Mean ({case})", _fmt(sep["mean_by_case"][case])])
        sep_rows.append(["Pairs", str(sep["pair_count"])])
        sep_rows.append(["Case threshold", _fmt(sep["threshold"])])
        lines += _md_table(["Metric", "Value"], sep_rows)
        lines += ["", "### Per-pair distances", ""]
        lines += _md_table(
            ["Image", "Predicted", "True", "d_sem", "Case"],
            [
                [
                    p["image_id"],
                    p["predicted_class"],
                    p["true_class"],
                    _fmt(p["d_sem"]),
                    p["case"],
                ]
                for p in sep["per_pair"]
            ],
        )
        lines.append("")

    if latency is not None:
        lines += ["## Backend latency (environment-specific, not comparable)", ""]
        lines += _md_table(
            ["Stage", "Mean ms", "p50 ms", "p95 ms"],
            [
                [
                    stage,
                    _fmt(stats["mean"]),
                    _fmt(stats["p50"]),
                    _fmt(stats["p95"]),
                ]
                for stage, stats in latency.items()
            ],
        )
        lines.append("")

    return "\n".join(lines).rstrip("\n") + "\n"


def latency_stats(records: Sequence[PipelineRecord]) -> dict:
    """Mean/p50/p95 per stage from record latencies (nearest-rank percentiles)."""

    def stats(values: list[float]) -> dict:
        ordered = sorted(values)

        def rank(q: float) -> float:
            index = max(0, min(len(ordered) - 1, round(q * len(ordered)) - 1))
            return ordered[index]

        return {
            "mean": sum(ordered) / len(ordered),
            "p50": rank(0.50),
            "p95": rank(0.95),
        }

    if not records:
        return {}
    return {
        "classify": stats([r.latency_ms.classify for r in records]),
        "generate": stats([r.latency_ms.generate for r in records]),
    }


# --- file emission --------------------------------------------------------

def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[object]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_report_files(
    run_dir: str | Path,
    run_id: str,
    classification: dict | None,
    generation: dict | None,
    sep: dict | None,
    qualitative: list[dict] | None,
    latency: dict | None = None,
) -> dict[str, Path]:
    """Emit report.md, report.json, confusion.csv, and tables/*.csv.

    Returns the paths written, keyed by a short name.
    """
    run_dir = Path(run_dir)
    tables = run_dir / "tables"
    tables.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}

    md_path = run_dir / "report.md"
    md_path.write_text(
        render_markdown(run_id, classification, generation, sep, qualitative, latency),
        encoding="utf-8",
    )
    written["markdown"] = md_path

    payload = {
        "run_id": run_id,
        "classification": classification,
        "generation": generation,
        "sep": sep,
        "qualitative": qualitative,
        "latency_ms": latency,
    }
    json_path = run_dir / "report.json"
    json_path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    written["json"] = json_path

    if classification is not None:
        class_ids = classification["confusion"]["classes"]
        confusion_path = run_dir / "confusion.csv"
        _write_csv(
            confusion_path,
            ["class"] + class_ids,
            [
                [class_ids[i]] + list(row)
                for i, row in enumerate(classification["confusion"]["counts"])
            ],
        )
        written["confusion"] = confusion_path
        _write_csv(
            tables / "confusion_normalized.csv",
            ["class"] + class_ids,
            [
                [class_ids[i]] + [f"{v:.6f}" for v in row]
                for i, row in enumerate(classification["confusion"]["normalized"])
            ],
        )
        _write_csv(
            tables / "per_class.csv",
            ["class", "precision", "recall", "f1", "support"],
            [
                [r["class"], _fmt(r["precision"]), _fmt(r["recall"]), _fmt(r["f1"]), r["support"]]
                for r in classification["per_class"]
            ],
        )
        _write_csv(
            tables / "top_k.csv",
            ["k", "accuracy"],
            [[k, _fmt(v)] for k, v in classification["top_k_accuracy"].items()],
        )
        written["per_class"] = tables / "per_class.csv"

    if generation is not None:
        gen_rows = [
            ["provider_id", generation["provider_id"]],
            ["field", generation["field"]],
            ["attempts", generation["attempts"]],
            ["valid_parses", generation["valid_parses"]],
            ["parse_reliability", _fmt(generation["parse_reliability"])],
        ]
        if "bleu_4" in generation:
            gen_rows.append(["bleu_4", _fmt(generation["bleu_4"])])
            gen_rows.append(["rouge_l_f", _fmt(generation["rouge_l_f"])])
        _write_csv(tables / "generation.csv", ["metric", "value"], gen_rows)
        written["generation"] = tables / "generation.csv"

    if qualitative:
        _write_csv(
            tables / "qualitative.csv",
            ["provider", "dimension", "mean_score", "count"],
            [
                [r["provider"], r["dimension"], f"{r['mean_score']:.2f}", r["count"]]
                for r in qualitative
            ],
        )
        written["qualitative"] = tables / "qualitative.csv"

    if sep is not None:
        _write_csv(
            tables / "sep_pairs.csv",
            ["image_id", "predicted_class", "true_class", "d_sem", "case"],
            [
                [p["image_id"], p["predicted_class"], p["true_class"], _fmt(p["d_sem"]), p["case"]]
                for p in sep["per_pair"]
            ],
        )
        summary_rows = [["overall", _fmt(sep["mean_overall"]), sep["pair_count"]]]
        for case in ("mismatch", "similarity"):
            if case in sep["mean_by_case"]:
                count = sum(1 for p in sep["per_pair"] if p["case"] == case)
                summary_rows.append([case, _fmt(sep["mean_by_case"][case]), count])
        _write_csv(tables / "sep_summary.csv", ["case", "mean_d_sem", "pairs"], summary_rows)
        written["sep"] = tables / "sep_pairs.csv"

    return written
