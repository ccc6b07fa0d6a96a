"""Command-line surface: run, eval, stub-classify, report, cache.

Thin dispatch over the library; each subcommand supports --json, which
emits exactly one JSON document on stdout and keeps diagnostics on
stderr.  Exit codes: 0 success, 1 config/validation, 2 backend or
transport, 3 data/schema.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .core import FoodClass
from .errors import ConfigError, PlatelineError
from .gateway import ResponseCache
from .metrics.text import load_reference_corpus
from .pipeline import (
    RunConfig,
    build_embedder,
    build_provider,
    collect_error_set,
    load_class_list,
    load_records,
    load_run_config,
    run_pipeline,
    snapshot_config,
)
from .report import (
    classification_report,
    generation_report,
    ingest_ratings,
    latency_stats,
    render_markdown,
    sep_report,
    write_report_files,
)
from .sep import EmptyErrorSet, sep_aggregate
from .vision import load_confusion_spec, load_manifest, load_predictions, save_predictions


def _emit(payload: dict, json_mode: bool, human: str) -> None:
    if json_mode:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(human, end="" if human.endswith("\n") else "\n")


def _parse_k_values(raw: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in raw.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"--k must be comma-separated integers, got {raw!r}") from exc
    if not values:
        raise ConfigError("--k must name at least one k")
    return values


def _load_class_arg(path: str | None) -> list[FoodClass] | None:
    return load_class_list(path) if path else None


def _classes_from_records(records) -> list[FoodClass]:
    """Sorted union of true and predicted classes, for when no list is given."""
    seen = {r.true_class for r in records} | {r.predicted_class for r in records}
    return sorted(seen, key=lambda c: c.id)


def _summary_provider_id(run_dir: Path) -> str:
    summary_path = run_dir / "summary.json"
    if not summary_path.is_file():
        return ""
    try:
        return str(json.loads(summary_path.read_text(encoding="utf-8")).get("provider_id", ""))
    except json.JSONDecodeError:
        return ""


def _collect_sep(run_dir: Path, cfg: RunConfig, embedder_ref: str | None, threshold: float | None):
    """Second pass for error analysis: regenerate true-class knowledge
    (cache-first, so a completed run answers offline) and aggregate."""
    records = load_records(run_dir)
    provider = build_provider(cfg)
    cache = ResponseCache(cfg.cache_dir)
    from .gateway import generate  # local import keeps the CLI import graph light

    def true_outcome(c: FoodClass):
        return generate(c, provider, cache, template=cfg.template).outcome

    pairs, exclusions = collect_error_set(records, true_outcome)
    embedder = build_embedder(embedder_ref or cfg.embedder_ref, run_dir)
    result = sep_aggregate(
        pairs,
        embedder,
        threshold if threshold is not None else cfg.sep_threshold,
    )
    return result, exclusions


def _render_all(
    run_dir: Path,
    ratings_path: str | None,
    references_path: str | None,
    field: str,
) -> dict:
    """Shared by `run` and `report`: render every table the run supports."""
    cfg = snapshot_config(run_dir)
    records = load_records(run_dir)
    classes = load_class_list(cfg.class_list_path)
    predictions = [r.prediction for r in records]
    classification = classification_report(predictions, classes)
    references = load_reference_corpus(references_path) if references_path else None
    generation = generation_report(
        records,
        references,
        field=field,
        provider_id=_summary_provider_id(run_dir),
    )
    try:
        sep_result, _ = _collect_sep(run_dir, cfg, None, None)
        sep = sep_report(sep_result)
    except EmptyErrorSet:
        sep = None
    qualitative = ingest_ratings(ratings_path) if ratings_path else None
    latency = latency_stats(records)
    written = write_report_files(
        run_dir, cfg.run_id, classification, generation, sep, qualitative, latency
    )
    from .figures import render_figures  # deferred: matplotlib is heavy

    figures = render_figures(run_dir, classification, sep)
    return {
        "run_id": cfg.run_id,
        "files": {name: str(path) for name, path in written.items()},
        "figures": [str(path) for path in figures],
    }


# --- subcommand bodies ----------------------------------------------------

def _cmd_run(args) -> int:
    cfg = load_run_config(args.config)
    result = run_pipeline(cfg)
    rendered = _render_all(result.run_dir, args.ratings, args.references, args.field)
    payload = {
        "run_dir": str(result.run_dir),
        "summary": result.summary,
        "report": rendered,
    }
    counts = result.summary["counts"]
    human = (
        f"run {cfg.run_id}: {counts['records']} records "
        f"({counts['misclassified']} misclassified, "
        f"{counts['parse_valid']} parsed) -> {result.run_dir}\n"
        f"report: {rendered['files']['markdown']}"
    )
    _emit(payload, args.json, human)
    return 0


def _cmd_eval_cls(args) -> int:
    classes = _load_class_arg(args.classes)
    records = load_predictions(args.predictions, classes)
    if classes is None:
        classes = _classes_from_records(records)
    table = classification_report(records, classes, k_values=_parse_k_values(args.k))
    human = render_markdown(
        Path(args.predictions).stem, table, None, None, None, None
    )
    _emit(table, args.json, human)
    return 0


def _cmd_eval_gen(args) -> int:
    records = load_records(args.records)
    references = load_reference_corpus(args.references)
    table = generation_report(
        records,
        references,
        field=args.field,
        provider_id=_summary_provider_id(Path(args.records)),
    )
    human = render_markdown(Path(args.records).name, None, table, None, None, None)
    _emit(table, args.json, human)
    return 0


def _cmd_eval_sep(args) -> int:
    run_dir = Path(args.records)
    cfg = snapshot_config(run_dir)
    result, exclusions = _collect_sep(run_dir, cfg, args.embedder, args.threshold)
    table = sep_report(result)
    table["exclusions"] = exclusions
    human = render_markdown(run_dir.name, None, None, table, None, None)
    if exclusions:
        print(f"excluded {len(exclusions)} misclassified images", file=sys.stderr)
    _emit(table, args.json, human)
    return 0


def _cmd_stub_classify(args) -> int:
    classes = _load_class_arg(args.classes)
    manifest = load_manifest(args.manifest, classes)
    spec = load_confusion_spec(args.confusion)
    if args.seed is not None:
        spec = type(spec)(rules=spec.rules, seed=args.seed)
    from .vision import stub_classify

    records = stub_classify(manifest, spec, classes)
    save_predictions(records, args.out)
    wrong = sum(1 for r in records if not r.correct)
    payload = {
        "out": str(args.out),
        "records": len(records),
        "injected_errors": wrong,
        "seed": spec.seed,
    }
    _emit(
        payload,
        args.json,
        f"wrote {len(records)} predictions ({wrong} injected errors) to {args.out}",
    )
    return 0


def _cmd_report(args) -> int:
    rendered = _render_all(Path(args.run), args.ratings, args.references, args.field)
    files = "\n".join(sorted(rendered["files"].values()) + sorted(rendered["figures"]))
    _emit(rendered, args.json, f"rendered:\n{files}")
    return 0


def _cmd_cache_ls(args) -> int:
    cache = ResponseCache(args.cache_dir)
    if args.provider:
        entries = cache.entries(args.provider)
        payload = {
            "provider": args.provider,
            "entries": [
                {
                    "key": e.key,
                    "class_id": e.meta.get("class_id", ""),
                    "model": e.meta.get("model", ""),
                    "template_version": e.meta.get("template_version", ""),
                }
                for e in entries
            ],
        }
        human_lines = [
            f"{e.key}  {e.meta.get('class_id', '?')}" for e in entries
        ] or [f"no entries for provider {args.provider!r}"]
        _emit(payload, args.json, "\n".join(human_lines))
    else:
        providers = cache.providers()
        _emit(
            {"providers": providers},
            args.json,
            "\n".join(providers) if providers else "cache is empty",
        )
    return 0


def _cmd_cache_clear(args) -> int:
    cache = ResponseCache(args.cache_dir)
    removed = cache.clear(args.provider)
    _emit(
        {"provider": args.provider, "removed": removed},
        args.json,
        f"removed {removed} entries for provider {args.provider!r}",
    )
    return 0


# --- parser wiring --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plateline",
        description=(
            "Evaluation toolkit for decoupled food-recognition pipelines: "
            "run classify-then-generate pipelines, score them, and render reports."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_json(p: argparse.ArgumentParser) -> None:
        p.add_argument(
            "--json", action="store_true", help="emit JSON only on stdout"
        )

    run_p = sub.add_parser("run", help="execute or resume a pipeline run")
    run_p.add_argument("--config", required=True, help="run config JSON file")
    run_p.add_argument("--ratings", help="optional human-rating CSV for the report")
    run_p.add_argument("--references", help="optional reference corpus for text metrics")
    run_p.add_argument(
        "--field", choices=("steps", "full"), default="steps",
        help="which generated text to score against references",
    )
    add_json(run_p)
    run_p.set_defaults(func=_cmd_run)

    eval_p = sub.add_parser("eval", help="score existing outputs")
    eval_sub = eval_p.add_subparsers(dest="eval_command", required=True)

    cls_p = eval_sub.add_parser("cls", help="classification metrics from a prediction file")
    cls_p.add_argument("--predictions", required=True, help="prediction JSONL file")
    cls_p.add_argument("--classes", help="class list file (one id per line)")
    cls_p.add_argument("--k", default="1", help="comma-separated k values, e.g. 1,5")
    add_json(cls_p)
    cls_p.set_defaults(func=_cmd_eval_cls)

    gen_p = eval_sub.add_parser("gen", help="generation metrics from a run directory")
    gen_p.add_argument("--records", required=True, help="run directory")
    gen_p.add_argument("--references", required=True, help="reference corpus JSONL")
    gen_p.add_argument("--field", choices=("steps", "full"), default="steps")
    add_json(gen_p)
    gen_p.set_defaults(func=_cmd_eval_gen)

    sep_p = eval_sub.add_parser("sep", help="semantic error propagation from a run directory")
    sep_p.add_argument("--records", required=True, help="run directory")
    sep_p.add_argument(
        "--embedder",
        help="stub | file:PATH | remote:NAME (default: the run's configured embedder)",
    )
    sep_p.add_argument("--threshold", type=float, help="case threshold (default 0.5)")
    add_json(sep_p)
    sep_p.set_defaults(func=_cmd_eval_sep)

    stub_p = sub.add_parser("stub-classify", help="emit deterministic stub predictions")
    stub_p.add_argument("--manifest", required=True, help="dataset manifest JSONL")
    stub_p.add_argument("--confusion", required=True, help="confusion spec JSON")
    stub_p.add_argument("--seed", type=int, help="override the spec's seed")
    stub_p.add_argument("--classes", help="class list file (one id per line)")
    stub_p.add_argument("--out", required=True, help="output prediction JSONL path")
    add_json(stub_p)
    stub_p.set_defaults(func=_cmd_stub_classify)

    report_p = sub.add_parser("report", help="re-render all reports for a run")
    report_p.add_argument("--run", required=True, help="run directory")
    report_p.add_argument("--ratings", help="human-rating CSV")
    report_p.add_argument("--references", help="reference corpus JSONL")
    report_p.add_argument("--field", choices=("steps", "full"), default="steps")
    add_json(report_p)
    report_p.set_defaults(func=_cmd_report)

    cache_p = sub.add_parser("cache", help="inspect or clear the response cache")
    cache_sub = cache_p.add_subparsers(dest="cache_command", required=True)
    ls_p = cache_sub.add_parser("ls", help="list providers or one provider's entries")
    ls_p.add_argument("--provider", help="provider id to list")
    ls_p.add_argument("--cache-dir", help="cache root override")
    add_json(ls_p)
    ls_p.set_defaults(func=_cmd_cache_ls)
    clear_p = cache_sub.add_parser("clear", help="remove one provider's entries")
    clear_p.add_argument("--provider", required=True, help="provider id to clear")
    clear_p.add_argument("--cache-dir", help="cache root override")
    add_json(clear_p)
    clear_p.set_defaults(func=_cmd_cache_clear)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PlatelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
