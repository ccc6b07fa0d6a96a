"""End-to-end orchestration: manifest in, persisted run directory out.

A run classifies every manifest entry, generates knowledge for each
predicted class (and for the true class of every misclassified image, so
error analysis has both texts), and persists one record per image.
Records land incrementally in image_id order; reruns with a warm cache
are byte-identical; interrupted runs resume from the persisted prefix.
"""

from __future__ import annotations

import json
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .core import (
    FoodClass,
    GeneratedKnowledge,
    ParseError,
    PipelineRecord,
    PredictionRecord,
    StageLatency,
    dumps_line,
)
from .errors import BackendError, ConfigError, DataError, TransportError
from .gateway import (
    DEFAULT_TEMPLATE,
    CannedProvider,
    EchoProvider,
    GenerationResult,
    GenerativeProvider,
    HttpChatProvider,
    PromptTemplate,
    ProviderConfig,
    ResponseCache,
    generate,
)
from .sep import (
    DEFAULT_CASE_THRESHOLD,
    EmbeddingProvider,
    ErrorPair,
    FileEmbeddingProvider,
    StubEmbedder,
)
from .vision import (
    DatasetManifest,
    load_confusion_spec,
    load_manifest,
    load_predictions,
    stub_classify,
)

RUN_ID_PATTERN = re.compile(r"[A-Za-z0-9][A-Za-z0-9._-]*\Z")

KNOWN_TEMPLATES = {DEFAULT_TEMPLATE.version: DEFAULT_TEMPLATE}

RECORDS_FILE = "records.jsonl"
ERRORS_FILE = "errors.jsonl"
SUMMARY_FILE = "summary.json"
SNAPSHOT_FILE = "config.snapshot"


@dataclass(frozen=True)
class RunConfig:
    """Validated run settings with every path resolved against the config file."""

    run_id: str
    class_list_path: Path
    manifest_path: Path
    backend_kind: str
    confusion_path: Path | None
    predictions_path: Path | None
    provider_kind: str
    canned_dir: Path | None
    http_provider: ProviderConfig | None
    template_version: str
    embedder_ref: str
    output_dir: Path
    max_parallel_generations: int
    cache_dir: Path | None
    sep_threshold: float
    source_path: Path

    @property
    def run_dir(self) -> Path:
        return self.output_dir / self.run_id

    @property
    def template(self) -> PromptTemplate:
        return KNOWN_TEMPLATES[self.template_version]

    def canonical_snapshot(self) -> str:
        """Config re-serialized with every path absolute, byte-stable.

        This is what lands in the run directory, so a snapshot reloads
        correctly no matter where the original config file lived.
        """
        backend: dict = {"kind": self.backend_kind}
        if self.confusion_path is not None:
            backend["confusion"] = str(self.confusion_path.resolve())
        if self.predictions_path is not None:
            backend["path"] = str(self.predictions_path.resolve())
        provider: dict = {"kind": self.provider_kind}
        if self.canned_dir is not None:
            provider["fixtures_dir"] = str(self.canned_dir.resolve())
        if self.http_provider is not None:
            provider.update(
                provider_id=self.http_provider.provider_id,
                endpoint=self.http_provider.endpoint,
                model=self.http_provider.model,
                api_key_env=self.http_provider.api_key_env,
                max_retries=self.http_provider.max_retries,
                backoff_base_ms=self.http_provider.backoff_base_ms,
                max_in_flight=self.http_provider.max_in_flight,
                timeout_ms=self.http_provider.timeout_ms,
            )
        obj = {
            "run_id": self.run_id,
            "class_list": str(self.class_list_path.resolve()),
            "manifest": str(self.manifest_path.resolve()),
            "backend": backend,
            "provider": provider,
            "template_version": self.template_version,
            "embedder": self.embedder_ref,
            "output_dir": str(self.output_dir.resolve()),
            "max_parallel_generations": self.max_parallel_generations,
            "sep_threshold": self.sep_threshold,
        }
        if self.cache_dir is not None:
            obj["cache_dir"] = str(self.cache_dir.resolve())
        return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and validate a JSON run config; every problem is fatal here.

    Relative paths are resolved against the config file's directory so a
    config travels with its fixtures.
    """
    source = Path(path)
    if not source.is_file():
        raise ConfigError(f"config file {source} does not exist")
    try:
        obj = json.loads(source.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    base = source.parent

    def resolve(value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else base / p

    def require(key: str) -> object:
        if key not in obj:
            raise ConfigError(f"config is missing {key!r}")
        return obj[key]

    run_id = str(require("run_id"))
    if not RUN_ID_PATTERN.match(run_id):
        raise ConfigError(
            f"run_id {run_id!r} is not filesystem-safe "
            "(letters, digits, dot, dash, underscore)"
        )
    class_list_path = resolve(str(require("class_list")))
    manifest_path = resolve(str(require("manifest")))
    for label, p in (("class_list", class_list_path), ("manifest", manifest_path)):
        if not p.is_file():
            raise ConfigError(f"{label} file {p} does not exist")

    backend = require("backend")
    if not isinstance(backend, dict) or "kind" not in backend:
        raise ConfigError("backend must be an object with a 'kind'")
    backend_kind = backend["kind"]
    confusion_path = None
    predictions_path = None
    if backend_kind == "stub":
        confusion_path = resolve(str(backend.get("confusion", "")))
        if not backend.get("confusion") or not confusion_path.is_file():
            raise ConfigError("stub backend needs an existing 'confusion' spec file")
    elif backend_kind == "predictions":
        predictions_path = resolve(str(backend.get("path", "")))
        if not backend.get("path") or not predictions_path.is_file():
            raise ConfigError("predictions backend needs an existing 'path' file")
    else:
        raise ConfigError(f"unknown backend kind {backend_kind!r}")

    provider = require("provider")
    if not isinstance(provider, dict) or "kind" not in provider:
        raise ConfigError("provider must be an object with a 'kind'")
    provider_kind = provider["kind"]
    canned_dir = None
    http_provider = None
    if provider_kind == "canned":
        canned_dir = resolve(str(provider.get("fixtures_dir", "")))
        if not provider.get("fixtures_dir") or not canned_dir.is_dir():
            raise ConfigError("canned provider needs an existing 'fixtures_dir'")
    elif provider_kind == "http":
        try:
            http_provider = ProviderConfig(
                provider_id=provider["provider_id"],
                endpoint=provider["endpoint"],
                model=provider.get("model", ""),
                api_key_env=provider["api_key_env"],
                max_retries=int(provider.get("max_retries", 2)),
                backoff_base_ms=int(provider.get("backoff_base_ms", 100)),
                max_in_flight=int(provider.get("max_in_flight", 2)),
                timeout_ms=int(provider.get("timeout_ms", 60_000)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad http provider settings: {exc}") from exc
    elif provider_kind != "echo":
        raise ConfigError(f"unknown provider kind {provider_kind!r}")

    template_version = str(obj.get("template_version", DEFAULT_TEMPLATE.version))
    if template_version not in KNOWN_TEMPLATES:
        raise ConfigError(
            f"unknown template version {template_version!r}; "
            f"known: {sorted(KNOWN_TEMPLATES)}"
        )

    embedder_ref = str(obj.get("embedder", "stub"))
    if embedder_ref.startswith("file:"):
        embedder_ref = "file:" + str(resolve(embedder_ref[len("file:") :]).resolve())
    output_dir = resolve(str(require("output_dir")))
    max_parallel = int(obj.get("max_parallel_generations", 2))
    if max_parallel < 1:
        raise ConfigError("max_parallel_generations must be >= 1")
    cache_dir = resolve(str(obj["cache_dir"])) if obj.get("cache_dir") else None
    threshold = float(obj.get("sep_threshold", DEFAULT_CASE_THRESHOLD))

    return RunConfig(
        run_id=run_id,
        class_list_path=class_list_path,
        manifest_path=manifest_path,
        backend_kind=backend_kind,
        confusion_path=confusion_path,
        predictions_path=predictions_path,
        provider_kind=provider_kind,
        canned_dir=canned_dir,
        http_provider=http_provider,
        template_version=template_version,
        embedder_ref=embedder_ref,
        output_dir=output_dir,
        max_parallel_generations=max_parallel,
        cache_dir=cache_dir,
        sep_threshold=threshold,
        source_path=source,
    )


def load_class_list(path: str | Path) -> list[FoodClass]:
    """One class id per line; blanks skipped; order preserved."""
    classes: list[FoodClass] = []
    seen: set[str] = set()
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line:
            continue
        if line in seen:
            raise ConfigError(f"class {line!r} listed twice")
        seen.add(line)
        classes.append(FoodClass(line))
    if not classes:
        raise ConfigError(f"class list {path} is empty")
    return classes


def build_provider(cfg: RunConfig) -> GenerativeProvider:
    if cfg.provider_kind == "canned":
        assert cfg.canned_dir is not None
        return CannedProvider(cfg.canned_dir)
    if cfg.provider_kind == "echo":
        return EchoProvider()
    assert cfg.http_provider is not None
    return HttpChatProvider(cfg.http_provider)


def build_embedder(ref: str, base_dir: Path | None = None) -> EmbeddingProvider:
    """Resolve an embedder reference: stub, file:PATH, or remote:NAME."""
    if ref == "stub":
        return StubEmbedder()
    if ref.startswith("file:"):
        path = Path(ref[len("file:") :])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.is_file():
            raise ConfigError(f"embedding file {path} does not exist")
        return FileEmbeddingProvider(path)
    if ref.startswith("remote:"):
        raise ConfigError(
            "remote embedders must be constructed through the library API "
            "with an explicit RemoteEmbeddingConfig; the CLI has no safe "
            "place to keep endpoint settings"
        )
    raise ConfigError(f"unknown embedder reference {ref!r}")


def _classify(cfg: RunConfig, manifest: DatasetManifest, classes) -> list[PredictionRecord]:
    if cfg.backend_kind == "stub":
        assert cfg.confusion_path is not None
        spec = load_confusion_spec(cfg.confusion_path)
        return stub_classify(manifest, spec, classes)
    assert cfg.predictions_path is not None
    records = load_predictions(cfg.predictions_path, classes)
    by_id = {r.image_id: r for r in records}
    missing = [e.image_id for e in manifest.entries if e.image_id not in by_id]
    if missing:
        raise ConfigError(
            f"prediction file lacks {len(missing)} manifest entries "
            f"(first: {missing[0]!r})"
        )
    out = []
    for entry in manifest.entries:
        record = by_id[entry.image_id]
        if record.true_class != entry.true_class:
            raise ConfigError(
                f"prediction file disagrees with manifest on the true class "
                f"of {entry.image_id!r}"
            )
        out.append(record)
    return out


def _read_persisted_prefix(records_path: Path) -> list[str]:
    """Validate an existing records file for resume; returns persisted lines.

    A torn final line (interrupted write) is dropped.  Corruption earlier
    in the file cannot be repaired safely and is fatal.
    """
    content = records_path.read_text(encoding="utf-8")
    if not content:
        return []
    lines = content.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    valid: list[str] = []
    for i, line in enumerate(lines):
        try:
            PipelineRecord.from_json_line(line)
        except Exception as exc:
            if i == len(lines) - 1:
                break  # torn tail from an interrupted write; rewritten on resume
            raise DataError(
                f"records file {records_path} is corrupt at line {i + 1}: {exc}"
            ) from exc
        valid.append(line)
    return valid


@dataclass(frozen=True)
class RunResult:
    run_dir: Path
    records: tuple[PipelineRecord, ...]
    generations: dict[str, GenerationResult]
    summary: dict


def run_pipeline(
    cfg: RunConfig,
    provider: GenerativeProvider | None = None,
    cache: ResponseCache | None = None,
) -> RunResult:
    """Execute or resume one run; see the module docstring for guarantees."""
    started = time.monotonic()
    classes = load_class_list(cfg.class_list_path)
    manifest = load_manifest(cfg.manifest_path, classes)
    provider = provider if provider is not None else build_provider(cfg)
    cache = cache if cache is not None else ResponseCache(cfg.cache_dir)

    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot_path = run_dir / SNAPSHOT_FILE
    snapshot = cfg.canonical_snapshot()
    if snapshot_path.exists():
        if snapshot_path.read_text(encoding="utf-8") != snapshot:
            raise ConfigError(
                f"run directory {run_dir} was created from a different config; "
                "refusing to mix runs"
            )
    else:
        snapshot_path.write_text(snapshot, encoding="utf-8")

    classify_started = time.monotonic()
    predictions = _classify(cfg, manifest, classes)
    classify_wall_s = time.monotonic() - classify_started
    # deterministic backends have no per-image latency worth recording
    classify_latency_ms = 0.0

    predictions = sorted(predictions, key=lambda r: r.image_id)

    # resume: skip the already-persisted prefix
    records_path = run_dir / RECORDS_FILE
    persisted_lines: list[str] = []
    if records_path.exists():
        persisted_lines = _read_persisted_prefix(records_path)
        expected_ids = [r.image_id for r in predictions]
        for i, line in enumerate(persisted_lines):
            persisted_id = json.loads(line)["image_id"]
            if persisted_id != expected_ids[i]:
                raise DataError(
                    f"persisted record {i + 1} is for {persisted_id!r} but this "
                    f"config produces {expected_ids[i]!r} there; not a resumable prefix"
                )
        records_path.write_text(
            "".join(line + "\n" for line in persisted_lines), encoding="utf-8"
        )

    # every predicted class generates; misclassified images also need the truth
    needed: dict[str, FoodClass] = {}
    for record in predictions:
        needed.setdefault(record.predicted_class.id, record.predicted_class)
        if not record.correct:
            needed.setdefault(record.true_class.id, record.true_class)

    generations: dict[str, GenerationResult] = {}

    def fetch(c: FoodClass) -> tuple[str, GenerationResult]:
        return c.id, generate(c, provider, cache, template=cfg.template)

    try:
        with ThreadPoolExecutor(max_workers=cfg.max_parallel_generations) as pool:
            for class_id, result in pool.map(fetch, needed.values()):
                generations[class_id] = result
    except TransportError as exc:
        raise BackendError(f"generation aborted the run: {exc}") from exc

    records: list[PipelineRecord] = []
    skip = len(persisted_lines)
    with open(records_path, "a", encoding="utf-8") as fh:
        for i, prediction in enumerate(predictions):
            result = generations[prediction.predicted_class.id]
            record = PipelineRecord(
                image_id=prediction.image_id,
                prediction=prediction,
                prompt_hash=result.prompt_hash,
                raw_response=result.raw,
                parse_outcome=result.outcome,
                latency_ms=StageLatency(
                    classify=classify_latency_ms, generate=result.latency_ms
                ),
            )
            records.append(record)
            if i < skip:
                continue  # already persisted by the interrupted run
            fh.write(record.to_json_line() + "\n")
            fh.flush()

    def true_outcome(c: FoodClass) -> GeneratedKnowledge | ParseError:
        return generations[c.id].outcome

    pairs, exclusions = collect_error_set(records, true_outcome)
    with open(run_dir / ERRORS_FILE, "w", encoding="utf-8") as fh:
        for exclusion in exclusions:
            fh.write(dumps_line(exclusion) + "\n")

    parse_errors = {"no_json": 0, "malformed": 0, "schema_violation": 0}
    for record in records:
        if record.error is not None:
            parse_errors[record.error.kind.value] += 1
    hits = sum(1 for g in generations.values() if g.from_cache)
    summary = {
        "run_id": cfg.run_id,
        "backend": cfg.backend_kind,
        "provider_id": provider.config.provider_id,
        "template_version": cfg.template_version,
        "class_count": len(classes),
        "counts": {
            "manifest_entries": len(manifest.entries),
            "records": len(records),
            "correct": sum(1 for r in records if r.prediction.correct),
            "misclassified": sum(1 for r in records if not r.prediction.correct),
            "parse_valid": sum(1 for r in records if r.knowledge is not None),
            "parse_errors": parse_errors,
            "error_pairs": len(pairs),
            "error_pair_exclusions": len(exclusions),
        },
        "generation": {
            "unique_classes": len(generations),
            "cache_hits": hits,
            "cache_misses": len(generations) - hits,
            "cache_hit_rate": hits / len(generations) if generations else 0.0,
        },
        "timings": {
            "wall_clock_s": time.monotonic() - started,
            "classify_wall_s": classify_wall_s,
            "generate_ms_total": sum(g.latency_ms for g in generations.values()),
        },
        "resumed_records": skip,
    }
    (run_dir / SUMMARY_FILE).write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return RunResult(
        run_dir=run_dir,
        records=tuple(records),
        generations=generations,
        summary=summary,
    )


def collect_error_set(
    records: Sequence[PipelineRecord],
    true_outcome_for: Callable[[FoodClass], GeneratedKnowledge | ParseError],
) -> tuple[list[ErrorPair], list[dict]]:
    """Misclassified records with valid knowledge for both classes.

    Returns the usable pairs plus one exclusion entry per misclassified
    record that could not contribute (either side failed to parse).
    Exclusions are reported, never fatal.
    """
    pairs: list[ErrorPair] = []
    exclusions: list[dict] = []
    for record in records:
        if record.prediction.correct:
            continue
        reasons: list[str] = []
        knowledge_pred = record.knowledge
        if knowledge_pred is None:
            reasons.append("predicted_class_parse_failed")
        true_outcome = true_outcome_for(record.prediction.true_class)
        knowledge_true = (
            true_outcome if isinstance(true_outcome, GeneratedKnowledge) else None
        )
        if knowledge_true is None:
            reasons.append("true_class_parse_failed")
        if reasons:
            exclusions.append({"image_id": record.image_id, "reasons": reasons})
            continue
        pairs.append(
            ErrorPair(
                image_id=record.image_id,
                predicted_class=record.prediction.predicted_class,
                true_class=record.prediction.true_class,
                knowledge_pred=knowledge_pred,
                knowledge_true=knowledge_true,
            )
        )
    return pairs, exclusions


def load_records(run_dir: str | Path) -> list[PipelineRecord]:
    """Read a completed run's records file."""
    path = Path(run_dir) / RECORDS_FILE
    if not path.is_file():
        raise ConfigError(f"{path} does not exist; is {run_dir} a run directory?")
    records: list[PipelineRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(PipelineRecord.from_json_line(line))
            except Exception as exc:
                raise DataError(f"bad record at line {lineno}: {exc}") from exc
    return records


def snapshot_config(run_dir: str | Path) -> RunConfig:
    """Reload the config snapshot persisted inside a run directory."""
    path = Path(run_dir) / SNAPSHOT_FILE
    if not path.is_file():
        raise ConfigError(f"{path} does not exist; is {run_dir} a run directory?")
    return load_run_config(path)
