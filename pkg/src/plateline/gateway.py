"""Prompt construction, generative-provider clients, caching, and parsing.

The pipeline's generative side: render the class prompt, obtain a raw
response (remote service, canned fixture file, or offline echo), persist
it verbatim, then reduce it to typed knowledge or a typed parse error.
Parsing is total: arbitrary bytes in, one of four outcomes out, never an
exception.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path
from string import Template
from typing import Callable, Protocol

from .core import (
    FoodClass,
    GeneratedKnowledge,
    ParseError,
    ParseErrorKind,
    SchemaViolation,
    validate_knowledge,
)
from .errors import TransportError, ValidationError

REQUIRED_KEY_MENTIONS = (
    "'food_name'",
    "'recipe'",
    "'calories'",
    "'nutrition'",
    "'youtube_tutorial_link'",
)

JSON_ONLY_INSTRUCTION = "MUST be a valid JSON object"


class AuthMissing(ValidationError):
    """The configured API-key environment variable is unset."""


class ProviderUnavailable(TransportError):
    """The generative provider failed after all retries."""


class Timeout(TransportError):
    """A single request exceeded its deadline."""


@dataclass(frozen=True)
class PromptTemplate:
    """Versioned prompt body with one slot for the food display name."""

    version: str
    body: str

    def __post_init__(self):
        if not self.version:
            raise ValidationError("template version must be non-empty")
        if "${food}" not in self.body:
            raise ValidationError("template body must contain the ${food} slot")
        for mention in REQUIRED_KEY_MENTIONS:
            if mention not in self.body:
                raise ValidationError(f"template body must mention {mention}")
        if JSON_ONLY_INSTRUCTION not in self.body:
            raise ValidationError("template body must carry the JSON-only instruction")


DEFAULT_TEMPLATE = PromptTemplate(
    version="cuisine-assistant-v1",
    body=(
        "You are an expert cuisine assistant. For the food "
        "named '${food}', "
        "provide the following information. "
        "Your response MUST be a valid JSON object with no "
        "other text... outside of it. "
        "The JSON structure must have the following keys:\n"
        "- 'food_name': string\n"
        "- 'recipe': { 'ingredients': [], 'steps': [] }\n"
        "- 'calories': string (e.g., '300-400 kcal').\n"
        "- 'nutrition': string (a summary...).\n"
        "- 'youtube_tutorial_link': string (A URL...)"
    ),
)


def build_prompt(c: FoodClass, template: PromptTemplate = DEFAULT_TEMPLATE) -> str:
    """Template body with the class display name substituted."""
    return Template(template.body).substitute(food=c.display_name)


_GREEDY_OBJECT = re.compile(r"\{.*\}", re.DOTALL)


def extract_json_block(raw: str, greedy: bool = False) -> str | None:
    """First complete top-level JSON object in the text, or None.

    The scanner tracks brace depth while skipping string literals and
    escape sequences, so braces inside values never truncate or extend
    the block.  greedy=True restores the naive first-'{'-to-last-'}'
    match for comparison against older behavior.
    """
    if greedy:
        match = _GREEDY_OBJECT.search(raw)
        return match.group(0) if match else None
    start = raw.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(raw)):
            ch = raw[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return raw[start : i + 1]
        start = raw.find("{", start + 1)
    return None


EXCERPT_LEN = 200


def parse_knowledge(raw: str, greedy: bool = False) -> GeneratedKnowledge | ParseError:
    """Reduce a raw response to knowledge or a typed failure.  Never raises."""
    excerpt = raw[:EXCERPT_LEN]
    block = extract_json_block(raw, greedy=greedy)
    if block is None:
        return ParseError(
            kind=ParseErrorKind.NO_JSON,
            message="No JSON object found in the response",
            raw_excerpt=excerpt,
        )
    try:
        candidate = json.loads(block)
    except (json.JSONDecodeError, RecursionError) as exc:
        return ParseError(
            kind=ParseErrorKind.MALFORMED,
            message=f"Failed to parse JSON: {exc}",
            raw_excerpt=excerpt,
        )
    outcome = validate_knowledge(candidate)
    if isinstance(outcome, SchemaViolation):
        return ParseError(
            kind=ParseErrorKind.SCHEMA_VIOLATION,
            message=f"Response JSON violates the knowledge schema ({outcome.describe()})",
            raw_excerpt=excerpt,
        )
    return outcome


@dataclass(frozen=True)
class ProviderConfig:
    """Connection and retry settings for one generative provider."""

    provider_id: str
    endpoint: str = ""
    model: str = ""
    api_key_env: str = ""
    max_retries: int = 2
    backoff_base_ms: int = 100
    max_in_flight: int = 2
    timeout_ms: int = 60_000

    def __post_init__(self):
        if not self.provider_id:
            raise ValidationError("provider_id must be non-empty")
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValidationError("max_in_flight must be >= 1")
        if self.timeout_ms <= 0 or self.backoff_base_ms < 0:
            raise ValidationError("timeouts and backoff must be positive")


class GenerativeProvider(Protocol):
    config: ProviderConfig

    def complete(self, prompt: str) -> str:
        """One raw completion for the prompt.  May raise transport errors."""
        ...


# transport: (endpoint, payload, headers, timeout_s) -> (status, response body)
ChatTransport = Callable[[str, dict, dict, float], tuple[int, bytes]]


class TransientStatus(TransportError):
    """A retryable HTTP status (5xx) from the provider."""


class HttpChatProvider:
    """Generic JSON-over-HTTP completion client.

    Endpoint and model are free-form so one client covers differently
    shaped hosted services.  The transport is injectable; the default is
    built lazily on top of requests so importing this module never
    requires network access.
    """

    def __init__(self, config: ProviderConfig, transport: ChatTransport | None = None):
        if not config.endpoint or not config.api_key_env:
            raise ValidationError("remote provider needs an endpoint and api_key_env")
        self.config = config
        self._transport = transport or _requests_transport

    def complete(self, prompt: str) -> str:
        key = os.environ.get(self.config.api_key_env)
        if not key:
            raise AuthMissing(
                f"environment variable {self.config.api_key_env} is not set"
            )
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        }
        headers = {"authorization": f"Bearer {key}", "content-type": "application/json"}
        status, body = self._transport(
            self.config.endpoint, payload, headers, self.config.timeout_ms / 1000.0
        )
        if status >= 500:
            raise TransientStatus(f"provider returned {status}")
        if status != 200:
            raise ProviderUnavailable(f"provider returned {status}")
        return _extract_completion_text(body)


def _requests_transport(
    endpoint: str, payload: dict, headers: dict, timeout_s: float
) -> tuple[int, bytes]:
    import requests

    try:
        response = requests.post(endpoint, json=payload, headers=headers, timeout=timeout_s)
    except requests.Timeout as exc:
        raise Timeout(f"request to {endpoint} timed out") from exc
    except requests.RequestException as exc:
        raise ProviderUnavailable(f"request to {endpoint} failed: {exc}") from exc
    return response.status_code, response.content


def _extract_completion_text(body: bytes) -> str:
    """Pull the completion string out of the common response shapes."""
    try:
        obj = json.loads(body)
    except json.JSONDecodeError as exc:
        raise ProviderUnavailable(f"non-JSON provider response: {exc}") from exc
    try:
        if "choices" in obj:
            return obj["choices"][0]["message"]["content"]
        if "candidates" in obj:
            parts = obj["candidates"][0]["content"]["parts"]
            return "".join(part["text"] for part in parts)
        if "text" in obj:
            return obj["text"]
    except (KeyError, IndexError, TypeError) as exc:
        raise ProviderUnavailable(f"unrecognized completion shape: {exc}") from exc
    raise ProviderUnavailable("no completion text in provider response")


class CannedProvider:
    """Serves responses from fixture files named <class_id>.txt.

    Routing reads the quoted food name out of the rendered prompt and
    maps it back to a class id, so the provider honors the same
    prompt-in, text-out interface as a live service.
    """

    def __init__(self, fixtures_dir: str | Path, provider_id: str = "canned"):
        self.config = ProviderConfig(provider_id=provider_id)
        self.fixtures_dir = Path(fixtures_dir)
        if not self.fixtures_dir.is_dir():
            raise ValidationError(f"fixture directory {self.fixtures_dir} does not exist")

    def complete(self, prompt: str) -> str:
        match = re.search(r"named '([^']*)'", prompt)
        if not match:
            raise ProviderUnavailable("prompt carries no quoted food name to route on")
        class_id = FoodClass.from_display_name(match.group(1)).id
        path = self.fixtures_dir / f"{class_id}.txt"
        if not path.is_file():
            raise ProviderUnavailable(f"no canned response for class {class_id!r}")
        return path.read_text(encoding="utf-8")


class EchoProvider:
    """Synthesizes a schema-valid response from the prompt alone; for tests."""

    def __init__(self, provider_id: str = "echo"):
        self.config = ProviderConfig(provider_id=provider_id)

    def complete(self, prompt: str) -> str:
        match = re.search(r"named '([^']*)'", prompt)
        name = match.group(1) if match else "unknown dish"
        slug = name.replace(" ", "-") or "unknown"
        doc = {
            "food_name": name,
            "recipe": {
                "ingredients": [f"{name} base ingredients"],
                "steps": [f"Prepare the {name}.", f"Serve the {name}."],
            },
            "calories": "300-400 kcal",
            "nutrition": f"A balanced serving of {name}.",
            "youtube_tutorial_link": f"https://example.com/watch/{slug}",
        }
        return json.dumps(doc, ensure_ascii=False)


CACHE_ENV_VAR = "PLATELINE_CACHE_DIR"


def default_cache_root() -> Path:
    override = os.environ.get(CACHE_ENV_VAR)
    if override:
        return Path(override)
    return Path.home() / ".cache" / "plateline"


def cache_key(template_version: str, provider_id: str, model: str, class_id: str) -> str:
    """Stable hex key over the four identity fields.

    The fields are joined with an unprintable separator so no pair of
    inputs can collide by concatenation.
    """
    material = "\x1f".join((template_version, provider_id, model, class_id))
    return hashlib.sha256(material.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CacheEntry:
    key: str
    raw: str
    meta: dict


class ResponseCache:
    """Verbatim raw responses on disk, one directory per provider.

    Each entry is <key>.raw (exact response bytes) plus <key>.meta (JSON
    with model, template version, class id, and the measured latency so
    warm reruns reproduce cold-run records byte for byte).
    """

    def __init__(self, root: str | Path | None = None):
        self.root = Path(root) if root is not None else default_cache_root()

    def _dir(self, provider_id: str) -> Path:
        return self.root / provider_id

    def load(self, provider_id: str, key: str) -> CacheEntry | None:
        raw_path = self._dir(provider_id) / f"{key}.raw"
        meta_path = self._dir(provider_id) / f"{key}.meta"
        if not raw_path.is_file() or not meta_path.is_file():
            return None
        raw = raw_path.read_text(encoding="utf-8")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        return CacheEntry(key=key, raw=raw, meta=meta)

    def store(self, provider_id: str, key: str, raw: str, meta: dict) -> None:
        directory = self._dir(provider_id)
        directory.mkdir(parents=True, exist_ok=True)
        # raw bytes land before meta so a torn write is a miss, not a lie
        (directory / f"{key}.raw").write_text(raw, encoding="utf-8")
        (directory / f"{key}.meta").write_text(
            json.dumps(meta, ensure_ascii=False, sort_keys=True), encoding="utf-8"
        )

    def entries(self, provider_id: str) -> list[CacheEntry]:
        directory = self._dir(provider_id)
        if not directory.is_dir():
            return []
        out = []
        for raw_path in sorted(directory.glob("*.raw")):
            entry = self.load(provider_id, raw_path.stem)
            if entry is not None:
                out.append(entry)
        return out

    def providers(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.name for p in self.root.iterdir() if p.is_dir())

    def clear(self, provider_id: str) -> int:
        """Remove every entry for the provider; returns entries removed."""
        directory = self._dir(provider_id)
        if not directory.is_dir():
            return 0
        removed = 0
        for raw_path in directory.glob("*.raw"):
            meta_path = raw_path.with_suffix(".meta")
            raw_path.unlink()
            if meta_path.is_file():
                meta_path.unlink()
            removed += 1
        return removed


@dataclass(frozen=True)
class GenerationResult:
    raw: str
    outcome: GeneratedKnowledge | ParseError
    from_cache: bool
    prompt_hash: str
    latency_ms: float


def generate(
    c: FoodClass,
    provider: GenerativeProvider,
    cache: ResponseCache,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    greedy: bool = False,
    sleep: Callable[[float], None] = time.sleep,
    clock: Callable[[], float] = time.monotonic,
) -> GenerationResult:
    """Cache-first generation with retry on transport failures only.

    Transient failures (timeouts, 5xx) retry with exponential backoff up
    to max_retries; parse failures never retry, they are recorded as
    outcomes.  The raw response is persisted before parsing, with its
    measured latency, so cache hits replay identical records.
    """
    cfg = provider.config
    key = cache_key(template.version, cfg.provider_id, cfg.model, c.id)
    cached = cache.load(cfg.provider_id, key)
    if cached is not None:
        return GenerationResult(
            raw=cached.raw,
            outcome=parse_knowledge(cached.raw, greedy=greedy),
            from_cache=True,
            prompt_hash=key,
            latency_ms=float(cached.meta.get("latency_ms", 0.0)),
        )
    prompt = build_prompt(c, template)
    attempt = 0
    while True:
        started = clock()
        try:
            raw = provider.complete(prompt)
            latency_ms = (clock() - started) * 1000.0
            break
        except (Timeout, TransientStatus) as exc:
            if attempt >= cfg.max_retries:
                raise ProviderUnavailable(
                    f"provider {cfg.provider_id!r} failed after "
                    f"{cfg.max_retries + 1} attempts: {exc}"
                ) from exc
            sleep(cfg.backoff_base_ms * (2**attempt) / 1000.0)
            attempt += 1
    cache.store(
        cfg.provider_id,
        key,
        raw,
        meta={
            "model": cfg.model,
            "template_version": template.version,
            "class_id": c.id,
            "latency_ms": latency_ms,
            "stored_at_unix": time.time(),
        },
    )
    return GenerationResult(
        raw=raw,
        outcome=parse_knowledge(raw, greedy=greedy),
        from_cache=False,
        prompt_hash=key,
        latency_ms=latency_ms,
    )
