"""The declarative test-suite configuration that drives every run.

Configs are strict JSON: unknown keys are errors, not warnings, because a
silently ignored typo ("framworks") corrupts a benchmark comparison. Loading
splits cleanly into two stages: `load_config` enforces syntax and schema
(shape, types, enum membership) and applies defaults, while `validate`
checks the semantic invariants (references, uniqueness, value ranges, file
existence) and returns violations as data instead of raising.

Parsed configs are immutable and safe to share across threads.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .adapters import (
    QueryEndpointSpec,
    RestAdapterConfig,
    UploadEndpointSpec,
    is_valid_pointer,
)

DEFAULT_REQUEST_TIMEOUT_MS = 30_000
DEFAULT_MAX_RETRIES = 1
DEFAULT_TEMPERATURE = 0.0
DEFAULT_QUESTIONS_PER_ANSWER = 3
MAX_RETRIES_CEILING = 10

ADAPTER_KINDS = ("generic_rest", "mock")
JUDGE_METRICS = ("answer_relevancy", "context_relevancy", "correctness", "faithfulness")
OUTPUT_FORMATS = ("csv", "json")
HTTP_METHODS = ("GET", "POST", "PUT", "PATCH", "DELETE")

_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


class ConfigError(Exception):
    """Base class for configuration loading failures."""


class FileNotReadableError(ConfigError):
    """The config file could not be opened or decoded as UTF-8."""


class MalformedSyntaxError(ConfigError):
    """The config file is not valid JSON; carries the line and column."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"malformed JSON at line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class SchemaViolationError(ConfigError):
    """The JSON shape does not match the schema; carries the field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<config>'}: {message}")
        self.path = path


@dataclass(frozen=True)
class FrameworkTarget:
    """One RAG service under test."""

    name: str
    adapter_kind: str
    rest: RestAdapterConfig | None = None
    api_key: str | None = None


@dataclass(frozen=True)
class DocumentSpec:
    """A local text file to ingest, addressed by id from queries."""

    id: str
    path: Path


@dataclass(frozen=True)
class QuerySpec:
    """One test query. Without a document_ref it is a warmup query, issued
    before any ingestion to absorb cold-start effects."""

    id: str
    text: str
    expected_answer: str | None = None
    document_ref: str | None = None


@dataclass(frozen=True)
class JudgeConfig:
    """Settings for the LLM-as-a-judge stage (OpenAI-compatible endpoints)."""

    chat_endpoint_url: str
    model_name: str
    embeddings_endpoint_url: str | None = None
    api_key: str | None = None
    temperature: float = DEFAULT_TEMPERATURE
    questions_per_answer: int = DEFAULT_QUESTIONS_PER_ANSWER
    enabled_metrics: tuple[str, ...] = JUDGE_METRICS


@dataclass(frozen=True)
class OutputConfig:
    directory: Path
    formats: tuple[str, ...]
    include_warmup_in_aggregates: bool = False


@dataclass(frozen=True)
class TestSuiteConfig:
    """The full declarative description of one benchmark run."""

    frameworks: tuple[FrameworkTarget, ...]
    documents: tuple[DocumentSpec, ...]
    queries: tuple[QuerySpec, ...]
    output: OutputConfig
    judge: JudgeConfig | None = None
    request_timeout_ms: int = DEFAULT_REQUEST_TIMEOUT_MS
    max_retries: int = DEFAULT_MAX_RETRIES


@dataclass(frozen=True)
class Violation:
    """One semantic invariant breach; violations are data, not exceptions."""

    code: str
    subject: str
    message: str


class _Section:
    """One JSON object being parsed: declares its legal field set upfront
    (unknown keys are rejected before anything else, so typos are named) and
    tracks the field path for error messages."""

    def __init__(self, mapping: Any, path: str, fields: tuple[str, ...]):
        if not isinstance(mapping, dict):
            raise SchemaViolationError(path, f"expected an object, got {_type_name(mapping)}")
        self._mapping = mapping
        self._path = path
        unknown = sorted(set(mapping) - set(fields))
        if unknown:
            raise SchemaViolationError(self.child_path(unknown[0]), "unknown field")

    def child_path(self, key: str) -> str:
        return f"{self._path}.{key}" if self._path else key

    def require(self, key: str, kind: str) -> Any:
        if key not in self._mapping or self._mapping[key] is None:
            raise SchemaViolationError(self.child_path(key), "required field is missing")
        return _check_kind(self._mapping[key], kind, self.child_path(key))

    def optional(self, key: str, kind: str, default: Any = None) -> Any:
        value = self._mapping.get(key)
        if value is None:
            return default
        return _check_kind(value, kind, self.child_path(key))


def _type_name(value: Any) -> str:
    if value is None:
        return "null"
    return {dict: "object", list: "array", str: "string", bool: "boolean"}.get(type(value), type(value).__name__)


def _check_kind(value: Any, kind: str, path: str) -> Any:
    if kind == "string":
        ok = isinstance(value, str)
    elif kind == "integer":
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind == "number":
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif kind == "boolean":
        ok = isinstance(value, bool)
    elif kind == "array":
        ok = isinstance(value, list)
    elif kind == "object":
        ok = isinstance(value, dict)
    else:  # pragma: no cover - internal misuse
        raise ValueError(f"unknown kind {kind!r}")
    if not ok:
        raise SchemaViolationError(path, f"expected {kind}, got {_type_name(value)}")
    return value


def _check_enum(value: str, allowed: tuple[str, ...], path: str) -> str:
    if value not in allowed:
        raise SchemaViolationError(path, f"expected one of {list(allowed)}, got {value!r}")
    return value


def _string_items(values: list, path: str) -> list[str]:
    return [_check_kind(item, "string", f"{path}[{i}]") for i, item in enumerate(values)]


def _enum_set(values: list, allowed: tuple[str, ...], path: str) -> tuple[str, ...]:
    items = _string_items(values, path)
    for i, item in enumerate(items):
        _check_enum(item, allowed, f"{path}[{i}]")
    if len(set(items)) != len(items):
        raise SchemaViolationError(path, "duplicate entries are not allowed")
    return tuple(sorted(items))


def _resolve(base_dir: Path, raw: str) -> Path:
    path = Path(raw)
    return path if path.is_absolute() else base_dir / path


def _parse_upload_endpoint(data: Any, path: str) -> UploadEndpointSpec:
    section = _Section(data, path, ("method", "path", "file_field"))
    return UploadEndpointSpec(
        path=section.require("path", "string"),
        method=_check_enum(section.optional("method", "string", "POST"), HTTP_METHODS, section.child_path("method")),
        file_field=section.optional("file_field", "string", "file"),
    )


def _parse_query_endpoint(data: Any, path: str) -> QueryEndpointSpec:
    section = _Section(data, path, ("method", "path", "body_template", "answer_pointer", "contexts_pointer"))
    return QueryEndpointSpec(
        path=section.require("path", "string"),
        body_template=section.require("body_template", "string"),
        answer_pointer=section.require("answer_pointer", "string"),
        method=_check_enum(section.optional("method", "string", "POST"), HTTP_METHODS, section.child_path("method")),
        contexts_pointer=section.optional("contexts_pointer", "string"),
    )


def _parse_rest(data: Any, path: str) -> RestAdapterConfig:
    section = _Section(data, path, ("base_url", "upload", "query", "headers"))
    headers_raw = section.optional("headers", "object", {})
    headers = {
        key: _check_kind(value, "string", f"{section.child_path('headers')}.{key}")
        for key, value in headers_raw.items()
    }
    return RestAdapterConfig(
        base_url=section.require("base_url", "string"),
        upload=_parse_upload_endpoint(section.require("upload", "object"), section.child_path("upload")),
        query=_parse_query_endpoint(section.require("query", "object"), section.child_path("query")),
        headers=headers,
    )


def _parse_framework(data: Any, path: str) -> FrameworkTarget:
    section = _Section(data, path, ("name", "adapter_kind", "rest", "api_key"))
    rest_raw = section.optional("rest", "object")
    return FrameworkTarget(
        name=section.require("name", "string"),
        adapter_kind=_check_enum(
            section.require("adapter_kind", "string"), ADAPTER_KINDS, section.child_path("adapter_kind")
        ),
        rest=_parse_rest(rest_raw, section.child_path("rest")) if rest_raw is not None else None,
        api_key=section.optional("api_key", "string"),
    )


def _parse_document(data: Any, path: str, base_dir: Path) -> DocumentSpec:
    section = _Section(data, path, ("id", "path"))
    return DocumentSpec(
        id=section.require("id", "string"),
        path=_resolve(base_dir, section.require("path", "string")),
    )


def _parse_query(data: Any, path: str) -> QuerySpec:
    section = _Section(data, path, ("id", "text", "expected_answer", "document_ref"))
    return QuerySpec(
        id=section.require("id", "string"),
        text=section.require("text", "string"),
        expected_answer=section.optional("expected_answer", "string"),
        document_ref=section.optional("document_ref", "string"),
    )


def _parse_judge(data: Any, path: str) -> JudgeConfig:
    section = _Section(
        data,
        path,
        (
            "chat_endpoint_url",
            "embeddings_endpoint_url",
            "model_name",
            "api_key",
            "temperature",
            "questions_per_answer",
            "enabled_metrics",
        ),
    )
    metrics_raw = section.optional("enabled_metrics", "array")
    return JudgeConfig(
        chat_endpoint_url=section.require("chat_endpoint_url", "string"),
        model_name=section.require("model_name", "string"),
        embeddings_endpoint_url=section.optional("embeddings_endpoint_url", "string"),
        api_key=section.optional("api_key", "string"),
        temperature=float(section.optional("temperature", "number", DEFAULT_TEMPERATURE)),
        questions_per_answer=section.optional("questions_per_answer", "integer", DEFAULT_QUESTIONS_PER_ANSWER),
        enabled_metrics=(
            _enum_set(metrics_raw, JUDGE_METRICS, section.child_path("enabled_metrics"))
            if metrics_raw is not None
            else JUDGE_METRICS
        ),
    )


def _parse_output(data: Any, path: str, base_dir: Path) -> OutputConfig:
    section = _Section(data, path, ("directory", "formats", "include_warmup_in_aggregates"))
    return OutputConfig(
        directory=_resolve(base_dir, section.require("directory", "string")),
        formats=_enum_set(section.require("formats", "array"), OUTPUT_FORMATS, section.child_path("formats")),
        include_warmup_in_aggregates=section.optional("include_warmup_in_aggregates", "boolean", False),
    )


def parse_config(data: Any, base_dir: Path | str = ".") -> TestSuiteConfig:
    """Turn already-parsed JSON into a TestSuiteConfig, applying defaults.

    Relative document and output paths resolve against `base_dir` (the config
    file's directory when coming through load_config).
    """
    base_dir = Path(base_dir).resolve()
    root = _Section(data, "")
    frameworks = tuple(
        _parse_framework(item, f"frameworks[{i}]") for i, item in enumerate(root.require("frameworks", "array"))
    )
    documents = tuple(
        _parse_document(item, f"documents[{i}]", base_dir) for i, item in enumerate(root.require("documents", "array"))
    )
    queries = tuple(_parse_query(item, f"queries[{i}]") for i, item in enumerate(root.require("queries", "array")))
    judge_raw = root.optional("judge", "object")
    config = TestSuiteConfig(
        frameworks=frameworks,
        documents=documents,
        queries=queries,
        output=_parse_output(root.require("output", "object"), "output", base_dir),
        judge=_parse_judge(judge_raw, "judge") if judge_raw is not None else None,
        request_timeout_ms=root.optional("request_timeout_ms", "integer", DEFAULT_REQUEST_TIMEOUT_MS),
        max_retries=root.optional("max_retries", "integer", DEFAULT_MAX_RETRIES),
    )
    root.close()
    return config


def load_config(path: str | Path) -> TestSuiteConfig:
    """Load a UTF-8 JSON suite config from disk.

    Raises FileNotReadableError, MalformedSyntaxError (with line/column) or
    SchemaViolationError (with the offending field path). Loading the same
    file twice yields structurally equal configs.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FileNotReadableError(f"cannot read config file {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise FileNotReadableError(f"config file {path} is not valid UTF-8: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedSyntaxError(exc.msg, exc.lineno, exc.colno) from exc
    return parse_config(data, base_dir=path.resolve().parent)


def _validate_rest(rest: RestAdapterConfig, name: str, violations: list[Violation]) -> None:
    if not re.match(r"^https?://", rest.base_url):
        violations.append(
            Violation("invalid_base_url", name, f"framework {name!r}: base_url must use http or https")
        )
    if not rest.upload.path.startswith("/"):
        violations.append(
            Violation("invalid_endpoint_path", name, f"framework {name!r}: upload.path must begin with '/'")
        )
    if not rest.query.path.startswith("/"):
        violations.append(
            Violation("invalid_endpoint_path", name, f"framework {name!r}: query.path must begin with '/'")
        )
    placeholder_count = rest.query.body_template.count("{message}")
    if placeholder_count != 1:
        violations.append(
            Violation(
                "invalid_body_template",
                name,
                f"framework {name!r}: body_template must contain '{{message}}' exactly once "
                f"(found {placeholder_count})",
            )
        )
    if not is_valid_pointer(rest.query.answer_pointer):
        violations.append(
            Violation("invalid_json_pointer", name, f"framework {name!r}: answer_pointer is not a valid JSON Pointer")
        )
    if rest.query.contexts_pointer is not None and not is_valid_pointer(rest.query.contexts_pointer):
        violations.append(
            Violation(
                "invalid_json_pointer", name, f"framework {name!r}: contexts_pointer is not a valid JSON Pointer"
            )
        )


def validate(config: TestSuiteConfig) -> list[Violation]:
    """Check every semantic invariant; an empty list means the config is runnable.

    Never mutates the config. Document paths are checked for readability at
    call time, so validation immediately before a run is the useful gate.
    """
    violations: list[Violation] = []

    if not config.frameworks:
        violations.append(Violation("empty_frameworks", "", "frameworks must not be empty"))
    seen_names: set[str] = set()
    for target in config.frameworks:
        if not _NAME_RE.match(target.name):
            violations.append(
                Violation(
                    "invalid_framework_name",
                    target.name,
                    f"framework name {target.name!r} must match [A-Za-z0-9][A-Za-z0-9._-]* "
                    "(it is used in output paths)",
                )
            )
        if target.name in seen_names:
            violations.append(
                Violation("duplicate_framework_name", target.name, f"duplicate framework name {target.name!r}")
            )
        seen_names.add(target.name)
        if target.adapter_kind == "generic_rest" and target.rest is None:
            violations.append(
                Violation(
                    "missing_rest_config", target.name, f"framework {target.name!r} uses generic_rest but has no rest section"
                )
            )
        if target.adapter_kind == "mock" and target.rest is not None:
            violations.append(
                Violation(
                    "unexpected_rest_config", target.name, f"framework {target.name!r} is a mock but carries a rest section"
                )
            )
        if target.rest is not None:
            _validate_rest(target.rest, target.name, violations)

    seen_docs: set[str] = set()
    for doc in config.documents:
        if doc.id in seen_docs:
            violations.append(Violation("duplicate_document_id", doc.id, f"duplicate document id {doc.id!r}"))
        seen_docs.add(doc.id)
        if not doc.path.is_file():
            violations.append(
                Violation("document_not_readable", doc.id, f"document {doc.id!r}: no readable file at {doc.path}")
            )

    seen_queries: set[str] = set()
    for query in config.queries:
        if query.id in seen_queries:
            violations.append(Violation("duplicate_query_id", query.id, f"duplicate query id {query.id!r}"))
        seen_queries.add(query.id)
        if not query.text.strip():
            violations.append(Violation("blank_query_text", query.id, f"query {query.id!r} has blank text"))
        if query.document_ref is not None and query.document_ref not in seen_docs:
            violations.append(
                Violation(
                    "dangling_document_ref",
                    query.id,
                    f"query {query.id!r} references unknown document {query.document_ref!r}",
                )
            )

    if config.judge is not None:
        judge = config.judge
        if "answer_relevancy" in judge.enabled_metrics and judge.embeddings_endpoint_url is None:
            violations.append(
                Violation(
                    "judge_embeddings_required",
                    "judge",
                    "answer_relevancy is enabled but judge.embeddings_endpoint_url is not set",
                )
            )
        if not 0.0 <= judge.temperature <= 1.0:
            violations.append(
                Violation("invalid_temperature", "judge", f"judge.temperature must be in [0, 1], got {judge.temperature}")
            )
        if judge.questions_per_answer < 1:
            violations.append(
                Violation(
                    "invalid_questions_per_answer",
                    "judge",
                    f"judge.questions_per_answer must be positive, got {judge.questions_per_answer}",
                )
            )

    if not config.output.formats:
        violations.append(Violation("empty_output_formats", "output", "output.formats must not be empty"))
    if config.request_timeout_ms <= 0:
        violations.append(
            Violation(
                "invalid_request_timeout",
                "",
                f"request_timeout_ms must be positive, got {config.request_timeout_ms}",
            )
        )
    if not 0 <= config.max_retries <= MAX_RETRIES_CEILING:
        violations.append(
            Violation(
                "invalid_max_retries",
                "",
                f"max_retries must be between 0 and {MAX_RETRIES_CEILING}, got {config.max_retries}",
            )
        )
    return violations


def serialize(config: TestSuiteConfig) -> dict:
    """The JSON form of a config; inverse of parse_config on valid configs.

    Fields holding None are omitted rather than emitted as null, and defaults
    are written out explicitly, so serialize(load_config(p)) is canonical.
    """

    def prune(mapping: dict) -> dict:
        return {key: value for key, value in mapping.items() if value is not None}

    frameworks = []
    for target in config.frameworks:
        rest = None
        if target.rest is not None:
            rest = {
                "base_url": target.rest.base_url,
                "upload": prune(
                    {
                        "method": target.rest.upload.method,
                        "path": target.rest.upload.path,
                        "file_field": target.rest.upload.file_field,
                    }
                ),
                "query": prune(
                    {
                        "method": target.rest.query.method,
                        "path": target.rest.query.path,
                        "body_template": target.rest.query.body_template,
                        "answer_pointer": target.rest.query.answer_pointer,
                        "contexts_pointer": target.rest.query.contexts_pointer,
                    }
                ),
                "headers": dict(target.rest.headers),
            }
        frameworks.append(
            prune({"name": target.name, "adapter_kind": target.adapter_kind, "rest": rest, "api_key": target.api_key})
        )
    data = {
        "frameworks": frameworks,
        "documents": [{"id": doc.id, "path": str(doc.path)} for doc in config.documents],
        "queries": [
            prune(
                {
                    "id": query.id,
                    "text": query.text,
                    "expected_answer": query.expected_answer,
                    "document_ref": query.document_ref,
                }
            )
            for query in config.queries
        ],
        "output": {
            "directory": str(config.output.directory),
            "formats": list(config.output.formats),
            "include_warmup_in_aggregates": config.output.include_warmup_in_aggregates,
        },
        "request_timeout_ms": config.request_timeout_ms,
        "max_retries": config.max_retries,
    }
    if config.judge is not None:
        data["judge"] = prune(
            {
                "chat_endpoint_url": config.judge.chat_endpoint_url,
                "embeddings_endpoint_url": config.judge.embeddings_endpoint_url,
                "model_name": config.judge.model_name,
                "api_key": config.judge.api_key,
                "temperature": config.judge.temperature,
                "questions_per_answer": config.judge.questions_per_answer,
                "enabled_metrics": list(config.judge.enabled_metrics),
            }
        )
    return data


def config_digest(config: TestSuiteConfig) -> str:
    """Content hash of the config, for tracing a report back to its exact inputs."""
    canonical = json.dumps(serialize(config), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
