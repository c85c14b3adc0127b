"""The uniform two-method adapter contract over deployed RAG services.

Every adapter exposes exactly `upload_document` and `send_message`; the suite
runner is written against that contract alone, so swapping the in-process
mock for a remote deployment changes configuration, not code.

`GenericRestAdapter` makes any REST-speaking RAG service addressable without
custom code: endpoint paths, the query body template and JSON Pointers into
the response all come from configuration. `MockRagAdapter` wraps the in-repo
mock service directly, with no network involved.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import requests

from . import mock_rag

MESSAGE_PLACEHOLDER = "{message}"
API_KEY_PLACEHOLDER = "{api_key}"


@dataclass(frozen=True)
class UploadEndpointSpec:
    """How to reach one service's document-upload endpoint."""

    path: str
    method: str = "POST"
    file_field: str = "file"


@dataclass(frozen=True)
class QueryEndpointSpec:
    """How to reach one service's query endpoint and read its reply.

    `body_template` must contain "{message}" exactly once; it is replaced with
    the JSON-escaped query text. `answer_pointer` (and optionally
    `contexts_pointer`) are RFC 6901 JSON Pointers into the response payload.
    """

    path: str
    body_template: str
    answer_pointer: str
    method: str = "POST"
    contexts_pointer: str | None = None


@dataclass(frozen=True)
class RestAdapterConfig:
    """Declarative description of a REST RAG service."""

    base_url: str
    upload: UploadEndpointSpec
    query: QueryEndpointSpec
    headers: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class UploadResult:
    """Outcome of one document upload. Failed uploads never raise; they are
    recorded with ok=False and the error text in provider_metadata."""

    document_id: str
    ok: bool
    provider_metadata: Any
    latency_ms: float
    framework: str | None = None


@dataclass(frozen=True)
class RagResponse:
    """One framework answer: text, optional retrieved contexts, timing, raw payload."""

    answer: str
    latency_ms: float
    contexts: list[str] | None = None
    raw: Any = None
    http_status: int | None = None


class AdapterError(Exception):
    """Base for per-request adapter failures.

    `latency_ms` is the span of the final attempt when it is known; the suite
    runner records it on the failed query's row.
    """

    kind = "adapter_error"

    def __init__(self, message: str, latency_ms: float | None = None):
        super().__init__(message)
        self.latency_ms = latency_ms

    def describe(self) -> str:
        return f"{self.kind}: {self}"


class TransportError(AdapterError):
    """Connection refused, DNS failure, timeout: the service never answered."""

    kind = "transport"


class ProviderRejectedError(AdapterError):
    """The service answered with HTTP >= 400. Not retried: a rejection is a
    result, not flakiness."""

    kind = "provider_rejected"

    def __init__(self, status: int, body: str, latency_ms: float | None = None):
        super().__init__(f"HTTP {status}", latency_ms)
        self.status = status
        self.body = body


class ExtractionFailedError(AdapterError):
    """The reply arrived but the configured pointers could not produce an
    answer (non-JSON body, pointer miss, or wrong value type). The raw body
    is preserved for diagnosis."""

    kind = "extraction_failed"

    def __init__(self, message: str, raw: Any = None, http_status: int | None = None, latency_ms: float | None = None):
        super().__init__(message, latency_ms)
        self.raw = raw
        self.http_status = http_status


class PointerMissError(LookupError):
    """A JSON Pointer token did not resolve (missing key, bad or out-of-range index)."""


_ARRAY_INDEX_RE = re.compile(r"0|[1-9][0-9]*")
_BAD_ESCAPE_RE = re.compile(r"~(?![01])")


def is_valid_pointer(pointer: str) -> bool:
    """Syntactic RFC 6901 check: empty, or "/"-led tokens where every "~" is
    part of a "~0" or "~1" escape."""
    if pointer == "":
        return True
    if not pointer.startswith("/"):
        return False
    return _BAD_ESCAPE_RE.search(pointer) is None


def resolve_pointer(payload: Any, pointer: str) -> Any:
    """Evaluate an RFC 6901 JSON Pointer against a parsed JSON value.

    The empty pointer returns the payload itself. "~1" unescapes to "/" and
    "~0" to "~" (in that order, per the RFC). Array tokens must be canonical
    decimal indexes; anything unresolvable raises PointerMissError.
    """
    if not is_valid_pointer(pointer):
        raise ValueError(f"syntactically invalid JSON Pointer: {pointer!r}")
    if pointer == "":
        return payload
    current = payload
    for raw_token in pointer[1:].split("/"):
        token = raw_token.replace("~1", "/").replace("~0", "~")
        if isinstance(current, dict):
            if token not in current:
                raise PointerMissError(f"key {token!r} not found")
            current = current[token]
        elif isinstance(current, list):
            if not _ARRAY_INDEX_RE.fullmatch(token):
                raise PointerMissError(f"{token!r} is not a valid array index")
            position = int(token)
            if position >= len(current):
                raise PointerMissError(f"index {position} out of range for array of {len(current)}")
            current = current[position]
        else:
            raise PointerMissError(f"cannot descend into {type(current).__name__} with token {token!r}")
    return current


def render_body(template: str, message: str) -> str:
    """Substitute the query text into the body template, JSON-string-escaped.

    Because the message is escaped exactly as a JSON string literal, the
    rendered body stays valid JSON for any message content (quotes, newlines,
    control characters included).
    """
    escaped = json.dumps(message)[1:-1]
    return template.replace(MESSAGE_PLACEHOLDER, escaped)


def render_headers(headers: dict[str, str], api_key: str | None) -> dict[str, str]:
    """Resolve configured headers against the API key.

    "{api_key}" placeholders are substituted when a key is present; headers
    that need a key get dropped when there is none. If a key is present but
    no header references it, a standard bearer Authorization header is added
    (unless one is already configured).
    """
    rendered: dict[str, str] = {}
    uses_placeholder = False
    for name, value in headers.items():
        if API_KEY_PLACEHOLDER in value:
            uses_placeholder = True
            if api_key is None:
                continue
            value = value.replace(API_KEY_PLACEHOLDER, api_key)
        rendered[name] = value
    if api_key is not None and not uses_placeholder and "Authorization" not in rendered:
        rendered["Authorization"] = f"Bearer {api_key}"
    return rendered


class GenericRestAdapter:
    """Black-box adapter for any REST RAG service described by a RestAdapterConfig.

    Retries apply to transport failures only and the timeout is per attempt.
    Instances are immutable after construction and safe to share; individual
    calls block.
    """

    def __init__(
        self,
        rest: RestAdapterConfig,
        api_key: str | None = None,
        timeout_ms: int = 30_000,
        max_retries: int = 1,
        session: requests.Session | None = None,
    ):
        self._rest = rest
        self._base_url = rest.base_url.rstrip("/")
        self._headers = render_headers(rest.headers, api_key)
        self._timeout_s = timeout_ms / 1000.0
        self._max_retries = max_retries
        self._session = session if session is not None else requests.Session()

    def _url(self, path: str) -> str:
        return f"{self._base_url}{path}"

    def upload_document(self, file_path: str | Path, document_id: str) -> UploadResult:
        """POST the file as multipart/form-data; never raises.

        Transport failures are retried up to max_retries times; an HTTP error
        status is final. The reported latency covers the successful (or final
        failed) attempt only.
        """
        file_path = Path(file_path)
        try:
            payload = file_path.read_bytes()
        except OSError as exc:
            return UploadResult(document_id, False, {"error": f"file not readable: {exc}"}, 0.0)
        url = self._url(self._rest.upload.path)
        outcome = None
        for _attempt in range(self._max_retries + 1):
            start = time.perf_counter()
            try:
                response = self._session.request(
                    self._rest.upload.method,
                    url,
                    files={self._rest.upload.file_field: (file_path.name, payload)},
                    headers=self._headers,
                    timeout=self._timeout_s,
                )
            except requests.RequestException as exc:
                elapsed = (time.perf_counter() - start) * 1000.0
                outcome = UploadResult(document_id, False, {"error": f"transport: {exc}"}, elapsed)
                continue
            elapsed = (time.perf_counter() - start) * 1000.0
            body = _parse_body(response)
            if response.status_code >= 400:
                return UploadResult(
                    document_id,
                    False,
                    {"error": f"provider_rejected: HTTP {response.status_code}", "body": body},
                    elapsed,
                )
            return UploadResult(document_id, True, body, elapsed)
        return outcome

    def send_message(self, message: str) -> RagResponse:
        """POST the rendered query body and extract the answer via pointers.

        Raises TransportError, ProviderRejectedError or ExtractionFailedError;
        the caller records the failure and the suite continues.
        """
        if not message:
            raise ValueError("message must be non-empty")
        query = self._rest.query
        body = render_body(query.body_template, message).encode("utf-8")
        headers = dict(self._headers)
        headers["Content-Type"] = "application/json"
        url = self._url(query.path)
        last_transport: TransportError | None = None
        for _attempt in range(self._max_retries + 1):
            start = time.perf_counter()
            try:
                response = self._session.request(
                    query.method, url, data=body, headers=headers, timeout=self._timeout_s
                )
            except requests.RequestException as exc:
                elapsed = (time.perf_counter() - start) * 1000.0
                last_transport = TransportError(str(exc), latency_ms=elapsed)
                continue
            elapsed = (time.perf_counter() - start) * 1000.0
            return self._extract(response, elapsed)
        raise last_transport

    def _extract(self, response: requests.Response, elapsed_ms: float) -> RagResponse:
        status = response.status_code
        if status >= 400:
            raise ProviderRejectedError(status, response.text, latency_ms=elapsed_ms)
        try:
            payload = response.json()
        except ValueError:
            raise ExtractionFailedError(
                "response body is not JSON", raw=response.text, http_status=status, latency_ms=elapsed_ms
            ) from None
        query = self._rest.query
        try:
            answer = resolve_pointer(payload, query.answer_pointer)
        except PointerMissError as exc:
            raise ExtractionFailedError(
                f"answer pointer {query.answer_pointer!r} missed: {exc}",
                raw=payload,
                http_status=status,
                latency_ms=elapsed_ms,
            ) from exc
        if not isinstance(answer, str):
            raise ExtractionFailedError(
                f"answer pointer {query.answer_pointer!r} resolved to {type(answer).__name__}, not a string",
                raw=payload,
                http_status=status,
                latency_ms=elapsed_ms,
            )
        contexts: list[str] | None = None
        if query.contexts_pointer is not None:
            try:
                value = resolve_pointer(payload, query.contexts_pointer)
            except PointerMissError as exc:
                raise ExtractionFailedError(
                    f"contexts pointer {query.contexts_pointer!r} missed: {exc}",
                    raw=payload,
                    http_status=status,
                    latency_ms=elapsed_ms,
                ) from exc
            if not isinstance(value, list) or not all(isinstance(item, str) for item in value):
                raise ExtractionFailedError(
                    f"contexts pointer {query.contexts_pointer!r} did not resolve to an array of strings",
                    raw=payload,
                    http_status=status,
                    latency_ms=elapsed_ms,
                )
            contexts = list(value)
        return RagResponse(answer=answer, latency_ms=elapsed_ms, contexts=contexts, raw=payload, http_status=status)


def _parse_body(response: requests.Response) -> Any:
    try:
        return response.json()
    except ValueError:
        return response.text


class MockRagAdapter:
    """In-process adapter over a private mock RAG index; no network involved.

    Each instance owns its own index (unless one is injected), so two mock
    frameworks in one suite behave like two independent deployments.
    """

    def __init__(self, index: mock_rag.MockIndex | None = None):
        self._index = index if index is not None else mock_rag.MockIndex()

    def upload_document(self, file_path: str | Path, document_id: str) -> UploadResult:
        start = time.perf_counter()
        try:
            text = Path(file_path).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            elapsed = (time.perf_counter() - start) * 1000.0
            return UploadResult(document_id, False, {"error": f"file not readable: {exc}"}, elapsed)
        try:
            chunks = mock_rag.ingest(self._index, document_id, text)
        except mock_rag.EmptyDocumentError as exc:
            elapsed = (time.perf_counter() - start) * 1000.0
            return UploadResult(document_id, False, {"error": str(exc)}, elapsed)
        elapsed = (time.perf_counter() - start) * 1000.0
        return UploadResult(document_id, True, {"document_id": document_id, "chunks": chunks}, elapsed)

    def send_message(self, message: str) -> RagResponse:
        if not message:
            raise ValueError("message must be non-empty")
        start = time.perf_counter()
        payload = mock_rag.answer(self._index, message)
        elapsed = (time.perf_counter() - start) * 1000.0
        return RagResponse(
            answer=payload["answer"],
            latency_ms=elapsed,
            contexts=list(payload["contexts"]),
            raw=payload,
        )
