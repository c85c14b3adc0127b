"""A deterministic in-repo RAG service for offline end-to-end testing.

Documents are chunked into sentences, retrieval is exact token overlap, and
answering is extractive (the top-ranked chunk verbatim). No randomness, no
time dependence: identical inputs always produce identical payloads, which is
what makes golden tests against it trivial. It is not a usable RAG system.

The service can be driven in-process through :func:`ingest` / :func:`answer`
or over HTTP through :class:`MockRagServer`, which speaks the same protocol
the generic REST adapter expects (multipart upload plus JSON query).
"""

from __future__ import annotations

import errno
import json
import threading
import time
from dataclasses import dataclass, field
from email.parser import BytesParser
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .metrics import split_sentences, tokenize

NO_ANSWER = "I don't know."
RETRIEVAL_TOP_K = 3


class EmptyDocumentError(ValueError):
    """Raised when an ingested document contains no text."""


class PortInUseError(OSError):
    """Raised when the requested server port is already bound."""


@dataclass(frozen=True)
class Chunk:
    """One sentence of an ingested document, with its tokens precomputed."""

    doc_id: str
    index: int
    text: str
    tokens: tuple[str, ...]


@dataclass
class MockIndex:
    """Accumulating chunk store; never cleared between ingests."""

    chunks: list[Chunk] = field(default_factory=list)
    next_doc_number: int = 1


def ingest(index: MockIndex, doc_id: str, text: str) -> int:
    """Split `text` into sentence chunks and append them to the index.

    Returns the number of chunks added. Chunk indexes continue per document,
    so re-ingesting under the same doc_id keeps (doc_id, index) pairs unique.
    """
    if not text.strip():
        raise EmptyDocumentError(f"document {doc_id!r} contains no text")
    start = sum(1 for chunk in index.chunks if chunk.doc_id == doc_id)
    sentences = split_sentences(text)
    for offset, sentence in enumerate(sentences):
        index.chunks.append(
            Chunk(doc_id=doc_id, index=start + offset, text=sentence, tokens=tuple(tokenize(sentence)))
        )
    return len(sentences)


def retrieve(index: MockIndex, query: str, k: int) -> list[Chunk]:
    """Top-k chunks by distinct-token overlap with the query.

    Score is |tokens(query) ∩ tokens(chunk)| as sets; zero-score chunks are
    excluded and ties break by (doc_id, index) ascending.
    """
    query_tokens = set(tokenize(query))
    scored = []
    for chunk in index.chunks:
        score = len(query_tokens.intersection(chunk.tokens))
        if score > 0:
            scored.append((-score, chunk.doc_id, chunk.index, chunk))
    scored.sort(key=lambda item: item[:3])
    return [item[3] for item in scored[:k]]


def answer(index: MockIndex, query: str) -> dict:
    """Extractive answer payload: top chunk text plus retrieved contexts."""
    top = retrieve(index, query, RETRIEVAL_TOP_K)
    return {
        "answer": top[0].text if top else NO_ANSWER,
        "contexts": [chunk.text for chunk in top],
    }


def _multipart_file_payload(content_type: str, body: bytes, field_name: str) -> bytes | None:
    """Extract the named file part from a multipart/form-data body, if any."""
    header = b"Content-Type: " + content_type.encode("latin-1") + b"\r\n\r\n"
    message = BytesParser().parsebytes(header + body)
    if not message.is_multipart():
        return None
    for part in message.get_payload():
        if part.get_param("name", header="content-disposition") == field_name:
            payload = part.get_payload(decode=True)
            return payload if payload is not None else b""
    return None


class _Handler(BaseHTTPRequestHandler):
    # The server instance carries the shared index, its lock and the injected
    # handler delay; see MockRagServer.start().

    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length", "0") or "0")
        return self.rfile.read(length) if length > 0 else b""

    def _delay(self) -> None:
        if self.server.delay_s > 0:
            time.sleep(self.server.delay_s)

    def do_GET(self):
        self._delay()
        if self.path in ("/upload", "/query"):
            self._send_json(405, {"error": "method not allowed"})
        else:
            self._send_json(404, {"error": "not found"})

    def do_POST(self):
        self._delay()
        if self.path == "/upload":
            self._handle_upload()
        elif self.path == "/query":
            self._handle_query()
        else:
            self._send_json(404, {"error": "not found"})

    def _handle_upload(self):
        content_type = self.headers.get("Content-Type", "")
        body = self._read_body()
        if not content_type.startswith("multipart/form-data"):
            self._send_json(400, {"error": "expected multipart/form-data"})
            return
        payload = _multipart_file_payload(content_type, body, "file")
        if payload is None:
            self._send_json(400, {"error": 'missing file field "file"'})
            return
        text = payload.decode("utf-8", errors="replace")
        with self.server.index_lock:
            doc_id = f"doc{self.server.index.next_doc_number}"
            self.server.index.next_doc_number += 1
            try:
                chunks = ingest(self.server.index, doc_id, text)
            except EmptyDocumentError:
                self._send_json(400, {"error": "empty document"})
                return
        self._send_json(200, {"document_id": doc_id, "chunks": chunks})

    def _handle_query(self):
        try:
            payload = json.loads(self._read_body().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            self._send_json(400, {"error": "body is not valid JSON"})
            return
        question = payload.get("question") if isinstance(payload, dict) else None
        if not isinstance(question, str):
            self._send_json(400, {"error": 'expected a JSON object with a string "question"'})
            return
        with self.server.index_lock:
            result = answer(self.server.index, question)
        self._send_json(200, result)


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = False


class MockRagServer:
    """HTTP frontend over a MockIndex.

    Endpoints: POST /upload (multipart, file field "file") returning
    {document_id, chunks}, and POST /query with {"question": ...} returning
    {answer, contexts}. `delay_ms` injects a fixed per-request handler sleep,
    which latency tests use as a known lower bound.
    """

    def __init__(self, index: MockIndex | None = None, host: str = "127.0.0.1", port: int = 0, delay_ms: float = 0.0):
        self.index = index if index is not None else MockIndex()
        self._host = host
        self._requested_port = port
        self._delay_ms = delay_ms
        self._server: _Server | None = None
        self._thread: threading.Thread | None = None

    def start(self) -> "MockRagServer":
        try:
            self._server = _Server((self._host, self._requested_port), _Handler)
        except OSError as exc:
            if exc.errno == errno.EADDRINUSE:
                raise PortInUseError(f"port {self._requested_port} is already in use") from exc
            raise
        self._server.index = self.index
        self._server.index_lock = threading.Lock()
        self._server.delay_s = self._delay_ms / 1000.0
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None

    @property
    def port(self) -> int:
        if self._server is None:
            raise RuntimeError("server is not running")
        return self._server.server_address[1]

    @property
    def base_url(self) -> str:
        return f"http://{self._host}:{self.port}"

    def __enter__(self) -> "MockRagServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()


def serve(index: MockIndex, port: int, host: str = "127.0.0.1", delay_ms: float = 0.0) -> MockRagServer:
    """Start the HTTP service on `port` and return the running server handle."""
    return MockRagServer(index=index, host=host, port=port, delay_ms=delay_ms).start()
