from __future__ import annotations

import json

import pytest
import requests
from hypothesis import given
from hypothesis import strategies as st

from ragmark import mock_rag
from ragmark.adapters import (
    ExtractionFailedError,
    GenericRestAdapter,
    MockRagAdapter,
    PointerMissError,
    ProviderRejectedError,
    TransportError,
    is_valid_pointer,
    render_body,
    render_headers,
    resolve_pointer,
)
from tests.conftest import mock_rest_config, unused_port
from tests.doubles import CannedHttpServer


class TestResolvePointer:
    def test_empty_pointer_returns_payload(self):
        payload = {"a": [1, 2]}
        assert resolve_pointer(payload, "") is payload

    def test_single_level(self):
        assert resolve_pointer({"answer": "Paris"}, "/answer") == "Paris"

    def test_deep_path_with_array_index(self):
        payload = {"data": {"msgs": [{"text": "ok"}]}}
        assert resolve_pointer(payload, "/data/msgs/0/text") == "ok"

    def test_tilde_one_unescapes_to_slash(self):
        assert resolve_pointer({"a/b": 1}, "/a~1b") == 1

    def test_tilde_zero_unescapes_to_tilde(self):
        assert resolve_pointer({"m~n": 5}, "/m~0n") == 5

    def test_tilde_zero_one_decodes_to_literal_tilde_one(self):
        # RFC 6901 prescribes ~1 before ~0, so "~01" must mean the key "~1".
        assert resolve_pointer({"~1": 7, "/": 8}, "/~01") == 7

    def test_empty_string_key(self):
        assert resolve_pointer({"": 3}, "/") == 3

    def test_miss_on_absent_key(self):
        with pytest.raises(PointerMissError):
            resolve_pointer({"y": 1}, "/x")

    def test_miss_on_out_of_range_index(self):
        with pytest.raises(PointerMissError):
            resolve_pointer([1, 2], "/2")

    @pytest.mark.parametrize("token", ["01", "-", "-1", "1.5", "a"])
    def test_miss_on_non_canonical_array_index(self, token):
        with pytest.raises(PointerMissError):
            resolve_pointer([1, 2, 3], f"/{token}")

    def test_miss_when_descending_into_scalar(self):
        with pytest.raises(PointerMissError):
            resolve_pointer({"a": 1}, "/a/b")

    def test_syntactically_invalid_pointer_raises_value_error(self):
        with pytest.raises(ValueError):
            resolve_pointer({}, "no-leading-slash")


class TestPointerSyntax:
    @pytest.mark.parametrize("pointer", ["", "/", "/a", "/a/b/0", "/a~0b", "/a~1b", "/~01"])
    def test_valid(self, pointer):
        assert is_valid_pointer(pointer)

    @pytest.mark.parametrize("pointer", ["a", "a/b", "/a~", "/a~2", "/~", "~0"])
    def test_invalid(self, pointer):
        assert not is_valid_pointer(pointer)


json_scalars = st.one_of(st.none(), st.booleans(), st.integers(), st.text(max_size=8))
json_values = st.recursive(
    json_scalars,
    lambda children: st.one_of(
        st.lists(children, max_size=4),
        st.dictionaries(st.text(max_size=6), children, max_size=4),
    ),
    max_leaves=12,
)


def naive_descend(payload, tokens):
    """Independent recursive-descent oracle for pointer evaluation."""
    if not tokens:
        return True, payload
    head, *rest = tokens
    if isinstance(payload, dict):
        if head in payload:
            return naive_descend(payload[head], rest)
        return False, None
    if isinstance(payload, list):
        if head.isdigit() and (head == "0" or not head.startswith("0")) and int(head) < len(payload):
            return naive_descend(payload[int(head)], rest)
        return False, None
    return False, None


@given(json_values, st.lists(st.text(max_size=4), max_size=4))
def test_resolve_pointer_agrees_with_naive_oracle(payload, raw_tokens):
    pointer = "".join("/" + token.replace("~", "~0").replace("/", "~1") for token in raw_tokens)
    found, expected = naive_descend(payload, raw_tokens)
    if found:
        assert resolve_pointer(payload, pointer) == expected
    else:
        with pytest.raises(PointerMissError):
            resolve_pointer(payload, pointer)


@given(json_values, st.text(max_size=6))
def test_resolver_reaches_any_real_location(payload, key):
    # Walk to a random location that definitely exists and point at it.
    path: list[str] = []
    current = payload
    while True:
        if isinstance(current, dict) and current:
            name = sorted(current, key=repr)[0]
            path.append(name)
            current = current[name]
        elif isinstance(current, list) and current:
            path.append("0")
            current = current[0]
        else:
            break
    pointer = "".join("/" + token.replace("~", "~0").replace("/", "~1") for token in path)
    assert resolve_pointer(payload, pointer) == current


class TestRenderBody:
    def test_simple_substitution(self):
        assert render_body('{"question": "{message}"}', "hi") == '{"question": "hi"}'

    def test_quotes_and_newlines_stay_valid_json(self):
        rendered = render_body('{"question": "{message}"}', 'say "hi"\nplease')
        assert json.loads(rendered)["question"] == 'say "hi"\nplease'

    @given(st.text(max_size=100))
    def test_any_message_renders_to_valid_json(self, message):
        rendered = render_body('{"question": "{message}", "k": 1}', message)
        parsed = json.loads(rendered)
        assert parsed["question"] == message
        assert parsed["k"] == 1


class TestRenderHeaders:
    def test_placeholder_substitution(self):
        headers = render_headers({"Authorization": "Bearer {api_key}"}, "s3cret")
        assert headers == {"Authorization": "Bearer s3cret"}

    def test_placeholder_header_dropped_without_key(self):
        assert render_headers({"Authorization": "Bearer {api_key}", "X-Static": "1"}, None) == {"X-Static": "1"}

    def test_implicit_bearer_when_key_is_unreferenced(self):
        headers = render_headers({"X-Static": "1"}, "k")
        assert headers == {"X-Static": "1", "Authorization": "Bearer k"}

    def test_no_implicit_bearer_when_authorization_configured(self):
        headers = render_headers({"Authorization": "Token abc"}, "k")
        assert headers == {"Authorization": "Token abc"}


class TestGenericRestAdapterAgainstMockService:
    def test_upload_reports_chunk_count(self, tmp_path):
        # Oracle: the mock ingestion splits on sentence terminators.
        text = "First sentence. Second one! Third?"
        oracle_index = mock_rag.MockIndex()
        expected_chunks = mock_rag.ingest(oracle_index, "d", text)
        assert expected_chunks == 3

        doc = tmp_path / "three.txt"
        doc.write_text(text, encoding="utf-8")
        with mock_rag.MockRagServer() as server:
            adapter = GenericRestAdapter(mock_rest_config(server.base_url), timeout_ms=5000)
            result = adapter.upload_document(doc, "d1")
        assert result.ok is True
        assert result.provider_metadata["chunks"] == 3
        assert result.document_id == "d1"
        assert result.latency_ms >= 0

    def test_query_round_trip(self, tmp_path):
        doc = tmp_path / "doc.txt"
        doc.write_text("Paris is the capital of France. Berlin is in Germany.", encoding="utf-8")
        with mock_rag.MockRagServer() as server:
            adapter = GenericRestAdapter(mock_rest_config(server.base_url), timeout_ms=5000)
            adapter.upload_document(doc, "d1")
            response = adapter.send_message("What is the capital of France?")
        assert response.answer == "Paris is the capital of France"
        assert response.contexts is not None and response.contexts[0] == response.answer
        assert response.http_status == 200
        assert response.latency_ms > 0
        assert response.raw["answer"] == response.answer

    def test_contexts_pointer_is_optional(self, tmp_path):
        doc = tmp_path / "doc.txt"
        doc.write_text("Only sentence here.", encoding="utf-8")
        with mock_rag.MockRagServer() as server:
            adapter = GenericRestAdapter(
                mock_rest_config(server.base_url, contexts_pointer=None), timeout_ms=5000
            )
            adapter.upload_document(doc, "d1")
            response = adapter.send_message("Only sentence?")
        assert response.contexts is None


class TestUploadFailures:
    def test_closed_port_yields_transport_failure(self, tmp_path):
        doc = tmp_path / "doc.txt"
        doc.write_text("Text.", encoding="utf-8")
        adapter = GenericRestAdapter(
            mock_rest_config(f"http://127.0.0.1:{unused_port()}"), timeout_ms=500, max_retries=1
        )
        result = adapter.upload_document(doc, "d1")
        assert result.ok is False
        assert "transport" in result.provider_metadata["error"]

    def test_http_413_is_provider_rejected(self, tmp_path):
        doc = tmp_path / "doc.txt"
        doc.write_text("Text.", encoding="utf-8")
        with CannedHttpServer([(413, {"error": "too large"})]) as server:
            adapter = GenericRestAdapter(mock_rest_config(server.base_url), timeout_ms=5000)
            result = adapter.upload_document(doc, "d1")
        assert result.ok is False
        assert "provider_rejected: HTTP 413" in result.provider_metadata["error"]
        assert result.provider_metadata["body"] == {"error": "too large"}

    def test_unreadable_file(self, tmp_path):
        adapter = GenericRestAdapter(mock_rest_config("http://127.0.0.1:9"), timeout_ms=500)
        result = adapter.upload_document(tmp_path / "missing.txt", "d1")
        assert result.ok is False
        assert "file not readable" in result.provider_metadata["error"]


class _FakeResponse:
    def __init__(self, status_code=200, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload
        self.text = text if payload is None else json.dumps(payload)

    def json(self):
        if self._payload is None:
            raise ValueError("no JSON")
        return self._payload


class _FakeSession:
    """Scripted requests.Session stand-in: each entry is an Exception to raise
    or a response to return."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = []

    def request(self, method, url, **kwargs):
        self.calls.append((method, url, kwargs))
        outcome = self.script.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


class TestRetryPolicy:
    def test_transport_failures_are_retried(self, tmp_path):
        doc = tmp_path / "doc.txt"
        doc.write_text("Text.", encoding="utf-8")
        session = _FakeSession(
            [requests.ConnectionError("refused"), _FakeResponse(payload={"document_id": "x", "chunks": 1})]
        )
        adapter = GenericRestAdapter(
            mock_rest_config("http://fake"), timeout_ms=100, max_retries=1, session=session
        )
        result = adapter.upload_document(doc, "d1")
        assert result.ok is True
        assert len(session.calls) == 2

    def test_http_errors_are_not_retried(self, tmp_path):
        doc = tmp_path / "doc.txt"
        doc.write_text("Text.", encoding="utf-8")
        session = _FakeSession([_FakeResponse(status_code=500, payload={"error": "boom"})])
        adapter = GenericRestAdapter(
            mock_rest_config("http://fake"), timeout_ms=100, max_retries=3, session=session
        )
        result = adapter.upload_document(doc, "d1")
        assert result.ok is False
        assert len(session.calls) == 1

    def test_send_message_retry_then_success(self):
        session = _FakeSession([requests.Timeout("slow"), _FakeResponse(payload={"answer": "ok", "contexts": []})])
        adapter = GenericRestAdapter(
            mock_rest_config("http://fake"), timeout_ms=100, max_retries=1, session=session
        )
        response = adapter.send_message("hello")
        assert response.answer == "ok"
        assert len(session.calls) == 2

    def test_send_message_exhausted_retries_raise_transport(self):
        session = _FakeSession([requests.ConnectionError("a"), requests.ConnectionError("b")])
        adapter = GenericRestAdapter(
            mock_rest_config("http://fake"), timeout_ms=100, max_retries=1, session=session
        )
        with pytest.raises(TransportError) as excinfo:
            adapter.send_message("hello")
        assert excinfo.value.latency_ms is not None
        assert len(session.calls) == 2

    def test_zero_retries_single_attempt(self):
        session = _FakeSession([requests.ConnectionError("a")])
        adapter = GenericRestAdapter(
            mock_rest_config("http://fake"), timeout_ms=100, max_retries=0, session=session
        )
        with pytest.raises(TransportError):
            adapter.send_message("hello")
        assert len(session.calls) == 1


class TestSendMessageFailures:
    def adapter_with(self, response, **kwargs):
        return GenericRestAdapter(
            mock_rest_config("http://fake", **kwargs), timeout_ms=100, session=_FakeSession([response])
        )

    def test_closed_port_raises_transport(self):
        adapter = GenericRestAdapter(
            mock_rest_config(f"http://127.0.0.1:{unused_port()}"), timeout_ms=500, max_retries=0
        )
        with pytest.raises(TransportError):
            adapter.send_message("hello")

    def test_provider_rejected_carries_status(self):
        adapter = self.adapter_with(_FakeResponse(status_code=422, payload={"detail": "bad"}))
        with pytest.raises(ProviderRejectedError) as excinfo:
            adapter.send_message("hello")
        assert excinfo.value.status == 422

    def test_non_json_body_is_extraction_failure_with_raw(self):
        adapter = self.adapter_with(_FakeResponse(text="<html>oops</html>"))
        with pytest.raises(ExtractionFailedError) as excinfo:
            adapter.send_message("hello")
        assert excinfo.value.raw == "<html>oops</html>"

    def test_pointer_miss_is_extraction_failure(self):
        adapter = self.adapter_with(_FakeResponse(payload={"something": "else"}))
        with pytest.raises(ExtractionFailedError) as excinfo:
            adapter.send_message("hello")
        assert excinfo.value.raw == {"something": "else"}

    def test_non_string_answer_is_extraction_failure(self):
        adapter = self.adapter_with(_FakeResponse(payload={"answer": 42, "contexts": []}))
        with pytest.raises(ExtractionFailedError):
            adapter.send_message("hello")

    def test_non_array_contexts_is_extraction_failure(self):
        adapter = self.adapter_with(_FakeResponse(payload={"answer": "x", "contexts": "nope"}))
        with pytest.raises(ExtractionFailedError):
            adapter.send_message("hello")

    def test_empty_message_rejected(self):
        adapter = self.adapter_with(_FakeResponse(payload={"answer": "x"}))
        with pytest.raises(ValueError):
            adapter.send_message("")


class TestHeaderAndBodyWireFormat:
    def test_rendered_headers_and_body_reach_the_wire(self, tmp_path):
        doc = tmp_path / "doc.txt"
        doc.write_text("Text.", encoding="utf-8")
        with CannedHttpServer([(200, {"answer": "fine", "contexts": []})]) as server:
            rest = mock_rest_config(server.base_url)
            rest = type(rest)(
                base_url=rest.base_url,
                upload=rest.upload,
                query=rest.query,
                headers={"Authorization": "Bearer {api_key}", "X-Client": "ragmark"},
            )
            adapter = GenericRestAdapter(rest, api_key="k123", timeout_ms=5000)
            adapter.upload_document(doc, "d1")
            adapter.send_message('he said "hi"')
        upload_request, query_request = server.requests
        assert upload_request["headers"]["Authorization"] == "Bearer k123"
        assert upload_request["headers"]["Content-Type"].startswith("multipart/form-data")
        assert b'name="file"' in upload_request["body"]
        assert query_request["headers"]["X-Client"] == "ragmark"
        assert query_request["headers"]["Content-Type"] == "application/json"
        assert json.loads(query_request["body"])["question"] == 'he said "hi"'


class TestMockRagAdapter:
    def test_upload_and_query(self, tmp_path):
        doc = tmp_path / "doc.txt"
        doc.write_text("Paris is the capital of France.", encoding="utf-8")
        adapter = MockRagAdapter()
        result = adapter.upload_document(doc, "cities")
        assert result.ok is True
        assert result.provider_metadata == {"document_id": "cities", "chunks": 1}
        response = adapter.send_message("capital of France?")
        assert response.answer == "Paris is the capital of France"
        assert response.contexts == ["Paris is the capital of France"]
        assert response.http_status is None

    def test_empty_document_fails_upload(self, tmp_path):
        doc = tmp_path / "empty.txt"
        doc.write_text("   ", encoding="utf-8")
        adapter = MockRagAdapter()
        result = adapter.upload_document(doc, "d1")
        assert result.ok is False

    def test_adapters_are_isolated(self, tmp_path):
        doc = tmp_path / "doc.txt"
        doc.write_text("Secret fact here.", encoding="utf-8")
        first = MockRagAdapter()
        second = MockRagAdapter()
        first.upload_document(doc, "d1")
        assert second.send_message("secret fact").answer == mock_rag.NO_ANSWER
