"""Executes a configured suite end-to-end against every target framework.

The loop per framework: all warmup queries first (they absorb cold-start
effects, before any ingestion), then each document in config order — upload,
then that document's queries. Everything runs strictly sequentially so that
latency measurements are never contaminated by concurrent load on a shared
backend. Per-query and per-upload failures become error records; they never
abort the suite.

The knowledge base is deliberately not reset between documents, so document
k is still available when document k+1's queries run. Point frameworks at
fresh instances when a clean comparison is needed.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Callable

from . import judge as judge_mod
from .adapters import AdapterError, GenericRestAdapter, MockRagAdapter, UploadResult
from .config import FrameworkTarget, TestSuiteConfig, Violation, config_digest, validate
from .metrics import bleu, rouge_l, token_f1, tokenize

logger = logging.getLogger(__name__)

JUDGE_CONCURRENCY = 4


class ConfigInvalidError(Exception):
    """run_suite was handed a config that fails validation."""

    def __init__(self, violations: list[Violation]):
        super().__init__("; ".join(v.message for v in violations) or "invalid configuration")
        self.violations = violations


class AbortedByOperator(Exception):
    """The run was interrupted; carries the records collected so far."""

    def __init__(self, partial: "RunResult"):
        super().__init__("run aborted by operator")
        self.partial = partial


@dataclass(frozen=True)
class EvaluationRecord:
    """One (framework, query) row: the response joined with all its scores.

    An error record has an empty answer and no scores; normalized metric
    values always lie in [0, 1].
    """

    framework: str
    query_id: str
    query_text: str
    document_id: str | None
    is_warmup: bool
    answer: str
    expected_answer: str | None
    contexts: list[str] | None
    latency_ms: float
    error: str | None = None
    scores: dict[str, float] = field(default_factory=dict)
    judge_failures: list[tuple[str, str]] = field(default_factory=list)


@dataclass(frozen=True)
class RunResult:
    """Everything one run produced, in execution order."""

    records: list[EvaluationRecord]
    upload_log: list[UploadResult]
    started_at: datetime
    finished_at: datetime
    config_digest: str
    frameworks: list[str]


def measure_latency(action: Callable):
    """Run `action` and return (result, elapsed milliseconds) on the monotonic clock.

    On failure the exception propagates with the elapsed time attached as its
    `latency_ms` attribute — unless the exception already reports a more
    precise one (adapters report the final attempt's span, which excludes
    retry time).
    """
    start = time.perf_counter()
    try:
        result = action()
    except BaseException as exc:
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        if getattr(exc, "latency_ms", None) is None:
            try:
                exc.latency_ms = elapsed_ms
            except AttributeError:
                pass
        raise
    return result, (time.perf_counter() - start) * 1000.0


def build_adapter(target: FrameworkTarget, suite: TestSuiteConfig):
    """Instantiate the adapter a framework target asks for."""
    if target.adapter_kind == "mock":
        return MockRagAdapter()
    return GenericRestAdapter(
        target.rest,
        api_key=target.api_key,
        timeout_ms=suite.request_timeout_ms,
        max_retries=suite.max_retries,
    )


def run_suite(
    suite: TestSuiteConfig,
    evaluate: bool = False,
    judge_client=None,
    adapter_factory: Callable | None = None,
) -> RunResult:
    """Run the whole suite and return its records in execution order.

    `evaluate` enables the judge stage (requires a judge section in the
    config). `judge_client` and `adapter_factory` exist for dependency
    injection in tests; the defaults build real HTTP clients from the config.
    Raises ConfigInvalidError up front and AbortedByOperator (carrying the
    partial result) on interrupt.
    """
    violations = validate(suite)
    if violations:
        raise ConfigInvalidError(violations)
    if evaluate and suite.judge is None:
        raise ValueError("evaluation requested but the config has no judge section")

    factory = adapter_factory if adapter_factory is not None else build_adapter
    framework_names = [target.name for target in suite.frameworks]
    records: list[EvaluationRecord] = []
    upload_log: list[UploadResult] = []
    started_at = datetime.now(timezone.utc)
    digest = config_digest(suite)

    def partial() -> RunResult:
        return RunResult(records, upload_log, started_at, datetime.now(timezone.utc), digest, framework_names)

    try:
        for target in suite.frameworks:
            adapter = factory(target, suite)
            _run_framework(target, suite, adapter, records, upload_log)
        if evaluate:
            records = _judge_stage(records, suite, judge_client)
    except KeyboardInterrupt:
        logger.warning("interrupted; flushing %d collected records", len(records))
        raise AbortedByOperator(partial()) from None
    return RunResult(records, upload_log, started_at, datetime.now(timezone.utc), digest, framework_names)


def _run_framework(target, suite, adapter, records, upload_log) -> None:
    warmups = [query for query in suite.queries if query.document_ref is None]
    for query in warmups:
        records.append(_execute_query(adapter, target.name, query, document_id=None))
    for document in suite.documents:
        result = replace(adapter.upload_document(document.path, document.id), framework=target.name)
        upload_log.append(result)
        logger.info(
            "framework=%s upload=%s status=%s latency_ms=%.1f",
            target.name,
            document.id,
            "ok" if result.ok else "failed",
            result.latency_ms,
        )
        for query in suite.queries:
            if query.document_ref == document.id:
                records.append(_execute_query(adapter, target.name, query, document_id=document.id))


def _execute_query(adapter, framework: str, query, document_id: str | None) -> EvaluationRecord:
    try:
        response, _total_ms = measure_latency(lambda: adapter.send_message(query.text))
    except AdapterError as exc:
        latency_ms = exc.latency_ms if exc.latency_ms is not None else 0.0
        logger.info(
            "framework=%s query=%s status=error latency_ms=%.1f error=%s",
            framework,
            query.id,
            latency_ms,
            exc.describe(),
        )
        return EvaluationRecord(
            framework=framework,
            query_id=query.id,
            query_text=query.text,
            document_id=document_id,
            is_warmup=document_id is None,
            answer="",
            expected_answer=query.expected_answer,
            contexts=None,
            latency_ms=latency_ms,
            error=exc.describe(),
        )
    logger.info(
        "framework=%s query=%s status=ok latency_ms=%.1f", framework, query.id, response.latency_ms
    )
    return EvaluationRecord(
        framework=framework,
        query_id=query.id,
        query_text=query.text,
        document_id=document_id,
        is_warmup=document_id is None,
        answer=response.answer,
        expected_answer=query.expected_answer,
        contexts=response.contexts,
        latency_ms=response.latency_ms,
        scores=_lexical_scores(response.answer, query.expected_answer),
    )


def _lexical_scores(answer: str, expected_answer: str | None) -> dict[str, float]:
    """Reference-based scores, computed only when a reference exists: an
    absent score key means "not computed", which aggregation treats very
    differently from 0."""
    if expected_answer is None:
        return {}
    pred = tokenize(answer)
    ref = tokenize(expected_answer)
    return {
        "token_f1": token_f1(pred, ref),
        "rouge_l": rouge_l(pred, ref),
        "bleu": bleu(pred, ref),
    }


def _judge_stage(records, suite, judge_client) -> list[EvaluationRecord]:
    """Score eligible records with the judge, with bounded fan-out.

    Judging happens after every latency is captured, so concurrency here
    cannot contaminate timing. Warmup answers are judged only when they carry
    an expected answer; error records are never judged.
    """
    evaluator = judge_mod.JudgeEvaluator(suite.judge, client=judge_client, timeout_ms=suite.request_timeout_ms)
    eligible = [
        record
        for record in records
        if record.error is None and (not record.is_warmup or record.expected_answer is not None)
    ]
    if not eligible:
        return list(records)

    def score(record: EvaluationRecord) -> judge_mod.JudgeScores:
        return evaluator.score_record(
            query=record.query_text,
            answer=record.answer,
            contexts=record.contexts,
            expected_answer=record.expected_answer,
        )

    with ThreadPoolExecutor(max_workers=JUDGE_CONCURRENCY) as pool:
        scored = list(pool.map(score, eligible))

    by_identity = {id(record): result for record, result in zip(eligible, scored)}
    merged = []
    for record in records:
        result = by_identity.get(id(record))
        if result is None:
            merged.append(record)
        else:
            merged.append(
                replace(
                    record,
                    scores={**record.scores, **result.as_score_map()},
                    judge_failures=list(result.judge_failures),
                )
            )
    return merged
