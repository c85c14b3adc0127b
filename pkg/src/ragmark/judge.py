"""LLM-as-a-judge scoring over OpenAI-compatible chat/embeddings endpoints.

Four metrics, all normalized to [0, 1]:

* correctness — a 1-to-5 rubric grade against the expected answer, rescaled.
* faithfulness — the answer is decomposed into atomic claims, each claim is
  verified against the retrieved contexts, and the score is the supported
  fraction.
* answer_relevancy — the judge writes questions the answer would address;
  the score is the mean (floored at 0) cosine similarity between each
  question's embedding and the original query's embedding.
* context_relevancy — the fraction of context sentences the judge extracts
  as relevant to the query.

Every judge reply must satisfy a strict JSON contract. A reply that fails
the contract is retried exactly once; a second failure becomes a recorded
judge failure for that metric, never a silent zero. All prompts are fixed
module constants so scripted test doubles can key off them and two runs with
a deterministic judge produce identical scores.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Sequence

import requests

from .config import JudgeConfig
from .metrics import split_sentences

VERIFICATION_BATCH_SIZE = 10

CLAIM_EXTRACTION_PROMPT = """\
Break the answer below into a list of short, self-contained factual claims.
Respond with a JSON array of strings and nothing else. Respond with [] if the
answer contains no factual claims.

Answer:
{answer}
"""

CLAIM_VERIFICATION_PROMPT = """\
For each numbered claim below, decide whether it is supported by the context.
Respond with a JSON array of booleans, one per claim in the same order, and
nothing else.

Context:
{context}

Claims:
{claims}
"""

QUESTION_GENERATION_PROMPT = """\
Write exactly {k} distinct questions that the answer below directly answers.
Respond with a JSON array of {k} strings and nothing else.

Answer:
{answer}
"""

RELEVANT_SENTENCE_PROMPT = """\
From the context below, extract the sentences that are relevant to answering
the question, verbatim. Respond with a JSON array of strings and nothing
else. Respond with [] if no sentence is relevant.

Question:
{question}

Context:
{context}
"""

CORRECTNESS_PROMPT = """\
Grade how well the answer matches the reference answer for the question
below, on an integer scale from 1 (completely wrong) to 5 (fully correct and
complete). Respond with a JSON object of the form
{"score": <integer 1-5>, "rationale": "<one short sentence>"} and nothing else.

Question:
{question}

Reference answer:
{expected}

Answer:
{answer}
"""


class JudgeError(Exception):
    """Base class for judge failures; the message becomes the recorded reason."""


class JudgeUnavailableError(JudgeError):
    """The judge endpoint could not be reached or returned a broken envelope."""


class JudgeUnparseableError(JudgeError):
    """The judge's reply violated the JSON contract twice in a row."""


class DimensionMismatchError(JudgeError):
    """Two embedding vectors of different dimensions were compared."""


class ZeroVectorError(JudgeError):
    """An all-zero embedding has no direction, so cosine is undefined."""


class _ContractViolation(Exception):
    """Internal: one reply failed the JSON contract; triggers the single retry."""


@dataclass(frozen=True)
class ClaimSet:
    """Atomic declarative statements extracted from an answer."""

    claims: tuple[str, ...]


@dataclass(frozen=True)
class VerdictSet:
    """(claim, supported) pairs aligned 1:1 with the originating ClaimSet."""

    verdicts: tuple[tuple[str, bool], ...]


@dataclass(frozen=True)
class JudgeScores:
    """Per-record judge output: each enabled metric is either a score in
    [0, 1] or an entry in judge_failures, never both and never NaN."""

    correctness: float | None = None
    faithfulness: float | None = None
    answer_relevancy: float | None = None
    context_relevancy: float | None = None
    judge_failures: tuple[tuple[str, str], ...] = ()

    def as_score_map(self) -> dict[str, float]:
        present = {
            "correctness": self.correctness,
            "faithfulness": self.faithfulness,
            "answer_relevancy": self.answer_relevancy,
            "context_relevancy": self.context_relevancy,
        }
        return {name: value for name, value in present.items() if value is not None}


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine similarity of two equal-dimension non-zero vectors, clamped to [-1, 1]."""
    if len(a) != len(b):
        raise DimensionMismatchError(f"vector dimensions differ: {len(a)} vs {len(b)}")
    norm_a = math.sqrt(sum(x * x for x in a))
    norm_b = math.sqrt(sum(x * x for x in b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVectorError("cosine similarity is undefined for a zero vector")
    value = sum(x * y for x, y in zip(a, b)) / (norm_a * norm_b)
    return max(-1.0, min(1.0, value))


def faithfulness(verdicts: VerdictSet) -> float:
    """Fraction of claims marked supported. Undefined for an empty verdict set;
    the caller records a "no claims" judge failure instead of calling this."""
    if not verdicts.verdicts:
        raise ValueError("faithfulness is undefined for an empty verdict set")
    supported = sum(1 for _claim, ok in verdicts.verdicts if ok)
    return supported / len(verdicts.verdicts)


class OpenAICompatibleClient:
    """Minimal blocking client for OpenAI-style chat and embeddings endpoints."""

    def __init__(self, config: JudgeConfig, timeout_ms: int = 30_000, session: requests.Session | None = None):
        self._config = config
        self._timeout_s = timeout_ms / 1000.0
        self._session = session if session is not None else requests.Session()
        self._headers = {"Content-Type": "application/json"}
        if config.api_key:
            self._headers["Authorization"] = f"Bearer {config.api_key}"

    def _post(self, url: str, body: dict) -> Any:
        try:
            response = self._session.post(url, json=body, headers=self._headers, timeout=self._timeout_s)
        except requests.RequestException as exc:
            raise JudgeUnavailableError(f"judge endpoint unreachable: {exc}") from exc
        if response.status_code >= 400:
            raise JudgeUnavailableError(f"judge endpoint returned HTTP {response.status_code}")
        try:
            return response.json()
        except ValueError as exc:
            raise JudgeUnavailableError("judge endpoint returned a non-JSON body") from exc

    def chat(self, prompt: str) -> str:
        body = {
            "model": self._config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self._config.temperature,
        }
        payload = self._post(self._config.chat_endpoint_url, body)
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise JudgeUnavailableError("malformed chat completion payload") from exc
        if not isinstance(content, str):
            raise JudgeUnavailableError("chat completion content is not a string")
        return content

    def embed(self, texts: list[str]) -> list[list[float]]:
        if self._config.embeddings_endpoint_url is None:
            raise JudgeUnavailableError("no embeddings endpoint configured")
        body = {"model": self._config.model_name, "input": list(texts)}
        payload = self._post(self._config.embeddings_endpoint_url, body)
        try:
            vectors = [item["embedding"] for item in payload["data"]]
        except (KeyError, TypeError) as exc:
            raise JudgeUnavailableError("malformed embeddings payload") from exc
        if len(vectors) != len(texts):
            raise JudgeUnavailableError(
                f"embeddings endpoint returned {len(vectors)} vectors for {len(texts)} inputs"
            )
        return [[float(x) for x in vector] for vector in vectors]


def _render(template: str, **fields: str) -> str:
    rendered = template
    for name, value in fields.items():
        rendered = rendered.replace("{" + name + "}", value)
    return rendered


def _batches(items: Sequence, size: int):
    for start in range(0, len(items), size):
        yield items[start : start + size]


class JudgeEvaluator:
    """Computes the enabled judge metrics for one record at a time.

    The client only needs `chat(prompt) -> str` and
    `embed(texts) -> list[vector]`, so tests substitute scripted doubles.
    Instances are shareable; per-record scoring may run on several threads.
    """

    def __init__(self, config: JudgeConfig, client: Any = None, timeout_ms: int = 30_000):
        self._config = config
        self._client = client if client is not None else OpenAICompatibleClient(config, timeout_ms=timeout_ms)

    def _chat_contract(self, prompt: str, check) -> Any:
        """One chat call parsed against `check`, retried exactly once."""
        failure: _ContractViolation | None = None
        for _attempt in range(2):
            content = self._client.chat(prompt)
            try:
                return check(content)
            except _ContractViolation as exc:
                failure = exc
        raise JudgeUnparseableError(str(failure))

    def extract_claims(self, answer: str) -> ClaimSet:
        """Decompose an answer into atomic claims; empty answers short-circuit
        to an empty ClaimSet without any chat call."""
        if not answer.strip():
            return ClaimSet(())

        def check(content: str) -> ClaimSet:
            data = _parse_json(content)
            if not isinstance(data, list) or not all(isinstance(item, str) and item.strip() for item in data):
                raise _ContractViolation(f"expected a JSON array of non-empty strings, got: {content[:200]!r}")
            return ClaimSet(tuple(item.strip() for item in data))

        prompt = _render(CLAIM_EXTRACTION_PROMPT, answer=answer)
        return self._chat_contract(prompt, check)

    def verify_claims(self, claims: ClaimSet, contexts: Sequence[str]) -> VerdictSet:
        """Check each claim against the contexts, in batches of at most 10."""
        if not claims.claims:
            return VerdictSet(())
        context_text = "\n\n".join(contexts)
        verdicts: list[tuple[str, bool]] = []
        for batch in _batches(claims.claims, VERIFICATION_BATCH_SIZE):
            numbered = "\n".join(f"{i}. {claim}" for i, claim in enumerate(batch, start=1))
            prompt = _render(CLAIM_VERIFICATION_PROMPT, context=context_text, claims=numbered)

            def check(content: str, expected: int = len(batch)) -> list[bool]:
                data = _parse_json(content)
                if not isinstance(data, list) or len(data) != expected or not all(isinstance(v, bool) for v in data):
                    raise _ContractViolation(f"expected a JSON array of {expected} booleans, got: {content[:200]!r}")
                return data

            flags = self._chat_contract(prompt, check)
            verdicts.extend(zip(batch, flags))
        return VerdictSet(tuple(verdicts))

    def generate_questions(self, answer: str, k: int) -> list[str]:
        """Ask for exactly k questions the answer addresses; the cardinality
        is part of the contract."""
        if k < 1:
            raise ValueError("k must be positive")
        if not answer.strip():
            raise ValueError("cannot generate questions for an empty answer")

        def check(content: str) -> list[str]:
            data = _parse_json(content)
            if (
                not isinstance(data, list)
                or len(data) != k
                or not all(isinstance(item, str) and item.strip() for item in data)
            ):
                raise _ContractViolation(f"expected a JSON array of exactly {k} non-empty strings, got: {content[:200]!r}")
            return [item.strip() for item in data]

        prompt = _render(QUESTION_GENERATION_PROMPT, k=str(k), answer=answer)
        return self._chat_contract(prompt, check)

    def answer_relevancy(self, query: str, answer: str, k: int | None = None) -> float:
        """Mean similarity between the query and the questions the answer
        would address; negative cosines are floored at 0 to keep the score
        in [0, 1]."""
        k = k if k is not None else self._config.questions_per_answer
        questions = self.generate_questions(answer, k)
        vectors = self._client.embed([query] + questions)
        query_vector = vectors[0]
        similarities = [max(0.0, cosine(vector, query_vector)) for vector in vectors[1:]]
        return sum(similarities) / len(similarities)

    def context_relevancy(self, query: str, contexts: Sequence[str]) -> float:
        """Fraction of context sentences the judge extracts as relevant."""
        total = len(split_sentences(" ".join(contexts)))
        if total == 0:
            raise ValueError("contexts contain no sentences")

        def check(content: str) -> list[str]:
            data = _parse_json(content)
            if not isinstance(data, list) or not all(isinstance(item, str) for item in data):
                raise _ContractViolation(f"expected a JSON array of strings, got: {content[:200]!r}")
            return data

        prompt = _render(RELEVANT_SENTENCE_PROMPT, question=query, context="\n".join(contexts))
        extracted = self._chat_contract(prompt, check)
        return max(0.0, min(1.0, len(extracted) / total))

    def correctness(self, query: str, answer: str, expected: str) -> float:
        """1-to-5 rubric grade against the expected answer, rescaled to [0, 1].
        An out-of-range score counts as a contract violation."""

        def check(content: str) -> float:
            data = _parse_json(content)
            score = data.get("score") if isinstance(data, dict) else None
            if not isinstance(score, int) or isinstance(score, bool) or not 1 <= score <= 5:
                raise _ContractViolation(f"expected an integer score in 1..5, got: {content[:200]!r}")
            return (score - 1) / 4.0

        prompt = _render(CORRECTNESS_PROMPT, question=query, expected=expected, answer=answer)
        return self._chat_contract(prompt, check)

    def score_record(
        self,
        query: str,
        answer: str,
        contexts: Sequence[str] | None,
        expected_answer: str | None,
    ) -> JudgeScores:
        """Compute all enabled metrics for one record.

        Metrics whose preconditions are unmet (no contexts exposed by the
        adapter, no expected answer, empty answer) become recorded failures
        rather than scores, so aggregates are never poisoned by zeros."""
        enabled = self._config.enabled_metrics
        values: dict[str, float] = {}
        failures: list[tuple[str, str]] = []

        def attempt(metric: str, compute) -> None:
            try:
                values[metric] = compute()
            except JudgeError as exc:
                failures.append((metric, str(exc)))

        if "correctness" in enabled:
            if expected_answer is None:
                failures.append(("correctness", "no expected answer"))
            else:
                attempt("correctness", lambda: self.correctness(query, answer, expected_answer))

        if "faithfulness" in enabled:
            if not contexts:
                failures.append(("faithfulness", "no contexts exposed by adapter"))
            else:
                try:
                    claims = self.extract_claims(answer)
                    if not claims.claims:
                        failures.append(("faithfulness", "no claims"))
                    else:
                        values["faithfulness"] = faithfulness(self.verify_claims(claims, contexts))
                except JudgeError as exc:
                    failures.append(("faithfulness", str(exc)))

        if "answer_relevancy" in enabled:
            if not answer.strip():
                failures.append(("answer_relevancy", "empty answer"))
            else:
                attempt("answer_relevancy", lambda: self.answer_relevancy(query, answer))

        if "context_relevancy" in enabled:
            if not contexts:
                failures.append(("context_relevancy", "no contexts exposed by adapter"))
            elif not split_sentences(" ".join(contexts)):
                failures.append(("context_relevancy", "no sentences in contexts"))
            else:
                attempt("context_relevancy", lambda: self.context_relevancy(query, contexts))

        return JudgeScores(
            correctness=values.get("correctness"),
            faithfulness=values.get("faithfulness"),
            answer_relevancy=values.get("answer_relevancy"),
            context_relevancy=values.get("context_relevancy"),
            judge_failures=tuple(failures),
        )


def _parse_json(content: str) -> Any:
    try:
        return json.loads(content.strip())
    except ValueError:
        raise _ContractViolation(f"reply is not valid JSON: {content[:200]!r}") from None
