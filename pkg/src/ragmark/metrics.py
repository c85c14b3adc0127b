"""Deterministic reference-based text metrics and latency aggregation.

Everything in this module is a pure function over plain Python values, so
scores are reproducible across platforms and safe to call from any thread.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

# A token sequence is just a list of lowercase, whitespace-free strings as
# produced by tokenize(). All lexical metrics share this representation.
TokenSequence = list[str]

_TOKEN_RE = re.compile(r"[^\W_]+")
_SENTENCE_END_RE = re.compile(r"[.!?]+")


def tokenize(text: str) -> TokenSequence:
    """Lowercase `text` and split it on any non-alphanumeric character.

    Empty segments are dropped, so the result never contains empty tokens.
    Deliberately simple and locale-independent: this is the single tokenizer
    shared by every lexical metric and by the mock retriever.
    """
    return _TOKEN_RE.findall(text.lower())


def split_sentences(text: str) -> list[str]:
    """Split `text` into sentences on ``.``, ``!`` and ``?`` boundaries.

    Segments are stripped of surrounding whitespace; empty segments (e.g. from
    "..." or a trailing terminator) are dropped. A trailing segment without a
    terminator still counts as a sentence.
    """
    return [part.strip() for part in _SENTENCE_END_RE.split(text) if part.strip()]


def token_f1(pred: TokenSequence, ref: TokenSequence) -> float:
    """Multiset-overlap F1 between a prediction and a reference.

    With overlap o: P = o/|pred|, R = o/|ref|, F1 = 2PR/(P+R). Conventions:
    1.0 if both sequences are empty, 0.0 if exactly one is empty or o = 0.
    """
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    overlap = sum((Counter(pred) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(ref)
    return 2.0 * precision * recall / (precision + recall)


def lcs_length(a: TokenSequence, b: TokenSequence) -> int:
    """Length of the longest common subsequence, O(|a|*|b|) dynamic program."""
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token in a:
        current = [0]
        for j, other in enumerate(b, start=1):
            if token == other:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(pred: TokenSequence, ref: TokenSequence) -> float:
    """ROUGE-L with beta=1: harmonic mean of LCS-based precision and recall.

    Empty-input conventions match token_f1.
    """
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    lcs = lcs_length(pred, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(pred)
    recall = lcs / len(ref)
    return 2.0 * precision * recall / (precision + recall)


def _ngram_counts(tokens: TokenSequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(pred: TokenSequence, ref: TokenSequence) -> float:
    """Smoothed sentence BLEU against a single reference.

    Modified n-gram precisions for n = 1..N with N = min(4, |pred|, |ref|),
    add-one smoothing on both numerator and denominator of each precision,
    geometric mean across orders, and brevity penalty exp(1 - |ref|/|pred|)
    when the prediction is shorter than the reference. Returns 0.0 when
    either side is empty. Smoothing keeps short answers from collapsing to
    zero on a single missing n-gram order.
    """
    if not pred or not ref:
        return 0.0
    max_n = min(4, len(pred), len(ref))
    log_sum = 0.0
    for n in range(1, max_n + 1):
        pred_ngrams = _ngram_counts(pred, n)
        ref_ngrams = _ngram_counts(ref, n)
        matched = sum(min(count, ref_ngrams[gram]) for gram, count in pred_ngrams.items())
        total = len(pred) - n + 1
        log_sum += math.log((matched + 1) / (total + 1))
    geo_mean = math.exp(log_sum / max_n)
    brevity = 1.0 if len(pred) >= len(ref) else math.exp(1.0 - len(ref) / len(pred))
    return brevity * geo_mean


@dataclass(frozen=True)
class LatencySummary:
    """Order statistics over a set of latency samples, in milliseconds."""

    count: int
    mean_ms: float
    median_ms: float
    p95_ms: float
    min_ms: float
    max_ms: float


def latency_summary(samples: list[float]) -> LatencySummary:
    """Summarize latency samples; an empty input yields all-zero fields.

    The median is the lower-middle element for even counts and p95 is the
    nearest-rank percentile (the ceil(0.95*n)-th order statistic), computed
    with integer arithmetic so there is no floating-point rank drift.
    """
    if not samples:
        return LatencySummary(0, 0.0, 0.0, 0.0, 0.0, 0.0)
    ordered = sorted(samples)
    n = len(ordered)
    p95_rank = (95 * n + 99) // 100  # ceil(0.95 * n) exactly
    return LatencySummary(
        count=n,
        mean_ms=sum(ordered) / n,
        median_ms=ordered[(n - 1) // 2],
        p95_ms=ordered[p95_rank - 1],
        min_ms=ordered[0],
        max_ms=ordered[-1],
    )
