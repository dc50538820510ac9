"""Overthinking scores, format usage reports and collapse detection."""

from __future__ import annotations

import concurrent.futures
import re
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from .formats import (ParseError, ResponseFormat, Tokenizer, WHITESPACE, count_tokens,
                      parse_response)

# Fractions of scored instances with score > 3 and within [1, 3] reported for
# the original study; shown next to computed buckets for context only.
REFERENCE_BUCKETS = {"gt3": 0.354, "1to3": 0.418}

BUCKETS = ("lt1", "1to3", "gt3")


class EligibilityError(ValueError):
    """The pair cannot be scored because one of its responses is incorrect."""


@dataclass(frozen=True)
class ScorePair:
    original_text: str
    compressed_text: str
    correct_original: bool
    correct_compressed: bool
    T_original: int
    T_compressed: int

    @classmethod
    def from_texts(cls, original: str, compressed: str, correct_original: bool,
                   correct_compressed: bool, tok: Tokenizer = WHITESPACE) -> "ScorePair":
        return cls(original, compressed, correct_original, correct_compressed,
                   count_tokens(original, tok), count_tokens(compressed, tok))

    @property
    def eligible(self) -> bool:
        return self.correct_original and self.correct_compressed and self.T_compressed >= 1


def overthinking_score(pair: ScorePair) -> float:
    if not (pair.correct_original and pair.correct_compressed):
        raise EligibilityError("both the original and the compressed response must be correct")
    if pair.T_compressed < 1:
        raise EligibilityError("compressed response has no tokens")
    return pair.T_original / pair.T_compressed


def bucket_of(score: float) -> str:
    if score < 1.0:
        return "lt1"
    if score <= 3.0:
        return "1to3"
    return "gt3"


def score_histogram(scores: Iterable[float]) -> dict:
    """Bucket counts and fractions for ``<1``, ``[1, 3]`` and ``>3``; {} for no scores."""
    counts = dict.fromkeys(BUCKETS, 0)
    for s in scores:
        counts[bucket_of(s)] += 1
    n = sum(counts.values())
    if n == 0:
        return {}
    return {"n": n, "counts": counts, "fractions": {b: counts[b] / n for b in BUCKETS}}


def token_delta(tok_baseline: float, tok_new: float) -> float:
    """Relative token reduction in percent; positive means fewer tokens."""
    if tok_baseline <= 0:
        raise ValueError("baseline token count must be positive")
    return (tok_baseline - tok_new) / tok_baseline * 100.0


def acc_delta(acc_baseline: float, acc_new: float) -> float:
    """Absolute accuracy change in percentage points."""
    return acc_new - acc_baseline


@dataclass
class FormatReport:
    n: int = 0
    n_unparsed: int = 0
    usage: dict = field(default_factory=dict)
    accuracy: dict = field(default_factory=dict)
    correct_share: dict = field(default_factory=dict)
    mean_tokens: dict = field(default_factory=dict)
    overall_accuracy: float | None = None
    overall_mean_tokens: float | None = None

    @property
    def empty(self) -> bool:
        return self.n == 0

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "n_unparsed": self.n_unparsed,
            "usage": self.usage,
            "accuracy": self.accuracy,
            "correct_share": self.correct_share,
            "mean_tokens": self.mean_tokens,
            "overall_accuracy": self.overall_accuracy,
            "overall_mean_tokens": self.overall_mean_tokens,
        }


def format_report(rollouts: Iterable[tuple]) -> FormatReport:
    """Usage ratio, accuracy, correct share and mean tokens per format.

    ``rollouts`` holds ``(format | None, correct, n_tok)``; rollouts without a
    format are counted in ``n_unparsed`` and left out of every ratio.
    ``correct_share[k]`` is the fraction of all parsed rollouts that used
    format k and were correct. Per-format accuracy is None for unused formats.
    """
    rows = list(rollouts)
    parsed = [(ResponseFormat(int(f)), bool(c), int(n)) for f, c, n in rows if f is not None]
    rep = FormatReport(n=len(parsed), n_unparsed=len(rows) - len(parsed))
    if not parsed:
        return rep
    for k in ResponseFormat:
        sel = [(c, n) for f, c, n in parsed if f == k]
        rep.usage[k.label] = len(sel) / rep.n
        rep.correct_share[k.label] = sum(c for c, _ in sel) / rep.n
        rep.accuracy[k.label] = (sum(c for c, _ in sel) / len(sel)) if sel else None
        rep.mean_tokens[k.label] = (sum(n for _, n in sel) / len(sel)) if sel else None
    rep.overall_accuracy = sum(c for _, c, _ in parsed) / rep.n
    rep.overall_mean_tokens = sum(n for _, _, n in parsed) / rep.n
    return rep


def detect_collapse(usage: Sequence[Sequence[float]] | object, threshold: float = 0.9,
                    window: int = 10, steps: Sequence[int] | None = None):
    """Earliest onset of a run of ``window`` consecutive steps where one format
    holds at least ``threshold`` of usage.

    ``usage`` is a [n_steps, 3] array of per-format frequencies or a training
    history. Returns ``(ResponseFormat, onset_step)`` or None.
    """
    if not 0.5 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0.5, 1]")
    if window < 1:
        raise ValueError("window must be at least 1")
    if hasattr(usage, "usage") and callable(usage.usage):
        steps = [r.step for r in usage] if steps is None else steps
        usage = usage.usage()
    u = np.asarray(usage, dtype=float).reshape(-1, 3)
    steps = list(range(len(u))) if steps is None else list(steps)
    run_fmt, run_len = None, 0
    for i, row in enumerate(u):
        top = int(np.argmax(row))
        fmt = top if row[top] >= threshold else None
        if fmt is not None and fmt == run_fmt:
            run_len += 1
        else:
            run_fmt, run_len = fmt, (1 if fmt is not None else 0)
        if run_fmt is not None and run_len >= window:
            return ResponseFormat(run_fmt + 1), steps[i - window + 1]
    return None


class CompressorClient(Protocol):
    def compress(self, question: str, response: str) -> str: ...

    def judge(self, answer: str, reference: str) -> bool: ...


def _normalise(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip().lower()


class StubCompressor:
    """Deterministic offline compressor.

    ``compress`` keeps only the answer block of a tagged response (falling back
    to the last non-empty line for untagged text); ``judge`` is normalised
    exact match.
    """

    def compress(self, question: str, response: str) -> str:
        return extract_answer(response)

    def judge(self, answer: str, reference: str) -> bool:
        return _normalise(answer) == _normalise(reference)


def extract_answer(response: str) -> str:
    try:
        return parse_response(response).answer.strip()
    except ParseError:
        lines = [ln.strip() for ln in response.splitlines() if ln.strip()]
        return lines[-1] if lines else ""


def compress_corpus(records: list[dict], client: CompressorClient, max_in_flight: int = 8) -> list[dict]:
    """Fill missing ``compressed`` / ``correct_compressed`` fields.

    Calls run on a bounded thread pool; results are written back by index,
    so output order matches input order.
    """
    todo = [i for i, r in enumerate(records) if r.get("compressed") is None]

    def work(i):
        rec = records[i]
        compressed = client.compress(rec.get("question", ""), rec["original"])
        reference = rec.get("reference", extract_answer(rec["original"]))
        return i, compressed, client.judge(extract_answer(compressed), reference)

    out = [dict(r) for r in records]
    with concurrent.futures.ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        for i, compressed, ok in pool.map(work, todo):
            out[i]["compressed"] = compressed
            out[i]["correct_compressed"] = ok
    return out


def overthinking_report(records: list[dict], tok: Tokenizer = WHITESPACE) -> dict:
    """Score a corpus of ``{"original", "compressed", "correct_original", "correct_compressed"}`` records."""
    scores, anomalies, ineligible = [], [], []
    for i, rec in enumerate(records):
        if rec.get("compressed") is None:
            ineligible.append({"index": i, "reason": "no compressed response"})
            continue
        pair = ScorePair.from_texts(rec["original"], rec["compressed"],
                                    bool(rec["correct_original"]),
                                    bool(rec.get("correct_compressed", False)), tok)
        try:
            s = overthinking_score(pair)
        except EligibilityError as exc:
            ineligible.append({"index": i, "reason": str(exc)})
            continue
        scores.append(s)
        if s < 1.0:
            anomalies.append({"index": i, "score": s})
    return {
        "tokenizer": str(tok),
        "n_records": len(records),
        "n_eligible": len(scores),
        "n_ineligible": len(ineligible),
        "histogram": score_histogram(scores),
        "mean_score": float(np.mean(scores)) if scores else None,
        "anomalies": anomalies,
        "ineligible": ineligible,
        "reference_fractions": REFERENCE_BUCKETS,
    }


def format_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Left-aligned plain-text table."""
    cells = [[str(h) for h in header]] + [["-" if v is None else
                                           (f"{v:.4f}" if isinstance(v, float) else str(v)) for v in r]
                                          for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
