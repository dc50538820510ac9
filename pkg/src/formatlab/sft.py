"""Format assignment for supervised warm-start data.

Each sample carries a full three-block response plus verdicts from two
restricted-input tests: answering from the perception text alone, and
answering directly without intermediate steps. A sample gets the shortest
format whose test passed, or the full format when both fail; samples whose
generated answer was wrong are rejected.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Protocol

from .formats import (ParseError, ParsedResponse, ResponseFormat, Tokenizer, WHITESPACE,
                      make_response, parse_response, render)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OracleVerdicts:
    generation_correct: bool
    perception_only_pass: bool
    direct_answer_pass: bool

    @classmethod
    def from_dict(cls, d: dict) -> "OracleVerdicts":
        return cls(**{k: _strict_bool(d[k], k) for k in
                      ("generation_correct", "perception_only_pass", "direct_answer_pass")})


def _strict_bool(value, name):
    if not isinstance(value, bool):
        raise TypeError(f"verdict {name!r} must be a boolean, got {value!r}")
    return value


class Rejected(str):
    """Reason a sample produced no record."""


def assign_format(v: OracleVerdicts) -> ResponseFormat | Rejected:
    if not v.generation_correct:
        return Rejected("answer does not match the reference")
    if v.direct_answer_pass:
        return ResponseFormat.DIRECT
    if v.perception_only_pass:
        return ResponseFormat.PERCEPTION_ONLY
    return ResponseFormat.FULL


def provenance(v: OracleVerdicts) -> str:
    if v.direct_answer_pass:
        return "direct_answer_pass"
    if v.perception_only_pass:
        return "perception_only_pass"
    return "both_tests_failed"


def truncate_to_format(full: ParsedResponse, target, tok: Tokenizer = WHITESPACE) -> ParsedResponse:
    """Drop blocks from a full response; the answer is kept verbatim."""
    target = ResponseFormat.parse(target)
    if full.format != ResponseFormat.FULL:
        raise ValueError("truncation expects a full-format response")
    if target == ResponseFormat.FULL:
        return full
    perception = full.perception if target == ResponseFormat.PERCEPTION_ONLY else None
    return make_response(full.answer, perception=perception, tok=tok)


@dataclass(frozen=True)
class SftRecord:
    id: object
    question: str
    format: ResponseFormat
    response: str
    provenance: str

    def to_dict(self) -> dict:
        d = asdict(self)
        d["format"] = int(self.format)
        d["format_name"] = self.format.label
        return d


class VerdictOracle(Protocol):
    def __call__(self, sample: dict) -> OracleVerdicts: ...


def table_oracle(sample: dict) -> OracleVerdicts:
    """Verdicts recorded alongside the sample under ``"verdicts"``."""
    return OracleVerdicts.from_dict(sample["verdicts"])


def _sort_key(qid):
    return (0, qid, "") if isinstance(qid, int) else (1, 0, str(qid))


def build_records(samples: Iterable[dict], oracle: VerdictOracle = table_oracle,
                  renderer: Callable[[ParsedResponse], str] = render,
                  max_tokens: int = 2048, tok: Tokenizer = WHITESPACE):
    """Assign formats and render records.

    Returns ``(records, rejections)``: records sorted by question id, and one
    ``{"id", "reason"}`` entry per sample that produced no record. Oracle
    failures reject the sample and the pipeline continues.
    """
    records, rejections = [], []
    for sample in samples:
        qid = sample.get("id")
        try:
            verdicts = oracle(sample)
        except Exception as exc:
            log.warning("oracle failed on sample %r: %s", qid, exc)
            rejections.append({"id": qid, "reason": f"oracle failure: {exc}"})
            continue
        fmt = assign_format(verdicts)
        if isinstance(fmt, Rejected):
            rejections.append({"id": qid, "reason": str(fmt)})
            continue
        try:
            full = parse_response(sample["full_response"], tok)
        except (ParseError, KeyError, TypeError) as exc:
            rejections.append({"id": qid, "reason": f"unparseable full response: {exc}"})
            continue
        if full.format != ResponseFormat.FULL:
            rejections.append({"id": qid, "reason": f"full response is in {full.format.label} format"})
            continue
        if not full.answer.strip():
            rejections.append({"id": qid, "reason": "empty answer"})
            continue
        text = renderer(truncate_to_format(full, fmt, tok))
        reparsed = parse_response(text, tok)
        if reparsed.format != fmt:
            rejections.append({"id": qid, "reason": "rendered response does not parse back to its format"})
            continue
        if reparsed.token_count > max_tokens:
            rejections.append({"id": qid, "reason": f"response longer than {max_tokens} tokens"})
            continue
        records.append(SftRecord(qid, sample.get("question", ""), fmt, text, provenance(verdicts)))
    records.sort(key=lambda r: _sort_key(r.id))
    return records, rejections
