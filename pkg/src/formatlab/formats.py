"""Response formats, the tagged-response parser and token counting.

A response is a sequence of up to three tagged blocks in the fixed order
``<perception>``, ``<reasoning>``, ``<answer>``. Which blocks are present
determines the format:

    {perception, reasoning, answer} -> FULL
    {perception, answer}            -> PERCEPTION_ONLY
    {answer}                        -> DIRECT
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass


class ResponseFormat(enum.IntEnum):
    FULL = 1
    PERCEPTION_ONLY = 2
    DIRECT = 3

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, value) -> "ResponseFormat":
        """Accept an index (1-3), a member, or a name such as ``"direct"``."""
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            key = value.strip().lower().replace("-", "_")
            for member in cls:
                if key in (member.name.lower(), member.label, str(int(member))):
                    return member
            raise ValueError(f"unknown response format {value!r}")
        return cls(int(value))


_LABELS = {
    ResponseFormat.FULL: "full",
    ResponseFormat.PERCEPTION_ONLY: "perception_only",
    ResponseFormat.DIRECT: "direct",
}

SEGMENTS = ("perception", "reasoning", "answer")
_TAG_RE = re.compile(r"<(/?)(perception|reasoning|answer)>")


class ParseError(ValueError):
    """Base class for responses that cannot be parsed."""


class MissingAnswerError(ParseError):
    pass


class MalformedResponseError(ParseError):
    pass


class StructureWarning(str, enum.Enum):
    NESTED_TAG = "NestedTag"
    EMPTY_SEGMENT = "EmptySegment"
    TRAILING_TEXT = "TrailingText"


@dataclass(frozen=True)
class Tokenizer:
    """Deterministic token counter.

    ``mode="whitespace"`` counts whitespace-delimited units;
    ``mode="chars"`` counts ``ceil(len(text) / chars_per_token)``.
    """

    mode: str = "whitespace"
    chars_per_token: int = 4

    def __post_init__(self):
        if self.mode not in ("whitespace", "chars"):
            raise ValueError(f"unknown tokenizer mode {self.mode!r}")
        if self.chars_per_token < 1:
            raise ValueError("chars_per_token must be positive")

    @classmethod
    def from_string(cls, spec: str) -> "Tokenizer":
        """``"whitespace"`` or ``"chars:<n>"``."""
        if spec == "whitespace":
            return cls()
        if spec.startswith("chars:"):
            return cls(mode="chars", chars_per_token=int(spec.split(":", 1)[1]))
        raise ValueError(f"unknown tokenizer spec {spec!r}")

    def __str__(self) -> str:
        return "whitespace" if self.mode == "whitespace" else f"chars:{self.chars_per_token}"


WHITESPACE = Tokenizer()


def count_tokens(text: str, tok: Tokenizer = WHITESPACE) -> int:
    if tok.mode == "whitespace":
        return len(text.split())
    return math.ceil(len(text) / tok.chars_per_token)


@dataclass(frozen=True)
class ParsedResponse:
    answer: str
    format: ResponseFormat
    token_count: int
    perception: str | None = None
    reasoning: str | None = None
    trailing: str = ""

    def __post_init__(self):
        if self.reasoning is not None and self.perception is None:
            raise ValueError("reasoning segment requires a perception segment")
        if self.format != _format_of(self.perception, self.reasoning):
            raise ValueError("format does not match the segments present")


def _format_of(perception, reasoning) -> ResponseFormat:
    if perception is None:
        return ResponseFormat.DIRECT
    if reasoning is None:
        return ResponseFormat.PERCEPTION_ONLY
    return ResponseFormat.FULL


def classify_format(parsed: ParsedResponse) -> ResponseFormat:
    return _format_of(parsed.perception, parsed.reasoning)


def parse_response(text: str, tok: Tokenizer = WHITESPACE) -> ParsedResponse:
    """Parse a tagged response.

    Raises MissingAnswerError when no answer block exists and
    MalformedResponseError for unclosed, misordered or duplicated blocks,
    reasoning without perception, or stray text between blocks. Free text
    after ``</answer>`` is kept in ``trailing`` and reported by
    :func:`validate_structure`.
    """
    segments: dict[str, str] = {}
    pos = 0
    last_rank = -1
    trailing = ""
    n = len(text)
    while pos < n:
        m = _TAG_RE.search(text, pos)
        gap = text[pos : m.start()] if m else text[pos:]
        if gap.strip():
            if "answer" in segments and m is None:
                trailing = gap
                break
            if not segments and m is None:
                raise MissingAnswerError("no answer block")
            raise MalformedResponseError(f"text outside blocks at offset {pos}")
        if m is None:
            break
        closing, name = m.group(1), m.group(2)
        if closing:
            raise MalformedResponseError(f"unexpected </{name}> at offset {m.start()}")
        if name in segments:
            raise MalformedResponseError(f"duplicated <{name}> block")
        rank = SEGMENTS.index(name)
        if rank < last_rank:
            raise MalformedResponseError(f"<{name}> block out of order")
        close = f"</{name}>"
        end = text.find(close, m.end())
        if end < 0:
            raise MalformedResponseError(f"unclosed <{name}> block")
        segments[name] = text[m.end() : end]
        last_rank = rank
        pos = end + len(close)

    if "answer" not in segments:
        raise MissingAnswerError("no answer block")
    if "reasoning" in segments and "perception" not in segments:
        raise MalformedResponseError("reasoning block without perception block")
    perception = segments.get("perception")
    reasoning = segments.get("reasoning")
    return ParsedResponse(
        answer=segments["answer"],
        format=_format_of(perception, reasoning),
        token_count=count_tokens(text, tok),
        perception=perception,
        reasoning=reasoning,
        trailing=trailing,
    )


def validate_structure(parsed: ParsedResponse) -> list[StructureWarning]:
    """Structural checks only: nested tag literals, empty blocks, trailing text."""
    warnings = []
    present = [s for s in (parsed.perception, parsed.reasoning, parsed.answer) if s is not None]
    if any(_TAG_RE.search(s) for s in present):
        warnings.append(StructureWarning.NESTED_TAG)
    if any(not s.strip() for s in present):
        warnings.append(StructureWarning.EMPTY_SEGMENT)
    if parsed.trailing.strip():
        warnings.append(StructureWarning.TRAILING_TEXT)
    return warnings


def render(parsed: ParsedResponse) -> str:
    """Canonical byte-literal rendering in perception, reasoning, answer order."""
    parts = []
    if parsed.perception is not None:
        parts.append(f"<perception>{parsed.perception}</perception>")
    if parsed.reasoning is not None:
        parts.append(f"<reasoning>{parsed.reasoning}</reasoning>")
    parts.append(f"<answer>{parsed.answer}</answer>")
    return "".join(parts)


def make_response(
    answer: str,
    perception: str | None = None,
    reasoning: str | None = None,
    tok: Tokenizer = WHITESPACE,
) -> ParsedResponse:
    """Build a ParsedResponse from segments, counting tokens of its rendering."""
    fmt = _format_of(perception, reasoning)
    draft = ParsedResponse(answer=answer, format=fmt, token_count=0,
                           perception=perception, reasoning=reasoning)
    return ParsedResponse(answer=answer, format=fmt, token_count=count_tokens(render(draft), tok),
                          perception=perception, reasoning=reasoning)
