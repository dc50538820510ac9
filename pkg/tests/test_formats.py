import random

import pytest
from hypothesis import given, settings, strategies as st

from formatlab.formats import (MalformedResponseError, MissingAnswerError, ParseError, ParsedResponse,
                               ResponseFormat, StructureWarning, Tokenizer, classify_format,
                               count_tokens, make_response, parse_response, render, validate_structure)

F, P, D = ResponseFormat.FULL, ResponseFormat.PERCEPTION_ONLY, ResponseFormat.DIRECT


def test_format_values_and_order():
    assert [int(k) for k in ResponseFormat] == [1, 2, 3]
    assert ResponseFormat.parse("full") is F
    assert ResponseFormat.parse("perception_only") is P
    assert ResponseFormat.parse(3) is D


def test_direct():
    r = parse_response("<answer>42</answer>")
    assert r.format is D and r.answer == "42"


def test_perception_only():
    r = parse_response("<perception>sign reads STOP</perception><answer>STOP</answer>")
    assert r.format is P
    assert r.perception == "sign reads STOP"


def test_full_with_whitespace_between_blocks():
    r = parse_response("<perception>p</perception>\n <reasoning>r</reasoning>\n<answer>a</answer>\n")
    assert r.format is F and (r.perception, r.reasoning, r.answer) == ("p", "r", "a")


def test_reasoning_without_perception_is_malformed():
    with pytest.raises(MalformedResponseError):
        parse_response("<reasoning>x</reasoning><answer>y</answer>")


@pytest.mark.parametrize("text", [
    "<answer>a",                                               # unclosed
    "<answer>a</answer><answer>b</answer>",                    # duplicated
    "<reasoning>r</reasoning><perception>p</perception><answer>a</answer>",  # misordered
    "<answer>a</answer><perception>p</perception>",            # block after answer
    "<perception>p</perception>stray<answer>a</answer>",       # text between blocks
    "lead <answer>a</answer>",                                 # text before blocks
    "</answer><answer>a</answer>",                             # stray close tag
])
def test_malformed(text):
    with pytest.raises(MalformedResponseError):
        parse_response(text)


@pytest.mark.parametrize("text", ["", "just prose", "<perception>p</perception>"])
def test_missing_answer(text):
    with pytest.raises(MissingAnswerError):
        parse_response(text)


def test_trailing_text_is_a_warning_not_an_error():
    r = parse_response("<answer>a</answer> and more")
    assert validate_structure(r) == [StructureWarning.TRAILING_TEXT]


def test_classify_format_mapping():
    assert classify_format(make_response("a", "p", "r")) is F
    assert classify_format(make_response("a", "p")) is P
    assert classify_format(make_response("a")) is D


def test_parsed_response_rejects_reasoning_without_perception():
    with pytest.raises(ValueError):
        ParsedResponse(answer="a", format=F, token_count=0, reasoning="r")


def test_count_tokens_examples():
    assert count_tokens("") == 0
    assert count_tokens("a b c") == 3
    assert count_tokens("abcdefgh", Tokenizer("chars", 4)) == 2
    assert count_tokens("abcdefghi", Tokenizer("chars", 4)) == 3
    assert count_tokens("", Tokenizer("chars", 4)) == 0


def test_tokenizer_spec_strings():
    assert Tokenizer.from_string("chars:3") == Tokenizer("chars", 3)
    assert str(Tokenizer.from_string("chars:3")) == "chars:3"
    with pytest.raises(ValueError):
        Tokenizer.from_string("bpe")


def test_token_count_covers_raw_text():
    text = "<perception>two words</perception><answer>x</answer>"
    assert parse_response(text).token_count == count_tokens(text)


def test_validate_structure():
    assert validate_structure(make_response("a", "p", "r")) == []
    nested = parse_response("<perception>see <answer> here</perception><answer>a</answer>")
    assert validate_structure(nested) == [StructureWarning.NESTED_TAG]
    empty = parse_response("<perception></perception><answer>a</answer>")
    assert validate_structure(empty) == [StructureWarning.EMPTY_SEGMENT]


segment = st.text(alphabet=st.characters(blacklist_characters="<>", blacklist_categories=("Cs",)),
                  max_size=30)


@st.composite
def responses(draw):
    fmt = draw(st.sampled_from(list(ResponseFormat)))
    p = draw(segment) if fmt != D else None
    r = draw(segment) if fmt == F else None
    return make_response(draw(segment), p, r)


@given(responses())
def test_round_trip(resp):
    back = parse_response(render(resp))
    assert classify_format(back) == resp.format
    assert (back.perception, back.reasoning, back.answer) == (resp.perception, resp.reasoning, resp.answer)


@given(st.binary(max_size=200))
def test_arbitrary_bytes_never_abort(raw):
    text = raw.decode("utf-8", errors="replace")
    try:
        r = parse_response(text)
    except ParseError:
        return
    assert r.format in tuple(ResponseFormat)


PIECES = ["<perception>", "</perception>", "<reasoning>", "</reasoning>", "<answer>", "</answer>",
          "x", " ", "\n", "<", ">", "/"]


def random_tag_soup(rng: random.Random) -> str:
    return "".join(rng.choice(PIECES) for _ in range(rng.randint(0, 12)))


@settings(max_examples=300)
@given(st.lists(st.sampled_from(PIECES), max_size=14))
def test_tag_soup_outcome_is_a_partition(pieces):
    text = "".join(pieces)
    try:
        r = parse_response(text)
    except ParseError:
        return
    # a successful parse is stable under re-rendering plus its trailing text
    assert parse_response(render(r) + r.trailing).format == r.format
