import numpy as np
import pytest
from hypothesis import given, strategies as st

from formatlab.diagnostics import (REFERENCE_BUCKETS, EligibilityError, ScorePair, StubCompressor,
                                   acc_delta, bucket_of, compress_corpus, detect_collapse, extract_answer,
                                   format_report, format_table, overthinking_report, overthinking_score,
                                   score_histogram, token_delta)
from formatlab.formats import ResponseFormat, Tokenizer

F, P, D = ResponseFormat.FULL, ResponseFormat.PERCEPTION_ONLY, ResponseFormat.DIRECT


def _pair(t_orig, t_comp, ok_orig=True, ok_comp=True):
    return ScorePair("", "", ok_orig, ok_comp, t_orig, t_comp)


def test_score_examples():
    assert overthinking_score(_pair(300, 100)) == 3.0
    assert overthinking_score(_pair(120, 120)) == 1.0
    with pytest.raises(EligibilityError):
        overthinking_score(_pair(300, 100, ok_comp=False))
    with pytest.raises(EligibilityError):
        overthinking_score(_pair(300, 100, ok_orig=False))
    with pytest.raises(EligibilityError):
        overthinking_score(_pair(300, 0))


def test_histogram_examples():
    h = score_histogram([0.5, 2.0, 4.0])
    assert h["fractions"] == {"lt1": 1 / 3, "1to3": 1 / 3, "gt3": 1 / 3}
    assert score_histogram([3.0])["counts"] == {"lt1": 0, "1to3": 1, "gt3": 0}
    assert bucket_of(1.0) == "1to3" and bucket_of(3.0000001) == "gt3" and bucket_of(0.999) == "lt1"
    assert score_histogram([]) == {}
    assert REFERENCE_BUCKETS == {"gt3": 0.354, "1to3": 0.418}


@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=50))
def test_histogram_partition(scores):
    h = score_histogram(scores)
    assert abs(sum(h["fractions"].values()) - 1.0) <= 1e-12
    assert sum(h["counts"].values()) == len(scores)


@given(st.integers(1, 200), st.integers(1, 200), st.integers(1, 6))
def test_scale_invariance_under_tokenizer_swap(n_orig, n_comp, width):
    # fixed-width words: a chars tokenizer with c = width + 1 counts exactly one token per word,
    # and c = 1 counts width + 1 tokens per word
    word = "x" * width + " "
    orig, comp = word * n_orig, word * n_comp
    ws = overthinking_score(ScorePair.from_texts(orig, comp, True, True, Tokenizer()))
    for c in (1, width + 1):
        ch = overthinking_score(ScorePair.from_texts(orig, comp, True, True, Tokenizer("chars", c)))
        assert ch == pytest.approx(ws, rel=1e-12)


def test_metric_deltas():
    assert token_delta(478.6, 72.1) == pytest.approx(84.935, abs=0.01)
    assert token_delta(100, 100) == 0.0
    assert token_delta(100, 200) == -100.0
    with pytest.raises(ValueError):
        token_delta(0, 10)
    assert acc_delta(78.3, 81.4) == pytest.approx(3.1, abs=1e-9)
    assert acc_delta(55.5, 55.5) == 0.0
    assert acc_delta(73.2, 79.8) == pytest.approx(6.6, abs=1e-9)


FIXTURE = [(F, True, 300), (F, False, 500), (P, True, 100), (P, True, 150), (P, False, 120),
           (D, True, 10), (D, False, 8), (None, True, 5)]


def test_format_report_fixture():
    rep = format_report(FIXTURE)
    # tabulated by hand over the 7 parsed rollouts
    assert rep.n == 7 and rep.n_unparsed == 1
    assert rep.usage == pytest.approx({"full": 2 / 7, "perception_only": 3 / 7, "direct": 2 / 7})
    assert rep.accuracy == pytest.approx({"full": 0.5, "perception_only": 2 / 3, "direct": 0.5})
    assert rep.correct_share == pytest.approx({"full": 1 / 7, "perception_only": 2 / 7, "direct": 1 / 7})
    assert rep.mean_tokens == pytest.approx({"full": 400.0, "perception_only": 370 / 3, "direct": 9.0})
    assert rep.overall_accuracy == pytest.approx(4 / 7)
    assert rep.overall_mean_tokens == pytest.approx(1188 / 7)


def test_format_report_edge_cases():
    rep = format_report([(D, True, 3)] * 4)
    assert rep.usage == {"full": 0.0, "perception_only": 0.0, "direct": 1.0}
    assert rep.accuracy == {"full": None, "perception_only": None, "direct": 1.0}
    assert format_report([]).empty


@given(st.lists(st.tuples(st.sampled_from(list(ResponseFormat)), st.booleans(), st.integers(0, 999)),
                min_size=1, max_size=40))
def test_report_consistency(rows):
    rep = format_report(rows)
    assert abs(sum(rep.usage.values()) - 1.0) <= 1e-9
    weighted = sum(rep.usage[k] * (rep.accuracy[k] or 0.0) for k in rep.usage)
    assert weighted == pytest.approx(rep.overall_accuracy, abs=1e-12)


def _rising_direct():
    u = []
    for t in range(80):
        d = 1 / 3 + (0.85 - 1 / 3) * t / 39 if t < 40 else 0.95
        u.append(((1 - d) / 2, (1 - d) / 2, d))
    return np.array(u)


def test_collapse_examples():
    assert detect_collapse([(1.0, 0.0, 0.0)] * 20) == (F, 0)
    assert detect_collapse([(1 / 3, 1 / 3, 1 / 3)] * 50) is None
    assert detect_collapse(_rising_direct(), threshold=0.9, window=10) == (D, 40)
    # a run too short for the window does not count
    short = [(0, 0, 1.0)] * 9 + [(0.5, 0.5, 0)] + [(0, 0, 1.0)] * 10
    assert detect_collapse(short) == (D, 10)
    with pytest.raises(ValueError):
        detect_collapse(short, threshold=0.5)


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=60),
       st.floats(0.51, 0.99), st.floats(0.0, 0.4), st.integers(1, 8))
def test_collapse_monotone_in_threshold(rows, lo, bump, window):
    u = np.array(rows) + 1e-9
    u = u / u.sum(axis=1, keepdims=True)
    hi = min(1.0, lo + bump)
    a, b = detect_collapse(u, lo, window), detect_collapse(u, hi, window)
    if a is None:
        assert b is None
    elif b is not None:
        assert b[1] >= a[1]


def test_stub_compressor_and_corpus():
    recs = [
        {"question": "q", "original": "<perception>p</perception><reasoning>r r r</reasoning><answer>7</answer>",
         "correct_original": True},
        {"question": "q", "original": "long explanation\nso the answer is\n9", "correct_original": True,
         "reference": "9"},
        {"question": "q", "original": "<answer>3</answer>", "compressed": "<answer>3</answer>",
         "correct_original": True, "correct_compressed": True},
    ]
    out = compress_corpus(recs, StubCompressor(), max_in_flight=2)
    assert [r["compressed"] for r in out] == ["7", "9", "<answer>3</answer>"]
    assert all(r["correct_compressed"] for r in out)
    assert out == compress_corpus(recs, StubCompressor(), max_in_flight=1)
    assert "compressed" not in recs[0]
    assert extract_answer("") == ""


def test_overthinking_report_fixture():
    # originals of 6, 2 and 9 words against compressions of 2, 2 and 2 -> scores 3.0, 1.0, 4.5
    recs = [
        {"original": "a b c d e f", "compressed": "a b", "correct_original": True, "correct_compressed": True},
        {"original": "a b", "compressed": "a b", "correct_original": True, "correct_compressed": True},
        {"original": "a b c d e f g h i", "compressed": "a b", "correct_original": True,
         "correct_compressed": True},
        {"original": "a", "compressed": "a b c", "correct_original": True, "correct_compressed": True},
        {"original": "a b", "compressed": "a", "correct_original": True, "correct_compressed": False},
        {"original": "a b", "correct_original": False},
    ]
    rep = overthinking_report(recs)
    assert rep["n_eligible"] == 4 and rep["n_ineligible"] == 2
    assert rep["histogram"]["counts"] == {"lt1": 1, "1to3": 2, "gt3": 1}
    assert [a["index"] for a in rep["anomalies"]] == [3]
    empty = overthinking_report(recs[4:])
    assert empty["n_eligible"] == 0 and empty["histogram"] == {}


def test_format_table():
    text = format_table(["a", "bb"], [[1, 0.5], ["xyz", None]])
    assert text.splitlines() == ["a    bb", "---  ------", "1    0.5000", "xyz  -"]
