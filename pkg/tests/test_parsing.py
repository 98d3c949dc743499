import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentic_nn.errors import MissingTag, UnbalancedTag, UnrecognizedVerdict
from agentic_nn.parsing import (
    VERDICT_APPROXIMATED,
    VERDICT_CORRECT,
    VERDICT_NO_ANSWER,
    VerdictKind,
    extract_tagged,
    extract_verdict,
    first_json_object,
    incorrect_verdict_text,
)


def test_selector_tag():
    assert extract_tagged("<selected_agg_func> 3 </selected_agg_func>", "selected_agg_func") == "3"


def test_missing_tag():
    with pytest.raises(MissingTag):
        extract_tagged("no tags at all", "x")


def test_unbalanced_tags():
    with pytest.raises(UnbalancedTag):
        extract_tagged("<x> never closed", "x")
    with pytest.raises(UnbalancedTag):
        extract_tagged("stray </x>", "x")


def test_first_occurrence_wins():
    assert extract_tagged("<t>one</t> then <t>two</t>", "t") == "one"


def scan_oracle(text: str, tag: str):
    """Character-by-character reference parser."""
    open_t, close_t = f"<{tag}>", f"</{tag}>"
    i = 0
    while i <= len(text) - len(open_t):
        if text[i : i + len(open_t)] == open_t:
            j = i + len(open_t)
            while j <= len(text) - len(close_t):
                if text[j : j + len(close_t)] == close_t:
                    return text[i + len(open_t) : j].strip()
                j += 1
            return "UNBALANCED"
        i += 1
    return "MISSING"


_chunk = st.one_of(
    st.text(alphabet="ab <>/\n", max_size=6),
    st.sampled_from(["<t>", "</t>", "<tt>", " x ", "</tt>"]),
)


@settings(max_examples=400, deadline=None)
@given(st.lists(_chunk, max_size=8))
def test_extract_matches_scan_oracle(chunks):
    text = "".join(chunks)
    expected = scan_oracle(text, "t")
    try:
        got = extract_tagged(text, "t")
    except UnbalancedTag:
        got = "UNBALANCED"
    except MissingTag:
        got = "MISSING"
    if expected == "MISSING" and got == "UNBALANCED":
        # a close tag without any open tag is reported as unbalanced
        assert "</t>" in text
    else:
        assert got == expected


@pytest.mark.parametrize(
    "text, kind",
    [
        (VERDICT_CORRECT, VerdictKind.CORRECT),
        (VERDICT_APPROXIMATED, VerdictKind.APPROXIMATED),
        (VERDICT_NO_ANSWER, VerdictKind.NO_ANSWER),
        ("The reply doesn’t contain an answer.", VerdictKind.NO_ANSWER),
        ("Extracted: 4\n**The answer is correct.**", VerdictKind.CORRECT),
    ],
)
def test_verdict_options(text, kind):
    assert extract_verdict(text).kind is kind


def test_incorrect_spans():
    v = extract_verdict(incorrect_verdict_text("7", "9"))
    assert (v.kind, v.ground_truth, v.extracted) == (VerdictKind.INCORRECT, "7", "9")
    assert not v.passed


def test_incorrect_labelled_without_tags():
    v = extract_verdict("The answer is incorrect. Correct Answer: 7 | Answer extracted: 9.")
    assert (v.ground_truth, v.extracted) == ("7", "9")


def test_free_prose_is_unrecognized():
    with pytest.raises(UnrecognizedVerdict):
        extract_verdict("Looks fine to me!")


@settings(max_examples=100, deadline=None)
@given(st.text(alphabet="0123456789abc.-", min_size=1, max_size=8), st.text(alphabet="0123456789xyz.-", min_size=1, max_size=8))
def test_incorrect_round_trip(gt, ex):
    v = extract_verdict(incorrect_verdict_text(gt, ex))
    assert (v.ground_truth, v.extracted) == (gt, ex)


def test_first_json_object():
    assert first_json_object('noise {"a": 1} more') == {"a": 1}
    assert first_json_object('```json\n{"b": [1]}\n```') == {"b": [1]}
    assert first_json_object("[1, 2]") is None
    assert first_json_object("nothing") is None
