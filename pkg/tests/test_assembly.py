"""Dialogue splitting on timestamp gaps and the cleaning filters."""
import pytest
from hypothesis import given, strategies as st

from subdial.assembly import (
    CLEANED,
    RAW,
    CleaningConfig,
    CleaningReport,
    Dialogue,
    Turn,
    clean_dialogues,
    dialogue_from_record,
    dialogue_record,
    split_dialogues,
    strip_name_prefixes,
)


def _turn(text, start=None, end=None, doc="d"):
    return Turn(text, start, end, doc)


def _turns_with_gaps(gaps):
    """First turn at [0, 1000]; each gap shifts the next turn's start."""
    turns = [_turn("t0", 0, 1000)]
    t = 1000
    for i, gap in enumerate(gaps, start=1):
        if gap is None:
            turns.append(_turn(f"t{i}", None, None))
            t += 2000
        else:
            start = t + gap
            turns.append(_turn(f"t{i}", start, start + 1000))
            t = start + 1000
    return turns


def test_gap_over_5s_splits():
    dialogues = split_dialogues(_turns_with_gaps([6000]))
    assert [len(d.turns) for d in dialogues] == [1, 1]
    assert all(d.provenance == RAW for d in dialogues)


def test_gap_exactly_5s_merges():
    dialogues = split_dialogues(_turns_with_gaps([5000]))
    assert [len(d.turns) for d in dialogues] == [1, 2][1:]


def test_gap_5001_splits():
    assert len(split_dialogues(_turns_with_gaps([5001]))) == 2


def test_missing_timestamp_merges():
    turns = [_turn("a", 0, None), _turn("b", 99_000, 100_000)]
    assert len(split_dialogues(turns)) == 1
    turns = [_turn("a", 0, 1000), _turn("b", None, None)]
    assert len(split_dialogues(turns)) == 1


def test_doc_change_splits():
    turns = [_turn("a", 0, 1000, doc="d1"), _turn("b", 1500, 2000, doc="d2")]
    dialogues = split_dialogues(turns)
    assert [d.doc_id for d in dialogues] == ["d1", "d2"]
    assert [d.dialogue_id for d in dialogues] == ["d1#0", "d2#0"]


@given(st.lists(st.one_of(st.none(), st.integers(min_value=0, max_value=20_000)), max_size=12))
def test_split_partitions_turns(gaps):
    turns = _turns_with_gaps(gaps)
    dialogues = split_dialogues(turns)
    flat = [t for d in dialogues for t in d.turns]
    assert flat == turns


# --- cleaning ---


def _dlg(texts, dialogue_id="d#0"):
    turns = tuple(_turn(t, 1000 * i, 1000 * i + 500) for i, t in enumerate(texts))
    return Dialogue(dialogue_id, "d", turns, provenance=RAW)


def _clean(texts_per_dialogue, config=None):
    dialogues = [_dlg(texts, f"d#{i}") for i, texts in enumerate(texts_per_dialogue)]
    return clean_dialogues(dialogues, config)


def test_short_turn_drops_dialogue_via_suffix_rule():
    cleaned, report = _clean([["How are you?", "x", "Fine."]])
    assert cleaned == []
    assert report.removed_char_length == 1
    assert report.dropped_suffix_turns == 1
    assert report.dropped_single_turn_dialogues == 1  # "How are you?" alone


def test_alpha_ratio_hand_count():
    # "ab1!?": 2 alphabetic of 5 non-space chars = 0.40 < 0.60
    cleaned, report = _clean([["Hello there.", "ab1!?", "More text."]])
    assert cleaned == []
    assert report.removed_alpha_ratio == 1


def test_alpha_ratio_spaces_excluded():
    # "so so so!": 6 alphabetic, 7 non-space -> 0.857 passes
    cleaned, report = _clean([["so so so!", "and then?"]])
    assert len(cleaned) == 1
    assert report.removed_alpha_ratio == 0


def test_exact_duplicate_dialogues_are_deduped():
    cleaned, report = _clean([["Hi there.", "Bye now."], ["Hi there.", "Bye now."]])
    assert len(cleaned) == 1
    assert report.deduped_dialogues == 1
    assert report.removed_duplicate_dialogue_turns == 2


def test_long_turn_removed():
    long_text = "a" * 101
    cleaned, report = _clean([["Hello there.", long_text, "Bye."]])
    assert cleaned == []
    assert report.removed_char_length == 1


def test_100_chars_is_kept():
    words = [chr(97 + i) * 3 for i in range(25)]  # aaa bbb ... yyy
    text = "a" + " ".join(words)
    assert len(text) == 100
    cleaned, report = _clean([["Hello there?", text]])
    assert len(cleaned) == 1 and report.removed_char_length == 0
    cleaned, report = _clean([["Hello there?", text + "z"]])
    assert cleaned == [] and report.removed_char_length == 1


def test_recap_turn_removed_case_insensitive():
    cleaned, report = _clean([["Previously on Lost.", "Hi.", "Bye."]])
    assert cleaned == []
    assert report.removed_recap == 1
    assert report.dropped_suffix_turns == 2


def test_repetitive_turn_removed():
    spam = "no no no no no no no yes yes maybe"  # 10 tokens, "no" share 0.7
    cleaned, report = _clean([["Hello there.", spam, "Bye now."]])
    assert cleaned == []
    assert report.removed_repetitive == 1


def test_repetitive_needs_10_tokens():
    short_spam = "no no no no no"
    cleaned, report = _clean([["Hello there.", short_spam]])
    assert len(cleaned) == 1
    assert report.removed_repetitive == 0


def test_adjacent_duplicate_turn_removed():
    cleaned, report = _clean([["Get down!", "Get down!", "Okay okay.", "Fine."]])
    assert cleaned == []  # duplicate kills turn 2 and the suffix
    assert report.removed_duplicate == 1
    assert report.dropped_suffix_turns == 2


def test_name_prefix_stripped_but_turn_kept():
    cleaned, report = _clean([["JOHN: Get out.", "Mary Jane: Why now?"]])
    assert [t.text for t in cleaned[0].turns] == ["Get out.", "Why now?"]
    assert report.stripped_names == 2
    assert report.removed_names == 0


def test_name_only_turn_removed():
    cleaned, report = _clean([["Hello there.", "JOHN:", "Bye."]])
    assert cleaned == []
    assert report.removed_names == 1


def test_lowercase_colon_prefix_not_stripped():
    cleaned, _ = _clean([["here's the thing: go.", "i see."]])
    assert [t.text for t in cleaned[0].turns] == ["here's the thing: go.", "i see."]


def test_strip_name_prefixes_is_iterative():
    assert strip_name_prefixes("JOHN: MARY: hi there") == ("hi there", True)
    assert strip_name_prefixes("No names here.") == ("No names here.", False)
    assert strip_name_prefixes("Four Word Name Here: hi") == ("Four Word Name Here: hi", False)


def test_single_turn_dialogue_dropped():
    cleaned, report = _clean([["Only one turn here."]])
    assert cleaned == []
    assert report.dropped_single_turn_dialogues == 1


def test_cleaned_turns_are_a_prefix():
    texts = ["First turn here.", "Second turn here.", "x", "Fourth."]
    raw = _dlg(texts + [])
    raw2 = _dlg(["First turn here.", "Second turn here.", "Third turn fine."], "d#1")
    cleaned, _ = clean_dialogues([raw, raw2])
    for out in cleaned:
        source = raw if out.dialogue_id == "d#0" else raw2
        n = len(out.turns)
        assert out.turn_texts() == source.turn_texts()[:n]
        assert out.provenance == CLEANED


_texts = st.lists(
    st.one_of(
        st.sampled_from(
            [
                "Hello there.",
                "How are you?",
                "x",
                "ab1!?",
                "JOHN: Get out.",
                "Previously on Lost.",
                "no no no no no no no yes yes maybe",
                "a" * 120,
                "Fine.",
                "Fine.",
            ]
        ),
        st.text(alphabet="abc .!", min_size=1, max_size=20).map(str.strip).filter(bool),
    ),
    min_size=1,
    max_size=6,
)


@given(st.lists(_texts, min_size=1, max_size=5))
def test_cleaning_is_idempotent_and_balanced(texts_per_dialogue):
    dialogues = [_dlg(t, f"d#{i}") for i, t in enumerate(texts_per_dialogue)]
    once, report = clean_dialogues(dialogues)
    twice, report2 = clean_dialogues(once)
    assert [d.turn_texts() for d in twice] == [d.turn_texts() for d in once]
    assert report2.removed_turn_total() == 0
    assert report.input_turns - report.output_turns == report.removed_turn_total()


def test_report_dict_has_all_counters():
    _, report = _clean([["Hi there.", "Bye now."]])
    d = report.as_dict()
    assert d["input_turns"] == 2 and d["output_turns"] == 2
    assert isinstance(report, CleaningReport)


def test_dialogue_record_roundtrip():
    d = _dlg(["Hi there.", "Bye now."])
    cleaned, _ = clean_dialogues([d])
    rec = dialogue_record(cleaned[0])
    assert rec["provenance"] == CLEANED
    assert dialogue_from_record(rec) == cleaned[0]


def test_cleaned_dialogue_requires_two_turns():
    with pytest.raises(ValueError):
        Dialogue("x", "d", (Turn("hi", None, None, "d"),), provenance=CLEANED)


def test_repetitive_threshold_configurable():
    spam = "go go go go go stop stop stop stop stop"  # share exactly 0.5
    cleaned, report = _clean([["Hello there.", spam]])
    assert len(cleaned) == 1  # 0.5 is not > 0.5
    strict = CleaningConfig(repetitive_max_share=0.4)
    cleaned, report = _clean([["Hello there.", spam]], strict)
    assert cleaned == [] and report.removed_repetitive == 1
