import logging

import pytest

from subdial.assembly import EMOTIONAL, Dialogue, Turn
from subdial.classifier import ClassifierConfig, Prediction, new_model
from subdial.labeling import (
    SelectedTurn,
    TurnLabel,
    dialogue_confidence,
    dialogue_labeler,
    filter_emotional,
    label_turns,
    select_high_confidence,
    turn_label_from_record,
    turn_label_record,
)
from subdial.taxonomy import EMOTION, INTENT, LabelTaxonomy, default_taxonomy

TAX = LabelTaxonomy(
    labels=(("Joyful", EMOTION), ("Sad", EMOTION), ("Questioning", INTENT))
)
NAMES = TAX.names()


def _pred(label: str, conf: float) -> Prediction:
    # spread the remainder evenly so `label` stays the strict argmax
    rest = (1.0 - conf) / (len(NAMES) - 1)
    dist = tuple(conf if n == label else rest for n in NAMES)
    return Prediction(top=label, confidence=conf, distribution=dist, labels=NAMES)


def _dlg(dialogue_id: str, texts: list[str]) -> Dialogue:
    turns = tuple(Turn(t, None, None, "doc") for t in texts)
    return Dialogue(dialogue_id, "doc", turns)


def _stub_labeler(table: dict):
    def labeler(dialogue):
        return [_pred(lab, conf) for lab, conf in table[dialogue.dialogue_id]]

    return labeler


def test_threshold_is_inclusive():
    d = _dlg("d#1", ["one two", "three four"])
    labeler = _stub_labeler({"d#1": [("Joyful", 0.9), ("Sad", 0.8999)]})
    selected = select_high_confidence([d], labeler, threshold=0.9)
    assert [(s.turn_index, s.label) for s in selected] == [(0, "Joyful")]
    assert selected[0].confidence == 0.9


def test_selected_turn_carries_its_history():
    d = _dlg("d#1", ["a b", "c d", "e f", "g h"])
    labeler = _stub_labeler(
        {"d#1": [("Sad", 0.4), ("Sad", 0.4), ("Joyful", 0.95), ("Sad", 0.4)]}
    )
    (sel,) = select_high_confidence([d], labeler, threshold=0.9)
    assert sel.turn_index == 2
    assert sel.turns == d.turns[:3]
    assert sel.dialogue_id == "d#1"


def test_selected_turn_rejects_wrong_history_length():
    d = _dlg("d#1", ["a b", "c d"])
    with pytest.raises(ValueError):
        SelectedTurn("d#1", 1, "Joyful", 0.9, turns=d.turns[:1])


def test_label_turns_flattens_in_order():
    d1 = _dlg("d#1", ["a b", "c d"])
    d2 = _dlg("d#2", ["e f", "g h"])
    labeler = _stub_labeler(
        {
            "d#1": [("Joyful", 0.7), ("Sad", 0.6)],
            "d#2": [("Questioning", 0.8), ("Joyful", 0.9)],
        }
    )
    got = label_turns([d1, d2], labeler)
    assert got == [
        TurnLabel("d#1", 0, "Joyful", 0.7),
        TurnLabel("d#1", 1, "Sad", 0.6),
        TurnLabel("d#2", 0, "Questioning", 0.8),
        TurnLabel("d#2", 1, "Joyful", 0.9),
    ]


def test_turn_label_record_roundtrip():
    tl = TurnLabel("d#3", 2, "Sad", 0.75)
    assert turn_label_from_record(turn_label_record(tl)) == tl


def test_dialogue_labeler_wraps_untrained_model():
    tax = default_taxonomy()
    model = new_model(tax, ClassifierConfig(dim=8, hash_bits=10))
    d = _dlg("d#1", ["Hello there.", "Hi."])
    preds = dialogue_labeler(model)(d)
    assert len(preds) == 2
    assert all(abs(p.confidence - 1 / 41) < 1e-3 for p in preds)


def test_aggregation_strategies():
    preds = [_pred("Joyful", 0.9), _pred("Questioning", 0.5)]
    assert dialogue_confidence(preds, TAX, "mean") == pytest.approx(0.7)
    assert dialogue_confidence(preds, TAX, "min") == pytest.approx(0.5)
    assert dialogue_confidence(preds, TAX, "max") == pytest.approx(0.9)
    # intent confidence counts half: (0.9 + 0.25) / 2
    assert dialogue_confidence(preds, TAX) == pytest.approx(0.575)
    with pytest.raises(ValueError):
        dialogue_confidence(preds, TAX, "median")


def test_intent_discount_is_configurable():
    preds = [_pred("Questioning", 0.8)]
    assert dialogue_confidence(preds, TAX, intent_discount=1.0) == pytest.approx(0.8)
    assert dialogue_confidence(preds, TAX, intent_discount=0.0) == pytest.approx(0.0)


def test_filter_prefers_confident_dialogue():
    table = {
        "d#1": [("Joyful", 0.9), ("Sad", 0.9)],
        "d#2": [("Joyful", 0.5), ("Sad", 0.5)],
    }
    dialogues = [_dlg(i, ["a b", "c d"]) for i in table]
    kept = filter_emotional(dialogues, _stub_labeler(table), 1, TAX)
    assert [d.dialogue_id for d in kept] == ["d#1"]
    assert kept[0].provenance == EMOTIONAL
    assert kept[0].turn_texts() == dialogues[0].turn_texts()


def test_filter_with_n_equal_corpus_keeps_everything():
    table = {
        "d#1": [("Joyful", 0.9), ("Sad", 0.9)],
        "d#2": [("Joyful", 0.5), ("Sad", 0.5)],
    }
    dialogues = [_dlg(i, ["a b", "c d"]) for i in table]
    kept = filter_emotional(dialogues, _stub_labeler(table), 2, TAX)
    assert {d.dialogue_id for d in kept} == {"d#1", "d#2"}


def test_filter_ranks_intent_heavy_dialogues_lower():
    # emotion-weighted means: d#a 0.8, d#b 0.475, d#c 0.675
    table = {
        "d#a": [("Joyful", 0.8), ("Sad", 0.8)],
        "d#b": [("Questioning", 0.95), ("Questioning", 0.95)],
        "d#c": [("Joyful", 0.9), ("Questioning", 0.9)],
    }
    dialogues = [_dlg(i, ["a b", "c d"]) for i in table]
    labeler = _stub_labeler(table)
    kept = filter_emotional(dialogues, labeler, 3, TAX)
    assert [d.dialogue_id for d in kept] == ["d#a", "d#c", "d#b"]
    # plain mean ranks the confident intent dialogue first instead
    kept = filter_emotional(dialogues, labeler, 3, TAX, strategy="mean")
    assert [d.dialogue_id for d in kept] == ["d#b", "d#c", "d#a"]


def test_filter_breaks_score_ties_by_id():
    table = {
        "d#2": [("Joyful", 0.7), ("Sad", 0.7)],
        "d#1": [("Sad", 0.7), ("Joyful", 0.7)],
    }
    dialogues = [_dlg(i, ["a b", "c d"]) for i in table]
    kept = filter_emotional(dialogues, _stub_labeler(table), 2, TAX)
    assert [d.dialogue_id for d in kept] == ["d#1", "d#2"]


def test_filter_warns_when_asking_for_too_many(caplog):
    table = {"d#1": [("Joyful", 0.9), ("Sad", 0.9)]}
    dialogues = [_dlg("d#1", ["a b", "c d"])]
    with caplog.at_level(logging.WARNING, logger="subdial.labeling"):
        kept = filter_emotional(dialogues, _stub_labeler(table), 5, TAX)
    assert len(kept) == 1
    assert any("top 5 of 1" in r.getMessage() for r in caplog.records)
