"""Turn labeling, confidence-based selection and emotional filtering.

A labeler is any callable mapping a Dialogue to one Prediction per
turn; the built-in classifier and the remote client both fit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

from .assembly import EMOTIONAL, Dialogue, Turn
from .classifier import NGramSoftmaxModel, Prediction, predict
from .context import DEFAULT_HISTORY, windows_from_dialogue
from .taxonomy import LabelTaxonomy

log = logging.getLogger(__name__)

AGGREGATIONS = ("emotion_weighted_mean", "mean", "min", "max")
INTENT_DISCOUNT = 0.5


@dataclass(frozen=True)
class TurnLabel:
    """One labeled turn, the prediction-dump record unit."""

    dialogue_id: str
    turn_index: int
    label: str
    confidence: float


@dataclass(frozen=True)
class SelectedTurn:
    """A high-confidence turn carrying its full dialogue history."""

    dialogue_id: str
    turn_index: int
    label: str
    confidence: float
    turns: tuple[Turn, ...]  # dialogue turns up to and including the target

    def __post_init__(self):
        if len(self.turns) != self.turn_index + 1:
            raise ValueError("history must contain exactly the preceding turns")


def dialogue_labeler(model: NGramSoftmaxModel, k: int = DEFAULT_HISTORY):
    """Wrap the built-in classifier as a Dialogue -> [Prediction] labeler."""

    def labeler(dialogue: Dialogue) -> list[Prediction]:
        return [predict(model, w) for w in windows_from_dialogue(dialogue, k)]

    return labeler


def label_turns(dialogues: list[Dialogue], labeler) -> list[TurnLabel]:
    out = []
    for dialogue in dialogues:
        for i, pred in enumerate(labeler(dialogue)):
            out.append(TurnLabel(dialogue.dialogue_id, i, pred.top, pred.confidence))
    return out


def turn_label_record(tl: TurnLabel) -> dict:
    return {
        "dialogue_id": tl.dialogue_id,
        "turn_index": tl.turn_index,
        "label": tl.label,
        "confidence": tl.confidence,
    }


def turn_label_from_record(record: dict) -> TurnLabel:
    return TurnLabel(
        record["dialogue_id"],
        record["turn_index"],
        record["label"],
        record["confidence"],
    )


def select_high_confidence(
    dialogues: list[Dialogue], labeler, threshold: float = 0.9
) -> list[SelectedTurn]:
    """Turns with prediction confidence >= threshold, with their history."""
    selected = []
    for dialogue in dialogues:
        for i, pred in enumerate(labeler(dialogue)):
            if pred.confidence >= threshold:
                selected.append(
                    SelectedTurn(
                        dialogue_id=dialogue.dialogue_id,
                        turn_index=i,
                        label=pred.top,
                        confidence=pred.confidence,
                        turns=dialogue.turns[: i + 1],
                    )
                )
    return selected


def dialogue_confidence(
    predictions: list[Prediction],
    taxonomy: LabelTaxonomy,
    strategy: str = "emotion_weighted_mean",
    intent_discount: float = INTENT_DISCOUNT,
) -> float:
    """Aggregate per-turn max confidences into one dialogue score."""
    confs = [p.confidence for p in predictions]
    if strategy == "mean":
        return sum(confs) / len(confs)
    if strategy == "min":
        return min(confs)
    if strategy == "max":
        return max(confs)
    if strategy == "emotion_weighted_mean":
        weighted = [
            p.confidence * (1.0 if taxonomy.is_emotion(p.top) else intent_discount)
            for p in predictions
        ]
        return sum(weighted) / len(weighted)
    raise ValueError(f"unknown aggregation strategy: {strategy!r}")


def filter_emotional(
    dialogues: list[Dialogue],
    labeler,
    n: int,
    taxonomy: LabelTaxonomy,
    strategy: str = "emotion_weighted_mean",
    intent_discount: float = INTENT_DISCOUNT,
) -> list[Dialogue]:
    """Top-n dialogues by aggregated label confidence, marked emotional."""
    if n > len(dialogues):
        log.warning(
            "asked for top %d of %d dialogues; returning all", n, len(dialogues)
        )
    scored = []
    for dialogue in dialogues:
        score = dialogue_confidence(
            labeler(dialogue), taxonomy, strategy, intent_discount
        )
        scored.append((score, dialogue))
    scored.sort(key=lambda pair: (-pair[0], pair[1].dialogue_id))
    return [
        Dialogue(d.dialogue_id, d.doc_id, d.turns, provenance=EMOTIONAL)
        for _, d in scored[:n]
    ]
