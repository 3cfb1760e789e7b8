"""Annotation domain records and their JSON shapes.

A HIT bundles 15 dialogues to label with 5 quiz questions at fixed,
seeded positions. Each dialogue item targets one turn (normally the
final one) and shows the labeler's top-3 suggestions; quiz items carry
a gold label that is stored server-side and never sent to workers.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ..jsonl import read_records
from ..taxonomy import LabelTaxonomy

DIALOGUE = "dialogue"
QUIZ = "quiz"

DIALOGUES_PER_HIT = 15
QUIZZES_PER_HIT = 5
ITEMS_PER_HIT = DIALOGUES_PER_HIT + QUIZZES_PER_HIT


@dataclass(frozen=True)
class QuizQuestion:
    quiz_id: str
    situation: str
    gold: str
    suggestions: tuple[str, ...]  # top-3 labels shown, gold among them

    def __post_init__(self):
        if self.gold not in self.suggestions:
            raise ValueError(f"quiz {self.quiz_id}: gold label missing from suggestions")


@dataclass(frozen=True)
class HitItem:
    kind: str
    item_id: str
    turn_index: int
    texts: tuple[str, ...]  # dialogue turns, or the quiz situation alone
    suggestions: tuple[tuple[str, float], ...]  # (label, confidence)
    gold: str | None = None  # quiz answers only

    def __post_init__(self):
        if self.kind not in (DIALOGUE, QUIZ):
            raise ValueError(f"bad item kind: {self.kind!r}")
        if not self.texts:
            raise ValueError(f"item {self.item_id} has no text")
        if not 0 <= self.turn_index < len(self.texts):
            raise ValueError(f"item {self.item_id}: turn index out of range")
        if self.kind == QUIZ:
            if self.gold is None:
                raise ValueError(f"quiz item {self.item_id} needs a gold label")
            if self.gold not in (label for label, _ in self.suggestions):
                raise ValueError(f"quiz item {self.item_id}: gold not among suggestions")
        elif self.gold is not None:
            raise ValueError(f"dialogue item {self.item_id} cannot carry a gold label")


@dataclass(frozen=True)
class HIT:
    hit_id: str
    items: tuple[HitItem, ...]
    workers_per_hit: int = 3

    def __post_init__(self):
        kinds = [item.kind for item in self.items]
        if kinds.count(DIALOGUE) != DIALOGUES_PER_HIT or kinds.count(QUIZ) != QUIZZES_PER_HIT:
            raise ValueError(
                f"{self.hit_id}: need {DIALOGUES_PER_HIT} dialogue + "
                f"{QUIZZES_PER_HIT} quiz items, got {kinds.count(DIALOGUE)}"
                f"+{kinds.count(QUIZ)}"
            )
        ids = [item.item_id for item in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError(f"{self.hit_id}: duplicate item ids")
        if self.workers_per_hit < 1:
            raise ValueError("workers_per_hit must be >= 1")

    def item(self, item_id: str) -> HitItem | None:
        for it in self.items:
            if it.item_id == item_id:
                return it
        return None

    def quiz_items(self) -> tuple[HitItem, ...]:
        return tuple(it for it in self.items if it.kind == QUIZ)


@dataclass(frozen=True)
class AnnotationRecord:
    """One worker's answer for one HIT item.

    ``item_id`` is the dialogue id for dialogue items and the quiz id
    for quiz items. Exactly one of ``label`` (a taxonomy name) and
    ``custom_label`` (free text) is set.
    """

    worker_id: str
    hit_id: str
    item_id: str
    turn_index: int
    label: str | None
    custom_label: str | None
    chose_from_top3: bool
    timestamp: float

    def __post_init__(self):
        if (self.label is None) == (self.custom_label is None):
            raise ValueError("exactly one of label and custom_label must be set")
        if self.custom_label is not None and not self.custom_label.strip():
            raise ValueError("custom label must be non-blank")


def quiz_record(q: QuizQuestion) -> dict:
    return {
        "quiz_id": q.quiz_id,
        "situation": q.situation,
        "gold": q.gold,
        "suggestions": list(q.suggestions),
    }


def quiz_from_record(record: dict) -> QuizQuestion:
    return QuizQuestion(
        quiz_id=record["quiz_id"],
        situation=record["situation"],
        gold=record["gold"],
        suggestions=tuple(record["suggestions"]),
    )


def load_quiz_bank(path: Path, taxonomy: LabelTaxonomy) -> list[QuizQuestion]:
    bank = [quiz_from_record(r) for r in read_records(path)]
    for q in bank:
        if q.gold not in taxonomy:
            raise ValueError(f"quiz {q.quiz_id}: gold {q.gold!r} not in taxonomy")
    return bank


def _item_record(item: HitItem) -> dict:
    return {
        "kind": item.kind,
        "item_id": item.item_id,
        "turn_index": item.turn_index,
        "texts": list(item.texts),
        "suggestions": [[label, conf] for label, conf in item.suggestions],
        "gold": item.gold,
    }


def _item_from_record(record: dict) -> HitItem:
    return HitItem(
        kind=record["kind"],
        item_id=record["item_id"],
        turn_index=record["turn_index"],
        texts=tuple(record["texts"]),
        suggestions=tuple((label, conf) for label, conf in record["suggestions"]),
        gold=record.get("gold"),
    )


def hit_record(hit: HIT) -> dict:
    return {
        "hit_id": hit.hit_id,
        "workers_per_hit": hit.workers_per_hit,
        "items": [_item_record(it) for it in hit.items],
    }


def hit_from_record(record: dict) -> HIT:
    return HIT(
        hit_id=record["hit_id"],
        items=tuple(_item_from_record(r) for r in record["items"]),
        workers_per_hit=record.get("workers_per_hit", 3),
    )


def annotation_record(a: AnnotationRecord) -> dict:
    return {
        "worker_id": a.worker_id,
        "hit_id": a.hit_id,
        "item_id": a.item_id,
        "turn_index": a.turn_index,
        "label": a.label,
        "custom_label": a.custom_label,
        "chose_from_top3": a.chose_from_top3,
        "timestamp": a.timestamp,
    }


def annotation_from_record(record: dict) -> AnnotationRecord:
    return AnnotationRecord(
        worker_id=record["worker_id"],
        hit_id=record["hit_id"],
        item_id=record["item_id"],
        turn_index=record["turn_index"],
        label=record.get("label"),
        custom_label=record.get("custom_label"),
        chose_from_top3=record["chose_from_top3"],
        timestamp=record["timestamp"],
    )
