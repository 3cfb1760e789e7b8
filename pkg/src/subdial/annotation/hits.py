"""Assemble HITs from ranked candidates and a quiz bank."""
from __future__ import annotations

import logging
import random
from dataclasses import dataclass

from .models import (
    DIALOGUE,
    DIALOGUES_PER_HIT,
    ITEMS_PER_HIT,
    QUIZ,
    QUIZZES_PER_HIT,
    HIT,
    HitItem,
    QuizQuestion,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HitCandidate:
    """A dialogue ready to annotate: its turns plus top-3 suggestions."""

    dialogue_id: str
    texts: tuple[str, ...]
    turn_index: int
    suggestions: tuple[tuple[str, float], ...]


def build_hits(
    candidates: list[HitCandidate],
    quiz_bank: list[QuizQuestion],
    seed: int = 0,
    workers_per_hit: int = 3,
) -> tuple[list[HIT], list[HitCandidate]]:
    """Bundle candidates, in the order given, into 15+5 item HITs.

    Per HIT, 5 quiz questions are drawn from the bank without
    replacement and interleaved at seeded random positions. Candidates
    that do not fill a whole HIT are returned as leftovers, not served.
    """
    if len(quiz_bank) < QUIZZES_PER_HIT:
        raise ValueError(
            f"quiz bank has {len(quiz_bank)} questions, need {QUIZZES_PER_HIT}"
        )
    rng = random.Random(seed)
    hits: list[HIT] = []
    full = len(candidates) // DIALOGUES_PER_HIT
    for b in range(full):
        batch = candidates[b * DIALOGUES_PER_HIT : (b + 1) * DIALOGUES_PER_HIT]
        quizzes = rng.sample(quiz_bank, QUIZZES_PER_HIT)
        quiz_at = set(rng.sample(range(ITEMS_PER_HIT), QUIZZES_PER_HIT))
        items: list[HitItem] = []
        dialogue_iter = iter(batch)
        quiz_iter = iter(quizzes)
        for pos in range(ITEMS_PER_HIT):
            if pos in quiz_at:
                q = next(quiz_iter)
                items.append(
                    HitItem(
                        kind=QUIZ,
                        item_id=q.quiz_id,
                        turn_index=0,
                        texts=(q.situation,),
                        suggestions=tuple((label, 0.0) for label in q.suggestions),
                        gold=q.gold,
                    )
                )
            else:
                c = next(dialogue_iter)
                items.append(
                    HitItem(
                        kind=DIALOGUE,
                        item_id=c.dialogue_id,
                        turn_index=c.turn_index,
                        texts=c.texts,
                        suggestions=c.suggestions,
                    )
                )
        hits.append(HIT(f"hit-{b:04d}", tuple(items), workers_per_hit))
    leftover = candidates[full * DIALOGUES_PER_HIT :]
    if leftover:
        log.warning(
            "%d candidates left over after %d full HITs; not served",
            len(leftover),
            full,
        )
    return hits, leftover
