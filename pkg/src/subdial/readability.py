"""Readability scoring and per-class candidate ranking.

Score = f + w_d * d where f is the average relative corpus frequency of
the dialogue's tokens damped by alpha, and d the distinct-token
fraction. Relative frequencies keep f on the same footing as the small
d weight; ``raw_counts=True`` restores literal corpus counts for
comparison.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .assembly import Dialogue
from .text import word_tokens

ALPHA = 87.0
DISTINCT_WEIGHT = 0.04


@dataclass(frozen=True)
class FrequencyVocabulary:
    counts: dict[str, int]
    total_tokens: int

    def __post_init__(self):
        if self.total_tokens != sum(self.counts.values()):
            raise ValueError("total_tokens must equal the sum of counts")

    def relative(self, token: str) -> float:
        if self.total_tokens == 0:
            return 0.0
        return self.counts.get(token, 0) / self.total_tokens


@dataclass(frozen=True)
class ReadabilityScore:
    f: float
    d: float
    score: float
    alpha: float
    w_d: float

    def __post_init__(self):
        if self.f < 0 or not 0.0 <= self.d <= 1.0:
            raise ValueError("f must be >= 0 and d in [0, 1]")
        if self.score != self.f + self.w_d * self.d:
            raise ValueError("score must equal f + w_d * d")


def dialogue_tokens(dialogue: Dialogue) -> list[str]:
    out: list[str] = []
    for turn in dialogue.turns:
        out.extend(word_tokens(turn.text))
    return out


def build_vocabulary(dialogues) -> FrequencyVocabulary:
    counts: dict[str, int] = {}
    total = 0
    for dialogue in dialogues:
        for token in dialogue_tokens(dialogue):
            counts[token] = counts.get(token, 0) + 1
            total += 1
    return FrequencyVocabulary(counts=counts, total_tokens=total)


def readability(
    dialogue: Dialogue,
    vocab: FrequencyVocabulary,
    alpha: float = ALPHA,
    w_d: float = DISTINCT_WEIGHT,
    raw_counts: bool = False,
) -> ReadabilityScore:
    tokens = dialogue_tokens(dialogue)
    if not tokens:
        raise ValueError(f"dialogue {dialogue.dialogue_id} has no tokens to score")
    if raw_counts:
        f_sum = float(sum(vocab.counts.get(t, 0) for t in tokens))
    else:
        f_sum = sum(vocab.relative(t) for t in tokens)
    n = len(tokens)
    f = f_sum / (alpha + n)
    d = len(set(tokens)) / n
    return ReadabilityScore(f=f, d=d, score=f + w_d * d, alpha=alpha, w_d=w_d)


@dataclass(frozen=True)
class ScoredCandidate:
    label: str
    dialogue_id: str
    score: float


def rank_candidates(
    candidates: list[ScoredCandidate], top_k: int = 250
) -> dict[str, list[ScoredCandidate]]:
    """Top ``top_k`` per label, score descending, ties by dialogue_id."""
    by_label: dict[str, list[ScoredCandidate]] = {}
    for cand in candidates:
        by_label.setdefault(cand.label, []).append(cand)
    out: dict[str, list[ScoredCandidate]] = {}
    for label in sorted(by_label):
        ranked = sorted(by_label[label], key=lambda c: (-c.score, c.dialogue_id))
        out[label] = ranked[:top_k]
    return out


def candidate_records(ranked: dict[str, list[ScoredCandidate]]) -> list[dict]:
    return [
        {"class": label, "rank": rank, "dialogue_id": c.dialogue_id, "score": c.score}
        for label, cands in ranked.items()
        for rank, c in enumerate(cands)
    ]


TOTAL_MARKER = "__total__"


def save_vocabulary(vocab: FrequencyVocabulary, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{TOTAL_MARKER}\t{vocab.total_tokens}\n")
        for token in sorted(vocab.counts):
            fh.write(f"{token}\t{vocab.counts[token]}\n")


def load_vocabulary(path: Path) -> FrequencyVocabulary:
    counts: dict[str, int] = {}
    total = None
    for line in path.read_text(encoding="utf-8").splitlines():
        token, _, count = line.rpartition("\t")
        if token == TOTAL_MARKER:
            total = int(count)
        else:
            counts[token] = int(count)
    if total is None:
        raise ValueError(f"vocabulary file missing {TOTAL_MARKER} line: {path}")
    return FrequencyVocabulary(counts=counts, total_tokens=total)
