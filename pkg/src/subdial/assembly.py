"""Group turns into dialogues by timestamp gaps and clean them.

Splitting: a boundary is placed between consecutive turns when the gap
(start of the next minus end of the previous) exceeds ``gap_ms``; a
missing timestamp on either side means no boundary. Cleaning applies a
fixed rule order per turn and drops everything after the first removed
turn, so surviving dialogues are prefixes of their raw form.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, fields

from .hashing import stable_hash64
from .text import alphabetic_ratio, tokenize

RAW = "raw"
CLEANED = "cleaned"
EMOTIONAL = "emotional"


@dataclass(frozen=True)
class Turn:
    """One dialogue turn: text plus the block timestamps it inherited."""

    text: str
    start_ms: int | None
    end_ms: int | None
    doc_id: str
    tokens: tuple[str, ...] = None  # derived from text when not given

    def __post_init__(self):
        if not self.text:
            raise ValueError("turn text must be non-empty")
        if self.tokens is None:
            object.__setattr__(self, "tokens", tuple(tokenize(self.text)))


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    doc_id: str
    turns: tuple[Turn, ...]
    provenance: str = RAW

    def __post_init__(self):
        if self.provenance in (CLEANED, EMOTIONAL) and len(self.turns) < 2:
            raise ValueError(
                f"dialogue {self.dialogue_id}: {self.provenance} dialogues need >= 2 turns"
            )

    def turn_texts(self) -> tuple[str, ...]:
        return tuple(t.text for t in self.turns)


@dataclass
class CleaningConfig:
    gap_ms: int = 5000
    min_chars: int = 2
    max_chars: int = 100
    min_alpha_ratio: float = 0.60
    repetitive_min_tokens: int = 10
    repetitive_max_share: float = 0.50
    recap_prefixes: tuple[str, ...] = ("previously on", "previous on")
    name_prefix_max_words: int = 3


@dataclass
class CleaningReport:
    """Per-rule removal counters; turn counters sum to turns in minus out.

    ``stripped_names`` and ``deduped_dialogues`` are informational and do
    not enter the turn balance.
    """

    input_turns: int = 0
    output_turns: int = 0
    stripped_names: int = 0
    removed_names: int = 0
    removed_recap: int = 0
    removed_char_length: int = 0
    removed_alpha_ratio: int = 0
    removed_repetitive: int = 0
    removed_duplicate: int = 0
    dropped_suffix_turns: int = 0
    dropped_single_turn_dialogues: int = 0
    removed_duplicate_dialogue_turns: int = 0
    deduped_dialogues: int = 0

    _TURN_COUNTERS = (
        "removed_names",
        "removed_recap",
        "removed_char_length",
        "removed_alpha_ratio",
        "removed_repetitive",
        "removed_duplicate",
        "dropped_suffix_turns",
        "dropped_single_turn_dialogues",
        "removed_duplicate_dialogue_turns",
    )

    def removed_turn_total(self) -> int:
        return sum(getattr(self, name) for name in self._TURN_COUNTERS)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def split_dialogues(turns: list[Turn], gap_ms: int = 5000) -> list[Dialogue]:
    """Partition turns into raw dialogues on > ``gap_ms`` timestamp gaps.

    A missing timestamp on either side of a boundary candidate keeps the
    turns together. A change of source document always splits.
    """
    dialogues: list[Dialogue] = []
    group: list[Turn] = []
    seq_per_doc: dict[str, int] = {}

    def flush():
        if not group:
            return
        doc_id = group[0].doc_id
        n = seq_per_doc.get(doc_id, 0)
        seq_per_doc[doc_id] = n + 1
        dialogues.append(
            Dialogue(f"{doc_id}#{n}", doc_id, tuple(group), provenance=RAW)
        )
        group.clear()

    for turn in turns:
        if group:
            prev = group[-1]
            doc_changed = turn.doc_id != prev.doc_id
            gap_known = prev.end_ms is not None and turn.start_ms is not None
            if doc_changed or (gap_known and turn.start_ms - prev.end_ms > gap_ms):
                flush()
        group.append(turn)
    flush()
    return dialogues


_CAP_WORD = re.compile(r"[A-Z][a-z'.-]*")
_UPPER_WORD = re.compile(r"[A-Z][A-Z0-9'.-]*")


def strip_name_prefixes(text: str, max_words: int = 3) -> tuple[str, bool]:
    """Drop leading ``Name:`` / ``NAME TWO:`` speaker tags, repeatedly."""
    stripped_any = False
    while True:
        head, sep, rest = text.partition(":")
        if not sep:
            return text, stripped_any
        words = head.split()
        if not 1 <= len(words) <= max_words:
            return text, stripped_any
        if not all(
            _CAP_WORD.fullmatch(w) or _UPPER_WORD.fullmatch(w) for w in words
        ):
            return text, stripped_any
        text = rest.strip()
        stripped_any = True
        if not text:
            return text, stripped_any


def _most_frequent_share(tokens: tuple[str, ...]) -> float:
    counts: dict[str, int] = {}
    for t in tokens:
        counts[t] = counts.get(t, 0) + 1
    return max(counts.values()) / len(tokens)


def _clean_one(
    dialogue: Dialogue, config: CleaningConfig, report: CleaningReport
) -> Dialogue | None:
    kept: list[Turn] = []
    removed = False
    for pos, turn in enumerate(dialogue.turns):
        text, was_stripped = strip_name_prefixes(turn.text, config.name_prefix_max_words)
        if was_stripped and text:
            report.stripped_names += 1
        if not text:
            report.removed_names += 1
            removed = True
        elif any(text.casefold().startswith(p) for p in config.recap_prefixes):
            report.removed_recap += 1
            removed = True
        elif len(text) < config.min_chars or len(text) > config.max_chars:
            report.removed_char_length += 1
            removed = True
        elif alphabetic_ratio(text) < config.min_alpha_ratio:
            report.removed_alpha_ratio += 1
            removed = True
        else:
            cleaned = Turn(text, turn.start_ms, turn.end_ms, turn.doc_id)
            if (
                len(cleaned.tokens) >= config.repetitive_min_tokens
                and _most_frequent_share(cleaned.tokens) > config.repetitive_max_share
            ):
                report.removed_repetitive += 1
                removed = True
            elif kept and cleaned.text == kept[-1].text:
                report.removed_duplicate += 1
                removed = True
            else:
                kept.append(cleaned)
        if removed:
            report.dropped_suffix_turns += len(dialogue.turns) - pos - 1
            break
    if len(kept) < 2:
        report.dropped_single_turn_dialogues += len(kept)
        return None
    return Dialogue(dialogue.dialogue_id, dialogue.doc_id, tuple(kept), provenance=CLEANED)


def clean_dialogues(
    dialogues: list[Dialogue], config: CleaningConfig | None = None
) -> tuple[list[Dialogue], CleaningReport]:
    """Apply the per-turn filters, suffix drop, and corpus-wide dedup."""
    config = config or CleaningConfig()
    report = CleaningReport()
    report.input_turns = sum(len(d.turns) for d in dialogues)

    survivors: list[Dialogue] = []
    for dialogue in dialogues:
        cleaned = _clean_one(dialogue, config, report)
        if cleaned is not None:
            survivors.append(cleaned)

    # Corpus-wide exact dedup on ordered turn texts, first occurrence wins.
    # Fingerprint first, confirm on the actual texts to survive collisions.
    seen: dict[int, list[tuple[str, ...]]] = {}
    deduped: list[Dialogue] = []
    for dialogue in survivors:
        texts = dialogue.turn_texts()
        fp = stable_hash64("\x1f".join(texts))
        bucket = seen.setdefault(fp, [])
        if texts in bucket:
            report.deduped_dialogues += 1
            report.removed_duplicate_dialogue_turns += len(dialogue.turns)
            continue
        bucket.append(texts)
        deduped.append(dialogue)

    report.output_turns = sum(len(d.turns) for d in deduped)
    return deduped, report


def turn_record(turn: Turn) -> dict:
    return {"text": turn.text, "start_ms": turn.start_ms, "end_ms": turn.end_ms}


def dialogue_record(dialogue: Dialogue) -> dict:
    return {
        "dialogue_id": dialogue.dialogue_id,
        "doc_id": dialogue.doc_id,
        "provenance": dialogue.provenance,
        "turns": [turn_record(t) for t in dialogue.turns],
    }


def dialogue_from_record(record: dict) -> Dialogue:
    doc_id = record["doc_id"]
    turns = tuple(
        Turn(t["text"], t.get("start_ms"), t.get("end_ms"), doc_id)
        for t in record["turns"]
    )
    return Dialogue(record["dialogue_id"], doc_id, turns, record["provenance"])
