"""Context windows: a target turn plus preceding turns, half-decay weighted.

Each step back from the newest turn halves the weight and the weights
are normalized to sum to one: for m turns the chronological weights are
[2^0 .. 2^(m-1)] / (2^m - 1), so three turns give (1/7, 2/7, 4/7).
"""
from __future__ import annotations

from dataclasses import dataclass

from .assembly import Dialogue, Turn

DEFAULT_HISTORY = 3


def half_decay_weights(m: int) -> list[float]:
    """Chronological weights for ``m`` turns, oldest first, summing to 1."""
    if m < 1:
        raise ValueError("need at least one turn")
    denom = float((1 << m) - 1)
    return [(1 << j) / denom for j in range(m)]


@dataclass(frozen=True)
class ContextWindow:
    """Target turn with up to k preceding turns, oldest history first."""

    target_turn: Turn
    history: tuple[Turn, ...] = ()
    label: str | None = None

    def turns(self) -> tuple[Turn, ...]:
        return self.history + (self.target_turn,)

    def weights(self) -> list[float]:
        return half_decay_weights(len(self.history) + 1)


def windows_from_dialogue(
    dialogue: Dialogue, k: int = DEFAULT_HISTORY, labels: list[str] | None = None
) -> list[ContextWindow]:
    """One window per turn; history is the up-to-k turns before it."""
    if labels is not None and len(labels) != len(dialogue.turns):
        raise ValueError(
            f"dialogue {dialogue.dialogue_id}: {len(labels)} labels for "
            f"{len(dialogue.turns)} turns"
        )
    out = []
    for i, turn in enumerate(dialogue.turns):
        out.append(
            ContextWindow(
                target_turn=turn,
                history=tuple(dialogue.turns[max(0, i - k) : i]),
                label=labels[i] if labels is not None else None,
            )
        )
    return out


def final_turn_window(dialogue: Dialogue, k: int = DEFAULT_HISTORY, label: str | None = None) -> ContextWindow:
    return ContextWindow(
        target_turn=dialogue.turns[-1],
        history=tuple(dialogue.turns[max(0, len(dialogue.turns) - 1 - k) : -1]),
        label=label,
    )
