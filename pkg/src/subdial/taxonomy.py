"""Label taxonomy: 32 emotions + 9 empathetic response intents by default."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

EMOTION = "emotion"
INTENT = "intent"

_DEFAULT_PATH = Path(__file__).parent / "data" / "labels.toml"

DEFAULT_INTENTS = (
    "Questioning",
    "Agreeing",
    "Acknowledging",
    "Sympathizing",
    "Encouraging",
    "Consoling",
    "Suggesting",
    "Wishing",
    "Neutral",
)


@dataclass(frozen=True)
class LabelTaxonomy:
    labels: tuple[tuple[str, str], ...]  # (name, kind) in fixed order

    def __post_init__(self):
        names = [name for name, _ in self.labels]
        if len(set(names)) != len(names):
            raise ValueError("label names must be unique")
        for _, kind in self.labels:
            if kind not in (EMOTION, INTENT):
                raise ValueError(f"bad label kind: {kind!r}")

    def __len__(self) -> int:
        return len(self.labels)

    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.labels)

    def index(self, name: str) -> int:
        try:
            return self.names().index(name)
        except ValueError:
            raise KeyError(f"unknown label: {name!r}") from None

    def kind(self, name: str) -> str:
        return dict(self.labels)[name]

    def is_emotion(self, name: str) -> bool:
        return self.kind(name) == EMOTION

    def emotions(self) -> tuple[str, ...]:
        return tuple(n for n, k in self.labels if k == EMOTION)

    def intents(self) -> tuple[str, ...]:
        return tuple(n for n, k in self.labels if k == INTENT)

    def __contains__(self, name: str) -> bool:
        return any(n == name for n, _ in self.labels)


def load_taxonomy(path: Path | None = None) -> LabelTaxonomy:
    """Load from a TOML file with ``emotions`` and ``intents`` lists."""
    path = path or _DEFAULT_PATH
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    labels = [(name, EMOTION) for name in data.get("emotions", [])]
    labels += [(name, INTENT) for name in data.get("intents", [])]
    return LabelTaxonomy(labels=tuple(labels))


_DEFAULT: LabelTaxonomy | None = None


def default_taxonomy() -> LabelTaxonomy:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_taxonomy()
        if _DEFAULT.intents() != DEFAULT_INTENTS:
            raise ValueError("shipped intent list out of sync")
        if len(_DEFAULT.emotions()) != 32:
            raise ValueError("shipped emotion list must have 32 entries")
    return _DEFAULT
