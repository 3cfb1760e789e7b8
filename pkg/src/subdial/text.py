"""Tokenization helpers shared across the pipeline.

Two tokenizations are used deliberately:

* ``tokenize`` keeps punctuation as separate tokens and preserves case.
  It backs turn-level statistics and the repetitive-token filter.
* ``word_tokens`` is case-folded and punctuation-stripped. It backs the
  frequency vocabulary, the n-gram classifier and the builtin embeddings.
"""
from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"[A-Za-z0-9_]+(?:'[A-Za-z0-9_]+)*|[^\sA-Za-z0-9_]")
_WORD_RE = re.compile(r"[a-z0-9]+(?:'[a-z0-9]+)*")


def tokenize(text: str) -> list[str]:
    """Split into word and punctuation tokens, preserving case.

    Words keep internal apostrophes ("don't" is one token); every other
    non-space character becomes its own token.
    """
    return _TOKEN_RE.findall(text)


def word_tokens(text: str) -> list[str]:
    """Case-folded word tokens with punctuation stripped."""
    return _WORD_RE.findall(text.casefold())


def alphabetic_ratio(text: str) -> float:
    """Alphabetic characters over non-space characters; 0.0 for all-space."""
    non_space = [c for c in text if not c.isspace()]
    if not non_space:
        return 0.0
    alpha = sum(1 for c in non_space if c.isalpha())
    return alpha / len(non_space)
