"""Rule-based English lemmatizer used by boundary feature extraction.

A deliberately small suffix stripper: plural, -ing and -ed rules plus an
exception table for the irregular forms that dominate dialogue. It is not
a linguistic lemmatizer; consistency matters more than correctness here
because lemmas only feed hashed indicator features. Swap in anything with
the same ``str -> str`` signature if better lemmas are needed.
"""
from __future__ import annotations

_VOWELS = set("aeiou")

# Irregulars worth getting right in conversational text.
EXCEPTIONS: dict[str, str] = {
    "am": "be", "is": "be", "are": "be", "was": "be", "were": "be", "been": "be",
    "being": "be",
    "has": "have", "had": "have", "having": "have",
    "does": "do", "did": "do", "done": "do", "doing": "do",
    "goes": "go", "went": "go", "gone": "go",
    "said": "say", "says": "say",
    "made": "make", "making": "make",
    "took": "take", "taken": "take", "taking": "take",
    "got": "get", "gotten": "get", "getting": "get",
    "came": "come", "coming": "come",
    "saw": "see", "seen": "see",
    "knew": "know", "known": "know",
    "thought": "think",
    "told": "tell",
    "felt": "feel",
    "found": "find",
    "gave": "give", "given": "give", "giving": "give",
    "left": "leave", "leaving": "leave",
    "met": "meet",
    "meant": "mean",
    "kept": "keep",
    "let": "let", "lets": "let",
    "put": "put", "puts": "put",
    "men": "man", "women": "woman", "children": "child", "people": "person",
    "feet": "foot", "teeth": "tooth", "mice": "mouse", "geese": "goose",
    "better": "good", "best": "good", "worse": "bad", "worst": "bad",
    "lied": "lie", "died": "die", "freed": "free", "agreed": "agree",
    "paid": "pay", "heard": "hear", "lost": "lose", "won": "win",
    "ran": "run", "sat": "sit", "stood": "stand",
    "this": "this", "his": "his", "its": "its", "us": "us", "yes": "yes",
}


def _one_vowel_group(stem: str) -> bool:
    groups = 0
    prev_vowel = False
    for c in stem:
        is_vowel = c in _VOWELS
        if is_vowel and not prev_vowel:
            groups += 1
        prev_vowel = is_vowel
    return groups == 1


def _fix_stem(stem: str) -> str:
    # running -> runn -> run; hoping -> hop -> hope
    if len(stem) >= 3 and stem[-1] == stem[-2] and stem[-1] not in "lsz" and stem[-1] not in _VOWELS:
        return stem[:-1]
    if (
        len(stem) >= 3
        and stem[-1] not in _VOWELS
        and stem[-1] not in "wxy"
        and stem[-2] in _VOWELS
        and stem[-3] not in _VOWELS
        and _one_vowel_group(stem)
    ):
        return stem + "e"
    return stem


def lemmatize(token: str) -> str:
    """Lemma of a single lowercase-insensitive token."""
    word = token.casefold()
    if word in EXCEPTIONS:
        return EXCEPTIONS[word]
    if len(word) > 4 and word.endswith("ies"):
        return word[:-3] + "y"
    if len(word) > 4 and word.endswith("ied"):
        return word[:-3] + "y"
    if word.endswith("sses"):
        return word[:-2]
    if len(word) > 3 and word.endswith("es") and word[-3] in "sxz":
        return word[:-2]
    if len(word) > 4 and word.endswith("ches") or len(word) > 4 and word.endswith("shes"):
        return word[:-2]
    if len(word) > 5 and word.endswith("ing"):
        return _fix_stem(word[:-3])
    # need, speed, feed: -eed words are their own lemma unless listed above
    if len(word) > 4 and word.endswith("ed") and not word.endswith("eed"):
        return _fix_stem(word[:-2])
    if len(word) > 3 and word.endswith("s") and not word.endswith("ss") and not word.endswith("us"):
        return word[:-1]
    return word


def identity(token: str) -> str:
    """No-op lemmatizer, handy for tests and ablations."""
    return token
