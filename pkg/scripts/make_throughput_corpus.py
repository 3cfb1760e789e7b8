"""Generate a large synthetic corpus for timing the batch pipeline.

Same planted-vocabulary scheme as the bundled desk corpus, scaled up:
every turn is cleanable (short, alphabetic, non-repetitive), every
class gets seed labels, and a slice of the documents doubles as
boundary-fixture material. No twins, no junk, no quiz bank; this corpus
exists to measure throughput, not correctness.

The turn budget is spread over many files so ingest sees realistic
per-document sizes. Writing 100k turns takes a couple of seconds.
"""

from __future__ import annotations

import argparse
import dataclasses
import random
import sys
from collections import Counter
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from subdial.ingest import (
    apply_metadata,
    format_timestamp_ms,
    load_metadata,
    parse_subtitles,
    segment_sentences,
)
from subdial.jsonl import write_records
from subdial.segmentation import (
    boundary_record,
    build_boundary_instances,
)
from subdial.taxonomy import default_taxonomy
from subdial.text import alphabetic_ratio

SEED = 404100
GENRES = ("drama", "comedy", "action", "romance", "thriller")

SYLLABLES = (
    "ba", "re", "mo", "ta", "lu", "vi", "ne", "ko",
    "sa", "du", "fi", "po", "ga", "ri", "zu", "hem",
    "wa", "ce", "ny", "tor",
)
FILLER = (
    "well", "you", "know", "right", "really", "maybe", "look", "listen",
    "come", "on", "please", "sure", "about", "that", "it", "now",
    "just", "think", "so", "then", "here", "still", "again", "fine",
)


def make_word(rng: random.Random) -> str:
    return "".join(rng.choice(SYLLABLES) for _ in range(rng.randint(2, 3)))


def class_vocabularies(rng: random.Random, labels) -> dict[str, list[str]]:
    taken = set(FILLER)
    vocab = {}
    for label in labels:
        words = []
        while len(words) < 12:
            word = make_word(rng)
            if word not in taken:
                taken.add(word)
                words.append(word)
        vocab[label] = words
    return vocab


def sentence_of(words: list[str]) -> str:
    return " ".join(words).capitalize() + "."


def history_turn(rng: random.Random, class_words: list[str]) -> str:
    words = rng.sample(FILLER, rng.randint(4, 6))
    words.insert(rng.randrange(len(words)), rng.choice(class_words))
    if rng.random() < 0.20:
        tail = rng.sample(FILLER, rng.randint(2, 3))
        return sentence_of(words) + " " + sentence_of(tail)
    return sentence_of(words)


def final_turn(rng: random.Random, class_words: list[str]) -> str:
    words = rng.sample(class_words[:8], rng.randint(5, 6))
    rng.shuffle(words)
    return sentence_of(words)


def build_dialogue(rng, vocab, label):
    n_history = rng.randint(2, 7)
    texts = [history_turn(rng, vocab[label]) for _ in range(n_history)]
    texts.append(final_turn(rng, vocab[label]))
    for text in texts:
        assert 2 <= len(text) <= 100, text
        assert alphabetic_ratio(text) >= 0.60, text
    return texts


def timestamped(texts, t0_ms, rng):
    rows = []
    t = t0_ms
    for text in texts:
        duration = 1200 + 45 * len(text)
        rows.append((text, t, t + duration))
        t += duration + rng.randint(800, 2600)
    return rows, t


def write_srt(path, cues):
    lines = []
    for i, (text, start, end) in enumerate(cues, start=1):
        lines.append(str(i))
        lines.append(f"{format_timestamp_ms(start)} --> {format_timestamp_ms(end)}")
        lines.append(text)
        lines.append("")
    path.write_text("\n".join(lines), encoding="utf-8")


def write_xml(path, doc_id, cues, genre):
    parts = [f'<document id="{doc_id}" language="en" genre="{genre}">']
    for i, (text, start, end) in enumerate(cues, start=1):
        parts.append(
            f'  <block index="{i}" start="{format_timestamp_ms(start)}"'
            f' end="{format_timestamp_ms(end)}">'
        )
        parts.append(f"    <line>{text}</line>")
        parts.append("  </block>")
    parts.append("</document>")
    path.write_text("\n".join(parts), encoding="utf-8")


def emit_corpus(out_dir: Path, rng, n_turns: int, n_files: int):
    """Round-robin dialogues over files until the turn budget is spent."""
    taxonomy = default_taxonomy()
    vocab = class_vocabularies(rng, taxonomy.names())
    labels = taxonomy.names()

    per_file: list[list[dict]] = [[] for _ in range(n_files)]
    seed_rows = []
    turns_emitted = 0
    dialogue_no = 0
    while turns_emitted < n_turns:
        label = labels[dialogue_no % len(labels)]
        texts = build_dialogue(rng, vocab, label)
        f = dialogue_no % n_files
        entry = {"label": label, "texts": texts, "n_in_file": len(per_file[f])}
        per_file[f].append(entry)
        # first five dialogues of each class become seed labels
        if dialogue_no // len(labels) < 5:
            seed_rows.append((f, entry))
        turns_emitted += len(texts)
        dialogue_no += 1

    metadata_rows = []
    label_rows = []
    for f, entries in enumerate(per_file):
        stem = f"bulk{f:04d}"
        cues = []
        t = rng.randint(3000, 9000)
        for n, entry in enumerate(entries):
            rows, t = timestamped(entry["texts"], t, rng)
            cues.extend(rows)
            entry["dialogue_id"] = f"{stem}#{n}"
            t += rng.randint(6500, 12000)
        genre = GENRES[f % len(GENRES)]
        if f % 10 == 9:
            write_xml(out_dir / f"{stem}.xml", stem, cues, genre)
        else:
            write_srt(out_dir / f"{stem}.srt", cues)
        metadata_rows.append((stem, genre, t + 5000))

    for _, entry in seed_rows:
        label_rows.append(
            {
                "dialogue_id": entry["dialogue_id"],
                "turn_index": len(entry["texts"]) - 1,
                "label": entry["label"],
            }
        )
    label_rows.sort(key=lambda r: r["dialogue_id"])
    write_records(out_dir / "seed_labels.jsonl", label_rows)

    with open(out_dir / "metadata.tsv", "w", encoding="utf-8") as fh:
        fh.write("# doc_id\tgenre\tduration_ms\n")
        for stem, genre, duration in metadata_rows:
            fh.write(f"{stem}\t{genre}\t{duration}\n")

    return turns_emitted, dialogue_no


def emit_boundary_fixtures(out_dir: Path, n_docs: int, cap: int):
    """Fixture pairs from the first few documents; training set size is
    independent of the corpus size."""
    meta = load_metadata(out_dir / "metadata.tsv")
    rows = []
    for path in sorted(out_dir.glob("bulk*"))[:n_docs]:
        doc, report = parse_subtitles(
            path.read_bytes(), path.suffix.lstrip("."), doc_id=path.stem
        )
        assert len(report) == 0, f"{path}: {report.entries}"
        doc = apply_metadata(doc, meta)
        sentences = segment_sentences(doc)
        for inst in build_boundary_instances(doc, sentences):
            labeled = dataclasses.replace(
                inst, label="same_turn" if inst.same_block else "new_turn"
            )
            rows.append(boundary_record(labeled))
        if len(rows) >= cap:
            break
    counts = Counter(r["label"] for r in rows)
    assert counts["new_turn"] >= 200 and counts["same_turn"] >= 200, counts
    write_records(out_dir / "boundary_fixtures.jsonl", rows[:cap])
    return counts


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--turns", type=int, default=100_000)
    parser.add_argument("--files", type=int, default=200)
    parser.add_argument("--seed", type=int, default=SEED)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    rng = random.Random(args.seed)
    turns, dialogues = emit_corpus(args.out, rng, args.turns, args.files)
    counts = emit_boundary_fixtures(args.out, n_docs=12, cap=6000)
    print(
        f"wrote {turns} turns in {dialogues} dialogues over {args.files} files; "
        f"fixtures: {counts['same_turn']} same_turn / {counts['new_turn']} new_turn"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
