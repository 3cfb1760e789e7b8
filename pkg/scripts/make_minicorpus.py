"""Generate the bundled desk-scale corpus under corpus/.

Forty synthetic subtitle files plus two junk files, with class-specific
vocabularies planted so that every later stage has real signal:

- per class: 5 labeled dialogues, 1 near-twin of a labeled dialogue
  (caught by the first similarity pass), 1 fresh dialogue with partly
  shifted vocabulary (caught by self-labeling), and 1 near-twin of the
  fresh one (caught by the second similarity pass);
- junk files full of recaps, non-verbal noise, and over-long turns that
  the cleaner must remove end to end.

The script replays ingest -> segment -> assemble -> clean in-process and
asserts the cleaned corpus matches the planted structure exactly, and
that the planted cosine margins clear the 0.92 / 0.9 thresholds, so the
committed corpus is known-good for the whole pipeline.
"""

from __future__ import annotations

import argparse
import dataclasses
import random
import sys
from collections import Counter
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from subdial.assembly import clean_dialogues, split_dialogues
from subdial.embeddings import BuiltinEmbedder, cosine, embed_dialogue
from subdial.ingest import (
    apply_metadata,
    format_timestamp_ms,
    load_metadata,
    parse_subtitles,
    segment_sentences,
)
from subdial.jsonl import write_records
from subdial.segmentation import (
    SegmenterConfig,
    boundary_from_record,
    boundary_record,
    build_boundary_instances,
    segment_turns,
    train_segmenter,
)
from subdial.taxonomy import default_taxonomy

SEED = 20260815
GENRES = ("drama", "comedy", "action", "romance")

SYLLABLES = (
    "ba", "re", "mo", "ta", "lu", "vi", "ne", "ko",
    "sa", "du", "fi", "po", "ga", "ri", "zu", "hem",
)
FILLER = (
    "well", "you", "know", "right", "really", "maybe", "look", "listen",
    "come", "on", "please", "sure", "about", "that", "it", "now",
)

QUIZ_BANK = [
    {
        "quiz_id": "quiz-afraid",
        "situation": "I heard footsteps behind me in the empty parking garage.",
        "gold": "Afraid",
        "suggestions": ["Afraid", "Angry", "Surprised"],
    },
    {
        "quiz_id": "quiz-joyful",
        "situation": "My little sister just got into her dream school!",
        "gold": "Joyful",
        "suggestions": ["Joyful", "Proud", "Hopeful"],
    },
    {
        "quiz_id": "quiz-sad",
        "situation": "The old house was sold and we packed the last box today.",
        "gold": "Sad",
        "suggestions": ["Sad", "Nostalgic", "Lonely"],
    },
    {
        "quiz_id": "quiz-questioning",
        "situation": "Wait, how did you even get in here?",
        "gold": "Questioning",
        "suggestions": ["Questioning", "Surprised", "Suggesting"],
    },
    {
        "quiz_id": "quiz-grateful",
        "situation": "You stayed up all night helping me finish this.",
        "gold": "Grateful",
        "suggestions": ["Grateful", "Impressed", "Caring"],
    },
    {
        "quiz_id": "quiz-angry",
        "situation": "He borrowed my car and returned it with an empty tank again.",
        "gold": "Angry",
        "suggestions": ["Angry", "Annoyed", "Disappointed"],
    },
    {
        "quiz_id": "quiz-consoling",
        "situation": "Hey, it could have happened to anyone, honestly.",
        "gold": "Consoling",
        "suggestions": ["Consoling", "Sympathizing", "Encouraging"],
    },
    {
        "quiz_id": "quiz-proud",
        "situation": "I built the whole bookshelf by myself this weekend.",
        "gold": "Proud",
        "suggestions": ["Proud", "Joyful", "Confident"],
    },
]


def make_word(rng: random.Random) -> str:
    return "".join(rng.choice(SYLLABLES) for _ in range(rng.randint(2, 3)))


def class_vocabularies(rng: random.Random, labels) -> dict[str, list[str]]:
    """12 distinct invented words per class, globally unique."""
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
    if rng.random() < 0.35:
        # two sentences in one cue; the boundary model needs same-turn pairs
        tail = rng.sample(FILLER, rng.randint(2, 3))
        return sentence_of(words) + " " + sentence_of(tail)
    return sentence_of(words)


def final_turn(rng: random.Random, pool: list[str], extra: list[str]) -> str:
    words = rng.sample(pool, 5 if extra else 6) + list(extra)
    rng.shuffle(words)
    text = sentence_of(words)
    assert len(text) <= 95, text  # headroom under the 100-char cleaner cap
    return text


def tweak_history(rng: random.Random, text: str) -> str:
    """Swap one word for filler; keeps the twin close but not identical."""
    words = text[:-1].lower().split()
    words[rng.randrange(len(words))] = rng.choice(FILLER)
    return sentence_of(words)


def shuffle_words(rng: random.Random, text: str) -> str:
    words = text[:-1].lower().split()
    rng.shuffle(words)
    return sentence_of(words)


def build_dialogue_texts(rng, vocab, label, group):
    """Turn texts for one dialogue; the last turn carries the class."""
    words = vocab[label]
    if group in ("seed", "twin"):
        pool = words[:8]
    else:
        pool = words[2:10]
    n_history = rng.randint(1, 3)
    history = [history_turn(rng, pool) for _ in range(n_history)]
    return history + [final_turn(rng, pool, [])]


def plant_dialogues(rng, taxonomy, vocab):
    """The 8-per-class plan: 5 seed, 1 twin, 1 fresh, 1 fresh twin."""
    planted = []
    for label in taxonomy.names():
        seeds = []
        for _ in range(5):
            texts = build_dialogue_texts(rng, vocab, label, "seed")
            seeds.append(texts)
            planted.append({"label": label, "group": "seed", "texts": texts})
        donor = rng.choice(seeds)
        twin = [tweak_history(rng, t) for t in donor[:-1]]
        twin.append(shuffle_words(rng, donor[-1]))
        planted.append({"label": label, "group": "twin", "texts": twin})

        noise = [make_word(rng) for _ in range(4)]
        pool = vocab[label][2:10]
        fresh_history = [history_turn(rng, pool) for _ in range(rng.randint(1, 2))]
        fresh_final = final_turn(rng, pool, noise)
        fresh = fresh_history + [fresh_final]
        planted.append({"label": label, "group": "fresh", "texts": fresh})

        fresh_twin = [tweak_history(rng, t) for t in fresh_history]
        fresh_twin.append(shuffle_words(rng, fresh_final))
        planted.append({"label": label, "group": "fresh_twin", "texts": fresh_twin})
    rng.shuffle(planted)
    return planted


JUNK_DIALOGUES = [
    ["Previously on the show.", "He never came back.", "She knew it."],
    ["♪ ♪ ♪", "♪ la la la ♪"],
    ["So here is the thing.", "x" * 140 + ".", "That was too much."],
    ["♪♪♪♪ da da ♪♪♪♪", "### 1998 ###"],
    ["Previously on the series.", "The fire spread fast."],
    ["y" * 130 + ".", "Right."],
]


def timestamped(texts, t0_ms, rng):
    """(text, start, end) rows; in-dialogue gaps stay well under 5 s."""
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


def emit_corpus(out_dir: Path, rng, planted):
    """Spread planted dialogues over 40 files; junk gets 2 more."""
    n_files = 40
    files = {f"film{i:02d}": [] for i in range(n_files)}
    for i, entry in enumerate(planted):
        files[f"film{i % n_files:02d}"].append(entry)

    metadata_rows = []
    for f, (stem, entries) in enumerate(sorted(files.items())):
        cues = []
        t = rng.randint(3000, 9000)
        for n, entry in enumerate(entries):
            rows, t = timestamped(entry["texts"], t, rng)
            cues.extend(rows)
            entry["dialogue_id"] = f"{stem}#{n}"
            entry["turn_index"] = len(entry["texts"]) - 1
            t += rng.randint(6500, 12000)  # force a dialogue split
        genre = GENRES[f % len(GENRES)]
        if f % 5 == 4:
            write_xml(out_dir / f"{stem}.xml", stem, cues, genre)
        else:
            write_srt(out_dir / f"{stem}.srt", cues)
        metadata_rows.append((stem, genre, t + 5000))

    for j, texts_list in enumerate(
        (JUNK_DIALOGUES[:3], JUNK_DIALOGUES[3:]), start=0
    ):
        stem = f"junk{j:02d}"
        cues = []
        t = 2000
        for texts in texts_list:
            rows, t = timestamped(texts, t, rng)
            cues.extend(rows)
            t += rng.randint(6500, 12000)
        write_srt(out_dir / f"{stem}.srt", cues)
        metadata_rows.append((stem, "drama", t + 5000))

    with open(out_dir / "metadata.tsv", "w", encoding="utf-8") as fh:
        fh.write("# doc_id\tgenre\tduration_ms\n")
        for stem, genre, duration in metadata_rows:
            fh.write(f"{stem}\t{genre}\t{duration}\n")


def emit_labels(out_dir: Path, planted):
    seed_rows, all_rows = [], []
    for entry in planted:
        row = {
            "dialogue_id": entry["dialogue_id"],
            "turn_index": entry["turn_index"],
            "label": entry["label"],
        }
        all_rows.append({**row, "group": entry["group"]})
        if entry["group"] == "seed":
            seed_rows.append(row)
    seed_rows.sort(key=lambda r: r["dialogue_id"])
    all_rows.sort(key=lambda r: r["dialogue_id"])
    write_records(out_dir / "seed_labels.jsonl", seed_rows)
    write_records(out_dir / "planted_labels.jsonl", all_rows)


def parse_corpus(out_dir: Path):
    meta = load_metadata(out_dir / "metadata.tsv")
    docs = []
    for path in sorted(out_dir.iterdir()):
        if path.suffix not in (".srt", ".xml"):
            continue
        doc, report = parse_subtitles(
            path.read_bytes(), path.suffix.lstrip("."), doc_id=path.stem
        )
        assert len(report) == 0, f"{path}: {report.entries}"
        docs.append(apply_metadata(doc, meta))
    return docs


def emit_boundary_fixtures(out_dir: Path, docs):
    rows = []
    for doc in docs:
        if doc.doc_id.startswith("junk"):
            continue
        sentences = segment_sentences(doc)
        for inst in build_boundary_instances(doc, sentences):
            labeled = dataclasses.replace(
                inst, label="same_turn" if inst.same_block else "new_turn"
            )
            rows.append(boundary_record(labeled))
    counts = Counter(r["label"] for r in rows)
    assert counts["new_turn"] >= 50 and counts["same_turn"] >= 50, counts
    write_records(out_dir / "boundary_fixtures.jsonl", rows)
    return rows


def replay_pipeline(docs, fixtures):
    """Ingest -> segment -> assemble -> clean, as the CLI would run it."""
    instances = [boundary_from_record(r) for r in fixtures]
    model, _ = train_segmenter(instances, SegmenterConfig(seed=0))
    turns = []
    for doc in docs:
        sentences = segment_sentences(doc)
        turns.extend(segment_turns(doc, sentences, model))
    dialogues = split_dialogues(turns, gap_ms=5000)
    cleaned, report = clean_dialogues(dialogues)
    return cleaned, report


def check_alignment(planted, cleaned):
    got = {d.dialogue_id: d for d in cleaned}
    want = {e["dialogue_id"]: e for e in planted}
    missing = sorted(set(want) - set(got))
    extra = sorted(set(got) - set(want))
    assert not missing, f"planted dialogues lost in cleaning: {missing[:5]}"
    assert not extra, f"unexpected survivors: {extra[:5]}"
    for dialogue_id, entry in want.items():
        texts = [t.text for t in got[dialogue_id].turns]
        assert texts == entry["texts"], (
            f"{dialogue_id}: turn texts diverged\n{texts}\nvs\n{entry['texts']}"
        )


def check_cosine_margins(planted):
    """Twins must clear their thresholds; fresh must stay under 0.92."""
    embedder = BuiltinEmbedder()

    def vector(texts):
        return embed_dialogue(embedder.embed_texts(texts)).vector

    by_class: dict[str, dict[str, list]] = {}
    for entry in planted:
        by_class.setdefault(entry["label"], {}).setdefault(
            entry["group"], []
        ).append(entry)

    worst_twin, worst_fresh_twin, worst_gap = 1.0, 1.0, 0.0
    for label, groups in by_class.items():
        seed_vecs = [vector(e["texts"]) for e in groups["seed"]]
        twin_vec = vector(groups["twin"][0]["texts"])
        fresh_vec = vector(groups["fresh"][0]["texts"])
        fresh_twin_vec = vector(groups["fresh_twin"][0]["texts"])

        best_twin = max(cosine(twin_vec, s) for s in seed_vecs)
        worst_twin = min(worst_twin, best_twin)
        assert best_twin >= 0.925, f"{label}: twin cosine {best_twin:.4f}"

        fresh_vs_seed = max(cosine(fresh_vec, s) for s in seed_vecs)
        twin_vs_seed = max(cosine(fresh_twin_vec, s) for s in seed_vecs)
        worst_gap = max(worst_gap, fresh_vs_seed, twin_vs_seed)
        assert fresh_vs_seed <= 0.915, f"{label}: fresh too close {fresh_vs_seed:.4f}"
        assert twin_vs_seed <= 0.915, f"{label}: fresh twin too close"

        pair = cosine(fresh_twin_vec, fresh_vec)
        worst_fresh_twin = min(worst_fresh_twin, pair)
        assert pair >= 0.905, f"{label}: fresh twin cosine {pair:.4f}"
    print(
        f"cosine margins: twin >= {worst_twin:.4f}, "
        f"fresh twin >= {worst_fresh_twin:.4f}, "
        f"cross <= {worst_gap:.4f}"
    )


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--out", type=Path, default=Path(__file__).resolve().parent.parent / "corpus"
    )
    args = parser.parse_args()
    out_dir: Path = args.out
    out_dir.mkdir(parents=True, exist_ok=True)

    rng = random.Random(SEED)
    taxonomy = default_taxonomy()
    vocab = class_vocabularies(rng, taxonomy.names())
    planted = plant_dialogues(rng, taxonomy, vocab)
    emit_corpus(out_dir, rng, planted)
    emit_labels(out_dir, planted)
    write_records(out_dir / "quiz_bank.jsonl", QUIZ_BANK)

    docs = parse_corpus(out_dir)
    fixtures = emit_boundary_fixtures(out_dir, docs)
    cleaned, report = replay_pipeline(docs, fixtures)
    check_alignment(planted, cleaned)
    check_cosine_margins(planted)

    n_turns = sum(len(d.turns) for d in cleaned)
    print(
        f"wrote {len(planted)} dialogues ({n_turns} turns) over 42 files; "
        f"cleaning removed {report.removed_turn_total()} turns from junk"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
