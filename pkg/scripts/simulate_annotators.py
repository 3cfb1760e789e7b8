"""Simulate crowd workers answering the built HITs.

Drives the same append-only event store the annotation service writes,
so `aggregate` and `kappa` can run afterwards without a live crowd.
Workers answer dialogue items with the planted label (minus a noise
rate) and quiz items with the gold answer (minus a miss rate), so the
quiz gate, agreement rates, and kappa all land in realistic bands.

    python3 scripts/simulate_annotators.py --work-dir work --corpus corpus
"""

from __future__ import annotations

import argparse
import random
import sys
from collections import Counter
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from subdial.annotation import (
    AnnotationRecord,
    AnnotationStore,
    hit_from_record,
)
from subdial.jsonl import read_records
from subdial.taxonomy import default_taxonomy

EVENTS_FILE = "annotation_events.jsonl"


def answer_items(store, hit, worker_id, truth, names, rng, args, clock):
    answered = set(store.answered_items(worker_id, hit.hit_id))
    for item in hit.items:
        if item.item_id in answered:
            continue
        if item.kind == "quiz":
            if rng.random() < args.quiz_accuracy:
                label = item.gold
            else:
                wrong = [s for s, _ in item.suggestions if s != item.gold]
                label = rng.choice(wrong) if wrong else item.gold
            custom = None
        elif rng.random() < args.custom_rate:
            label, custom = None, "off-script"
        elif rng.random() < args.noise:
            label, custom = rng.choice(names), None
        else:
            label, custom = truth.get(item.item_id, names[0]), None
        suggested = {s for s, _ in item.suggestions}
        store.record(
            AnnotationRecord(
                worker_id=worker_id,
                hit_id=hit.hit_id,
                item_id=item.item_id,
                turn_index=item.turn_index,
                label=label,
                custom_label=custom,
                chose_from_top3=label in suggested,
                timestamp=next(clock),
            )
        )


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--work-dir", type=Path, default=Path("work"))
    parser.add_argument("--corpus", type=Path, default=Path("corpus"))
    parser.add_argument("--workers", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--quiz-accuracy", type=float, default=0.92)
    parser.add_argument("--noise", type=float, default=0.08)
    parser.add_argument("--custom-rate", type=float, default=0.01)
    args = parser.parse_args()

    hits_path = args.work_dir / "hits.jsonl"
    if not hits_path.exists():
        print("no hits.jsonl under the work dir; run 'serve-annotation' first",
              file=sys.stderr)
        return 3
    truth = {
        r["dialogue_id"]: r["label"]
        for r in read_records(args.corpus / "planted_labels.jsonl")
    }
    names = default_taxonomy().names()

    store = AnnotationStore(args.work_dir / EVENTS_FILE)
    if not store.hits():
        store.add_hits([hit_from_record(r) for r in read_records(hits_path)])

    def ticker():
        t = 1_700_000_000.0
        while True:
            t += 1.0
            yield t

    clock = ticker()
    total = 0
    for w in range(args.workers):
        worker_id = f"sim-{w:02d}"
        rng = random.Random((args.seed, w))
        while True:
            hit = store.claim_next(worker_id)
            if hit is None:
                break
            answer_items(store, hit, worker_id, truth, names, rng, args, clock)
            total += 1

    by_worker = Counter(r.worker_id for r in store.records())
    print(f"{args.workers} workers completed {total} assignments "
          f"({sum(by_worker.values())} item annotations on record)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
