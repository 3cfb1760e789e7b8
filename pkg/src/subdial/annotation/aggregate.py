"""Majority-vote aggregation, Fleiss' kappa and worker quality gating."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass

from .models import QUIZ, AnnotationRecord, HIT

log = logging.getLogger(__name__)

QUORUM = 2
RATERS = 3
QUIZ_PASS_MARK = 3  # of the 5 quiz questions per HIT

GATE_EXCLUDE = "exclude"
GATE_DOWNWEIGHT = "downweight"
GATE_KEEP = "keep"


def normalize_label(text: str) -> str:
    """Case-fold and trim so 'Greeting ' and 'greeting' vote together."""
    return text.strip().casefold()


def record_choice(record: AnnotationRecord) -> str:
    if record.label is not None:
        return record.label
    return normalize_label(record.custom_label)


@dataclass(frozen=True)
class AggregationResult:
    item_id: str
    turn_index: int
    label: str | None  # None when unresolved
    agreement: float  # votes behind the leading label (weighted)
    raters: int

    def resolved(self) -> bool:
        return self.label is not None


def aggregate_majority(
    records: list[AnnotationRecord],
    quorum: int = QUORUM,
    raters: int = RATERS,
    count_custom: bool = True,
    weights: dict[int, float] | None = None,
) -> list[AggregationResult]:
    """Resolve each (item, turn) to the label with >= quorum votes.

    Custom labels participate after normalization unless
    ``count_custom`` is off. ``weights`` optionally maps a record's
    position in ``records`` to a vote weight (used for downweighted
    workers); missing entries weigh 1.
    """
    groups: dict[tuple[str, int], list[tuple[AnnotationRecord, float]]] = {}
    for i, record in enumerate(records):
        weight = 1.0 if weights is None else weights.get(i, 1.0)
        groups.setdefault((record.item_id, record.turn_index), []).append(
            (record, weight)
        )
    out = []
    for (item_id, turn_index), got in sorted(groups.items()):
        workers = [r.worker_id for r, _ in got]
        if len(set(workers)) != len(workers):
            raise ValueError(f"duplicate worker votes on {item_id}")
        if len(got) > raters:
            raise ValueError(
                f"{item_id} has {len(got)} ratings for {raters} raters; "
                "assignment bug upstream"
            )
        votes: Counter[str] = Counter()
        for record, weight in got:
            if record.custom_label is not None and not count_custom:
                continue
            votes[record_choice(record)] += weight
        label, agreement = None, 0.0
        if votes:
            # sort by count desc then name, so equal-vote cases are stable
            best = sorted(votes.items(), key=lambda kv: (-kv[1], kv[0]))[0]
            agreement = best[1]
            if best[1] >= quorum:
                label = best[0]
        out.append(AggregationResult(item_id, turn_index, label, agreement, len(got)))
    return out


def coverage(results: list[AggregationResult]) -> float:
    if not results:
        raise ValueError("no aggregation results")
    return sum(1 for r in results if r.resolved()) / len(results)


def aggregation_record(result: AggregationResult) -> dict:
    return {
        "item_id": result.item_id,
        "turn_index": result.turn_index,
        "label": result.label,
        "agreement": result.agreement,
        "raters": result.raters,
    }


def aggregation_from_record(record: dict) -> AggregationResult:
    return AggregationResult(
        record["item_id"],
        record["turn_index"],
        record["label"],
        record["agreement"],
        record["raters"],
    )


def fleiss_kappa(counts: list[list[int]]) -> float:
    """Fleiss' kappa over an item-by-category count matrix.

    Rows whose rating total deviates from the majority total are
    excluded (and reported); kappa needs a constant rater count.
    """
    if not counts:
        raise ValueError("no items")
    totals = [sum(row) for row in counts]
    n = Counter(totals).most_common(1)[0][0]
    if n < 2:
        raise ValueError(f"need >= 2 ratings per item, majority has {n}")
    rows = [row for row, total in zip(counts, totals) if total == n]
    dropped = len(counts) - len(rows)
    if dropped:
        log.warning(
            "fleiss_kappa: excluded %d of %d items with rating count != %d",
            dropped,
            len(counts),
            n,
        )
    n_items = len(rows)
    k = len(rows[0])
    if any(len(row) != k for row in rows):
        raise ValueError("ragged category counts")
    # per-item observed agreement, then chance agreement from margins
    p_bar = sum(
        (sum(c * c for c in row) - n) / (n * (n - 1)) for row in rows
    ) / n_items
    p_e = sum(
        (sum(row[j] for row in rows) / (n_items * n)) ** 2 for j in range(k)
    )
    if 1.0 - p_e < 1e-12:
        return 1.0 if p_bar > 1.0 - 1e-12 else 0.0
    return (p_bar - p_e) / (1.0 - p_e)


def fleiss_kappa_from_records(
    records: list[AnnotationRecord], categories: list[str] | None = None
) -> float:
    """Group records by (item, turn) and run kappa over vote counts."""
    if categories is None:
        categories = sorted({record_choice(r) for r in records})
    index = {c: i for i, c in enumerate(categories)}
    by_item: dict[tuple[str, int], list[int]] = {}
    for record in records:
        row = by_item.setdefault(
            (record.item_id, record.turn_index), [0] * len(categories)
        )
        row[index[record_choice(record)]] += 1
    return fleiss_kappa([by_item[key] for key in sorted(by_item)])


@dataclass(frozen=True)
class WorkerGrade:
    worker_id: str
    per_hit: tuple[tuple[str, int, int], ...]  # (hit_id, correct, answered)
    failed_hits: tuple[str, ...]

    def passed(self, hit_id: str) -> bool:
        return hit_id not in self.failed_hits


def grade_worker(
    worker_id: str,
    records: list[AnnotationRecord],
    hits: dict[str, HIT],
    pass_mark: int = QUIZ_PASS_MARK,
) -> WorkerGrade:
    """Per-HIT quiz score; a HIT fails when correct answers < pass_mark.

    Only graded once the worker answered all quiz items of the HIT; an
    unfinished quiz cannot fail.
    """
    per_hit: dict[str, tuple[int, int]] = {}
    for record in records:
        if record.worker_id != worker_id:
            continue
        hit = hits.get(record.hit_id)
        if hit is None:
            raise KeyError(f"record references unknown hit {record.hit_id}")
        item = hit.item(record.item_id)
        if item is None or item.kind != QUIZ:
            continue
        correct, answered = per_hit.get(record.hit_id, (0, 0))
        if normalize_label(record_choice(record)) == normalize_label(item.gold):
            correct += 1
        per_hit[record.hit_id] = (correct, answered + 1)
    failed = tuple(
        sorted(
            hit_id
            for hit_id, (correct, answered) in per_hit.items()
            if answered >= len(hits[hit_id].quiz_items()) and correct < pass_mark
        )
    )
    return WorkerGrade(
        worker_id=worker_id,
        per_hit=tuple((h, c, a) for h, (c, a) in sorted(per_hit.items())),
        failed_hits=failed,
    )


def filter_gated_records(
    records: list[AnnotationRecord],
    hits: dict[str, HIT],
    policy: str = GATE_EXCLUDE,
    pass_mark: int = QUIZ_PASS_MARK,
    downweight: float = 0.5,
) -> tuple[list[AnnotationRecord], dict[int, float] | None]:
    """Dialogue records ready for aggregation, quiz-gate policy applied.

    Quiz records never aggregate. With ``exclude``, dialogue records
    from a (worker, HIT) that failed its quiz gate are dropped; with
    ``downweight`` they stay at reduced vote weight; ``keep`` ignores
    the gate. Returns (records, weights-by-index or None).
    """
    if policy not in (GATE_EXCLUDE, GATE_DOWNWEIGHT, GATE_KEEP):
        raise ValueError(f"unknown gate policy: {policy!r}")
    failed: set[tuple[str, str]] = set()
    if policy != GATE_KEEP:
        for worker_id in sorted({r.worker_id for r in records}):
            grade = grade_worker(worker_id, records, hits, pass_mark)
            failed.update((worker_id, h) for h in grade.failed_hits)
        if failed:
            log.info("quiz gate flagged %d (worker, hit) pairs [%s]", len(failed), policy)

    kept: list[AnnotationRecord] = []
    weights: dict[int, float] = {}
    for record in records:
        hit = hits.get(record.hit_id)
        if hit is None:
            raise KeyError(f"record references unknown hit {record.hit_id}")
        item = hit.item(record.item_id)
        if item is None or item.kind == QUIZ:
            continue
        flagged = (record.worker_id, record.hit_id) in failed
        if flagged and policy == GATE_EXCLUDE:
            continue
        if flagged and policy == GATE_DOWNWEIGHT:
            weights[len(kept)] = downweight
        kept.append(record)
    return kept, (weights or None)


@dataclass(frozen=True)
class CustomLabel:
    label: str  # normalized form
    count: int
    examples: tuple[str, ...]  # up to 3 item ids


def harvest_new_labels(
    records: list[AnnotationRecord], max_examples: int = 3
) -> list[CustomLabel]:
    """Distinct custom labels by frequency, each with example items."""
    counts: Counter[str] = Counter()
    examples: dict[str, list[str]] = {}
    for record in records:
        if record.custom_label is None:
            continue
        name = normalize_label(record.custom_label)
        counts[name] += 1
        got = examples.setdefault(name, [])
        if len(got) < max_examples and record.item_id not in got:
            got.append(record.item_id)
    return [
        CustomLabel(name, count, tuple(examples[name]))
        for name, count in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    ]
