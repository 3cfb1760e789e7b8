"""Staged self-training schedule, dataset splitting and evaluation metrics.

The canonical schedule has four stages, each training on a strict
superset of the previous stage's data:

1. base: seed labeled dialogues only
2. similar: plus unlabeled dialogues within cosine 0.92 of a labeled one
3. self_labeled: plus the model's own top-100-per-class confident turns
4. similar_to_self: plus dialogues within cosine 0.9 of those

Metrics are macro precision/recall/F1 and micro accuracy on a 0..100
scale, all derived from a gold-by-predicted confusion matrix. A class
with no gold rows or no predictions scores 0, so macro averages stay
defined over the full label set.
"""
from __future__ import annotations

import logging
import random
from dataclasses import dataclass

import numpy as np

from .classifier import ClassifierConfig, NGramSoftmaxModel, predict, train_classifier
from .context import DEFAULT_HISTORY, ContextWindow
from .labeling import SelectedTurn
from .taxonomy import LabelTaxonomy

log = logging.getLogger(__name__)

STAGE_BASE = "base"
STAGE_SIMILAR = "similar"
STAGE_SELF = "self_labeled"
STAGE_SIMILAR_TO_SELF = "similar_to_self"


@dataclass(frozen=True)
class StageSpec:
    name: str
    description: str
    tau: float | None = None  # cosine threshold for similarity stages
    per_class: int | None = None  # selection size for self-labeling
    config: ClassifierConfig | None = None  # per-stage hyper override


@dataclass(frozen=True)
class IterationPlan:
    stages: tuple[StageSpec, ...]
    seed: int = 0

    def __post_init__(self):
        if not self.stages:
            raise ValueError("plan needs at least one stage")
        names = [s.name for s in self.stages]
        if len(set(names)) != len(names):
            raise ValueError("stage names must be unique")
        if names[0] != STAGE_BASE:
            raise ValueError("the first stage must train on the base data alone")


def default_plan(seed: int = 0, config: ClassifierConfig | None = None) -> IterationPlan:
    return IterationPlan(
        stages=(
            StageSpec(STAGE_BASE, "crowd-labeled dialogues", config=config),
            StageSpec(
                STAGE_SIMILAR,
                "+ dialogues similar to labeled ones",
                tau=0.92,
                config=config,
            ),
            StageSpec(
                STAGE_SELF,
                "+ self-labeled confident turns",
                per_class=100,
                config=config,
            ),
            StageSpec(
                STAGE_SIMILAR_TO_SELF,
                "+ dialogues similar to self-labeled ones",
                tau=0.9,
                config=config,
            ),
        ),
        seed=seed,
    )


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    balanced: bool = True

    def __post_init__(self):
        parts = (set(self.train), set(self.validation), set(self.test))
        if sum(len(p) for p in parts) != len(set().union(*parts)):
            raise ValueError("split parts must be disjoint")

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


def split_balanced(
    labels_by_id: dict[str, str],
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
    balanced: bool = True,
) -> DatasetSplit:
    """Seeded per-class shuffle, then proportional train/val/test allocation.

    With ``balanced`` the test set takes the same number of dialogues
    from every class; the smallest class with >= 3 examples sets that
    count. Classes under 3 examples go entirely to train, with a warning.
    """
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be 3 non-negatives summing to 1: {fractions}")
    if not labels_by_id:
        raise ValueError("no labeled dialogues to split")

    by_class: dict[str, list[str]] = {}
    for did in sorted(labels_by_id):
        by_class.setdefault(labels_by_id[did], []).append(did)

    small = {c for c, ids in by_class.items() if len(ids) < 3}
    for c in sorted(small):
        log.warning(
            "class %s has only %d examples; keeping all of them in train",
            c,
            len(by_class[c]),
        )

    _, f_val, f_test = fractions
    eligible = [ids for c, ids in by_class.items() if c not in small]
    test_per_class = 0
    if balanced and eligible:
        test_per_class = min(max(1, int(f_test * len(ids))) for ids in eligible)

    rng = random.Random(seed)
    train: list[str] = []
    val: list[str] = []
    test: list[str] = []
    for c in sorted(by_class):
        ids = list(by_class[c])
        rng.shuffle(ids)
        if c in small:
            train += ids
            continue
        n_test = test_per_class if balanced else int(f_test * len(ids))
        n_val = int(f_val * len(ids))
        test += ids[:n_test]
        val += ids[n_test : n_test + n_val]
        train += ids[n_test + n_val :]
    return DatasetSplit(
        tuple(sorted(train)),
        tuple(sorted(val)),
        tuple(sorted(test)),
        tuple(fractions),
        balanced,
    )


def self_label(
    dialogues: list,
    labeler,
    taxonomy: LabelTaxonomy,
    per_class: int = 100,
) -> list[SelectedTurn]:
    """Per class, the top ``per_class`` most confident argmax turns.

    Each turn counts toward its argmax class only. Ties break on
    (dialogue id, turn index) so selection is deterministic.
    """
    if per_class < 0:
        raise ValueError("per_class must be >= 0")
    if per_class == 0:
        return []
    by_class: dict[str, list[SelectedTurn]] = {}
    for dialogue in dialogues:
        for i, pred in enumerate(labeler(dialogue)):
            by_class.setdefault(pred.top, []).append(
                SelectedTurn(
                    dialogue_id=dialogue.dialogue_id,
                    turn_index=i,
                    label=pred.top,
                    confidence=pred.confidence,
                    turns=dialogue.turns[: i + 1],
                )
            )
    out: list[SelectedTurn] = []
    for name in taxonomy.names():
        got = by_class.get(name)
        if not got:
            log.warning("self-labeling found no turns predicted as %s", name)
            continue
        got.sort(key=lambda s: (-s.confidence, s.dialogue_id, s.turn_index))
        out.extend(got[:per_class])
    return out


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    macro_f1: float
    accuracy: float
    confusion: tuple[tuple[int, ...], ...]  # rows gold, columns predicted
    labels: tuple[str, ...]

    def __post_init__(self):
        n = len(self.labels)
        if len(self.confusion) != n or any(len(row) != n for row in self.confusion):
            raise ValueError("confusion matrix must be square over the labels")
        for value in (self.precision, self.recall, self.macro_f1, self.accuracy):
            if not 0.0 <= value <= 100.0:
                raise ValueError(f"metric out of [0, 100]: {value}")


def metrics_from_confusion(
    confusion, labels: tuple[str, ...]
) -> MetricsReport:
    mat = np.asarray(confusion, dtype=np.float64)
    if mat.shape != (len(labels), len(labels)):
        raise ValueError(f"confusion shape {mat.shape} does not fit {len(labels)} labels")
    if mat.min() < 0:
        raise ValueError("confusion counts must be non-negative")
    total = mat.sum()
    if total == 0:
        raise ValueError("confusion matrix is empty")
    diag = np.diag(mat).astype(np.float64)
    gold = mat.sum(axis=1)
    predicted = mat.sum(axis=0)
    p = np.divide(diag, predicted, out=np.zeros_like(diag), where=predicted > 0)
    r = np.divide(diag, gold, out=np.zeros_like(diag), where=gold > 0)
    denom = p + r
    f1 = np.divide(2.0 * p * r, denom, out=np.zeros_like(denom), where=denom > 0)
    return MetricsReport(
        precision=float(p.mean() * 100.0),
        recall=float(r.mean() * 100.0),
        macro_f1=float(f1.mean() * 100.0),
        accuracy=float(diag.sum() / total * 100.0),
        confusion=tuple(tuple(int(x) for x in row) for row in np.asarray(confusion)),
        labels=tuple(labels),
    )


@dataclass(frozen=True)
class TrainingExample:
    """A labeled context window that remembers which dialogue it came from."""

    window: ContextWindow
    dialogue_id: str

    def __post_init__(self):
        if self.window.label is None:
            raise ValueError("training example needs a labeled window")


def example_from_selected(sel: SelectedTurn, k: int = DEFAULT_HISTORY) -> TrainingExample:
    history = sel.turns[:-1]
    return TrainingExample(
        window=ContextWindow(
            target_turn=sel.turns[-1],
            history=tuple(history[-k:]) if k > 0 else (),
            label=sel.label,
        ),
        dialogue_id=sel.dialogue_id,
    )


def evaluate(model: NGramSoftmaxModel, examples: list[TrainingExample]) -> MetricsReport:
    """Confusion-matrix metrics on held-out examples.

    Refuses to score any example whose dialogue id appears in the
    model's recorded training ids.
    """
    if not examples:
        raise ValueError("nothing to evaluate")
    train_ids = set(model.training_meta.get("train_dialogue_ids", ()))
    overlap = train_ids & {ex.dialogue_id for ex in examples}
    if overlap:
        raise ValueError(
            f"evaluation data leaks {len(overlap)} training dialogues, "
            f"e.g. {sorted(overlap)[:3]}"
        )
    names = model.taxonomy.names()
    index = {name: i for i, name in enumerate(names)}
    confusion = [[0] * len(names) for _ in names]
    for ex in examples:
        if ex.window.label is None:
            raise ValueError(f"example from {ex.dialogue_id} has no gold label")
        gold = index[ex.window.label]
        confusion[gold][index[predict(model, ex.window).top]] += 1
    return metrics_from_confusion(confusion, names)


@dataclass
class StageResult:
    name: str
    description: str
    n_train: int
    model: NGramSoftmaxModel
    metrics: MetricsReport


class StageError(RuntimeError):
    """A stage failed; ``completed`` holds results of finished stages."""

    def __init__(self, stage: str, completed: list[StageResult], cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.completed = completed


def run_iterations(
    plan: IterationPlan,
    base: list[TrainingExample],
    providers: dict,
    validation: list[ContextWindow],
    test: list[TrainingExample],
    taxonomy: LabelTaxonomy,
    config: ClassifierConfig | None = None,
) -> list[StageResult]:
    """Train the plan's stages in order, accumulating training data.

    ``providers`` maps a stage name to a callable
    ``(model, StageSpec) -> list[TrainingExample]`` that produces that
    stage's additions given the previous stage's model. The training
    set only ever grows, so later stages train on supersets.
    """
    if not base:
        raise ValueError("the base stage has no training data")
    train = list(base)
    results: list[StageResult] = []
    model: NGramSoftmaxModel | None = None
    for stage in plan.stages:
        try:
            if stage.name != STAGE_BASE:
                additions = list(providers[stage.name](model, stage))
                log.info("stage %s adds %d examples", stage.name, len(additions))
                train = train + additions
            model = train_classifier(
                [ex.window for ex in train],
                taxonomy,
                stage.config or config,
                validation=validation or None,
                train_ids=[ex.dialogue_id for ex in train],
            )
            metrics = evaluate(model, test)
        except Exception as exc:
            log.error("aborting at stage %s with %d stages done: %s", stage.name, len(results), exc)
            raise StageError(stage.name, results, exc) from exc
        results.append(StageResult(stage.name, stage.description, len(train), model, metrics))
    return results


def report_records(results: list[StageResult]) -> list[dict]:
    return [
        {
            "stage": r.name,
            "training_data": r.description,
            "n_train": r.n_train,
            "precision": r.metrics.precision,
            "recall": r.metrics.recall,
            "macro_f1": r.metrics.macro_f1,
            "accuracy": r.metrics.accuracy,
        }
        for r in results
    ]


def render_report(results: list[StageResult]) -> str:
    """Fixed-width text table, one row per completed stage."""
    headers = ("Stage", "Training data", "Precision", "Recall", "Macro-F1", "Accuracy")
    rows = [
        (
            r.name,
            f"{r.description} ({r.n_train} examples)",
            f"{r.metrics.precision:.2f}",
            f"{r.metrics.recall:.2f}",
            f"{r.metrics.macro_f1:.2f}",
            f"{r.metrics.accuracy:.2f}",
        )
        for r in results
    ]
    widths = [
        max(len(headers[i]), *(len(row[i]) for row in rows)) if rows else len(headers[i])
        for i in range(len(headers))
    ]
    def fmt(row):
        return " | ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
    lines = [fmt(headers), "-+-".join("-" * w for w in widths)]
    lines.extend(fmt(row) for row in rows)
    return "\n".join(lines) + "\n"
