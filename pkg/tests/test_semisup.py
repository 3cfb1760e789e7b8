import logging

import numpy as np
import pytest

from subdial.assembly import Dialogue, Turn
from subdial.classifier import ClassifierConfig, Prediction, new_model
from subdial.context import ContextWindow
from subdial.semisup import (
    STAGE_BASE,
    IterationPlan,
    MetricsReport,
    StageError,
    StageSpec,
    TrainingExample,
    default_plan,
    evaluate,
    example_from_selected,
    metrics_from_confusion,
    render_report,
    report_records,
    run_iterations,
    self_label,
    split_balanced,
)
from subdial.taxonomy import EMOTION, INTENT, LabelTaxonomy, default_taxonomy

TAX3 = LabelTaxonomy(
    labels=(("Joyful", EMOTION), ("Sad", EMOTION), ("Questioning", INTENT))
)


def _turn(text: str) -> Turn:
    return Turn(text, None, None, "doc")


def _example(did: str, text: str, label: str) -> TrainingExample:
    return TrainingExample(
        window=ContextWindow(target_turn=_turn(text), label=label), dialogue_id=did
    )


# --- metrics ---------------------------------------------------------------


def test_hand_confusion_matrix_oracle():
    got = metrics_from_confusion([[2, 1, 0], [0, 3, 0], [1, 0, 2]], ("a", "b", "c"))
    assert abs(got.precision - 100 * (2 / 3 + 3 / 4 + 1) / 3) < 1e-9
    assert abs(got.recall - 100 * (2 / 3 + 1 + 2 / 3) / 3) < 1e-9
    assert abs(got.macro_f1 - 100 * (2 / 3 + 6 / 7 + 4 / 5) / 3) < 1e-9
    assert abs(got.accuracy - 100 * 7 / 9) < 1e-9


def test_perfect_predictor_scores_100():
    got = metrics_from_confusion([[2, 0], [0, 3]], ("a", "b"))
    assert got.precision == got.recall == got.macro_f1 == got.accuracy == 100.0


def test_absent_class_scores_zero_in_macro_averages():
    got = metrics_from_confusion([[1, 0, 1], [0, 2, 0], [0, 0, 0]], ("a", "b", "c"))
    assert abs(got.precision - 100 * (1 + 1 + 0) / 3) < 1e-9
    assert abs(got.recall - 100 * (0.5 + 1 + 0) / 3) < 1e-9
    assert abs(got.macro_f1 - 100 * (2 / 3 + 1 + 0) / 3) < 1e-9
    assert abs(got.accuracy - 75.0) < 1e-9


def test_constant_predictor_on_balanced_41_classes():
    names = default_taxonomy().names()
    confusion = [[0] * 41 for _ in range(41)]
    for gold in range(41):
        confusion[gold][0] = 2
    got = metrics_from_confusion(confusion, names)
    assert abs(got.accuracy - 100 / 41) < 1e-9
    assert abs(got.recall - 100 / 41) < 1e-9


def test_metrics_reconstructible_from_confusion():
    rng = np.random.default_rng(0)
    confusion = rng.integers(0, 9, size=(5, 5))
    labels = tuple("abcde")
    first = metrics_from_confusion(confusion, labels)
    again = metrics_from_confusion(first.confusion, first.labels)
    assert first == again


def test_metrics_validation():
    with pytest.raises(ValueError):
        metrics_from_confusion([[1, 0]], ("a", "b"))
    with pytest.raises(ValueError):
        metrics_from_confusion([[-1, 0], [0, 1]], ("a", "b"))
    with pytest.raises(ValueError):
        metrics_from_confusion([[0, 0], [0, 0]], ("a", "b"))
    with pytest.raises(ValueError):
        MetricsReport(101.0, 0.0, 0.0, 0.0, ((1,),), ("a",))


# --- splitting -------------------------------------------------------------


def _labels(per_class: dict[str, int]) -> dict[str, str]:
    return {
        f"{label}#{i}": label for label, n in per_class.items() for i in range(n)
    }


def test_split_ten_per_class_gives_6_2_2():
    labels_by_id = _labels({name: 10 for name in default_taxonomy().names()})
    split = split_balanced(labels_by_id, seed=3)
    assert split.sizes() == (41 * 6, 41 * 2, 41 * 2)
    for part, want in ((split.train, 6), (split.validation, 2), (split.test, 2)):
        per_class: dict[str, int] = {}
        for did in part:
            label = labels_by_id[did]
            per_class[label] = per_class.get(label, 0) + 1
        assert set(per_class.values()) == {want}


def test_split_is_deterministic_per_seed():
    labels_by_id = _labels({"a": 10, "b": 10, "c": 10})
    one = split_balanced(labels_by_id, seed=7)
    two = split_balanced(labels_by_id, seed=7)
    other = split_balanced(labels_by_id, seed=8)
    assert one == two
    assert one.train != other.train


def test_split_parts_are_disjoint_and_cover_input():
    labels_by_id = _labels({"a": 13, "b": 5, "c": 29})
    split = split_balanced(labels_by_id, seed=0)
    parts = set(split.train) | set(split.validation) | set(split.test)
    assert parts == set(labels_by_id)
    assert len(split.train) + len(split.validation) + len(split.test) == len(parts)


def test_tiny_class_goes_entirely_to_train(caplog):
    labels_by_id = _labels({"a": 10, "tiny": 2})
    with caplog.at_level(logging.WARNING, logger="subdial.semisup"):
        split = split_balanced(labels_by_id, seed=0)
    assert {d for d in split.train if d.startswith("tiny")} == {"tiny#0", "tiny#1"}
    assert not [d for d in split.validation + split.test if d.startswith("tiny")]
    assert any("tiny" in r.getMessage() for r in caplog.records)


def test_balanced_split_equalizes_test_counts():
    labels_by_id = _labels({"a": 30, "b": 6})
    split = split_balanced(labels_by_id, seed=1)
    counts = {"a": 0, "b": 0}
    for did in split.test:
        counts[labels_by_id[did]] += 1
    assert counts["a"] == counts["b"] == 1  # floor(0.2 * 6) = 1 sets the cap


def test_unbalanced_split_is_proportional():
    labels_by_id = _labels({"a": 30, "b": 6})
    split = split_balanced(labels_by_id, seed=1, balanced=False)
    counts = {"a": 0, "b": 0}
    for did in split.test:
        counts[labels_by_id[did]] += 1
    assert counts == {"a": 6, "b": 1}


def test_split_rejects_bad_fractions():
    with pytest.raises(ValueError):
        split_balanced({"x#1": "a"}, fractions=(0.5, 0.2, 0.2))
    with pytest.raises(ValueError):
        split_balanced({})


# --- self-labeling ---------------------------------------------------------


def _pred(label: str, conf: float) -> Prediction:
    names = TAX3.names()
    rest = (1.0 - conf) / (len(names) - 1)
    dist = tuple(conf if n == label else rest for n in names)
    return Prediction(top=label, confidence=conf, distribution=dist, labels=names)


def _dlg(did: str, n_turns: int) -> Dialogue:
    return Dialogue(did, "doc", tuple(_turn(f"t{i} of {did}") for i in range(n_turns)))


def _stub_labeler(table: dict):
    def labeler(dialogue):
        return [_pred(lab, conf) for lab, conf in table[dialogue.dialogue_id]]

    return labeler


def test_self_label_matches_sort_oracle():
    table = {
        "d#1": [("Joyful", 0.9), ("Sad", 0.8), ("Joyful", 0.7)],
        "d#2": [("Joyful", 0.95), ("Joyful", 0.85), ("Sad", 0.6)],
        "d#3": [("Sad", 0.99), ("Joyful", 0.5), ("Sad", 0.7)],
    }
    dialogues = [_dlg(did, len(preds)) for did, preds in table.items()]
    per_class = 2

    items = [
        (label, conf, did, idx)
        for did, preds in table.items()
        for idx, (label, conf) in enumerate(preds)
    ]
    want = set()
    for label in {it[0] for it in items}:
        ranked = sorted(
            (it for it in items if it[0] == label),
            key=lambda it: (-it[1], it[2], it[3]),
        )
        want |= {(did, idx, label) for label, _, did, idx in ranked[:per_class]}

    got = self_label(dialogues, _stub_labeler(table), TAX3, per_class=per_class)
    assert {(s.dialogue_id, s.turn_index, s.label) for s in got} == want


def test_self_label_selection_correctness():
    table = {
        "d#1": [("Joyful", 0.9), ("Joyful", 0.7)],
        "d#2": [("Joyful", 0.8), ("Joyful", 0.6)],
    }
    dialogues = [_dlg(did, 2) for did in table]
    got = self_label(dialogues, _stub_labeler(table), TAX3, per_class=2)
    joyful = [s.confidence for s in got if s.label == "Joyful"]
    assert len(joyful) == 2
    assert min(joyful) >= 0.8  # the 3rd best candidate has 0.7


def test_self_label_per_class_zero_is_empty():
    assert self_label([], _stub_labeler({}), TAX3, per_class=0) == []


def test_self_label_warns_on_empty_class(caplog):
    table = {"d#1": [("Joyful", 0.9), ("Joyful", 0.8)]}
    with caplog.at_level(logging.WARNING, logger="subdial.semisup"):
        got = self_label([_dlg("d#1", 2)], _stub_labeler(table), TAX3, per_class=5)
    assert {s.label for s in got} == {"Joyful"}
    messages = [r.getMessage() for r in caplog.records]
    assert any("Sad" in m for m in messages)
    assert any("Questioning" in m for m in messages)


def test_selected_turns_carry_history_into_examples():
    sel_dialogue = _dlg("d#9", 6)
    table = {"d#9": [("Sad", 0.4)] * 5 + [("Joyful", 0.99)]}
    (sel,) = self_label([sel_dialogue], _stub_labeler(table), TAX3, per_class=1)[:1]
    ex = example_from_selected(sel, k=3)
    assert ex.dialogue_id == "d#9"
    assert ex.window.label == "Joyful"
    assert ex.window.target_turn == sel_dialogue.turns[5]
    assert ex.window.history == sel_dialogue.turns[2:5]


def test_training_example_requires_label():
    with pytest.raises(ValueError):
        TrainingExample(window=ContextWindow(target_turn=_turn("x")), dialogue_id="d")


# --- evaluation and iteration ----------------------------------------------


def test_evaluate_refuses_train_test_overlap():
    model = new_model(TAX3, ClassifierConfig(dim=8, hash_bits=10))
    model.training_meta["train_dialogue_ids"] = ["d#1", "d#2"]
    clean = [_example("d#3", "hello", "Joyful"), _example("d#4", "bye", "Sad")]
    evaluate(model, clean)  # disjoint ids pass
    with pytest.raises(ValueError, match="leak"):
        evaluate(model, clean + [_example("d#2", "oops", "Sad")])


def test_evaluate_requires_examples():
    model = new_model(TAX3, ClassifierConfig(dim=8, hash_bits=10))
    with pytest.raises(ValueError):
        evaluate(model, [])


_FILLER = ["well", "so", "right", "okay", "now", "then"]


def _stage_fixture():
    base, extras = [], {}
    for c, name in enumerate(TAX3.names()):
        token = name.lower()
        for i in range(4):
            text = f"{_FILLER[i % 6]} {token} {_FILLER[(i + c) % 6]}"
            base.append(_example(f"base-{name}#{i}", text, name))
        extras[name] = [
            _example(f"extra-{name}#{i}", f"{token} {_FILLER[i % 6]}", name)
            for i in range(3)
        ]
    test = [
        _example(f"test-{name}#{i}", f"say {name.lower()} again", name)
        for name in TAX3.names()
        for i in range(2)
    ]
    return base, extras, test


_CFG = ClassifierConfig(dim=32, hash_bits=12, epochs=10, lr0=1.0, seed=0)


def test_run_iterations_four_stages():
    base, extras, test = _stage_fixture()
    seen_models = []

    def provider(model, stage):
        seen_models.append(model)
        take = {"similar": 0, "self_labeled": 1, "similar_to_self": 2}[stage.name]
        return [exs[take] for exs in extras.values()]

    plan = default_plan(config=_CFG)
    providers = {s.name: provider for s in plan.stages[1:]}
    results = run_iterations(plan, base, providers, [], test, TAX3)

    assert [r.name for r in results] == [
        "base",
        "similar",
        "self_labeled",
        "similar_to_self",
    ]
    sizes = [r.n_train for r in results]
    assert sizes == [12, 15, 18, 21]
    assert all(m is not None for m in seen_models)  # providers see a trained model
    # each stage records a training-id superset of the previous stage
    id_sets = [set(r.model.training_meta["train_dialogue_ids"]) for r in results]
    for prev, curr in zip(id_sets, id_sets[1:]):
        assert prev < curr
    assert results[-1].metrics.accuracy == 100.0


def test_run_iterations_base_only():
    base, _, test = _stage_fixture()
    plan = IterationPlan(stages=(StageSpec(STAGE_BASE, "seed data", config=_CFG),))
    results = run_iterations(plan, base, {}, [], test, TAX3)
    assert len(results) == 1
    assert results[0].n_train == len(base)


def test_failed_stage_raises_with_partial_results():
    base, _, test = _stage_fixture()

    def broken(model, stage):
        raise RuntimeError("no embeddings on disk")

    plan = default_plan(config=_CFG)
    providers = {s.name: broken for s in plan.stages[1:]}
    with pytest.raises(StageError) as err:
        run_iterations(plan, base, providers, [], test, TAX3)
    assert err.value.stage == "similar"
    assert [r.name for r in err.value.completed] == ["base"]


def test_run_iterations_rejects_empty_base():
    with pytest.raises(ValueError):
        run_iterations(default_plan(), [], {}, [], [], TAX3)


def test_plan_validation():
    with pytest.raises(ValueError):
        IterationPlan(stages=())
    with pytest.raises(ValueError):
        IterationPlan(stages=(StageSpec("similar", "x"),))
    with pytest.raises(ValueError):
        IterationPlan(stages=(StageSpec("base", "x"), StageSpec("base", "y")))


def test_report_rendering():
    base, _, test = _stage_fixture()
    plan = IterationPlan(stages=(StageSpec(STAGE_BASE, "seed data", config=_CFG),))
    results = run_iterations(plan, base, {}, [], test, TAX3)
    text = render_report(results)
    lines = text.splitlines()
    assert lines[0].split(" | ")[0].strip() == "Stage"
    assert "base" in lines[2]
    assert "(12 examples)" in lines[2]
    records = report_records(results)
    assert len(records) == 1
    assert set(records[0]) == {
        "stage",
        "training_data",
        "n_train",
        "precision",
        "recall",
        "macro_f1",
        "accuracy",
    }
