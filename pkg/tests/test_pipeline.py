"""End-to-end checks for the staged pipeline and its CLI.

The heavyweight fixture runs every batch stage once against the bundled
corpus; the other tests poke config loading, the manifest, the work-dir
lock, and the CLI exit codes without touching the slow path.
"""

import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from subdial import cli
from subdial.assembly import dialogue_from_record
from subdial.jsonl import read_records
from subdial.pipeline import (
    ConfigError,
    Manifest,
    apply_override,
    config_hash,
    hash_path,
    load_config,
    parse_set_args,
    run_stage,
    validate_config,
    work_lock,
)

REPO = Path(__file__).resolve().parent.parent
CORPUS = REPO / "corpus"
MINI = REPO / "configs" / "mini.toml"

BATCH_STAGES = (
    "ingest",
    "segment-turns",
    "build-dialogues",
    "clean",
    "embed",
    "train",
    "label",
    "filter-emotional",
    "score-readability",
    "self-label",
    "evaluate",
    "expand-similar",
)


def mini_argv(work_dir: Path, stage: str, *extra: str) -> list[str]:
    return [
        stage,
        "--config", str(MINI),
        "--set", f"paths.corpus_dir={CORPUS}",
        "--set", f"paths.work_dir={work_dir}",
        *extra,
    ]


@pytest.fixture(scope="session")
def chain(tmp_path_factory) -> Path:
    """Work dir after a full run of every stage plus simulated workers."""
    work = tmp_path_factory.mktemp("mini-work")
    for stage in BATCH_STAGES:
        assert cli.main(mini_argv(work, stage)) == 0, stage
    assert cli.main(mini_argv(work, "serve-annotation", "--build-only")) == 0
    subprocess.run(
        [
            sys.executable,
            str(REPO / "scripts" / "simulate_annotators.py"),
            "--work-dir", str(work),
            "--corpus", str(CORPUS),
        ],
        check=True,
        cwd=REPO,
    )
    for stage in ("aggregate", "kappa", "analyze", "export-flows", "stats"):
        assert cli.main(mini_argv(work, stage)) == 0, stage
    return work


def planted():
    return list(read_records(CORPUS / "planted_labels.jsonl"))


# --- configuration -----------------------------------------------------------------


def test_default_config_carries_contract_values():
    config = load_config(None, environ={})
    assert config.assembly.gap_ms == 5000
    assert config.similarity.tau == 0.92
    assert config.similarity.tau_self == 0.9
    assert config.readability.alpha == 87.0
    assert config.readability.w_d == 0.04
    assert config.readability.top_k == 250
    assert config.embedding.dim == 768
    assert config.annotation.workers_per_hit == 3
    assert config.annotation.quorum == 2
    assert config.annotation.pass_mark == 3


def test_toml_file_and_set_overrides(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text(
        '[assembly]\ngap_ms = 7000\n[training]\nstages = ["base", "similar"]\n'
    )
    config = load_config(path, environ={})
    assert config.assembly.gap_ms == 7000
    assert tuple(config.training.stages) == ("base", "similar")

    parse_set_args(
        config,
        [
            "assembly.gap_ms=1234",
            "readability.w_d=0.1",
            "training.balanced=false",
            "analytics.roots=Sad,Angry",
        ],
    )
    assert config.assembly.gap_ms == 1234
    assert config.readability.w_d == 0.1
    assert config.training.balanced is False
    assert tuple(config.analytics.roots) == ("Sad", "Angry")


def test_env_overrides_and_precedence(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[training]\nepochs = 9\n")
    config = load_config(
        path,
        environ={
            "SUBDIAL_TRAINING_EPOCHS": "3",
            "SUBDIAL_READABILITY_TOP_K": "7",
            "UNRELATED": "x",
        },
    )
    assert config.training.epochs == 3  # env wins over the file
    assert config.readability.top_k == 7


def test_unknown_section_and_key_are_config_errors(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[nosuch]\nx = 1\n")
    with pytest.raises(ConfigError, match="nosuch"):
        load_config(bad, environ={})

    config = load_config(None, environ={})
    with pytest.raises(ConfigError, match="unknown key"):
        apply_override(config, "assembly.bogus", "1")
    with pytest.raises(ConfigError, match="unknown config section"):
        apply_override(config, "bogus.key", "1")
    with pytest.raises(ConfigError, match="section.key"):
        apply_override(config, "gap_ms", "1")


def test_missing_config_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.toml", environ={})


def test_validate_collects_every_problem():
    config = load_config(None, environ={})
    config.assembly.gap_ms = 0
    config.similarity.tau = 1.5
    with pytest.raises(ConfigError) as err:
        validate_config(config)
    assert "gap_ms" in str(err.value) and "tau" in str(err.value)


def test_config_hash_tracks_section_values():
    a = load_config(None, environ={})
    b = load_config(None, environ={})
    sections = ("assembly", "cleaning")
    assert config_hash(a, sections) == config_hash(b, sections)
    b.assembly.gap_ms = 9999
    assert config_hash(a, sections) != config_hash(b, sections)
    # a change outside the tracked sections must not invalidate
    b.assembly.gap_ms = a.assembly.gap_ms
    b.training.epochs = 99
    assert config_hash(a, sections) == config_hash(b, sections)


# --- manifest and lock -------------------------------------------------------------


def test_manifest_detects_staleness(tmp_path):
    src = tmp_path / "in.txt"
    out = tmp_path / "out.txt"
    src.write_text("one")
    out.write_text("result")
    manifest = Manifest(tmp_path / "manifest.jsonl")
    manifest.record(
        "demo", inputs={"src": hash_path(src)}, config_digest="c1",
        outputs={"out": hash_path(out)}, elapsed_s=0.0,
    )
    fresh = {"src": hash_path(src)}
    assert manifest.up_to_date("demo", fresh, "c1", {"out": out})
    assert not manifest.up_to_date("demo", fresh, "c2", {"out": out})
    src.write_text("two")
    assert not manifest.up_to_date(
        "demo", {"src": hash_path(src)}, "c1", {"out": out}
    )
    src.write_text("one")
    out.unlink()
    assert not manifest.up_to_date("demo", fresh, "c1", {"out": out})


def test_manifest_survives_reload(tmp_path):
    out = tmp_path / "o"
    out.write_text("x")
    first = Manifest(tmp_path / "m.jsonl")
    first.record(
        "s", inputs={}, config_digest="c",
        outputs={"o": hash_path(out)}, elapsed_s=1.0,
    )
    again = Manifest(tmp_path / "m.jsonl")
    assert again.up_to_date("s", {}, "c", {"o": out})


def test_work_lock_excludes_second_runner(tmp_path):
    with work_lock(tmp_path):
        with pytest.raises(RuntimeError, match="locked"):
            with work_lock(tmp_path):
                pass
    # released on exit
    with work_lock(tmp_path):
        pass


# --- CLI exit codes ----------------------------------------------------------------


def test_cli_bad_override_exits_2(tmp_path, capsys):
    assert cli.main(mini_argv(tmp_path, "clean", "--set", "cleaning.min_chars=-4")) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_missing_prerequisite_exits_3(tmp_path, capsys):
    assert cli.main(mini_argv(tmp_path, "evaluate")) == 3
    err = capsys.readouterr().err
    assert "run 'train' first" in err


def test_cli_prerequisite_names_each_missing_stage(tmp_path, capsys):
    assert cli.main(mini_argv(tmp_path, "build-dialogues")) == 3
    assert "run 'segment-turns' first" in capsys.readouterr().err
    assert cli.main(mini_argv(tmp_path, "aggregate")) == 3
    assert "run 'serve-annotation'" in capsys.readouterr().err


def test_cli_runtime_failure_exits_4(chain, tmp_path, capsys):
    work = tmp_path / "w"
    shutil.copytree(chain, work)
    (work / "classifier.bin").write_bytes(b"not a model")
    assert cli.main(mini_argv(work, "label", "--force")) == 4
    assert "error" in capsys.readouterr().err


# --- the full chain ----------------------------------------------------------------


def test_cleaning_keeps_exactly_the_planted_dialogues(chain):
    got = {
        d.dialogue_id: d
        for d in map(dialogue_from_record, read_records(chain / "dialogues_clean.jsonl"))
    }
    want = {row["dialogue_id"]: row for row in planted()}
    assert set(got) == set(want)
    assert sum(len(d.turns) for d in got.values()) == 921
    for dialogue_id, row in want.items():
        assert 0 <= row["turn_index"] < len(got[dialogue_id].turns)


def test_similarity_expansion_finds_the_near_twins(chain):
    matches = list(read_records(chain / "similar_matches.jsonl"))
    twins = {r["dialogue_id"]: r["label"] for r in planted() if r["group"] == "twin"}
    assert {m["unlabeled_id"] for m in matches} == set(twins)
    for m in matches:
        assert m["cosine"] >= 0.92
        assert m["label"] == twins[m["unlabeled_id"]]


def test_stage_report_training_sets_strictly_grow(chain):
    rows = list(read_records(chain / "stage_metrics.jsonl"))
    assert [r["stage"] for r in rows] == [
        "base", "similar", "self_labeled", "similar_to_self",
    ]
    sizes = [r["n_train"] for r in rows]
    assert sizes == sorted(sizes) and len(set(sizes)) == len(sizes)
    for row in rows:
        for key in ("precision", "recall", "macro_f1", "accuracy"):
            assert 0.0 <= row[key] <= 100.0


def test_metrics_file_shape(chain):
    payload = json.loads((chain / "metrics.json").read_text())
    assert payload["split"] in ("test", "validation")
    assert len(payload["labels"]) == 41
    assert len(payload["confusion"]) == 41
    assert all(len(row) == 41 for row in payload["confusion"])
    total = sum(sum(row) for row in payload["confusion"])
    assert total == payload["n"]


def test_candidates_are_ranked_per_class(chain):
    by_class: dict[str, list] = {}
    for row in read_records(chain / "candidates.jsonl"):
        by_class.setdefault(row["class"], []).append(row)
    assert len(by_class) == 41
    for rows in by_class.values():
        assert len(rows) <= 250
        assert [r["rank"] for r in rows] == list(range(len(rows)))
        scores = [r["score"] for r in rows]
        assert scores == sorted(scores, reverse=True)


def test_hits_have_the_published_shape(chain):
    hits = list(read_records(chain / "hits.jsonl"))
    assert len(hits) >= 2
    for hit in hits:
        kinds = [item["kind"] for item in hit["items"]]
        assert len(kinds) == 20
        assert kinds.count("dialogue") == 15 and kinds.count("quiz") == 5
        for item in hit["items"]:
            assert (item["gold"] is not None) == (item["kind"] == "quiz")
            assert len(item["suggestions"]) == 3


def test_aggregation_report_books_balance(chain):
    report = json.loads((chain / "aggregate_report.json").read_text())
    rows = list(read_records(chain / "aggregated_labels.jsonl"))
    assert report["resolved"] == len(rows)
    assert report["items"] == 315  # 21 hits x 15 dialogue items
    assert report["coverage"] == pytest.approx(report["resolved"] / report["items"])
    for row in rows:
        assert row["agreement"] >= 2


def test_kappa_lands_in_the_high_agreement_band(chain):
    payload = json.loads((chain / "kappa.json").read_text())
    assert payload["items"] == 315
    assert 0.5 <= payload["kappa"] <= 1.0  # noisy but strongly aligned workers


def test_distribution_and_transitions_conserve_turns(chain):
    lines = (chain / "label_distribution.tsv").read_text().strip().split("\n")
    assert len(lines) == 41
    total = sum(int(line.split("\t")[1]) for line in lines)
    assert total == 921

    matrix_lines = (chain / "transition_counts.tsv").read_text().strip()
    transitions = sum(
        int(line.split("\t")[2]) for line in matrix_lines.split("\n") if line
    )
    assert transitions == 921 - 328  # one per non-final turn


def test_flow_exports_per_root(chain):
    for root in ("joyful", "surprised", "sad", "angry"):
        tsv = chain / f"flow_{root}.tsv"
        dot = chain / f"flow_{root}.dot"
        assert tsv.exists() and dot.exists()
        for line in tsv.read_text().splitlines():
            source, target, value = line.split("\t")
            assert source.startswith("p") and target.startswith("p")
            assert int(value) >= 1


def test_stats_table_layout(chain):
    text = (chain / "corpus_stats.txt").read_text()
    for label in (
        "Total no. of dialogues",
        "Total no. of turns",
        "Total no. of tokens",
        "Avg. no. of turns per dialogue",
        "Avg. no. of tokens per dialogue",
        "Avg. no. of tokens per turn",
    ):
        assert label in text
    assert "328" in text and "921" in text
    assert f"{921 / 328:.2f}" in text


def test_rerun_is_a_skip_and_force_is_byte_identical(chain, capsys):
    before = (chain / "dialogues_clean.jsonl").read_bytes()
    assert cli.main(mini_argv(chain, "clean")) == 0
    assert "up to date" in capsys.readouterr().out
    assert cli.main(mini_argv(chain, "clean", "--force")) == 0
    assert (chain / "dialogues_clean.jsonl").read_bytes() == before


def test_changed_parameter_invalidates_only_its_stage(chain, tmp_path, capsys):
    work = tmp_path / "w"
    shutil.copytree(chain, work)
    argv = mini_argv(work, "clean", "--set", "cleaning.min_chars=3")
    assert cli.main(argv) == 0
    out = capsys.readouterr().out
    assert "up to date" not in out


def test_evaluate_split_option(chain, capsys):
    assert cli.main(mini_argv(chain, "evaluate", "--split", "validation")) == 0
    payload = json.loads((chain / "metrics.json").read_text())
    assert payload["split"] == "validation"
    # same option again: manifest remembers the option digest and skips
    assert cli.main(mini_argv(chain, "evaluate", "--split", "validation")) == 0
    assert "up to date" in capsys.readouterr().out


def test_export_flows_root_option(chain, capsys):
    assert cli.main(mini_argv(chain, "export-flows", "--root", "Terrified")) == 0
    assert (chain / "flow_terrified.tsv").exists()
    assert cli.main(mini_argv(chain, "export-flows", "--root", "Zesty")) == 2
    assert "Zesty" in capsys.readouterr().err


def test_self_labels_skip_seeds_and_respect_per_class(chain):
    rows = list(read_records(chain / "self_labeled.jsonl"))
    labels = [r["label"] for r in rows]
    # per_class=1: at most one pick per class, and most classes covered
    assert len(labels) == len(set(labels))
    assert len(rows) >= 35
    seeds = {r["dialogue_id"] for r in read_records(CORPUS / "seed_labels.jsonl")}
    assert not ({r["dialogue_id"] for r in rows} & seeds)
