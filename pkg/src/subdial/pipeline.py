"""Stage orchestration: one config file, a content-hash manifest, a lock.

Every stage reads named artifacts from the work dir and writes named
artifacts back, recording input hashes, a config hash, and output
hashes in ``manifest.jsonl``. A stage whose inputs, parameters, and
outputs all hash the same as its last run is a no-op. Exactly one
pipeline instance may hold a work dir at a time.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from . import analytics
from .annotation import (
    AnnotationStore,
    HitCandidate,
    aggregate_majority,
    aggregation_record,
    build_hits,
    filter_gated_records,
    fleiss_kappa_from_records,
    harvest_new_labels,
    hit_from_record,
    hit_record,
    load_quiz_bank,
)
from .assembly import (
    CleaningConfig,
    Dialogue,
    Turn,
    clean_dialogues,
    dialogue_from_record,
    dialogue_record,
    split_dialogues,
    turn_record,
)
from .classifier import (
    ClassifierConfig,
    load_classifier,
    predict,
    save_classifier,
)
from .context import ContextWindow, windows_from_dialogue
from .embeddings import (
    BuiltinEmbedder,
    embed_dialogue,
    load_embeddings,
    save_embeddings,
)
from .ingest import (
    SubtitleDocument,
    apply_metadata,
    load_metadata,
    parse_subtitles,
    segment_sentences,
    sentence_density,
    sentence_from_record,
    sentence_record,
)
from .jsonl import read_records, write_records
from .labeling import (
    dialogue_labeler,
    filter_emotional,
    label_turns,
    turn_label_from_record,
    turn_label_record,
)
from .readability import (
    ScoredCandidate,
    build_vocabulary,
    candidate_records,
    rank_candidates,
    readability,
    save_vocabulary,
)
from .remote import RemoteConfig, classify_many, embed_remote
from .segmentation import (
    SegmenterConfig,
    boundary_from_record,
    load_segmenter,
    save_segmenter,
    segment_turns,
    train_segmenter,
)
from .semisup import (
    IterationPlan,
    StageSpec,
    TrainingExample,
    evaluate,
    example_from_selected,
    render_report,
    report_records,
    run_iterations,
    self_label,
    split_balanced,
)
from .similarity import expand_by_similarity, match_record, save_matches
from .taxonomy import LabelTaxonomy, default_taxonomy

log = logging.getLogger(__name__)

STAGE_NAMES = (
    "base",
    "similar",
    "self_labeled",
    "similar_to_self",
)


class ConfigError(ValueError):
    """Bad configuration or override; exit code 2."""


class PrerequisiteError(RuntimeError):
    """A required artifact is missing; exit code 3."""


# --- configuration ---------------------------------------------------------------


@dataclass
class PathsSection:
    corpus_dir: str = "corpus"
    work_dir: str = "work"
    metadata: str = "metadata.tsv"
    boundary_fixtures: str = "boundary_fixtures.jsonl"
    seed_labels: str = "seed_labels.jsonl"
    quiz_bank: str = "quiz_bank.jsonl"


@dataclass
class AssemblySection:
    gap_ms: int = 5000


@dataclass
class ReadabilitySection:
    alpha: float = 87.0
    w_d: float = 0.04
    top_k: int = 250
    threshold: float = 0.9


@dataclass
class LabelingSection:
    kind: str = "builtin"  # or "remote"
    endpoint: str = ""
    history: int = 3
    strategy: str = "emotion_weighted_mean"
    intent_discount: float = 0.5
    emotional_top_n: int = 1_000_000
    timeout_s: float = 10.0


@dataclass
class EmbeddingSection:
    kind: str = "builtin"  # or "remote"
    dim: int = 768
    seed: int = 0


@dataclass
class SimilaritySection:
    tau: float = 0.92
    tau_self: float = 0.9
    block: int = 1024
    source: str = "seed"  # labeled side: "seed" or "aggregated"


@dataclass
class TrainingSection:
    dim: int = 64
    hash_bits: int = 21
    epochs: int = 5
    lr0: float = 0.1
    seed: int = 0
    bigrams: bool = True
    per_class: int = 100
    fractions: tuple[float, ...] = (0.6, 0.2, 0.2)
    balanced: bool = True
    split_seed: int = 0
    stages: tuple[str, ...] = STAGE_NAMES

    def classifier_config(self) -> ClassifierConfig:
        return ClassifierConfig(
            dim=self.dim,
            hash_bits=self.hash_bits,
            epochs=self.epochs,
            lr0=self.lr0,
            seed=self.seed,
            bigrams=self.bigrams,
        )


@dataclass
class AnnotationSection:
    workers_per_hit: int = 3
    quorum: int = 2
    pass_mark: int = 3
    gate: str = "exclude"  # exclude | downweight | keep
    downweight: float = 0.5
    seed: int = 0


@dataclass
class AnalyticsSection:
    roots: tuple[str, ...] = ("Joyful", "Surprised", "Sad", "Angry")
    max_depth: int = 4
    top_per_layer: int = 10


SECTION_TYPES = {
    "paths": PathsSection,
    "segmenter": SegmenterConfig,
    "assembly": AssemblySection,
    "cleaning": CleaningConfig,
    "readability": ReadabilitySection,
    "labeling": LabelingSection,
    "embedding": EmbeddingSection,
    "similarity": SimilaritySection,
    "training": TrainingSection,
    "annotation": AnnotationSection,
    "analytics": AnalyticsSection,
}

ENV_PREFIX = "SUBDIAL_"


@dataclass
class PipelineConfig:
    paths: PathsSection = field(default_factory=PathsSection)
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    assembly: AssemblySection = field(default_factory=AssemblySection)
    cleaning: CleaningConfig = field(default_factory=CleaningConfig)
    readability: ReadabilitySection = field(default_factory=ReadabilitySection)
    labeling: LabelingSection = field(default_factory=LabelingSection)
    embedding: EmbeddingSection = field(default_factory=EmbeddingSection)
    similarity: SimilaritySection = field(default_factory=SimilaritySection)
    training: TrainingSection = field(default_factory=TrainingSection)
    annotation: AnnotationSection = field(default_factory=AnnotationSection)
    analytics: AnalyticsSection = field(default_factory=AnalyticsSection)

    def corpus_dir(self) -> Path:
        return Path(self.paths.corpus_dir)

    def work_dir(self) -> Path:
        return Path(self.paths.work_dir)

    def corpus_file(self, name: str) -> Path:
        return self.corpus_dir() / getattr(self.paths, name)


def _coerce(raw: str, template):
    """Parse an override string into the type of the current value."""
    if isinstance(template, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    if isinstance(template, (tuple, list)):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        inner = template[0] if template else ""
        return tuple(_coerce(p, inner) for p in parts)
    return raw


def _build_section(name: str, cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(
            f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}"
        )
    coerced = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [{name}] section: {exc}") from exc


def load_config(path: Path | None = None, environ=None) -> PipelineConfig:
    """Defaults, then the TOML file, then SUBDIAL_* environment keys."""
    data: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}")
    unknown = set(data) - set(SECTION_TYPES)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    sections = {}
    for name, cls in SECTION_TYPES.items():
        sections[name] = _build_section(name, cls, data.get(name, {}))
    config = PipelineConfig(**sections)

    environ = os.environ if environ is None else environ
    for key, value in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        rest = key[len(ENV_PREFIX):].lower()
        section, _, attr = rest.partition("_")
        apply_override(config, f"{section}.{attr}", value)
    return config


def apply_override(config: PipelineConfig, dotted: str, raw: str) -> None:
    """Set one config key from a ``section.key`` path and a raw string."""
    section_name, _, key = dotted.partition(".")
    if not key:
        raise ConfigError(f"override {dotted!r} must look like section.key")
    section = getattr(config, section_name, None)
    if section_name not in SECTION_TYPES or section is None:
        raise ConfigError(f"unknown config section {section_name!r}")
    if not hasattr(section, key):
        raise ConfigError(f"unknown key {key!r} in [{section_name}]")
    setattr(section, key, _coerce(raw, getattr(section, key)))


def parse_set_args(config: PipelineConfig, pairs: list[str]) -> None:
    for pair in pairs:
        dotted, sep, raw = pair.partition("=")
        if not sep:
            raise ConfigError(f"--set needs KEY=VALUE, got {pair!r}")
        apply_override(config, dotted.strip(), raw)


def validate_config(config: PipelineConfig) -> None:
    problems = []

    def check(ok: bool, message: str) -> None:
        if not ok:
            problems.append(message)

    check(config.assembly.gap_ms >= 1, "assembly.gap_ms must be >= 1")
    c = config.cleaning
    check(c.min_chars >= 1, "cleaning.min_chars must be >= 1")
    check(c.max_chars > c.min_chars, "cleaning.max_chars must exceed min_chars")
    check(0.0 <= c.min_alpha_ratio <= 1.0, "cleaning.min_alpha_ratio must be in [0, 1]")
    check(0.0 < c.repetitive_max_share <= 1.0,
          "cleaning.repetitive_max_share must be in (0, 1]")
    check(c.repetitive_min_tokens >= 1, "cleaning.repetitive_min_tokens must be >= 1")
    r = config.readability
    check(r.alpha > 0, "readability.alpha must be positive")
    check(r.w_d >= 0, "readability.w_d must be non-negative")
    check(r.top_k >= 1, "readability.top_k must be >= 1")
    check(0.0 <= r.threshold <= 1.0, "readability.threshold must be in [0, 1]")
    lab = config.labeling
    check(lab.kind in ("builtin", "remote"),
          "labeling.kind must be 'builtin' or 'remote'")
    check(lab.kind != "remote" or bool(lab.endpoint),
          "labeling.kind = 'remote' needs labeling.endpoint")
    check(lab.history >= 0, "labeling.history must be >= 0")
    check(lab.strategy in ("mean", "min", "max", "emotion_weighted_mean"),
          "labeling.strategy is not a known aggregation")
    check(0.0 <= lab.intent_discount <= 1.0,
          "labeling.intent_discount must be in [0, 1]")
    check(lab.emotional_top_n >= 1, "labeling.emotional_top_n must be >= 1")
    emb = config.embedding
    check(emb.kind in ("builtin", "remote"),
          "embedding.kind must be 'builtin' or 'remote'")
    check(emb.dim >= 1, "embedding.dim must be >= 1")
    sim = config.similarity
    check(0.0 <= sim.tau <= 1.0, "similarity.tau must be in [0, 1]")
    check(0.0 <= sim.tau_self <= 1.0, "similarity.tau_self must be in [0, 1]")
    check(sim.block >= 1, "similarity.block must be >= 1")
    check(sim.source in ("seed", "aggregated"),
          "similarity.source must be 'seed' or 'aggregated'")
    t = config.training
    check(t.dim >= 1, "training.dim must be >= 1")
    check(1 <= t.hash_bits <= 30, "training.hash_bits must be in 1..30")
    check(t.epochs >= 0, "training.epochs must be >= 0")
    check(t.lr0 > 0, "training.lr0 must be positive")
    check(t.per_class >= 1, "training.per_class must be >= 1")
    check(len(t.fractions) == 3 and all(f > 0 for f in t.fractions)
          and abs(sum(t.fractions) - 1.0) < 1e-9,
          "training.fractions must be three positive values summing to 1")
    check(len(t.stages) >= 1 and t.stages[0] == "base"
          and len(set(t.stages)) == len(t.stages)
          and all(s in STAGE_NAMES for s in t.stages),
          "training.stages must start at 'base' and name known stages once each")
    seg = config.segmenter
    check(1 <= seg.hash_bits <= 30, "segmenter.hash_bits must be in 1..30")
    check(seg.epochs >= 1, "segmenter.epochs must be >= 1")
    check(seg.lr0 > 0, "segmenter.lr0 must be positive")
    check(seg.l2 >= 0, "segmenter.l2 must be non-negative")
    ann = config.annotation
    check(ann.workers_per_hit >= 1, "annotation.workers_per_hit must be >= 1")
    check(1 <= ann.quorum <= ann.workers_per_hit,
          "annotation.quorum must be in 1..workers_per_hit")
    check(0 <= ann.pass_mark <= 5, "annotation.pass_mark must be in 0..5")
    check(ann.gate in ("exclude", "downweight", "keep"),
          "annotation.gate must be exclude, downweight, or keep")
    check(0.0 <= ann.downweight <= 1.0, "annotation.downweight must be in [0, 1]")
    ana = config.analytics
    check(ana.max_depth >= 1, "analytics.max_depth must be >= 1")
    check(ana.top_per_layer >= 1, "analytics.top_per_layer must be >= 1")
    check(len(ana.roots) >= 1, "analytics.roots must name at least one label")
    if problems:
        raise ConfigError("; ".join(problems))


# --- hashing and the manifest -----------------------------------------------------


def hash_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def hash_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def hash_tree(path: Path) -> str:
    """Hash a directory as the sorted (relative path, file hash) listing."""
    rows = []
    for file in sorted(p for p in path.rglob("*") if p.is_file()):
        rows.append(f"{file.relative_to(path)}\t{hash_file(file)}")
    return hash_bytes("\n".join(rows).encode("utf-8"))


def hash_path(path: Path) -> str:
    return hash_tree(path) if path.is_dir() else hash_file(path)


def config_hash(config: PipelineConfig, sections: tuple[str, ...]) -> str:
    payload = {
        name: dataclasses.asdict(getattr(config, name)) for name in sorted(sections)
    }
    return hash_bytes(json.dumps(payload, sort_keys=True).encode("utf-8"))


class Manifest:
    """Append-only build log; the latest entry per stage is authoritative."""

    def __init__(self, path: Path):
        self.path = path
        self.entries: dict[str, dict] = {}
        if path.exists():
            for record in read_records(path):
                self.entries[record["stage"]] = record

    def record(
        self,
        stage: str,
        inputs: dict[str, str],
        config_digest: str,
        outputs: dict[str, str],
        elapsed_s: float,
    ) -> dict:
        entry = {
            "stage": stage,
            "inputs": inputs,
            "config": config_digest,
            "outputs": outputs,
            "elapsed_s": round(elapsed_s, 6),
            "at": datetime.now(timezone.utc).isoformat(),
        }
        self.entries[stage] = entry
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
        return entry

    def up_to_date(
        self,
        stage: str,
        inputs: dict[str, str],
        config_digest: str,
        outputs: dict[str, Path],
    ) -> bool:
        entry = self.entries.get(stage)
        if entry is None:
            return False
        if entry["inputs"] != inputs or entry["config"] != config_digest:
            return False
        for name, path in outputs.items():
            want = entry["outputs"].get(name)
            if want is None or not path.exists() or hash_path(path) != want:
                return False
        return True


@contextmanager
def work_lock(work_dir: Path):
    """One pipeline instance per work dir, via an O_EXCL lock file."""
    path = work_dir / ".lock"
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(
            f"work dir {work_dir} is locked by another run; "
            f"remove {path} if that run is dead"
        )
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        try:
            os.unlink(path)
        except FileNotFoundError:
            pass


# --- artifact registry --------------------------------------------------------------


ARTIFACTS = {
    "documents": "documents.jsonl",
    "sentences": "sentences.jsonl",
    "parse_report": "parse_report.jsonl",
    "segmenter_model": "segmenter.bin",
    "turns": "turns.jsonl",
    "dialogues_raw": "dialogues_raw.jsonl",
    "dialogues_clean": "dialogues_clean.jsonl",
    "cleaning_report": "cleaning_report.json",
    "vocabulary": "vocabulary.json",
    "candidates": "candidates.jsonl",
    "turn_labels": "turn_labels.jsonl",
    "dialogues_emotional": "dialogues_emotional.jsonl",
    "dialogue_vectors": "dialogue_vectors.bin",
    "dialogue_vector_ids": "dialogue_vectors.bin.ids",
    "matches": "similar_matches.jsonl",
    "classifier": "classifier.bin",
    "stage_report": "stage_report.txt",
    "stage_metrics": "stage_metrics.jsonl",
    "splits": "splits.json",
    "self_labeled": "self_labeled.jsonl",
    "metrics": "metrics.json",
    "hits": "hits.jsonl",
    "aggregated": "aggregated_labels.jsonl",
    "aggregate_report": "aggregate_report.json",
    "kappa": "kappa.json",
    "distribution": "label_distribution.tsv",
    "transitions": "transition_counts.tsv",
    "stats": "corpus_stats.txt",
}

# Which stage writes each work-dir artifact, for prerequisite messages.
PRODUCED_BY = {
    "documents": "ingest",
    "sentences": "ingest",
    "parse_report": "ingest",
    "segmenter_model": "segment-turns",
    "turns": "segment-turns",
    "dialogues_raw": "build-dialogues",
    "dialogues_clean": "clean",
    "cleaning_report": "clean",
    "vocabulary": "score-readability",
    "candidates": "score-readability",
    "turn_labels": "label",
    "dialogues_emotional": "filter-emotional",
    "dialogue_vectors": "embed",
    "dialogue_vector_ids": "embed",
    "matches": "expand-similar",
    "classifier": "train",
    "stage_report": "train",
    "stage_metrics": "train",
    "splits": "train",
    "self_labeled": "self-label",
    "metrics": "evaluate",
    "hits": "serve-annotation",
    "aggregated": "aggregate",
    "aggregate_report": "aggregate",
    "kappa": "kappa",
    "distribution": "analyze",
    "transitions": "analyze",
    "stats": "stats",
}

EVENTS_FILE = "annotation_events.jsonl"


def artifact_path(config: PipelineConfig, name: str) -> Path:
    return config.work_dir() / ARTIFACTS[name]


def require(config: PipelineConfig, *names: str) -> dict[str, Path]:
    """Resolve work-dir artifacts, failing with the stage to run first."""
    out = {}
    for name in names:
        path = artifact_path(config, name)
        if not path.exists():
            raise PrerequisiteError(
                f"missing {path.name}; run '{PRODUCED_BY[name]}' first"
            )
        out[name] = path
    return out


def require_corpus(config: PipelineConfig, name: str) -> Path:
    path = config.corpus_file(name)
    if not path.exists():
        raise PrerequisiteError(f"missing corpus file {path}")
    return path


# --- shared loaders ----------------------------------------------------------------


def load_dialogues(path: Path) -> list[Dialogue]:
    return [dialogue_from_record(r) for r in read_records(path)]


def load_seed_labels(path: Path) -> list[dict]:
    """Planted/collected gold turn labels: dialogue_id, turn_index, label."""
    out = []
    for record in read_records(path):
        out.append(
            {
                "dialogue_id": record["dialogue_id"],
                "turn_index": int(record["turn_index"]),
                "label": record["label"],
            }
        )
    return out


def _window_at(dialogue: Dialogue, turn_index: int, k: int,
               label: str | None = None) -> ContextWindow:
    if not 0 <= turn_index < len(dialogue.turns):
        raise ValueError(
            f"turn {turn_index} out of range for dialogue {dialogue.dialogue_id}"
        )
    return ContextWindow(
        target_turn=dialogue.turns[turn_index],
        history=tuple(dialogue.turns[max(0, turn_index - k):turn_index]),
        label=label,
    )


def _builtin_labeler(config: PipelineConfig):
    model = load_classifier(require(config, "classifier")["classifier"])
    return dialogue_labeler(model, k=config.labeling.history), model


def _labeler(config: PipelineConfig):
    """Dialogue -> [Prediction] callable per the configured labeler kind."""
    if config.labeling.kind == "builtin":
        return _builtin_labeler(config)[0]
    remote = RemoteConfig(
        endpoint=config.labeling.endpoint, timeout_s=config.labeling.timeout_s
    )
    k = config.labeling.history

    def labeler(dialogue: Dialogue):
        return classify_many(remote, windows_from_dialogue(dialogue, k))

    return labeler


def _write_bytes(path: Path, data: bytes) -> None:
    path.write_bytes(data)


# --- stage bodies ------------------------------------------------------------------


def stage_ingest(config, inputs, outputs, options):
    corpus = inputs["corpus"]
    meta_path = config.corpus_file("metadata")
    meta = load_metadata(meta_path) if meta_path.exists() else {}
    doc_rows, sentence_rows, report_rows = [], [], []
    files = sorted(
        p for p in corpus.iterdir() if p.suffix.lower() in (".srt", ".xml")
    )
    if not files:
        raise PrerequisiteError(f"no .srt or .xml files under {corpus}")
    for file in files:
        doc, report = parse_subtitles(
            file.read_bytes(), file.suffix.lower().lstrip("."), doc_id=file.stem
        )
        doc = apply_metadata(doc, meta)
        sentences = segment_sentences(doc)
        duration = doc.duration_ms if doc.duration_ms is not None else doc.last_end_ms()
        doc_rows.append(
            {
                "doc_id": doc.doc_id,
                "genre": doc.genre,
                "duration_ms": duration,
                "language": doc.language,
                "n_blocks": len(doc.blocks),
                "n_sentences": len(sentences),
            }
        )
        sentence_rows.extend(sentence_record(doc.doc_id, s) for s in sentences)
        report_rows.extend(
            {"doc_id": doc.doc_id, "block": block, "message": message}
            for block, message in report.entries
        )
    write_records(outputs["documents"], doc_rows)
    write_records(outputs["sentences"], sentence_rows)
    write_records(outputs["parse_report"], report_rows)
    log.info(
        "ingested %d documents, %d sentences, %d parse problems",
        len(doc_rows), len(sentence_rows), len(report_rows),
    )


def _document_stubs(config) -> dict[str, SubtitleDocument]:
    docs = {}
    for row in read_records(artifact_path(config, "documents")):
        docs[row["doc_id"]] = SubtitleDocument(
            doc_id=row["doc_id"],
            blocks=(),
            genre=row.get("genre"),
            duration_ms=row.get("duration_ms"),
            language=row.get("language", "en"),
        )
    return docs


def stage_segment_turns(config, inputs, outputs, options):
    fixtures = [boundary_from_record(r) for r in read_records(inputs["fixtures"])]
    model, _ = train_segmenter(fixtures, config.segmenter)
    save_segmenter(model, outputs["segmenter_model"])

    docs = _document_stubs(config)
    by_doc: dict[str, list] = {}
    for record in read_records(inputs["sentences"]):
        by_doc.setdefault(record["doc_id"], []).append(sentence_from_record(record))
    rows = []
    for doc_id in sorted(by_doc):
        doc = docs.get(doc_id) or SubtitleDocument(doc_id=doc_id, blocks=())
        for turn in segment_turns(doc, by_doc[doc_id], model):
            rows.append({"doc_id": turn.doc_id, **turn_record(turn)})
    write_records(outputs["turns"], rows)
    log.info("segmented %d sentences into %d turns",
             sum(len(v) for v in by_doc.values()), len(rows))


def stage_build_dialogues(config, inputs, outputs, options):
    turns = [
        Turn(r["text"], r.get("start_ms"), r.get("end_ms"), r["doc_id"])
        for r in read_records(inputs["turns"])
    ]
    dialogues = split_dialogues(turns, config.assembly.gap_ms)
    write_records(outputs["dialogues_raw"], (dialogue_record(d) for d in dialogues))
    log.info("assembled %d raw dialogues", len(dialogues))


def stage_clean(config, inputs, outputs, options):
    dialogues = load_dialogues(inputs["dialogues_raw"])
    cleaned, report = clean_dialogues(dialogues, config.cleaning)
    write_records(outputs["dialogues_clean"], (dialogue_record(d) for d in cleaned))
    outputs["cleaning_report"].write_text(
        json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n"
    )
    log.info("kept %d of %d dialogues", len(cleaned), len(dialogues))


def stage_score_readability(config, inputs, outputs, options):
    dialogues = {d.dialogue_id: d for d in load_dialogues(inputs["dialogues_clean"])}
    vocab = build_vocabulary(dialogues.values())
    save_vocabulary(vocab, outputs["vocabulary"])

    # Best turn per (dialogue, label) above the confidence bar; the
    # scored unit is the dialogue truncated at that turn.
    best: dict[tuple[str, str], tuple[float, int]] = {}
    for record in read_records(inputs["turn_labels"]):
        tl = turn_label_from_record(record)
        if tl.confidence < config.readability.threshold:
            continue
        if tl.dialogue_id not in dialogues:
            continue
        key = (tl.dialogue_id, tl.label)
        got = best.get(key)
        if got is None or (tl.confidence, -tl.turn_index) > (got[0], -got[1]):
            best[key] = (tl.confidence, tl.turn_index)

    candidates = []
    turn_for: dict[tuple[str, str], int] = {}
    for (dialogue_id, label), (_, turn_index) in sorted(best.items()):
        dialogue = dialogues[dialogue_id]
        scored = Dialogue(
            dialogue_id, dialogue.doc_id, dialogue.turns[: turn_index + 1]
        )
        score = readability(
            scored, vocab, alpha=config.readability.alpha, w_d=config.readability.w_d
        )
        candidates.append(ScoredCandidate(label, dialogue_id, score.score))
        turn_for[(dialogue_id, label)] = turn_index

    ranked = rank_candidates(candidates, top_k=config.readability.top_k)
    rows = []
    for row in candidate_records(ranked):
        row["turn_index"] = turn_for[(row["dialogue_id"], row["class"])]
        rows.append(row)
    write_records(outputs["candidates"], rows)
    log.info("ranked %d candidates over %d classes", len(rows), len(ranked))


def stage_label(config, inputs, outputs, options):
    dialogues = load_dialogues(inputs["dialogues_clean"])
    labeler = _labeler(config)
    labels = label_turns(dialogues, labeler)
    write_records(outputs["turn_labels"], (turn_label_record(t) for t in labels))
    log.info("labeled %d turns in %d dialogues", len(labels), len(dialogues))


def stage_filter_emotional(config, inputs, outputs, options):
    dialogues = load_dialogues(inputs["dialogues_clean"])
    labeler = _labeler(config)
    top = filter_emotional(
        dialogues,
        labeler,
        n=min(config.labeling.emotional_top_n, len(dialogues)),
        taxonomy=default_taxonomy(),
        strategy=config.labeling.strategy,
        intent_discount=config.labeling.intent_discount,
    )
    write_records(outputs["dialogues_emotional"], (dialogue_record(d) for d in top))
    log.info("kept the %d most emotional dialogues", len(top))


def stage_embed(config, inputs, outputs, options):
    dialogues = load_dialogues(inputs["dialogues_clean"])
    if config.embedding.kind == "builtin":
        embedder = BuiltinEmbedder(dim=config.embedding.dim, seed=config.embedding.seed)

        def turn_vectors(texts):
            return embedder.embed_texts(texts)
    else:
        remote = RemoteConfig(
            endpoint=config.labeling.endpoint, timeout_s=config.labeling.timeout_s
        )

        def turn_vectors(texts):
            return embed_remote(remote, list(texts))

    ids, rows = [], []
    for dialogue in dialogues:
        vectors = turn_vectors(dialogue.turn_texts())
        rows.append(embed_dialogue(vectors).vector)
        ids.append(dialogue.dialogue_id)
    matrix = np.vstack(rows) if rows else np.zeros((0, config.embedding.dim), "f4")
    save_embeddings(outputs["dialogue_vectors"], ids, matrix)
    log.info("embedded %d dialogues at dim %d", len(ids), config.embedding.dim)


def _labeled_side(config) -> dict[str, str]:
    """Dialogue id -> class for the configured labeled source."""
    if config.similarity.source == "seed":
        path = require_corpus(config, "seed_labels")
        labels = {}
        for row in load_seed_labels(path):
            labels[row["dialogue_id"]] = row["label"]
        return labels
    path = require(config, "aggregated")["aggregated"]
    labels = {}
    for row in read_records(path):
        if row.get("label"):
            labels[row["item_id"]] = row["label"]
    return labels


def stage_expand_similar(config, inputs, outputs, options):
    ids, matrix = load_embeddings(inputs["dialogue_vectors"])
    labels = _labeled_side(config)
    index = {dialogue_id: i for i, dialogue_id in enumerate(ids)}
    labeled_ids = [d for d in ids if d in labels]
    unlabeled_ids = [d for d in ids if d not in labels]
    missing = set(labels) - set(index)
    if missing:
        log.warning("%d labeled dialogues have no embedding", len(missing))
    matches = expand_by_similarity(
        unlabeled_ids,
        matrix[[index[d] for d in unlabeled_ids]],
        labeled_ids,
        matrix[[index[d] for d in labeled_ids]],
        [labels[d] for d in labeled_ids],
        tau=config.similarity.tau,
        block=config.similarity.block,
    )
    save_matches(outputs["matches"], matches)
    log.info(
        "matched %d of %d unlabeled dialogues at tau=%.3f",
        len(matches), len(unlabeled_ids), config.similarity.tau,
    )


def _stage_plan(config) -> IterationPlan:
    t = config.training
    clf = t.classifier_config()
    specs = {
        "base": StageSpec("base", "dialogues from the annotation rounds",
                          config=clf),
        "similar": StageSpec(
            "similar", "+ similar dialogues by embedding match",
            tau=config.similarity.tau, config=clf,
        ),
        "self_labeled": StageSpec(
            "self_labeled", "+ self-labeled dialogues",
            per_class=t.per_class, config=clf,
        ),
        "similar_to_self": StageSpec(
            "similar_to_self", "+ dialogues similar to the self-labeled",
            tau=config.similarity.tau_self, config=clf,
        ),
    }
    return IterationPlan(tuple(specs[name] for name in t.stages), seed=t.seed)


def stage_train(config, inputs, outputs, options):
    dialogues = {d.dialogue_id: d for d in load_dialogues(inputs["dialogues_clean"])}
    seed_rows = load_seed_labels(inputs["seed_labels"])
    k = config.labeling.history
    taxonomy = default_taxonomy()

    target: dict[str, tuple[int, str]] = {}
    for row in seed_rows:
        if row["dialogue_id"] not in dialogues:
            continue
        target[row["dialogue_id"]] = (row["turn_index"], row["label"])
    if not target:
        raise PrerequisiteError(
            "no seed label matches a cleaned dialogue; check the corpus"
        )
    labels_by_id = {d: label for d, (_, label) in target.items()}
    split = split_balanced(
        labels_by_id,
        fractions=tuple(config.training.fractions),
        seed=config.training.split_seed,
        balanced=config.training.balanced,
    )

    def examples_for(ids) -> list[TrainingExample]:
        out = []
        for dialogue_id in ids:
            turn_index, label = target[dialogue_id]
            window = _window_at(dialogues[dialogue_id], turn_index, k, label)
            out.append(TrainingExample(window, dialogue_id))
        return out

    base = examples_for(split.train)
    validation = [ex.window for ex in examples_for(split.validation)]
    test = examples_for(split.test)

    need_vectors = any(s.startswith("similar") for s in config.training.stages)
    ids, matrix, index = [], None, {}
    if need_vectors:
        ids, matrix = load_embeddings(inputs["dialogue_vectors"])
        index = {dialogue_id: i for i, dialogue_id in enumerate(ids)}

    held_out = set(split.validation) | set(split.test)
    used = set(split.train)
    self_added: dict[str, str] = {}

    def expand_from(source_labels: dict[str, str], tau: float):
        labeled_ids = sorted(d for d in source_labels if d in index)
        pool = [d for d in ids if d not in used and d not in held_out]
        if not labeled_ids or not pool:
            return []
        return expand_by_similarity(
            pool,
            matrix[[index[d] for d in pool]],
            labeled_ids,
            matrix[[index[d] for d in labeled_ids]],
            [source_labels[d] for d in labeled_ids],
            tau=tau,
            block=config.similarity.block,
        )

    def matched_examples(matches) -> list[TrainingExample]:
        out = []
        for match in matches:
            dialogue = dialogues[match.unlabeled_id]
            window = _window_at(dialogue, len(dialogue.turns) - 1, k, match.label)
            out.append(TrainingExample(window, match.unlabeled_id))
            used.add(match.unlabeled_id)
        return out

    def provide_similar(model, stage):
        base_labels = {d: target[d][1] for d in split.train}
        return matched_examples(expand_from(base_labels, stage.tau))

    def provide_self(model, stage):
        pool = [
            dialogues[d] for d in sorted(dialogues)
            if d not in used and d not in held_out
        ]
        selected = self_label(
            pool, dialogue_labeler(model, k), taxonomy, per_class=stage.per_class
        )
        out = []
        for sel in selected:
            out.append(example_from_selected(sel, k))
            used.add(sel.dialogue_id)
            self_added[sel.dialogue_id] = sel.label
        return out

    def provide_similar_to_self(model, stage):
        return matched_examples(expand_from(dict(self_added), stage.tau))

    providers = {
        "similar": provide_similar,
        "self_labeled": provide_self,
        "similar_to_self": provide_similar_to_self,
    }
    plan = _stage_plan(config)
    results = run_iterations(
        plan, base, providers, validation, test, taxonomy,
        config=config.training.classifier_config(),
    )

    save_classifier(results[-1].model, outputs["classifier"])
    outputs["stage_report"].write_text(render_report(results))
    write_records(outputs["stage_metrics"], report_records(results))
    outputs["splits"].write_text(
        json.dumps(
            {
                "train": list(split.train),
                "validation": list(split.validation),
                "test": list(split.test),
            },
            indent=2,
        )
        + "\n"
    )
    final = results[-1].metrics
    log.info(
        "final stage %s: accuracy %.2f, macro-F1 %.2f",
        results[-1].name, final.accuracy, final.macro_f1,
    )


def stage_self_label(config, inputs, outputs, options):
    already = set(_labeled_side(config))
    dialogues = [
        d for d in load_dialogues(inputs["dialogues_clean"])
        if d.dialogue_id not in already
    ]
    labeler, model = _builtin_labeler(config)
    selected = self_label(
        dialogues, labeler, default_taxonomy(), per_class=config.training.per_class
    )
    rows = [
        {
            "dialogue_id": s.dialogue_id,
            "turn_index": s.turn_index,
            "label": s.label,
            "confidence": s.confidence,
        }
        for s in selected
    ]
    write_records(outputs["self_labeled"], rows)
    log.info("self-labeled %d turns", len(rows))


def stage_evaluate(config, inputs, outputs, options):
    split_name = options.get("split", "test")
    splits = json.loads(inputs["splits"].read_text())
    if split_name not in splits:
        raise ConfigError(f"unknown split {split_name!r}")
    dialogues = {d.dialogue_id: d for d in load_dialogues(inputs["dialogues_clean"])}
    target = {
        row["dialogue_id"]: (row["turn_index"], row["label"])
        for row in load_seed_labels(inputs["seed_labels"])
    }
    k = config.labeling.history
    examples = []
    for dialogue_id in splits[split_name]:
        turn_index, label = target[dialogue_id]
        window = _window_at(dialogues[dialogue_id], turn_index, k, label)
        examples.append(TrainingExample(window, dialogue_id))
    model = load_classifier(inputs["classifier"])
    report = evaluate(model, examples)
    payload = {
        "split": split_name,
        "n": len(examples),
        "precision": report.precision,
        "recall": report.recall,
        "macro_f1": report.macro_f1,
        "accuracy": report.accuracy,
        "labels": list(report.labels),
        "confusion": [list(row) for row in report.confusion],
    }
    outputs["metrics"].write_text(json.dumps(payload, indent=2) + "\n")
    print(
        f"{split_name}: precision {report.precision:.2f}  "
        f"recall {report.recall:.2f}  macro-F1 {report.macro_f1:.2f}  "
        f"accuracy {report.accuracy:.2f}  (n={len(examples)})"
    )


def _hit_candidates(config, inputs) -> list[HitCandidate]:
    dialogues = {d.dialogue_id: d for d in load_dialogues(inputs["dialogues_clean"])}
    model = load_classifier(inputs["classifier"])
    k = config.labeling.history
    seen = set()
    out = []
    for row in read_records(inputs["candidates"]):
        dialogue_id = row["dialogue_id"]
        if dialogue_id in seen or dialogue_id not in dialogues:
            continue
        seen.add(dialogue_id)
        turn_index = int(row["turn_index"])
        dialogue = dialogues[dialogue_id]
        window = _window_at(dialogue, turn_index, k)
        pred = predict(model, window)
        top3 = sorted(
            zip(pred.labels, pred.distribution), key=lambda lp: (-lp[1], lp[0])
        )[:3]
        out.append(
            HitCandidate(
                dialogue_id=dialogue_id,
                texts=tuple(t.text for t in dialogue.turns[: turn_index + 1]),
                turn_index=turn_index,
                suggestions=tuple((label, float(p)) for label, p in top3),
            )
        )
    return out


def stage_serve_annotation(config, inputs, outputs, options):
    quiz_bank = load_quiz_bank(inputs["quiz_bank"], default_taxonomy())
    events = config.work_dir() / EVENTS_FILE
    store = AnnotationStore(events)
    if store.hits():
        log.info("resuming store with %d hits and %d records",
                 len(store.hits()), len(store.records()))
    else:
        candidates = _hit_candidates(config, inputs)
        hits, leftover = build_hits(
            candidates,
            quiz_bank,
            seed=config.annotation.seed,
            workers_per_hit=config.annotation.workers_per_hit,
        )
        if not hits:
            raise PrerequisiteError(
                "not enough ranked candidates to fill one task bundle"
            )
        store.add_hits(hits)
        log.info("built %d hits (%d candidates left over)", len(hits), len(leftover))
    write_records(outputs["hits"], (hit_record(h) for h in store.hits()))

    if options.get("build_only"):
        return
    import uvicorn

    from .annotation.service import create_app

    app = create_app(store, taxonomy=default_taxonomy(),
                     static_dir=options.get("static_dir"))
    uvicorn.run(app, host=options.get("host", "127.0.0.1"),
                port=int(options.get("port", 8450)), log_level="info")


def _store_and_hits(config):
    events = config.work_dir() / EVENTS_FILE
    if not events.exists():
        raise PrerequisiteError(
            f"missing {events.name}; run 'serve-annotation' and collect work first"
        )
    store = AnnotationStore(events)
    hits = {h.hit_id: h for h in store.hits()}
    return store, hits


def stage_aggregate(config, inputs, outputs, options):
    store, hits = _store_and_hits(config)
    ann = config.annotation
    kept, weights = filter_gated_records(
        store.records(), hits, policy=ann.gate,
        pass_mark=ann.pass_mark, downweight=ann.downweight,
    )
    results = aggregate_majority(
        kept, quorum=ann.quorum, raters=ann.workers_per_hit, weights=weights
    )
    resolved = [r for r in results if r.resolved()]
    write_records(outputs["aggregated"], (aggregation_record(r) for r in resolved))
    customs = harvest_new_labels(kept)
    report = {
        "items": len(results),
        "resolved": len(resolved),
        "coverage": (len(resolved) / len(results)) if results else 0.0,
        "records_kept": len(kept),
        "records_total": len(store.records()),
        "gate": ann.gate,
        "new_labels": [
            {"label": c.label, "count": c.count, "examples": list(c.examples)}
            for c in customs
        ],
    }
    outputs["aggregate_report"].write_text(json.dumps(report, indent=2) + "\n")
    print(
        f"aggregated {len(results)} items, resolved {len(resolved)} "
        f"({100.0 * report['coverage']:.1f}% coverage)"
    )


def stage_kappa(config, inputs, outputs, options):
    store, hits = _store_and_hits(config)
    quiz_ids = {
        (hit.hit_id, item.item_id) for hit in hits.values()
        for item in hit.quiz_items()
    }
    dialogue_records = [
        r for r in store.records() if (r.hit_id, r.item_id) not in quiz_ids
    ]
    if not dialogue_records:
        raise PrerequisiteError("no dialogue annotations recorded yet")
    kappa = fleiss_kappa_from_records(dialogue_records)
    items = len({(r.item_id, r.turn_index) for r in dialogue_records})
    outputs["kappa"].write_text(
        json.dumps({"kappa": kappa, "items": items}, indent=2) + "\n"
    )
    print(f"fleiss kappa {kappa:.4f} over {items} items")


def _labeled_corpus(config, inputs):
    labels = [turn_label_from_record(r) for r in read_records(inputs["turn_labels"])]
    dialogues = load_dialogues(inputs["dialogues_clean"])
    return analytics.corpus_from_turn_labels(labels, dialogues)


def stage_analyze(config, inputs, outputs, options):
    taxonomy = default_taxonomy()
    corpus = _labeled_corpus(config, inputs)
    counts = analytics.label_distribution(corpus, taxonomy)
    _write_bytes(outputs["distribution"], analytics.export_distribution(counts))
    matrix = analytics.transition_matrix(corpus, taxonomy)
    lines = []
    for i, src in enumerate(matrix.labels):
        for j, dst in enumerate(matrix.labels):
            n = int(matrix.counts[i, j])
            if n:
                lines.append(f"{src}\t{dst}\t{n}")
    _write_bytes(
        outputs["transitions"], "".join(l + "\n" for l in lines).encode("utf-8")
    )
    log.info("distribution over %d turns, %d transitions",
             sum(c.count for c in counts), matrix.total())


def flow_paths_for_root(config, corpus, root):
    return analytics.flow_paths(
        corpus, root, default_taxonomy(), max_depth=config.analytics.max_depth
    )


def stage_export_flows(config, inputs, outputs, options):
    taxonomy = default_taxonomy()
    roots = options.get("roots") or list(config.analytics.roots)
    unknown = [r for r in roots if r not in taxonomy]
    if unknown:
        raise ConfigError(f"analytics.roots not in the taxonomy: {unknown}")
    corpus = _labeled_corpus(config, inputs)
    for root in roots:
        graph = flow_paths_for_root(config, corpus, root)
        for fmt, suffix in ((analytics.SANKEY, "tsv"), (analytics.DOT, "dot")):
            data = analytics.export_flow(
                graph, fmt, top_per_layer=config.analytics.top_per_layer
            )
            _write_bytes(config.work_dir() / f"flow_{root.lower()}.{suffix}", data)
        log.info("root %s: %d nodes, %d edges",
                 root, len(graph.nodes), len(graph.edges))


def flow_output_paths(config, options) -> dict[str, Path]:
    roots = options.get("roots") or list(config.analytics.roots)
    out = {}
    for root in roots:
        for suffix in ("tsv", "dot"):
            out[f"flow_{root.lower()}_{suffix}"] = (
                config.work_dir() / f"flow_{root.lower()}.{suffix}"
            )
    return out


def stage_stats(config, inputs, outputs, options):
    dialogues = load_dialogues(inputs["dialogues_clean"])
    n_dialogues = len(dialogues)
    n_turns = sum(len(d.turns) for d in dialogues)
    n_tokens = sum(len(t.tokens) for d in dialogues for t in d.turns)
    rows = [
        ("Total no. of dialogues", f"{n_dialogues:,}"),
        ("Total no. of turns", f"{n_turns:,}"),
        ("Total no. of tokens", f"{n_tokens:,}"),
        ("Avg. no. of turns per dialogue",
         f"{(n_turns / n_dialogues if n_dialogues else 0.0):.2f}"),
        ("Avg. no. of tokens per dialogue",
         f"{(n_tokens / n_dialogues if n_dialogues else 0.0):.2f}"),
        ("Avg. no. of tokens per turn",
         f"{(n_tokens / n_turns if n_turns else 0.0):.2f}"),
    ]
    width = max(len(name) for name, _ in rows)
    text = "".join(f"{name:<{width}}  {value}\n" for name, value in rows)
    outputs["stats"].write_text(text)
    print(text, end="")


# --- stage table and runner ---------------------------------------------------------


@dataclass(frozen=True)
class StageDef:
    name: str
    sections: tuple[str, ...]
    inputs: callable
    outputs: callable
    run: callable


def _work_outputs(*names):
    def resolve(config, options):
        return {name: artifact_path(config, name) for name in names}

    return resolve


def _work_inputs(*names):
    def resolve(config, options):
        return require(config, *names)

    return resolve


def _ingest_inputs(config, options):
    corpus = config.corpus_dir()
    if not corpus.is_dir():
        raise PrerequisiteError(f"corpus dir {corpus} does not exist")
    return {"corpus": corpus}


def _segment_inputs(config, options):
    out = require(config, "sentences", "documents")
    out["fixtures"] = require_corpus(config, "boundary_fixtures")
    return out


def _label_inputs(config, options):
    out = require(config, "dialogues_clean")
    if config.labeling.kind == "builtin":
        out.update(require(config, "classifier"))
    return out


def _train_inputs(config, options):
    out = require(config, "dialogues_clean")
    out["seed_labels"] = require_corpus(config, "seed_labels")
    if any(s.startswith("similar") for s in config.training.stages):
        out.update(require(config, "dialogue_vectors", "dialogue_vector_ids"))
    return out


def _expand_inputs(config, options):
    out = require(config, "dialogue_vectors", "dialogue_vector_ids")
    if config.similarity.source == "seed":
        out["seed_labels"] = require_corpus(config, "seed_labels")
    else:
        out.update(require(config, "aggregated"))
    return out


def _evaluate_inputs(config, options):
    out = require(config, "classifier", "splits", "dialogues_clean")
    out["seed_labels"] = require_corpus(config, "seed_labels")
    return out


def _self_label_inputs(config, options):
    out = require(config, "dialogues_clean", "classifier")
    if config.similarity.source == "seed":
        out["seed_labels"] = require_corpus(config, "seed_labels")
    else:
        out.update(require(config, "aggregated"))
    return out


def _serve_inputs(config, options):
    out = require(config, "candidates", "dialogues_clean", "classifier")
    out["quiz_bank"] = require_corpus(config, "quiz_bank")
    return out


def _events_inputs(config, options):
    events = config.work_dir() / EVENTS_FILE
    if not events.exists():
        raise PrerequisiteError(
            f"missing {events.name}; run 'serve-annotation' and collect work first"
        )
    return {"events": events, **require(config, "hits")}


STAGES = {
    s.name: s
    for s in (
        StageDef("ingest", ("paths",), _ingest_inputs,
                 _work_outputs("documents", "sentences", "parse_report"),
                 stage_ingest),
        StageDef("segment-turns", ("paths", "segmenter"), _segment_inputs,
                 _work_outputs("segmenter_model", "turns"), stage_segment_turns),
        StageDef("build-dialogues", ("assembly",), _work_inputs("turns"),
                 _work_outputs("dialogues_raw"), stage_build_dialogues),
        StageDef("clean", ("cleaning",), _work_inputs("dialogues_raw"),
                 _work_outputs("dialogues_clean", "cleaning_report"), stage_clean),
        StageDef("score-readability", ("readability",),
                 _work_inputs("dialogues_clean", "turn_labels"),
                 _work_outputs("vocabulary", "candidates"),
                 stage_score_readability),
        StageDef("label", ("labeling",), _label_inputs,
                 _work_outputs("turn_labels"), stage_label),
        StageDef("filter-emotional", ("labeling",), _label_inputs,
                 _work_outputs("dialogues_emotional"), stage_filter_emotional),
        StageDef("embed", ("embedding", "labeling"),
                 _work_inputs("dialogues_clean"),
                 _work_outputs("dialogue_vectors", "dialogue_vector_ids"),
                 stage_embed),
        StageDef("expand-similar", ("similarity",), _expand_inputs,
                 _work_outputs("matches"), stage_expand_similar),
        StageDef("train", ("training", "similarity", "labeling"), _train_inputs,
                 _work_outputs("classifier", "stage_report", "stage_metrics",
                               "splits"),
                 stage_train),
        StageDef("self-label", ("training", "labeling", "similarity"),
                 _self_label_inputs,
                 _work_outputs("self_labeled"), stage_self_label),
        StageDef("evaluate", ("training", "labeling"), _evaluate_inputs,
                 _work_outputs("metrics"), stage_evaluate),
        StageDef("serve-annotation", ("annotation", "labeling"), _serve_inputs,
                 _work_outputs("hits"), stage_serve_annotation),
        StageDef("aggregate", ("annotation",), _events_inputs,
                 _work_outputs("aggregated", "aggregate_report"), stage_aggregate),
        StageDef("kappa", ("annotation",), _events_inputs,
                 _work_outputs("kappa"), stage_kappa),
        StageDef("analyze", ("analytics",),
                 _work_inputs("turn_labels", "dialogues_clean"),
                 _work_outputs("distribution", "transitions"), stage_analyze),
        StageDef("export-flows", ("analytics",),
                 _work_inputs("turn_labels", "dialogues_clean"),
                 flow_output_paths, stage_export_flows),
        StageDef("stats", ("paths",), _work_inputs("dialogues_clean"),
                 _work_outputs("stats"), stage_stats),
    )
}

# Stages whose side effects fall outside the manifest contract: serving
# blocks, and the events log grows outside our control.
UNTRACKED_OUTPUTS = {"serve-annotation": ("hits",)}


@dataclass(frozen=True)
class StageOutcome:
    stage: str
    skipped: bool
    elapsed_s: float
    outputs: dict


def run_stage(
    name: str,
    config: PipelineConfig,
    force: bool = False,
    options: dict | None = None,
) -> StageOutcome:
    options = options or {}
    if name not in STAGES:
        raise ConfigError(f"unknown command {name!r}")
    validate_config(config)
    stage = STAGES[name]
    work_dir = config.work_dir()
    work_dir.mkdir(parents=True, exist_ok=True)
    with work_lock(work_dir):
        manifest = Manifest(work_dir / "manifest.jsonl")
        inputs = stage.inputs(config, options)
        input_hashes = {k: hash_path(p) for k, p in sorted(inputs.items())}
        digest = config_hash(config, stage.sections)
        if options:
            # run-time options (split choice, roots, ...) shape the outputs
            flat = json.dumps(
                {k: str(v) for k, v in sorted(options.items())}, sort_keys=True
            )
            digest = hash_bytes((digest + flat).encode("utf-8"))
        outputs = stage.outputs(config, options)
        tracked = {
            k: p for k, p in outputs.items()
            if k in UNTRACKED_OUTPUTS.get(name, outputs)
        }
        if (
            not force
            and name not in UNTRACKED_OUTPUTS
            and manifest.up_to_date(name, input_hashes, digest, tracked)
        ):
            log.info("%s: up to date", name)
            return StageOutcome(name, True, 0.0, outputs)
        started = time.monotonic()
        stage.run(config, inputs, outputs, options)
        elapsed = time.monotonic() - started
        output_hashes = {
            k: hash_path(p) for k, p in sorted(tracked.items()) if p.exists()
        }
        manifest.record(name, input_hashes, digest, output_hashes, elapsed)
        log.info("%s: done in %.2fs", name, elapsed)
        return StageOutcome(name, False, elapsed, outputs)
