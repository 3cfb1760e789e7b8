"""Crowd annotation: HIT assembly, HTTP service, aggregation and quality gates."""
from .aggregate import (
    AggregationResult,
    CustomLabel,
    WorkerGrade,
    aggregate_majority,
    aggregation_from_record,
    aggregation_record,
    coverage,
    filter_gated_records,
    fleiss_kappa,
    fleiss_kappa_from_records,
    grade_worker,
    harvest_new_labels,
    normalize_label,
)
from .hits import HitCandidate, build_hits
from .models import (
    DIALOGUE,
    DIALOGUES_PER_HIT,
    QUIZ,
    QUIZZES_PER_HIT,
    AnnotationRecord,
    HIT,
    HitItem,
    QuizQuestion,
    annotation_from_record,
    annotation_record,
    hit_from_record,
    hit_record,
    load_quiz_bank,
    quiz_from_record,
    quiz_record,
)
from .store import (
    AnnotationStore,
    DuplicateAnnotation,
    NotAssigned,
    UnknownHit,
    UnknownItem,
)

__all__ = [name for name in dir() if not name.startswith("_")]
