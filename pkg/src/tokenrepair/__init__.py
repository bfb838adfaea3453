"""Uncertainty-guided program repair with token-level refinement."""

from .analysis import (
    AnnotatedTrace,
    RepairPath,
    localization_accuracy_grid,
    uncertainty_tendency,
    voting_classifier_metrics,
)
from .backends import BackendCapabilities, GenerationRequest, MockBackend, MockModelScript
from .candidates import PatchCandidate, PatchText, Provenance, Status
from .config import RepairConfig, load_config
from .engine import Outcome, RepairEngine, RepairReport, ledger_charge, repair
from .harness import BugCase, Feedback, FeedbackKind, Harness, build_prompt, extract_patch, load_manifest
from .localization import (
    SuspiciousToken,
    VotingResult,
    filter_by_first_token,
    find_suspicious_positions,
    global_score,
    local_score,
    majority_vote_first_token,
    select_top_k,
)
from .quality import QualityVerdict, Verdict, measure_trace_quality
from .refinement import RefinedSet, refine_at_token, refine_candidate
from .uncertainty import (
    GenerationTrace,
    ProbEntry,
    TokenStep,
    compute_uncertainty,
    first_token_uncertainty,
    uncertainty_profile,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotatedTrace",
    "BackendCapabilities",
    "BugCase",
    "build_prompt",
    "compute_uncertainty",
    "extract_patch",
    "Feedback",
    "FeedbackKind",
    "filter_by_first_token",
    "find_suspicious_positions",
    "first_token_uncertainty",
    "GenerationRequest",
    "GenerationTrace",
    "global_score",
    "Harness",
    "ledger_charge",
    "load_config",
    "load_manifest",
    "local_score",
    "localization_accuracy_grid",
    "majority_vote_first_token",
    "measure_trace_quality",
    "MockBackend",
    "MockModelScript",
    "Outcome",
    "PatchCandidate",
    "PatchText",
    "ProbEntry",
    "Provenance",
    "QualityVerdict",
    "refine_at_token",
    "refine_candidate",
    "RefinedSet",
    "repair",
    "RepairConfig",
    "RepairEngine",
    "RepairPath",
    "RepairReport",
    "select_top_k",
    "Status",
    "SuspiciousToken",
    "TokenStep",
    "uncertainty_profile",
    "uncertainty_tendency",
    "Verdict",
    "voting_classifier_metrics",
    "VotingResult",
]
