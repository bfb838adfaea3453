"""Trace-quality gate for patches produced from test feedback."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .candidates import PatchCandidate
from .errors import EmptyTrace


class Verdict(str, enum.Enum):
    HIGH = "High"
    LOW = "Low"


@dataclass(frozen=True)
class QualityVerdict:
    verdict: Verdict
    parent_u1: float
    child_u1: float

    @property
    def is_high(self) -> bool:
        return self.verdict is Verdict.HIGH

    def to_dict(self) -> dict:
        return {"verdict": self.verdict.value, "parent_u1": self.parent_u1, "child_u1": self.child_u1}


def measure_trace_quality(parent: PatchCandidate, child: PatchCandidate) -> QualityVerdict:
    """High iff the child's first-token uncertainty is strictly below the parent's.

    Equal uncertainties are judged Low.
    """
    for cand in (parent, child):
        if not cand.trace.steps:
            raise EmptyTrace(f"candidate {cand.id!r} has an empty trace")
    parent_u1, child_u1 = parent.first_u, child.first_u
    verdict = Verdict.HIGH if child_u1 < parent_u1 else Verdict.LOW
    return QualityVerdict(verdict, parent_u1, child_u1)
