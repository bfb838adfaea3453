"""Patch candidates: a generation trace plus the patch extracted from it."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from .uncertainty import GenerationTrace, compute_uncertainty, uncertainty_profile


class Status(str, enum.Enum):
    UNTESTED = "Untested"
    IMPLAUSIBLE = "Implausible"
    PLAUSIBLE = "Plausible"
    LOW_QUALITY = "LowQuality"
    DISCARDED = "Discarded"


@dataclass(frozen=True)
class Provenance:
    kind: str  # "Initial", "Refined" or "FeedbackChild"
    parent_id: Optional[str] = None
    position: Optional[int] = None
    replacement: Optional[str] = None

    @classmethod
    def initial(cls) -> "Provenance":
        return cls("Initial")

    @classmethod
    def refined(cls, parent_id: str, position: int, replacement: str) -> "Provenance":
        return cls("Refined", parent_id, position, replacement)

    @classmethod
    def feedback_child(cls, parent_id: str) -> "Provenance":
        return cls("FeedbackChild", parent_id)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.parent_id is not None:
            out["parent_id"] = self.parent_id
        if self.position is not None:
            out["position"] = self.position
            out["replacement"] = self.replacement
        return out


@dataclass(frozen=True)
class PatchText:
    text: str
    origin_candidate: str = ""
    rule: str = "whole"  # which extraction rule fired: "fence" or "whole"
    char_start: int = 0
    char_end: int = -1

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("patch text must be non-empty")
        if self.char_end < 0:
            object.__setattr__(self, "char_end", self.char_start + len(self.text))


def token_span(trace: GenerationTrace, char_start: int, char_end: int) -> tuple[int, int]:
    """1-based inclusive positions of the tokens overlapping ``[char_start, char_end)``."""
    first = last = None
    offset = 0
    for step in trace.steps:
        end = offset + len(step.chosen.token)
        if end > char_start and offset < char_end:
            if first is None:
                first = step.position
            last = step.position
        offset = end
    if first is None:
        raise ValueError("character span does not overlap any token")
    return first, last


@dataclass
class PatchCandidate:
    """The unit that flows through the repair loop.

    ``patch_start``/``patch_end`` delimit (1-based, inclusive) the tokens of the
    trace that produced the extracted patch. The "first token" of a candidate
    is the token at ``patch_start``, not the first token of the completion.
    """

    id: str
    trace: GenerationTrace
    patch: PatchText
    prompt: str = ""
    provenance: Provenance = field(default_factory=Provenance.initial)
    status: Status = Status.UNTESTED
    feedback: Optional[object] = None
    patch_start: int = 1
    patch_end: Optional[int] = None
    flags: list[str] = field(default_factory=list)
    _profile: Optional[list[float]] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.patch_end is None:
            self.patch_end = len(self.trace)
        if self.trace.truncated and "Truncated" not in self.flags:
            self.flags.append("Truncated")

    @classmethod
    def from_trace(cls, id: str, trace: GenerationTrace, patch: PatchText, **kwargs) -> "PatchCandidate":
        start, end = token_span(trace, patch.char_start, patch.char_end)
        return cls(id=id, trace=trace, patch=patch, patch_start=start, patch_end=end, **kwargs)

    @property
    def profile(self) -> list[float]:
        """Cached uncertainty profile of the full trace."""
        if self._profile is None:
            self._profile = uncertainty_profile(self.trace)
        return self._profile

    @property
    def first_token(self) -> str:
        return self.trace.steps[self.patch_start - 1].chosen.token

    @property
    def first_u(self) -> float:
        if self._profile is not None:
            return self._profile[self.patch_start - 1]
        return compute_uncertainty(self.trace.steps[self.patch_start - 1])

    @property
    def tokens(self) -> list[str]:
        return self.trace.tokens
