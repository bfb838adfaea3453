"""Token-level uncertainty from top-K next-token probabilities.

The uncertainty of a decoded position is one minus the gap between the two
most probable next tokens: a peaked distribution scores 0, a flat one 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Sequence

from .errors import EmptyTrace, InsufficientLogprobDepth

MASS_TOLERANCE = 1e-6
_PROB_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ProbEntry:
    token: str
    prob: float

    def __post_init__(self):
        if not self.token:
            raise ValueError("token must be non-empty")
        if not (-_PROB_TOLERANCE <= self.prob <= 1.0 + _PROB_TOLERANCE):
            raise ValueError(f"probability out of range: {self.prob!r}")


@dataclass(frozen=True)
class TokenStep:
    """One decoded position.

    ``chosen`` is the token that was actually emitted (sampled, forced or
    greedy). ``alternatives`` is the model's top-K list at this position,
    sorted by descending probability, so ``alternatives[0]`` is the argmax.
    """

    position: int
    chosen: ProbEntry
    alternatives: tuple[ProbEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "alternatives", tuple(self.alternatives))
        if self.position < 1:
            raise ValueError("positions are 1-based")
        probs = [a.prob for a in self.alternatives]
        if any(b > a + _PROB_TOLERANCE for a, b in zip(probs, probs[1:])):
            raise ValueError(f"alternatives not sorted at position {self.position}")
        if sum(probs) > 1.0 + MASS_TOLERANCE:
            raise ValueError(f"top-K mass exceeds 1 at position {self.position}")

    @property
    def depth(self) -> int:
        return len(self.alternatives)


@dataclass(frozen=True)
class GenerationTrace:
    prompt_id: str
    steps: tuple[TokenStep, ...]
    decoded_text: str = None  # type: ignore[assignment]
    truncated: bool = field(default=False, compare=False)

    def __post_init__(self):
        steps = tuple(self.steps)
        object.__setattr__(self, "steps", steps)
        for i, step in enumerate(steps, start=1):
            if step.position != i:
                raise ValueError(f"trace positions must be 1..L; got {step.position} at index {i}")
        text = "".join(s.chosen.token for s in steps)
        if self.decoded_text is None:
            object.__setattr__(self, "decoded_text", text)
        elif self.decoded_text != text:
            raise ValueError("decoded_text does not match the concatenated tokens")

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def tokens(self) -> list[str]:
        return [s.chosen.token for s in self.steps]

    @classmethod
    def from_tokens(cls, prompt_id: str, steps: Iterable[tuple[ProbEntry, Sequence[ProbEntry]]],
                    truncated: bool = False) -> "GenerationTrace":
        """Build a trace from (chosen, alternatives) pairs, numbering positions from 1."""
        built = tuple(
            TokenStep(i, chosen, tuple(alts))
            for i, (chosen, alts) in enumerate(steps, start=1)
        )
        return cls(prompt_id, built, truncated=truncated)


def compute_uncertainty(step: TokenStep) -> float:
    """Return ``1 - (p_top1 - p_top2)`` for ``step``."""
    if step.depth < 2:
        raise InsufficientLogprobDepth(
            f"position {step.position} has {step.depth} alternative(s); need at least 2",
            position=step.position,
        )
    gap = step.alternatives[0].prob - step.alternatives[1].prob
    return min(1.0, max(0.0, 1.0 - gap))


def uncertainty_profile(trace: GenerationTrace) -> list[float]:
    """Per-position uncertainty; ``profile[i]`` belongs to position ``i + 1``."""
    return [compute_uncertainty(step) for step in trace.steps]


def first_token_uncertainty(trace: GenerationTrace) -> float:
    if not trace.steps:
        raise EmptyTrace(f"trace {trace.prompt_id!r} has no tokens")
    return compute_uncertainty(trace.steps[0])


# -- JSONL trace log -------------------------------------------------------

def step_record(prompt_id: str, step: TokenStep, **extra) -> dict:
    record = {
        "prompt_id": prompt_id,
        "position": step.position,
        "token": step.chosen.token,
        "prob": step.chosen.prob,
        "alternatives": [{"token": a.token, "prob": a.prob} for a in step.alternatives],
    }
    record.update(extra)
    return record


def write_trace_jsonl(fh: IO[str], trace: GenerationTrace, **extra) -> None:
    """Append one JSON object per step of ``trace`` to ``fh``.

    Extra keyword fields (e.g. ``trace_id``) are copied onto every record.
    """
    for step in trace.steps:
        fh.write(json.dumps(step_record(trace.prompt_id, step, **extra), sort_keys=True))
        fh.write("\n")


def iter_trace_records(lines: Iterable[str]) -> Iterator[list[dict]]:
    """Group JSONL step records into per-trace lists.

    A new trace starts whenever ``position`` returns to 1 or the trace key
    (``trace_id`` if present, else ``prompt_id``) changes.
    """
    current: list[dict] = []
    current_key = None
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(rec, dict) or "position" not in rec or "token" not in rec:
            raise ValueError(f"line {lineno}: not a trace step record")
        key = rec.get("trace_id", rec.get("prompt_id"))
        if current and (rec["position"] == 1 or key != current_key):
            yield current
            current = []
        current.append(rec)
        current_key = key
    if current:
        yield current


def trace_from_records(records: Sequence[dict]) -> GenerationTrace:
    steps = []
    for rec in records:
        chosen = ProbEntry(rec["token"], float(rec["prob"]))
        alts = tuple(ProbEntry(a["token"], float(a["prob"])) for a in rec.get("alternatives", []))
        steps.append(TokenStep(int(rec["position"]), chosen, alts))
    prompt_id = str(records[0].get("prompt_id", "")) if records else ""
    return GenerationTrace(prompt_id, tuple(steps))


def read_traces_jsonl(fh: IO[str]) -> list[GenerationTrace]:
    return [trace_from_records(group) for group in iter_trace_records(fh)]
