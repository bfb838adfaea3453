"""Replay measurements over recorded, annotated traces.

Three studies are supported: top-K localization accuracy over a grid of
decay factors, majority voting as a binary predictor of first-token
correctness, and the share of decreasing vs increasing first-token
uncertainty along repair paths.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import EmptyDataset
from .localization import majority_vote_first_token, select_top_k
from .uncertainty import GenerationTrace, iter_trace_records, trace_from_records

DEFAULT_ALPHAS = (0.2, 0.5, 0.8)
DEFAULT_KS = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class AnnotatedTrace:
    trace: GenerationTrace
    faulty_positions: frozenset = frozenset()
    first_token_correct: Optional[bool] = None
    group: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "faulty_positions", frozenset(self.faulty_positions))
        bad = [p for p in self.faulty_positions if not 1 <= p <= len(self.trace)]
        if bad:
            raise ValueError(f"faulty positions {sorted(bad)} outside 1..{len(self.trace)}")


@dataclass(frozen=True)
class RepairPath:
    uncertainties: tuple[float, ...]
    label: str

    def __post_init__(self):
        object.__setattr__(self, "uncertainties", tuple(self.uncertainties))


# -- localization grid -------------------------------------------------------

@dataclass
class GridTable:
    alphas: tuple[float, ...]
    ks: tuple[int, ...]
    cells: dict  # (alpha, k) -> accuracy
    n_traces: int

    def row(self, alpha: float) -> list[float]:
        return [self.cells[(alpha, k)] for k in self.ks]

    def mean(self, alpha: float) -> float:
        row = self.row(alpha)
        return sum(row) / len(row)

    def to_dict(self) -> dict:
        return {
            "table": "localization_accuracy",
            "n_traces": self.n_traces,
            "ks": list(self.ks),
            "rows": [
                {"alpha": a, "accuracy": self.row(a), "avg": self.mean(a)} for a in self.alphas
            ],
        }

    def to_text(self) -> str:
        header = ["Decay Factor"] + [f"Top-{k} Acc" for k in self.ks] + ["Avg."]
        rows = [[f"alpha = {a:g}"] + [f"{v:.3f}" for v in self.row(a)] + [f"{self.mean(a):.3f}"]
                for a in self.alphas]
        return _aligned(header, rows)


def localization_accuracy_grid(
    traces: Sequence[AnnotatedTrace],
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    ks: Sequence[int] = DEFAULT_KS,
) -> GridTable:
    """Fraction of traces whose top-K suspicious tokens hit a true faulty position."""
    if not traces:
        raise EmptyDataset("no annotated traces")
    for t in traces:
        if not t.faulty_positions:
            raise ValueError(f"trace {t.trace.prompt_id!r} has no faulty position annotated")
    ks = tuple(sorted(set(ks)))
    cells = {}
    for alpha in alphas:
        hits = dict.fromkeys(ks, 0)
        for t in traces:
            ranked = [s.position for s in select_top_k(t.trace, alpha, ks[-1])]
            for k in ks:
                if t.faulty_positions.intersection(ranked[:k]):
                    hits[k] += 1
        for k in ks:
            cells[(alpha, k)] = hits[k] / len(traces)
    return GridTable(tuple(alphas), ks, cells, len(traces))


# -- voting as a classifier -------------------------------------------------

@dataclass
class VotingMetrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "table": "voting_classifier",
            "precision": _num(self.precision),
            "recall": _num(self.recall),
            "f1": _num(self.f1),
            "confusion": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn},
            "flags": self.flags,
        }

    def to_text(self) -> str:
        return _aligned(["Precision", "Recall", "F1 Score"],
                        [[_fmt(self.precision), _fmt(self.recall), _fmt(self.f1)]])


def voting_classifier_metrics(groups: Iterable[tuple[Sequence, Sequence[bool]]]) -> VotingMetrics:
    """Score majority voting as a predictor of first-token correctness.

    Each group is ``(candidates, correct)`` where ``correct[i]`` says whether
    candidate ``i`` has a correct first token. A candidate is predicted
    correct iff its first token equals its group's vote winner.
    """
    tp = fp = fn = tn = 0
    seen = False
    for cands, truth in groups:
        cands = list(cands)
        if not cands:
            raise ValueError("voting groups must be non-empty")
        if len(truth) != len(cands):
            raise ValueError("one ground-truth label per candidate is required")
        seen = True
        winner = majority_vote_first_token(cands).winner
        for cand, actual in zip(cands, truth):
            first = cand.steps[0].chosen.token if isinstance(cand, GenerationTrace) else cand.first_token
            predicted = first == winner
            if predicted and actual:
                tp += 1
            elif predicted:
                fp += 1
            elif actual:
                fn += 1
            else:
                tn += 1
    if not seen:
        raise EmptyDataset("no voting groups")
    flags = []
    precision = tp / (tp + fp) if tp + fp else 0.0
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall = math.nan
        flags.append("recall_undefined")
    if math.isnan(recall):
        f1 = math.nan
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return VotingMetrics(precision, recall, f1, tp, fp, fn, tn, flags)


# -- uncertainty tendency ---------------------------------------------------

@dataclass
class TendencyRow:
    label: str
    decreasing: int
    increasing: int
    excluded: int

    @property
    def counted(self) -> int:
        return self.decreasing + self.increasing

    @property
    def pct_decreasing(self) -> float:
        return 100.0 * self.decreasing / self.counted if self.counted else math.nan

    @property
    def pct_increasing(self) -> float:
        return 100.0 * self.increasing / self.counted if self.counted else math.nan


@dataclass
class TendencyTable:
    rows: dict[str, TendencyRow]

    def to_dict(self) -> dict:
        return {
            "table": "uncertainty_tendency",
            "rows": [
                {"label": r.label, "decreasing": r.decreasing, "increasing": r.increasing,
                 "excluded_equal": r.excluded, "pct_decreasing": _num(r.pct_decreasing),
                 "pct_increasing": _num(r.pct_increasing)}
                for r in self.rows.values()
            ],
        }

    def to_text(self) -> str:
        header = ["Path", "Uncert. down", "Uncert. up", "Equal (excluded)"]
        rows = [[r.label, _pct(r.pct_decreasing), _pct(r.pct_increasing), str(r.excluded)]
                for r in self.rows.values()]
        return _aligned(header, rows)


def uncertainty_tendency(paths: Iterable[RepairPath]) -> TendencyTable:
    """Count strict decreases/increases between consecutive patches, per label.

    Equal consecutive values count toward neither share and are reported
    separately.
    """
    rows: dict[str, TendencyRow] = {}
    seen = False
    for path in paths:
        if len(path.uncertainties) < 2:
            raise ValueError("repair paths need at least two patches")
        seen = True
        row = rows.setdefault(path.label, TendencyRow(path.label, 0, 0, 0))
        for prev, cur in zip(path.uncertainties, path.uncertainties[1:]):
            if cur < prev:
                row.decreasing += 1
            elif cur > prev:
                row.increasing += 1
            else:
                row.excluded += 1
    if not seen:
        raise EmptyDataset("no repair paths")
    return TendencyTable(dict(sorted(rows.items())))


# -- dataset loading ----------------------------------------------------------

def _merged_field(records: Sequence[dict], name: str):
    values = [r[name] for r in records if name in r]
    return values[0] if values else None


def load_annotated_traces(lines: Iterable[str]) -> list[AnnotatedTrace]:
    """Parse trace-log JSONL whose records additionally carry annotations.

    ``faulty_positions``, ``first_token_correct`` and ``group`` may appear on
    any record of a trace; the first occurrence is used.
    """
    out = []
    for records in iter_trace_records(lines):
        faulty = _merged_field(records, "faulty_positions") or []
        correct = _merged_field(records, "first_token_correct")
        group = _merged_field(records, "group")
        out.append(AnnotatedTrace(trace_from_records(records), frozenset(int(p) for p in faulty),
                                  None if correct is None else bool(correct),
                                  None if group is None else str(group)))
    return out


def voting_groups(traces: Sequence[AnnotatedTrace]) -> list[tuple[list[GenerationTrace], list[bool]]]:
    """Group annotated traces by ``group`` (falling back to prompt id), in first-seen order."""
    grouped: dict[str, tuple[list, list]] = {}
    for t in traces:
        if t.first_token_correct is None:
            raise ValueError(f"trace {t.trace.prompt_id!r} lacks first_token_correct")
        key = t.group if t.group is not None else t.trace.prompt_id
        cands, truth = grouped.setdefault(key, ([], []))
        cands.append(t.trace)
        truth.append(t.first_token_correct)
    return list(grouped.values())


def load_repair_paths(lines: Iterable[str]) -> list[RepairPath]:
    """Parse ``{"label": ..., "uncertainties": [...]}`` records, one path per line."""
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            out.append(RepairPath(tuple(float(u) for u in rec["uncertainties"]), str(rec["label"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"line {lineno}: bad repair path record ({exc})") from exc
    return out


# -- formatting ---------------------------------------------------------------

def _num(x: float):
    return None if math.isnan(x) else x


def _fmt(x: float) -> str:
    return "NaN" if math.isnan(x) else f"{x:.3f}"


def _pct(x: float) -> str:
    return "n/a" if math.isnan(x) else f"{x:.1f}%"


def _aligned(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    lines = ["  ".join(str(c).rjust(w) for c, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(str(c).rjust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)
