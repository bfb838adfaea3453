"""The repair loop: breadth-first search over patch candidates under a budget.

Each level pops one candidate, localizes its suspicious tokens, branches on
replacements there, and tests the children. Children that still fail are fed
back to the model together with their test output; the resulting patches are
kept only if their first-token uncertainty dropped, then voted on and queued.
"""

from __future__ import annotations

import enum
import json
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .backends.base import Backend, GenerationRequest
from .candidates import PatchCandidate, Provenance, Status
from .config import RepairConfig
from .errors import BackendError, HarnessError, InsufficientLogprobDepth, InvalidConfig, NoPatchInCompletion
from .harness import BugCase, Harness, build_prompt, extract_patch
from .localization import filter_by_first_token, majority_vote_first_token, select_top_k
from .quality import measure_trace_quality
from .refinement import refine_candidate
from .uncertainty import write_trace_jsonl

log = logging.getLogger(__name__)

REPORT_SCHEMA = "tokenrepair.report/1"


class Outcome(str, enum.Enum):
    PLAUSIBLE_FOUND = "PlausibleFound"
    BUDGET_EXHAUSTED = "BudgetExhausted"
    POOL_EXHAUSTED = "PoolExhausted"
    ABORTED = "Aborted"


@dataclass(frozen=True)
class LedgerEntry:
    kind: str
    amount: int
    total: int


@dataclass
class RepairReport:
    bug_id: str
    budget: int = 0
    outcome: Optional[Outcome] = None
    budget_used: int = 0
    ledger: list[LedgerEntry] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    patches: list[PatchCandidate] = field(default_factory=list)
    candidates: dict[str, PatchCandidate] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    error: Optional[str] = None
    # wall-clock data lives apart from the deterministic part of the report
    event_times: list[float] = field(default_factory=list)
    durations: dict[str, float] = field(default_factory=dict)
    started_at: float = field(default_factory=time.time)
    finished_at: Optional[float] = None

    def log(self, event: str, **fields) -> dict:
        record = {"seq": len(self.events), "event": event, **fields}
        self.events.append(record)
        self.event_times.append(time.time())
        return record

    @property
    def found(self) -> bool:
        return self.outcome is Outcome.PLAUSIBLE_FOUND

    def to_dict(self, include_metadata: bool = True) -> dict:
        out = {
            "schema": REPORT_SCHEMA,
            "bug_id": self.bug_id,
            "outcome": self.outcome.value if self.outcome else None,
            "budget": self.budget,
            "budget_used": self.budget_used,
            "config": self.config,
            "ledger": [vars(e) for e in self.ledger],
            "patches": [_patch_record(c) for c in self.patches],
            "candidates": [_candidate_record(c) for c in self.candidates.values()],
            "events": self.events,
            "error": self.error,
        }
        if include_metadata:
            out["metadata"] = {
                "started_at": self.started_at,
                "finished_at": self.finished_at,
                "event_times": self.event_times,
                "test_durations": self.durations,
            }
        return out

    def to_json(self, include_metadata: bool = True) -> str:
        return json.dumps(self.to_dict(include_metadata), indent=2, sort_keys=True)

    def write(self, out_dir) -> tuple[Path, Path]:
        """Write ``report.json`` and ``traces.jsonl`` into ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report_path, traces_path = out / "report.json", out / "traces.jsonl"
        report_path.write_text(self.to_json() + "\n", encoding="utf-8")
        with open(traces_path, "w", encoding="utf-8") as fh:
            for cand in self.candidates.values():
                write_trace_jsonl(fh, cand.trace, trace_id=cand.id)
        return report_path, traces_path


def _patch_record(c: PatchCandidate) -> dict:
    return {"id": c.id, "text": c.patch.text, "provenance": c.provenance.to_dict()}


def _candidate_record(c: PatchCandidate) -> dict:
    return {
        "id": c.id,
        "status": c.status.value,
        "provenance": c.provenance.to_dict(),
        "first_token": c.first_token,
        "first_u": c.first_u,
        "patch": c.patch.text,
        "patch_span": [c.patch_start, c.patch_end],
        "flags": list(c.flags),
        "feedback": c.feedback.to_dict() if c.feedback is not None else None,
    }


def ledger_charge(report: RepairReport, event_kind: str, amount: int) -> int:
    """Add ``amount`` generated patches to the running total and log it."""
    if amount < 0:
        raise ValueError("charges must be non-negative")
    report.budget_used += amount
    report.ledger.append(LedgerEntry(event_kind, amount, report.budget_used))
    report.log("charge", kind=event_kind, amount=amount, total=report.budget_used)
    return report.budget_used


def fallback_when_unlocalizable(candidate: PatchCandidate, report: RepairReport) -> list[PatchCandidate]:
    """No suspicious position: send the candidate itself down the feedback branch."""
    report.log("LocalizationSkipped", candidate=candidate.id)
    return [candidate]


class _Found(Exception):
    pass


class RepairEngine:
    def __init__(self, config: RepairConfig, backend: Backend, harness: Harness):
        self.config = config.validate()
        depth_needed = max(2, config.m + 1)
        if backend.capabilities.max_logprob_depth < depth_needed:
            raise InvalidConfig(
                f"backend exposes {backend.capabilities.max_logprob_depth} logprobs; "
                f"m={config.m} needs {depth_needed}")
        if config.logprob_depth > backend.capabilities.max_logprob_depth:
            raise InvalidConfig("logprob_depth exceeds what the backend can return")
        self.backend = backend
        self.harness = harness

    def repair(self, bug: BugCase) -> RepairReport:
        report = RepairReport(bug.id, budget=self.config.budget, config=self.config.to_dict())
        self._rng = np.random.default_rng(self.config.seed)
        try:
            self._search(bug, report)
        except _Found:
            report.outcome = Outcome.PLAUSIBLE_FOUND
        except (BackendError, HarnessError, InsufficientLogprobDepth) as exc:
            report.outcome = Outcome.ABORTED
            report.error = f"{type(exc).__name__}: {exc}"
            report.log("abort", error=report.error)
            log.error("repair of %s aborted: %s", bug.id, report.error)
        report.finished_at = time.time()
        report.log("finish", outcome=report.outcome.value, budget_used=report.budget_used)
        return report

    # -- steps -------------------------------------------------------------

    def _generate(self, report: RepairReport, prompt: str, id_prefix: str,
                  provenance: Provenance, line: str) -> list[PatchCandidate]:
        cfg = self.config
        request = GenerationRequest(prompt, cfg.n, cfg.temperature, cfg.max_tokens, cfg.logprob_depth)
        traces = self.backend.sample(request, rng=self._rng)
        ledger_charge(report, line, cfg.n)
        out = []
        for i, trace in enumerate(traces, start=1):
            cid = f"{id_prefix}{i}"
            try:
                patch = extract_patch(trace.decoded_text, cid)
            except NoPatchInCompletion:
                report.log("no_patch", candidate=cid, parent=provenance.parent_id)
                continue
            cand = PatchCandidate.from_trace(cid, trace, patch, prompt=prompt, provenance=provenance)
            _ = cand.profile  # cache once, reused by localization and voting
            report.candidates[cid] = cand
            report.log("generated", candidate=cid, parent=provenance.parent_id,
                       provenance=provenance.kind, first_token=cand.first_token,
                       first_u=cand.first_u, text=trace.decoded_text)
            out.append(cand)
        return out

    def _evaluate(self, report: RepairReport, bug: BugCase, cands: Sequence[PatchCandidate]) -> None:
        """Test a batch in generation order; stop the search if any passes."""
        feedbacks = self.harness.evaluate_batch(bug, [c.patch for c in cands])
        passing = []
        for cand, fb in zip(cands, feedbacks):
            cand.feedback = fb
            cand.status = Status.PLAUSIBLE if fb.passed else Status.IMPLAUSIBLE
            report.durations[cand.id] = fb.duration
            report.log("evaluated", candidate=cand.id, **fb.to_dict())
            if fb.passed:
                passing.append(cand)
        if passing:
            report.patches = passing
            raise _Found()

    def _vote(self, report: RepairReport, cands: list[PatchCandidate], stage: str) -> list[PatchCandidate]:
        if not cands:
            return []
        result = majority_vote_first_token(cands)
        keep = filter_by_first_token(cands, result.winner)
        kept = {c.id for c in keep}
        for c in cands:
            if c.id not in kept:
                c.status = Status.DISCARDED
        report.log("vote", stage=stage, winner=result.winner,
                   tallies=[[t.token, t.count] for t in result.tallies],
                   kept=[c.id for c in keep], discarded=[c.id for c in cands if c.id not in kept])
        return keep

    def _search(self, bug: BugCase, report: RepairReport) -> None:
        cfg = self.config
        context = bug.context()
        original = self.harness.evaluate_original(bug)
        report.log("evaluated", candidate="original", **original.to_dict())
        if original.passed:
            raise HarnessError("tests already pass on the unpatched code")

        prompt = build_prompt(bug.buggy_hunk, original, cfg.template, context=context)
        initial = self._generate(report, prompt, "c", Provenance.initial(), "initial")
        self._evaluate(report, bug, initial)
        pool = deque()
        for survivor in self._vote(report, initial, "initial"):
            pool.append(survivor)
            report.log("enqueue", candidate=survivor.id)

        while report.budget_used <= cfg.budget and pool:
            cand = pool.popleft()
            report.log("pop", candidate=cand.id)
            notes: list[str] = []
            ftokens = select_top_k(cand.trace, cfg.alpha, cfg.top_k,
                                   region=(cand.patch_start, cand.patch_end), diagnostics=notes)
            report.log("localize", candidate=cand.id, diagnostics=notes, ftokens=[
                {"position": f.position, "token": f.token, "local": f.local_score,
                 "global": f.global_score, "rank": f.rank} for f in ftokens])

            if not ftokens:
                refined = fallback_when_unlocalizable(cand, report)
            else:
                rs = refine_candidate(cand, ftokens, cfg.m, self.backend, top_k=cfg.top_k,
                                      max_tokens=cfg.max_tokens, logprob_depth=cfg.logprob_depth,
                                      parallelism=cfg.parallelism)
                ledger_charge(report, "refine", rs.cost)
                for child in rs.children:
                    report.candidates[child.id] = child
                    report.log("generated", candidate=child.id, parent=cand.id,
                               provenance="Refined", position=child.provenance.position,
                               replacement=child.provenance.replacement,
                               first_token=child.first_token, first_u=child.first_u,
                               text=child.trace.decoded_text)
                report.log("refine", candidate=cand.id, children=[c.id for c in rs.children],
                           diagnostics=rs.diagnostics)
                refined = rs.children
                self._evaluate(report, bug, refined)

            staged: list[PatchCandidate] = []
            for parent in refined:
                fb_prompt = build_prompt(parent.patch.text, parent.feedback, cfg.template,
                                         context=context)
                furthers = self._generate(report, fb_prompt, f"{parent.id}/f",
                                          Provenance.feedback_child(parent.id), "feedback")
                self._evaluate(report, bug, furthers)
                for child in furthers:
                    verdict = measure_trace_quality(parent, child)
                    report.log("quality", parent=parent.id, candidate=child.id, **verdict.to_dict())
                    if verdict.is_high:
                        staged.append(child)
                    else:
                        child.status = Status.LOW_QUALITY
            for survivor in self._vote(report, staged, "feedback"):
                pool.append(survivor)
                report.log("enqueue", candidate=survivor.id)

        report.outcome = (Outcome.BUDGET_EXHAUSTED if report.budget_used > cfg.budget
                          else Outcome.POOL_EXHAUSTED)


def repair(bug: BugCase, config: RepairConfig, backend: Backend, harness: Harness) -> RepairReport:
    return RepairEngine(config, backend, harness).repair(bug)
