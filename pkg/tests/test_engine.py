import json

import pytest

from tokenrepair.backends.mock import MockBackend, MockModelScript
from tokenrepair.candidates import Status
from tokenrepair.config import RepairConfig
from tokenrepair.engine import Outcome, RepairEngine, repair
from tokenrepair.errors import BackendUnavailable, InvalidConfig
from tokenrepair.harness import Harness
from tokenrepair.mockgen import generate_mock_script
from tokenrepair.uncertainty import read_traces_jsonl

from helpers import calc_bug, second_best_fix_script, immediate_pass_script, no_solution_script, plain_bug

GREEDY = RepairConfig(temperature=0.0)


def _run(script, bug, config=GREEDY, tmp=None, seed=0):
    backend = MockBackend(script, seed=seed, max_logprob_depth=max(5, len(script.vocab)))
    report = repair(bug, config, backend, Harness(tmp))
    return report, backend


def test_immediate_pass(tmp_path):
    report, be = _run(immediate_pass_script(), calc_bug(tmp_path / "bug"), tmp=tmp_path / "sb")
    assert report.outcome is Outcome.PLAUSIBLE_FOUND
    assert report.budget_used == GREEDY.n
    assert [p.id for p in report.patches] == ["c1", "c2"]
    assert be.calls["top_alternatives"] == be.calls["greedy_continue"] == 0


def test_fix_via_second_best_token(tmp_path):
    report, be = _run(second_best_fix_script(), calc_bug(tmp_path / "bug"), tmp=tmp_path / "sb")
    cfg = GREEDY
    assert report.outcome is Outcome.PLAUSIBLE_FOUND
    assert report.budget_used == cfg.n + cfg.top_k * cfg.m == 11
    [patch] = report.patches
    assert patch.patch.text == "    if dataset == None:"
    assert patch.provenance.kind == "Refined"
    assert (patch.provenance.parent_id, patch.provenance.position) == ("c1", 3)
    assert dict(be.calls) == {"sample": 1, "top_alternatives": 1, "greedy_continue": 2}
    assert [(e.kind, e.total) for e in report.ledger] == [("initial", 2), ("refine", 11)]


def hand_simulated_ledger():
    """Walk the no-solution fixture by hand (n=2, m=3, TopK=3, budget=50).

    Each initial "a b c" candidate has one suspicious position, so refining
    it costs TopK*m = 9 and yields three children; each child gets n = 2
    feedback patches "B y0" whose first-token uncertainty (0.2) beats the
    parent's (0.8). A "B y0" candidate refines to three "B y*" children whose
    feedback patches tie on first-token uncertainty and are dropped.
    """
    totals, used = [], 0

    def charge(x):
        nonlocal used
        used += x
        totals.append(used)

    charge(2)
    pool = ["abc", "abc"]
    while used <= 50 and pool:
        kind = pool.pop(0)
        charge(9)
        for _ in range(3):
            charge(2)
        if kind == "abc":
            pool.extend(["B"] * 6)
    return totals


def test_no_solution_ledger(tmp_path):
    report, _ = _run(no_solution_script(), plain_bug(tmp_path / "bug"), tmp=tmp_path / "sb")
    expected = hand_simulated_ledger()
    assert expected == [2, 11, 13, 15, 17, 26, 28, 30, 32, 41, 43, 45, 47, 56, 58, 60, 62]
    assert report.outcome is Outcome.BUDGET_EXHAUSTED
    assert [e.total for e in report.ledger] == expected
    assert [e.kind for e in report.ledger] == ["initial"] + (["refine"] + ["feedback"] * 3) * 4
    assert report.budget_used == 62
    statuses = {c.id: c.status for c in report.candidates.values()}
    assert statuses["c1/r3.1/f1"] is Status.IMPLAUSIBLE
    low = [cid for cid, s in statuses.items() if s is Status.LOW_QUALITY]
    assert len(low) == 12 and all(cid.startswith("c1/r3.1/f1/") for cid in low[:6])


def test_fallback_when_nothing_is_suspicious(tmp_path):
    script = MockModelScript.from_paths(
        ["p", "q", " r", " s", "<eos>"], "<eos>",
        {("*",): {"p": 0.5, "q": 0.5}, ("*", "p"): {" r": 0.9, " s": 0.1}})
    cfg = RepairConfig(temperature=0.0, budget=5)
    report, be = _run(script, plain_bug(tmp_path / "bug"), cfg, tmp_path / "sb")
    assert [e.amount for e in report.ledger] == [2, 2, 2]
    assert [e.kind for e in report.ledger] == ["initial", "feedback", "feedback"]
    assert report.outcome is Outcome.BUDGET_EXHAUSTED
    assert be.calls["top_alternatives"] == 0
    assert sum(e["event"] == "LocalizationSkipped" for e in report.events) == 2


def test_pool_exhausted(tmp_path):
    script = MockModelScript.from_paths(
        ["p", " r", "<eos>"], "<eos>", {("*",): {"p": 1.0}, ("*", "p"): {" r": 1.0}})
    report, _ = _run(script, plain_bug(tmp_path / "bug"), tmp=tmp_path / "sb")
    assert report.outcome is Outcome.POOL_EXHAUSTED
    assert report.budget_used == 6


def test_same_seed_same_report(tmp_path):
    script = generate_mock_script(3, 4, seed=1)
    cfg = RepairConfig(seed=42, budget=30)
    bug = plain_bug(tmp_path / "bug")
    a = repair(bug, cfg, MockBackend(script, seed=cfg.seed), Harness(tmp_path / "sb")).to_json(False)
    b = repair(bug, cfg, MockBackend(script, seed=cfg.seed), Harness(tmp_path / "sb")).to_json(False)
    assert a == b
    c = repair(bug, cfg.with_overrides({"seed": 7}), MockBackend(script, seed=7),
               Harness(tmp_path / "sb")).to_json(False)
    assert c != a


def test_report_files(tmp_path):
    report, _ = _run(second_best_fix_script(), calc_bug(tmp_path / "bug"), tmp=tmp_path / "sb")
    rpath, tpath = report.write(tmp_path / "out")
    data = json.loads(rpath.read_text())
    assert data["schema"] == "tokenrepair.report/1"
    assert data["outcome"] == "PlausibleFound" and data["budget_used"] == 11
    assert "metadata" in data
    with open(tpath) as fh:
        assert len(read_traces_jsonl(fh)) == len(report.candidates) == 4


def test_original_passing_aborts(tmp_path):
    report, be = _run(second_best_fix_script(), plain_bug(tmp_path / "bug", "true"), tmp=tmp_path / "sb")
    assert report.outcome is Outcome.ABORTED and "already pass" in report.error
    assert be.calls["sample"] == 0


def test_backend_failure_aborts(tmp_path):
    class Down(MockBackend):
        def sample(self, request, rng=None):
            raise BackendUnavailable("endpoint unavailable after 3 attempts")

    report = repair(plain_bug(tmp_path / "bug"), GREEDY, Down(second_best_fix_script()), Harness(tmp_path / "sb"))
    assert report.outcome is Outcome.ABORTED
    assert report.error.startswith("BackendUnavailable")


def test_shallow_backend_rejected():
    with pytest.raises(InvalidConfig):
        RepairEngine(RepairConfig(logprob_depth=3), MockBackend(second_best_fix_script(), max_logprob_depth=3),
                     Harness())
