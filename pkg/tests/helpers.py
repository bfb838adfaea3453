"""Builders shared by the test modules."""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path
from typing import Sequence

from tokenrepair.analysis import AnnotatedTrace, RepairPath
from tokenrepair.backends.base import GenerationRequest
from tokenrepair.backends.mock import MockBackend, MockModelScript
from tokenrepair.candidates import PatchCandidate
from tokenrepair.harness import extract_patch
from tokenrepair.localization import select_top_k
from tokenrepair.mockgen import generate_mock_script
from tokenrepair.refinement import refine_candidate
from tokenrepair.harness import BugCase
from tokenrepair.uncertainty import GenerationTrace, ProbEntry, TokenStep


def step(position: int, probs: Sequence[float], chosen: int = 0, tokens=None) -> TokenStep:
    """A step whose alternatives carry ``probs`` (sorted descending by the caller)."""
    tokens = tokens or [f"t{position}_{i}" for i in range(len(probs))]
    alts = tuple(ProbEntry(t, p) for t, p in zip(tokens, probs))
    return TokenStep(position, alts[chosen], alts)


def trace_from_top2(pairs: Sequence[tuple[float, float]], prompt_id="p") -> GenerationTrace:
    return GenerationTrace(prompt_id, tuple(step(i, list(p)) for i, p in enumerate(pairs, start=1)))


def trace_with_profile(profile: Sequence[float], prompt_id="p") -> GenerationTrace:
    """Trace whose per-position uncertainty is (up to rounding) ``profile``."""
    return trace_from_top2([(1 - u / 2, u / 2) for u in profile], prompt_id)


# -- toy bug: an inverted null check ---------------------------------------------

CALC_SOURCE = """\
def legend_count(dataset):
    if dataset != None:
        return 0
    return len(dataset)
"""

CALC_TEST = """\
from calc import legend_count

got = legend_count([1, 2])
assert legend_count(None) == 0, "expected 0 for None"
assert got == 2, f"expected 2 but was {got}"
"""


def write_calc_bug(root: Path, test_command: str | None = None, bug_id="calc-1") -> Path:
    """Create the toy project and its manifest under ``root``; return the manifest path."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "calc.py").write_text(CALC_SOURCE)
    (root / "test_calc.py").write_text(CALC_TEST)
    manifest = {
        "id": bug_id,
        "source_path": "calc.py",
        "hunk_start": 2,
        "hunk_end": 2,
        "buggy_hunk": "    if dataset != None:",
        "context_radius": 2,
        "test_command": test_command or f"{sys.executable} test_calc.py",
        "timeout_s": 20,
    }
    path = root / "bug.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def calc_bug(root: Path, test_command: str | None = None) -> BugCase:
    from tokenrepair.harness import load_manifest
    return load_manifest(write_calc_bug(root, test_command))


CALC_VOCAB = ["    if", "    while", " dataset", " x", " !=", " ==", " <", " None", ":", "<eos>"]


def second_best_fix_script() -> MockModelScript:
    """Greedy decoding reproduces the bug; the fix is the 2nd-best token at position 3."""
    P = {
        ("*",): {"    if": 0.9, "    while": 0.1},                     # U = 0.2
        ("*", "    if"): {" dataset": 0.95, " x": 0.05},               # U = 0.1
        ("*", "    if", " dataset"): {" !=": 0.5, " ==": 0.3, " <": 0.2},   # U = 0.8, rise
        ("*", "    if", " dataset", " !="): {" None": 1.0},
        ("*", "    if", " dataset", " !=", " None"): {":": 1.0},
        ("*", "    if", " dataset", " =="): {" None": 1.0},
        ("*", "    if", " dataset", " ==", " None"): {":": 1.0},
        ("*", "    if", " dataset", " <"): {" None": 1.0},
        ("*", "    if", " dataset", " <", " None"): {":": 1.0},
    }
    return MockModelScript.from_paths(CALC_VOCAB, "<eos>", P)


def immediate_pass_script() -> MockModelScript:
    P = {
        ("*",): {"    if": 1.0},
        ("*", "    if"): {" dataset": 1.0},
        ("*", "    if", " dataset"): {" ==": 1.0},
        ("*", "    if", " dataset", " =="): {" None": 1.0},
        ("*", "    if", " dataset", " ==", " None"): {":": 1.0},
    }
    return MockModelScript.from_paths(CALC_VOCAB, "<eos>", P)


NOSOL_VOCAB = ["a", "q", " b", " z", " c", " x1", " x2", " x3", "B", "W",
               " y0", " y1", " y2", " y3", "<eos>"]


def no_solution_script() -> MockModelScript:
    """Initial prompt -> "a b c"; feedback prompts -> "B y0" with lower first-token uncertainty.

    Both traces have exactly one suspicious position with three non-zero
    alternatives, so every refinement yields three distinct children.
    """
    P = {
        ("*",): {"a": 0.6, "q": 0.4},                                   # U1 = 0.8
        ("*", "a"): {" b": 0.95, " z": 0.05},                           # U = 0.1
        ("*", "a", " b"): {" c": 0.4, " x1": 0.3, " x2": 0.2, " x3": 0.1},  # U = 0.9
        ("*", "a", " b", " c"): {"<eos>": 1.0},
        ("fb",): {"B": 0.9, "W": 0.1},                                  # U1 = 0.2
        ("fb", "B"): {" y0": 0.5, " y1": 0.3, " y2": 0.15, " y3": 0.05},  # U = 0.8
        ("fb", "B", " y0"): {"<eos>": 1.0},
    }
    return MockModelScript.from_paths(NOSOL_VOCAB, "<eos>", P,
                                      prompts={"fb": ["a b x", "B y"]})


def plain_bug(root: Path, test_command: str = "exit 1", timeout: float = 10.0) -> BugCase:
    root.mkdir(parents=True, exist_ok=True)
    (root / "src.txt").write_text("header\noriginal line\nfooter\n")
    return BugCase("plain", "src.txt", 2, 2, "original line", test_command, root, 1, timeout)


# -- refinement oracle ----------------------------------------------------------

def candidate_from_sample(backend, prompt="p", cid="c1", rng=None, temperature=0.0):
    depth = min(5, backend.capabilities.max_logprob_depth)
    trace = backend.sample(GenerationRequest(prompt, temperature=temperature, logprob_depth=depth),
                           rng=rng)[0]
    return PatchCandidate.from_trace(cid, trace, extract_patch(trace.decoded_text, cid), prompt=prompt)


def refinement_violations(seed):
    """One randomized fixture run; returns a list of violation messages."""
    rng = random.Random(seed)
    m = rng.randint(1, 3)
    script = generate_mock_script(branching=m + 1 + rng.randint(0, 1), depth=rng.randint(3, 5),
                                  vocab_size=8, seed=seed)
    be = MockBackend(script, seed=seed)
    parent = candidate_from_sample(be, temperature=1.0)
    top_k = rng.randint(1, 3)
    ft = select_top_k(parent.trace, rng.choice([0.2, 0.5, 0.8]), top_k)
    rs = refine_candidate(parent, ft, m, be, top_k=top_k)
    problems = []
    if len(rs) > top_k * m:
        problems.append("too many children")
    if len(rs) != len(ft) * m:
        # the generated tries never collide, so every slot must be filled
        problems.append(f"expected {len(ft) * m} children, got {len(rs)}")
    for entry in rs.entries:
        n = entry.faulty_position
        kid = entry.child.tokens
        if kid[: n - 1] != parent.tokens[: n - 1]:
            problems.append(f"{entry.child.id}: prefix changed")
        allowed = [a.token for a in be.top_alternatives(parent.prompt, parent.tokens[: n - 1], m,
                                                         parent.tokens[n - 1])]
        if kid[n - 1] == parent.tokens[n - 1] or kid[n - 1] not in allowed:
            problems.append(f"{entry.child.id}: bad replacement {kid[n - 1]!r}")
    if len({k.trace.decoded_text for k in rs.children}) != len(rs):
        problems.append("duplicate children")
    return problems


# -- analysis datasets with hand-computed answers ---------------------------------

# equal rises at 2, 4, 6, 8: any alpha < 1 ranks them in that order
SAWTOOTH = [0.1, 0.4, 0.1, 0.4, 0.1, 0.4, 0.1, 0.4]
# faulty at rank 1 x3, rank 2 x2, rank 3 x2, rank 4 x1, never ranked x2
GRID_FAULTS = [2, 2, 2, 4, 4, 6, 6, 8, 3, 3]
GRID_EXPECTED_ROW = [0.3, 0.5, 0.7, 0.8, 0.8]


def grid_dataset():
    return [AnnotatedTrace(trace_with_profile(SAWTOOTH, f"g{i}"), {f}) for i, f in enumerate(GRID_FAULTS)]


def first_token_trace(token, u=0.5):
    return GenerationTrace("p", (step(1, [1 - u / 2, u / 2], tokens=[token, "~"]),))


def voting_dataset():
    """TP=3, FP=3, FN=1, TN=1 under majority voting."""
    f = first_token_trace
    return [
        ([f("x"), f("x"), f("x"), f("y")], [True, True, False, True]),
        ([f("z"), f("z"), f("w")], [True, False, False]),
        ([f("v")], [False]),
    ]


def tendency_dataset():
    """Three decreases, one increase, one excluded tie."""
    return [RepairPath((0.8, 0.5, 0.3, 0.4), "correct"), RepairPath((0.6, 0.6, 0.2), "correct")]
