"""Token-guided branch decoding at localized faulty positions.

For each suspicious position the prefix before it is kept verbatim, the
token there is swapped for each of the ``m`` most probable alternatives, and
the rest of the patch is re-decoded greedily.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .backends.base import Backend
from .candidates import PatchCandidate, Provenance
from .errors import BackendError, BackendUnavailable, NoPatchInCompletion, TruncatedAlternatives
from .harness import extract_patch
from .localization import SuspiciousToken
from .uncertainty import ProbEntry, TokenStep


@dataclass(frozen=True)
class RefinedEntry:
    faulty_position: int
    replacement: ProbEntry
    child: PatchCandidate


@dataclass
class RefinedSet:
    parent_id: str
    entries: list[RefinedEntry] = field(default_factory=list)
    cost: int = 0
    diagnostics: list[str] = field(default_factory=list)

    @property
    def children(self) -> list[PatchCandidate]:
        return [e.child for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def refine_at_token(
    parent: PatchCandidate,
    position: int,
    m: int,
    backend: Backend,
    *,
    max_tokens: int = 256,
    logprob_depth: Optional[int] = None,
    diagnostics: Optional[list[str]] = None,
) -> list[PatchCandidate]:
    """Children of ``parent`` branching at ``position`` on its top-``m`` alternatives.

    The parent's own token at ``position`` is never a replacement. The first
    token is out of bounds here; it is handled by voting.
    """
    if not 2 <= position <= len(parent.trace):
        raise ValueError(f"position {position} outside 2..{len(parent.trace)}")
    notes = diagnostics if diagnostics is not None else []
    tokens = parent.tokens
    prefix = tokens[: position - 1]
    original = tokens[position - 1]

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", TruncatedAlternatives)
        alts = backend.top_alternatives(parent.prompt, prefix, m, original,
                                        logprob_depth=logprob_depth)
    if any(issubclass(w.category, TruncatedAlternatives) for w in caught):
        notes.append(f"position {position}: TruncatedAlternatives ({len(alts)} of {m})")

    at_fault = parent.trace.steps[position - 1]
    children = []
    for rank, repl in enumerate(alts, start=1):
        forced = prefix + [repl.token]
        known = list(parent.trace.steps[: position - 1]) + [
            TokenStep(position, repl, at_fault.alternatives)
        ]
        trace = backend.greedy_continue(parent.prompt, forced, max_tokens=max_tokens,
                                        logprob_depth=logprob_depth, prefix_steps=known)
        if trace.tokens[:position] != forced:
            raise BackendError(f"backend did not honor the forced prefix at position {position}")
        try:
            patch = extract_patch(trace.decoded_text)
        except NoPatchInCompletion:
            notes.append(f"position {position}, replacement {repl.token!r}: no patch in completion")
            continue
        child_id = f"{parent.id}/r{position}.{rank}"
        patch = replace(patch, origin_candidate=child_id)
        children.append(PatchCandidate.from_trace(
            child_id, trace, patch, prompt=parent.prompt,
            provenance=Provenance.refined(parent.id, position, repl.token),
        ))
    return children


def refine_candidate(
    parent: PatchCandidate,
    ftokens: Sequence[SuspiciousToken],
    m: int,
    backend: Backend,
    *,
    top_k: Optional[int] = None,
    max_tokens: int = 256,
    logprob_depth: Optional[int] = None,
    parallelism: int = 1,
) -> RefinedSet:
    """Union of the per-position refined sets, deduplicated on decoded text.

    ``cost`` is what the generation budget is charged: ``top_k * m`` whenever
    at least one position was refined (``top_k`` defaults to the number of
    positions), regardless of how many children survive deduplication.
    """
    result = RefinedSet(parent.id)
    if not ftokens:
        return result
    result.cost = (top_k if top_k is not None else len(ftokens)) * m
    ordered = sorted(ftokens, key=lambda f: f.rank)

    def run(ft: SuspiciousToken):
        notes: list[str] = []
        try:
            kids = refine_at_token(parent, ft.position, m, backend, max_tokens=max_tokens,
                                   logprob_depth=logprob_depth, diagnostics=notes)
        except BackendUnavailable:
            raise
        except BackendError as exc:
            notes.append(f"position {ft.position}: {type(exc).__name__}: {exc}")
            kids = []
        return ft, kids, notes

    if parallelism > 1 and len(ordered) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(run, ordered))
    else:
        outcomes = [run(ft) for ft in ordered]

    seen: dict[str, str] = {}
    for ft, kids, notes in outcomes:
        result.diagnostics.extend(notes)
        for kid in kids:
            text = kid.trace.decoded_text
            if text in seen:
                result.diagnostics.append(f"duplicate: {kid.id} repeats {seen[text]}")
                continue
            seen[text] = kid.id
            result.entries.append(RefinedEntry(
                ft.position, kid.trace.steps[ft.position - 1].chosen, kid))
    return result
