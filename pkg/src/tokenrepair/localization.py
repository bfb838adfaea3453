"""Suspicious-token localization and first-token majority voting.

Non-first tokens are ranked by how sharply uncertainty rises relative to the
preceding position, decayed by position so earlier tokens win near-ties.
The first token has no predecessor; it is judged by voting across samples.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

from .errors import DegenerateUncertainty, EmptyCandidatePool, InvalidDecayFactor
from .uncertainty import GenerationTrace, compute_uncertainty, uncertainty_profile


@dataclass(frozen=True)
class SuspiciousToken:
    position: int
    local_score: float
    global_score: float
    rank: int
    token: str = ""


@dataclass(frozen=True)
class VoteTally:
    token: str
    count: int


@dataclass(frozen=True)
class VotingResult:
    winner: str
    tallies: tuple[VoteTally, ...]


def find_suspicious_positions(profile: Sequence[float]) -> set[int]:
    """Positions ``n >= 2`` whose uncertainty strictly exceeds position ``n - 1``."""
    return {n for n in range(2, len(profile) + 1) if profile[n - 1] > profile[n - 2]}


def local_score(u_n: float, u_prev: float, log: Callable[[float], float] = math.log) -> float:
    if u_prev == 0:
        raise DegenerateUncertainty("predecessor uncertainty is 0; log ratio undefined")
    if u_n == 0:
        return 0.0
    return u_n * log(u_n / u_prev)


def global_score(local: float, position: int, alpha: float) -> float:
    _check_alpha(alpha)
    if position < 1:
        raise ValueError("position must be >= 1")
    return local * alpha ** position


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha <= 1.0):
        raise InvalidDecayFactor(f"decay factor must lie in (0, 1]; got {alpha!r}")


def rank_profile(
    profile: Sequence[float],
    alpha: float,
    k: int,
    *,
    region: Optional[tuple[int, int]] = None,
    log: Callable[[float], float] = math.log,
    tokens: Optional[Sequence[str]] = None,
    diagnostics: Optional[list[str]] = None,
) -> list[SuspiciousToken]:
    """Score suspicious positions of ``profile`` and keep the ``k`` best.

    ``region`` restricts candidates to positions ``start + 1 .. end``; the
    region's own first position is left to voting. Positions whose
    predecessor has zero uncertainty are skipped and noted in
    ``diagnostics``. Ties on global score go to the smaller position.
    """
    _check_alpha(alpha)
    if k < 1:
        raise ValueError("k must be positive")
    lo, hi = region if region is not None else (1, len(profile))
    scored = []
    for n in sorted(find_suspicious_positions(profile)):
        if n <= lo or n > hi:
            continue
        u_n, u_prev = profile[n - 1], profile[n - 2]
        try:
            s_l = local_score(u_n, u_prev, log)
        except DegenerateUncertainty:
            if diagnostics is not None:
                diagnostics.append(f"position {n}: predecessor uncertainty is 0, skipped")
            continue
        scored.append((n, s_l, global_score(s_l, n, alpha)))
    scored.sort(key=lambda item: (-item[2], item[0]))
    return [
        SuspiciousToken(n, s_l, s_g, rank, tokens[n - 1] if tokens else "")
        for rank, (n, s_l, s_g) in enumerate(scored[:k], start=1)
    ]


def select_top_k(
    trace: GenerationTrace,
    alpha: float,
    k: int,
    *,
    region: Optional[tuple[int, int]] = None,
    log: Callable[[float], float] = math.log,
    diagnostics: Optional[list[str]] = None,
) -> list[SuspiciousToken]:
    """Top-``k`` suspicious tokens of ``trace`` ranked by decayed suspiciousness.

    Returns an empty list when nothing is suspicious; no backfilling from
    non-suspicious positions is done.
    """
    return rank_profile(
        uncertainty_profile(trace), alpha, k,
        region=region, log=log, tokens=trace.tokens, diagnostics=diagnostics,
    )


def _first_token_and_u(candidate) -> tuple[str, float]:
    if isinstance(candidate, GenerationTrace):
        if not candidate.steps:
            raise ValueError("candidate has no tokens")
        return candidate.steps[0].chosen.token, compute_uncertainty(candidate.steps[0])
    return candidate.first_token, candidate.first_u


def majority_vote_first_token(candidates: Iterable) -> VotingResult:
    """Vote on the first token across ``candidates``.

    Accepts patch candidates or bare traces. Ties on count are broken by the
    lower mean first-token uncertainty among holders, then by token order.
    """
    counts: dict[str, int] = defaultdict(int)
    u_sums: dict[str, float] = defaultdict(float)
    seen = False
    for cand in candidates:
        seen = True
        tok, u = _first_token_and_u(cand)
        counts[tok] += 1
        u_sums[tok] += u
    if not seen:
        raise EmptyCandidatePool("cannot vote over an empty pool")
    order = sorted(counts, key=lambda t: (-counts[t], u_sums[t] / counts[t], t))
    return VotingResult(order[0], tuple(VoteTally(t, counts[t]) for t in order))


def filter_by_first_token(candidates: Iterable, winner: str) -> list:
    return [c for c in candidates if _first_token_and_u(c)[0] == winner]
