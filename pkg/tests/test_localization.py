import math
import random

import pytest

from tokenrepair.errors import DegenerateUncertainty, EmptyCandidatePool, InvalidDecayFactor
from tokenrepair.localization import (
    filter_by_first_token,
    find_suspicious_positions,
    global_score,
    local_score,
    majority_vote_first_token,
    rank_profile,
    select_top_k,
)

from helpers import step, trace_with_profile
from tokenrepair.uncertainty import GenerationTrace


def brute_force_rank(profile, alpha, k, log=math.log):
    """Score every strict rise, sort by (-score, position), truncate."""
    rows = []
    for n in range(2, len(profile) + 1):
        u, prev = profile[n - 1], profile[n - 2]
        if u > prev and prev > 0:
            rows.append((-(u * log(u / prev)) * alpha ** n, n))
    return [n for _, n in sorted(rows)[:k]]


def test_rise_detection():
    assert find_suspicious_positions([0.1, 0.1, 0.2, 0.15, 0.4]) == {3, 5}
    assert find_suspicious_positions([0.5]) == set()
    assert find_suspicious_positions([]) == set()


def test_local_score_by_hand():
    assert local_score(0.8, 0.4) == pytest.approx(0.8 * math.log(2))
    assert local_score(0.0, 0.3) == 0.0
    with pytest.raises(DegenerateUncertainty):
        local_score(0.5, 0.0)


def test_global_score_by_hand():
    s = local_score(0.8, 0.4)
    assert global_score(s, 3, 0.5) == pytest.approx(s / 8)
    for bad in (0.0, -0.1, 1.5, math.nan):
        with pytest.raises(InvalidDecayFactor):
            global_score(s, 3, bad)
    assert global_score(s, 3, 1.0) == s


def test_decay_prefers_earlier_positions():
    # identical rises at positions 3 and 7: alpha < 1 ranks 3 first
    prof = [0.1, 0.1, 0.4, 0.1, 0.1, 0.1, 0.4]
    assert [s.position for s in rank_profile(prof, 0.5, 3)] == [3, 7]


def test_tie_goes_to_smaller_position():
    prof = [0.1, 0.4, 0.1, 0.4]
    ranked = rank_profile(prof, 1.0, 2)
    assert ranked[0].global_score == ranked[1].global_score
    assert [s.position for s in ranked] == [2, 4]


def test_no_backfill_and_short_lists():
    assert rank_profile([0.9, 0.5, 0.1], 0.5, 3) == []
    assert len(rank_profile([0.1, 0.5, 0.2], 0.5, 3)) == 1


def test_zero_predecessor_is_skipped_with_note():
    notes = []
    ranked = rank_profile([0.0, 0.5, 0.2, 0.6], 0.5, 3, diagnostics=notes)
    assert [s.position for s in ranked] == [4]
    assert notes and "position 2" in notes[0]


def test_region_excludes_first_patch_token():
    prof = [0.1, 0.5, 0.2, 0.6, 0.1, 0.9]
    assert [s.position for s in rank_profile(prof, 1.0, 5, region=(2, 4))] == [4]


def test_bad_k():
    with pytest.raises(ValueError):
        rank_profile([0.1, 0.2], 0.5, 0)


def test_select_top_k_attaches_tokens():
    trace = trace_with_profile([0.2, 0.1, 0.8])
    [top] = select_top_k(trace, 0.5, 3)
    assert (top.position, top.rank, top.token) == (3, 1, trace.tokens[2])


def _random_profile(rng):
    n = rng.randint(0, 64)
    return [rng.choice([0.0, rng.random(), round(rng.random(), 1)]) for _ in range(n)]


def test_matches_brute_force():
    rng = random.Random(7)
    for _ in range(1000):
        prof = _random_profile(rng)
        alpha = rng.choice([0.2, 0.5, 0.8, 1.0, rng.uniform(0.01, 1)])
        k = rng.randint(1, 6)
        got = [s.position for s in rank_profile(prof, alpha, k)]
        assert got == brute_force_rank(prof, alpha, k)


def test_log_base_invariance():
    rng = random.Random(11)
    for _ in range(300):
        prof = [rng.random() for _ in range(rng.randint(2, 40))]
        rankings = [[s.position for s in rank_profile(prof, 0.5, 5, log=lg)]
                    for lg in (math.log2, math.log, math.log10)]
        assert rankings[0] == rankings[1] == rankings[2]


# -- voting -------------------------------------------------------------------

def _first_trace(token, u):
    return GenerationTrace("p", (step(1, [1 - u / 2, u / 2], tokens=[token, token + "'"]),))


def naive_vote(pool):
    counts = {}
    for t in pool:
        tok = t.steps[0].chosen.token
        counts[tok] = counts.get(tok, 0) + 1
    return counts


def test_vote_matches_counting_oracle():
    rng = random.Random(3)
    for _ in range(1000):
        pool = [_first_trace(rng.choice("abcd"), rng.random()) for _ in range(rng.randint(1, 12))]
        res = majority_vote_first_token(pool)
        counts = naive_vote(pool)
        assert {t.token: t.count for t in res.tallies} == counts
        assert counts[res.winner] == max(counts.values())


def test_vote_tie_breaks_on_lower_uncertainty():
    pool = [_first_trace("a", 0.6), _first_trace("b", 0.2), _first_trace("a", 0.6), _first_trace("b", 0.4)]
    assert majority_vote_first_token(pool).winner == "b"


def test_vote_tie_breaks_lexicographically_last():
    pool = [_first_trace("z", 0.5), _first_trace("m", 0.5)]
    res = majority_vote_first_token(pool)
    assert res.winner == "m"
    assert [t.token for t in res.tallies] == ["m", "z"]


def test_vote_majority_beats_uncertainty():
    pool = [_first_trace("a", 0.9), _first_trace("a", 0.9), _first_trace("b", 0.0)]
    assert majority_vote_first_token(pool).winner == "a"


def test_vote_empty_pool():
    with pytest.raises(EmptyCandidatePool):
        majority_vote_first_token([])


def test_filter_by_first_token():
    pool = [_first_trace("a", 0.1), _first_trace("b", 0.1), _first_trace("a", 0.3)]
    assert filter_by_first_token(pool, "a") == [pool[0], pool[2]]
