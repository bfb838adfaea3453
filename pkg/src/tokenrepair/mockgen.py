"""Random mock-model scripts with an optional planted path."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .backends.mock import MockModelScript, WILDCARD, node_key

EOS = "<eos>"
MAX_NODES = 20000


def default_vocab(size: int) -> list[str]:
    # leading space and no inner spaces keep concatenations uniquely decodable
    return [f" t{i}" for i in range(size)]


def generate_mock_script(
    branching: int = 3,
    depth: int = 4,
    *,
    vocab_size: int = 8,
    planted_path: Optional[Sequence[str]] = None,
    planted_rank: int = 1,
    concentration: float = 1.0,
    seed: int = 0,
    prompt_key: str = WILDCARD,
) -> MockModelScript:
    """Build a full ``branching``-ary trie of the given depth.

    Every internal node spreads its mass over ``branching`` distinct
    non-EOS tokens drawn from a Dirichlet distribution; leaves emit EOS.
    When ``planted_path`` is given, its tokens are forced into the trie and
    each sits at probability rank ``planted_rank`` (1 = argmax) among its
    siblings.
    """
    if not 1 <= branching < vocab_size:
        raise ValueError("branching must be in [1, vocab_size)")
    if vocab_size + 1 > 64:
        raise ValueError("vocabulary (plus EOS) is limited to 64 tokens")
    if sum(branching ** d for d in range(depth + 1)) > MAX_NODES:
        raise ValueError("trie too large")
    if planted_path is not None and len(planted_path) != depth:
        raise ValueError("planted path must have exactly `depth` tokens")
    if not 1 <= planted_rank <= branching:
        raise ValueError("planted_rank must be in [1, branching]")

    rng = np.random.default_rng(seed)
    vocab = default_vocab(vocab_size)
    if planted_path:
        vocab += [t for t in dict.fromkeys(planted_path) if t not in vocab]
    if len(vocab) + 1 > 64:
        raise ValueError("vocabulary (plus EOS) is limited to 64 tokens")
    nodes: dict[str, dict[str, float]] = {}

    def expand(path: list[str]) -> None:
        d = len(path)
        if d == depth:
            nodes[node_key(prompt_key, path)] = {EOS: 1.0}
            return
        on_plant = planted_path is not None and list(planted_path[:d]) == path
        choices = list(rng.choice(vocab_size, size=branching, replace=False))
        tokens = [vocab[i] for i in choices]
        probs = sorted(rng.dirichlet([concentration] * branching), reverse=True)
        if on_plant:
            target = planted_path[d]
            if target in tokens:
                tokens.remove(target)
            else:
                tokens.pop()
            tokens.insert(planted_rank - 1, target)
        # ties in probability would make "rank" ambiguous; nudge them apart
        probs = _strictly_decreasing(probs)
        nodes[node_key(prompt_key, path)] = dict(zip(tokens, probs))
        for tok in tokens:
            expand(path + [tok])

    expand([])
    return MockModelScript(tuple(vocab) + (EOS,), EOS, nodes)


def _strictly_decreasing(probs: Sequence[float]) -> list[float]:
    out = [float(p) for p in probs]
    for i in range(1, len(out)):
        if out[i] >= out[i - 1]:
            out[i] = out[i - 1] * 0.999
    total = sum(out)
    out = [p / total for p in out]
    out[0] += 1.0 - sum(out)
    return out
