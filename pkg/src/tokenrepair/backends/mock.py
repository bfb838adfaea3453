"""A scripted, deterministic language model over a small vocabulary.

The script is a probability trie: each node is addressed by a prompt key and
the token path decoded so far, and holds a full next-token distribution.
Paths that leave the scripted trie emit end-of-sequence with certainty.
"""

from __future__ import annotations

import json
import threading
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from ..errors import PrefixForcingUnsupported, TruncatedAlternatives
from ..uncertainty import GenerationTrace, ProbEntry, TokenStep
from .base import Backend, BackendCapabilities, GenerationRequest, prompt_digest

SEP = "\x1f"
WILDCARD = "*"
MAX_VOCAB = 64


def node_key(prompt_key: str, path: Sequence[str]) -> str:
    return SEP.join([prompt_key, *path])


@dataclass(frozen=True)
class MockModelScript:
    """Probability trie consumed by :class:`MockBackend`.

    JSON layout::

        {"vocab": [...], "eos": "<eos>",
         "prompts": {"<key>": ["substring", ...]},      # optional routing
         "nodes": {"<key>\\x1f<tok1>\\x1f<tok2>": {"dist": {"tok": p, ...}}}}

    A prompt is routed to the first key (in file order) whose substrings
    occur in it, otherwise to ``"*"``. Node lookup falls back from the
    routed key to ``"*"`` for the same token path.
    """

    vocab: tuple[str, ...]
    eos: str
    nodes: Mapping[str, Mapping[str, float]]
    prompts: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    max_depth: int = 256

    def __post_init__(self):
        object.__setattr__(self, "vocab", tuple(self.vocab))
        if len(self.vocab) < 2 or len(self.vocab) > MAX_VOCAB:
            raise ValueError(f"vocabulary size must be in [2, {MAX_VOCAB}]")
        if len(set(self.vocab)) != len(self.vocab):
            raise ValueError("duplicate vocabulary entries")
        if self.eos not in self.vocab:
            raise ValueError("eos token must be part of the vocabulary")
        vocab = set(self.vocab)
        for key, dist in self.nodes.items():
            unknown = set(dist) - vocab
            if unknown:
                raise ValueError(f"node {key!r} uses tokens outside the vocabulary: {sorted(unknown)}")
            if any(p < 0 for p in dist.values()):
                raise ValueError(f"node {key!r} has a negative probability")
            total = sum(dist.values())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"node {key!r} sums to {total}, not 1")
            if len(key.split(SEP)) - 1 >= self.max_depth and any(
                p > 0 for t, p in dist.items() if t != self.eos
            ):
                raise ValueError(f"node {key!r} continues past the depth bound {self.max_depth}")

    @classmethod
    def from_dict(cls, data: Mapping) -> "MockModelScript":
        nodes = {}
        for key, node in data["nodes"].items():
            dist = node["dist"] if isinstance(node, Mapping) and "dist" in node else node
            nodes[key] = {str(t): float(p) for t, p in dist.items()}
        prompts = {k: tuple(v) for k, v in data.get("prompts", {}).items()}
        return cls(tuple(data["vocab"]), data["eos"], nodes, prompts,
                   int(data.get("max_depth", 256)))

    @classmethod
    def load(cls, path) -> "MockModelScript":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def from_paths(cls, vocab: Sequence[str], eos: str,
                   paths: Mapping[tuple, Mapping[str, float]],
                   prompts: Optional[Mapping[str, Sequence[str]]] = None) -> "MockModelScript":
        """Build a script from ``{(prompt_key, *tokens): dist}``; handy in tests."""
        nodes = {node_key(k[0], k[1:]): dict(d) for k, d in paths.items()}
        return cls(tuple(vocab), eos, nodes, {k: tuple(v) for k, v in (prompts or {}).items()})

    def to_dict(self) -> dict:
        out = {
            "vocab": list(self.vocab),
            "eos": self.eos,
            "nodes": {k: {"dist": dict(d)} for k, d in self.nodes.items()},
        }
        if self.prompts:
            out["prompts"] = {k: list(v) for k, v in self.prompts.items()}
        if self.max_depth != 256:
            out["max_depth"] = self.max_depth
        return out

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")

    def route(self, prompt: str) -> str:
        for key, needles in self.prompts.items():
            if any(n in prompt for n in needles):
                return key
        return WILDCARD

    def distribution(self, prompt_key: str, path: Sequence[str]) -> Mapping[str, float]:
        dist = self.nodes.get(node_key(prompt_key, path))
        if dist is None and prompt_key != WILDCARD:
            dist = self.nodes.get(node_key(WILDCARD, path))
        if dist is None:
            return {self.eos: 1.0}
        return dist


class MockBackend(Backend):
    """Deterministic backend driven by a :class:`MockModelScript`.

    ``calls`` counts invocations per method so tests can assert that no model
    traffic happens after an early exit.
    """

    def __init__(self, script: MockModelScript, seed: int = 0,
                 max_logprob_depth: Optional[int] = None):
        self.script = script
        depth = max_logprob_depth or len(script.vocab)
        self.capabilities = BackendCapabilities(depth, supports_prefix_forcing=True,
                                                deterministic=True)
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()
        self._index = {t: i for i, t in enumerate(script.vocab)}
        self.calls: Counter = Counter()

    def _ranked(self, dist: Mapping[str, float]) -> list[tuple[str, float]]:
        return sorted(((t, float(dist.get(t, 0.0))) for t in self.script.vocab),
                      key=lambda tp: (-tp[1], self._index[tp[0]]))

    def _step(self, position: int, dist, chosen: str, depth: int) -> TokenStep:
        ranked = self._ranked(dist)
        alts = tuple(ProbEntry(t, p) for t, p in ranked[:depth])
        return TokenStep(position, ProbEntry(chosen, float(dist.get(chosen, 0.0))), alts)

    def _draw(self, dist, temperature: float, rng) -> str:
        if temperature == 0:
            return self._ranked(dist)[0][0]
        probs = np.array([dist.get(t, 0.0) for t in self.script.vocab], dtype=float)
        if temperature != 1.0:
            nz = probs > 0
            probs[nz] = np.exp(np.log(probs[nz]) / temperature)
        probs /= probs.sum()
        u = rng.random()
        idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
        return self.script.vocab[min(idx, len(probs) - 1)]

    def _check_vocab(self, tokens: Sequence[str]) -> None:
        for tok in tokens:
            if tok not in self._index or tok == self.script.eos:
                raise PrefixForcingUnsupported(f"token {tok!r} is not in the mock vocabulary")

    def _decode(self, prompt: str, prefix: Sequence[str], max_new: int, depth: int,
                temperature: float, rng) -> GenerationTrace:
        key = self.script.route(prompt)
        path: list[str] = []
        steps: list[TokenStep] = []
        for tok in prefix:
            steps.append(self._step(len(steps) + 1, self.script.distribution(key, path), tok, depth))
            path.append(tok)
        truncated = True
        for _ in range(max_new):
            dist = self.script.distribution(key, path)
            tok = self._draw(dist, temperature, rng)
            if tok == self.script.eos:
                truncated = False
                break
            steps.append(self._step(len(steps) + 1, dist, tok, depth))
            path.append(tok)
        return GenerationTrace(prompt_digest(prompt), tuple(steps), truncated=truncated)

    def sample(self, request: GenerationRequest, rng=None) -> list[GenerationTrace]:
        self.check_request(request)
        self._check_vocab(request.forced_prefix)
        self.calls["sample"] += 1
        with self._lock:
            rng = rng if rng is not None else self._rng
            return [
                self._decode(request.prompt, request.forced_prefix, request.max_tokens,
                             request.logprob_depth, request.temperature, rng)
                for _ in range(request.sample_count)
            ]

    def greedy_continue(self, prompt, forced_prefix=(), *, max_tokens=256,
                        logprob_depth=None, prefix_steps=None) -> GenerationTrace:
        self._check_vocab(forced_prefix)
        self.calls["greedy_continue"] += 1
        depth = logprob_depth or self.capabilities.max_logprob_depth
        return self._decode(prompt, tuple(forced_prefix), max_tokens, depth, 0.0, None)

    def top_alternatives(self, prompt, prefix, m, excluded=None, *,
                         logprob_depth=None) -> list[ProbEntry]:
        self.calls["top_alternatives"] += 1
        depth = logprob_depth or self.capabilities.max_logprob_depth
        dist = self.script.distribution(self.script.route(prompt), list(prefix))
        pool = [
            ProbEntry(t, p) for t, p in self._ranked(dist)[:depth]
            if p > 0 and t != excluded and t != self.script.eos
        ]
        if len(pool) < m:
            warnings.warn(
                f"only {len(pool)} of {m} alternatives available after exclusion",
                TruncatedAlternatives, stacklevel=2,
            )
        return pool[:m]
