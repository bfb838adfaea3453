"""Backend interface shared by the mock and HTTP model clients."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

from ..uncertainty import GenerationTrace, ProbEntry, TokenStep


@dataclass(frozen=True)
class BackendCapabilities:
    max_logprob_depth: int
    supports_prefix_forcing: bool = True
    deterministic: bool = False
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if self.max_logprob_depth < 2:
            raise ValueError("backends must expose at least the top-2 probabilities")


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    sample_count: int = 1
    temperature: float = 1.0
    max_tokens: int = 256
    logprob_depth: int = 5
    forced_prefix: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "forced_prefix", tuple(self.forced_prefix))
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        if self.logprob_depth < 2:
            raise ValueError("logprob_depth must be >= 2")

    @property
    def greedy(self) -> bool:
        return self.temperature == 0


def prompt_digest(prompt: str) -> str:
    return hashlib.sha1(prompt.encode("utf-8")).hexdigest()[:12]


class Backend:
    """Model interface used by the repair engine.

    Every method returns probabilities (not logprobs); implementations convert
    at their boundary.
    """

    capabilities: BackendCapabilities

    def check_request(self, request: GenerationRequest) -> None:
        if request.logprob_depth > self.capabilities.max_logprob_depth:
            raise ValueError(
                f"logprob_depth {request.logprob_depth} exceeds backend maximum "
                f"{self.capabilities.max_logprob_depth}"
            )

    def sample(self, request: GenerationRequest, rng=None) -> list[GenerationTrace]:
        raise NotImplementedError

    def greedy_continue(
        self,
        prompt: str,
        forced_prefix: Sequence[str] = (),
        *,
        max_tokens: int = 256,
        logprob_depth: Optional[int] = None,
        prefix_steps: Optional[Sequence[TokenStep]] = None,
    ) -> GenerationTrace:
        """Force ``forced_prefix`` then decode greedily.

        ``prefix_steps`` may carry already-known distributions for the forced
        positions (e.g. copied from a parent trace sharing the same context);
        backends that cannot score forced tokens themselves use them.
        """
        raise NotImplementedError

    def top_alternatives(
        self,
        prompt: str,
        prefix: Sequence[str],
        m: int,
        excluded: Optional[str] = None,
        *,
        logprob_depth: Optional[int] = None,
    ) -> list[ProbEntry]:
        raise NotImplementedError
