"""Client for completion endpoints that return per-token top-K logprobs.

Speaks the legacy OpenAI ``/v1/completions`` shape (also served by vLLM,
llama.cpp and TGI). Prefix forcing is approximated at the text level by
appending the detokenized prefix to the prompt.
"""

from __future__ import annotations

import logging
import math
import os
import time
import warnings
from typing import Optional, Sequence

import httpx

from ..errors import BackendError, BackendUnavailable, InsufficientLogprobDepth, TruncatedAlternatives
from ..uncertainty import GenerationTrace, ProbEntry, TokenStep
from .base import Backend, BackendCapabilities, GenerationRequest, prompt_digest

log = logging.getLogger(__name__)

URL_ENV = "TOKREP_API_URL"
KEY_ENV = "TOKREP_API_KEY"

PREFIX_WARNING = (
    "prefix forcing is text-level: the forced prefix is re-tokenized by the server, "
    "so token boundaries may differ from the original trace"
)


def _prob(logprob: float) -> float:
    return min(1.0, math.exp(logprob))


def parse_choice(choice: dict, prompt_id: str, depth: int) -> GenerationTrace:
    """Turn one completion choice into a trace, converting logprobs to probabilities."""
    lp = choice.get("logprobs")
    if not lp or lp.get("tokens") is None or lp.get("top_logprobs") is None:
        raise InsufficientLogprobDepth("response carries no per-token logprobs")
    tokens = lp["tokens"]
    chosen_lps = lp.get("token_logprobs") or [None] * len(tokens)
    steps = []
    for i, (tok, tok_lp, top) in enumerate(zip(tokens, chosen_lps, lp["top_logprobs"]), start=1):
        if not top or len(top) < 2:
            raise InsufficientLogprobDepth(
                f"position {i}: endpoint returned {len(top or {})} alternative(s)", position=i)
        alts = sorted((ProbEntry(t, _prob(v)) for t, v in top.items()), key=lambda e: -e.prob)[:depth]
        if tok_lp is None:
            tok_lp = top.get(tok, -math.inf)
        steps.append(TokenStep(i, ProbEntry(tok, _prob(tok_lp)), tuple(alts)))
    truncated = choice.get("finish_reason") == "length"
    return GenerationTrace(prompt_id, tuple(steps), truncated=truncated)


class HttpBackend(Backend):
    """Backend talking to a remote completion endpoint.

    ``url`` and ``api_key`` default to ``$TOKREP_API_URL`` and
    ``$TOKREP_API_KEY``. Transient failures (transport errors, 429, 5xx) are
    retried ``attempts`` times with exponential backoff.
    """

    def __init__(self, url: Optional[str] = None, api_key: Optional[str] = None, *,
                 model: Optional[str] = None, max_logprob_depth: int = 5,
                 client: Optional[httpx.Client] = None, attempts: int = 3,
                 backoff: float = 0.5, timeout: float = 120.0, sleep=time.sleep):
        self.url = url or os.environ.get(URL_ENV)
        if not self.url:
            raise BackendError(f"no completion URL given and ${URL_ENV} is unset")
        self.api_key = api_key if api_key is not None else os.environ.get(KEY_ENV)
        self.model = model
        self.capabilities = BackendCapabilities(max_logprob_depth, supports_prefix_forcing=True,
                                                deterministic=False, warnings=(PREFIX_WARNING,))
        self.client = client or httpx.Client(timeout=timeout)
        self.attempts = attempts
        self.backoff = backoff
        self._sleep = sleep

    def _payload(self, prompt: str, n: int, temperature: float, max_tokens: int, depth: int) -> dict:
        payload = {
            "prompt": prompt,
            "n": n,
            "temperature": temperature,
            "max_tokens": max_tokens,
            "logprobs": depth,
            "echo": False,
        }
        if self.model:
            payload["model"] = self.model
        return payload

    def _post(self, payload: dict) -> dict:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        last = None
        for attempt in range(self.attempts):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self.client.post(self.url, json=payload, headers=headers)
            except httpx.TransportError as exc:
                last = f"transport error: {exc}"
                log.warning("attempt %d/%d failed: %s", attempt + 1, self.attempts, last)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                log.warning("attempt %d/%d failed: %s", attempt + 1, self.attempts, last)
                continue
            if resp.status_code >= 400:
                raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return resp.json()
        raise BackendUnavailable(f"endpoint unavailable after {self.attempts} attempts ({last})")

    def _complete(self, prompt, n, temperature, max_tokens, depth) -> list[GenerationTrace]:
        data = self._post(self._payload(prompt, n, temperature, max_tokens, depth))
        choices = sorted(data.get("choices", []), key=lambda c: c.get("index", 0))
        pid = prompt_digest(prompt)
        return [parse_choice(c, pid, depth) for c in choices]

    def sample(self, request: GenerationRequest, rng=None) -> list[GenerationTrace]:
        self.check_request(request)
        if request.forced_prefix:
            return self._sample_with_prefix(request)
        return self._complete(request.prompt, request.sample_count, request.temperature,
                              request.max_tokens, request.logprob_depth)

    def _sample_with_prefix(self, request):
        prefix_steps = self._score_prefix(request.prompt, request.forced_prefix, request.logprob_depth)
        text = "".join(request.forced_prefix)
        tails = self._complete(request.prompt + text, request.sample_count, request.temperature,
                               request.max_tokens, request.logprob_depth)
        return [_join(prompt_digest(request.prompt), prefix_steps, t) for t in tails]

    def _next_distribution(self, prompt: str, depth: int) -> list[ProbEntry]:
        traces = self._complete(prompt, 1, 0.0, 1, depth)
        if not traces or not traces[0].steps:
            raise InsufficientLogprobDepth("endpoint returned no token for a one-token probe")
        return list(traces[0].steps[0].alternatives)

    def _score_prefix(self, prompt, prefix, depth) -> list[TokenStep]:
        steps = []
        for i, tok in enumerate(prefix, start=1):
            alts = self._next_distribution(prompt + "".join(prefix[: i - 1]), depth)
            p = next((a.prob for a in alts if a.token == tok), 0.0)
            steps.append(TokenStep(i, ProbEntry(tok, p), tuple(alts)))
        return steps

    def greedy_continue(self, prompt, forced_prefix=(), *, max_tokens=256,
                        logprob_depth=None, prefix_steps=None) -> GenerationTrace:
        depth = logprob_depth or self.capabilities.max_logprob_depth
        prefix = list(forced_prefix)
        if prefix_steps is not None and len(prefix_steps) == len(prefix):
            known = list(prefix_steps)
        else:
            known = self._score_prefix(prompt, prefix, depth)
        tail = self._complete(prompt + "".join(prefix), 1, 0.0, max_tokens, depth)[0]
        return _join(prompt_digest(prompt), known, tail)

    def top_alternatives(self, prompt, prefix, m, excluded=None, *,
                         logprob_depth=None) -> list[ProbEntry]:
        depth = logprob_depth or self.capabilities.max_logprob_depth
        alts = self._next_distribution(prompt + "".join(prefix), depth)
        pool = [a for a in alts if a.token != excluded and a.prob > 0]
        if len(pool) < m:
            warnings.warn(f"only {len(pool)} of {m} alternatives available after exclusion",
                          TruncatedAlternatives, stacklevel=2)
        return pool[:m]


def _join(prompt_id: str, prefix_steps: Sequence[TokenStep], tail: GenerationTrace) -> GenerationTrace:
    steps = [TokenStep(i, s.chosen, s.alternatives) for i, s in enumerate(prefix_steps, start=1)]
    offset = len(steps)
    steps += [TokenStep(offset + s.position, s.chosen, s.alternatives) for s in tail.steps]
    return GenerationTrace(prompt_id, tuple(steps), truncated=tail.truncated)
