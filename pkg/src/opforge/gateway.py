"""Clients for the generation and summarization models.

One `Gateway` wraps two model clients (generation + summarization), tracks
per-session context usage, and decides saturation. Clients are either the
HTTP chat-completion client or a deterministic scripted mock; both expose
``generate(messages, params, prompt_kind)``.

Endpoint and key come from the environment (OPFORGE_LLM_URL,
OPFORGE_LLM_KEY, OPFORGE_SUMMARIZER_URL, OPFORGE_SUMMARIZER_KEY); keys are
redacted from everything that reaches a transcript.
"""

from __future__ import annotations

import os
import random
import threading
import time
from dataclasses import dataclass, field

from .errors import BadResponse, RateLimited, SaturationSignal, ScriptExhausted, TransportError
from .prompts import Prompt, PromptKind, build_preamble, build_summarization_prompt, estimate_tokens

DEFAULT_RESERVED_OUTPUT_TOKENS = 8192
DEFAULT_MAX_INFLIGHT = 32
_BACKOFFS = (1.0, 4.0, 16.0)


@dataclass(frozen=True)
class ModelParams:
    model_id: str
    context_length: int = 131072
    temperature: float = 1.0
    top_p: float = 1.0
    reasoning_level: str | None = None
    max_output_tokens: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must be in (0, 1]")
        if self.context_length <= 0:
            raise ValueError("context_length must be positive")

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "context_length": self.context_length,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "reasoning_level": self.reasoning_level,
            "max_output_tokens": self.max_output_tokens,
        }


@dataclass
class DialogSession:
    """One LLM conversation. call_count equals the number of assistant turns;
    used_tokens_estimate is the running sum over all turns."""

    params: ModelParams
    turns: list = field(default_factory=list)  # of {"role", "text"}
    call_count: int = 0
    used_tokens_estimate: int = 0

    def append_turn(self, role: str, text: str) -> None:
        self.turns.append({"role": role, "text": text})
        self.used_tokens_estimate += estimate_tokens(text)
        if role == "assistant":
            self.call_count += 1

    def messages(self) -> list:
        out = []
        for turn in self.turns:
            role = "system" if turn["role"] == "preamble" else turn["role"]
            out.append({"role": role, "content": turn["text"]})
        return out


class HttpLlmClient:
    """Chat-completion-style HTTP client with capped exponential backoff.

    A shared semaphore bounds concurrent requests across all sessions.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str = "",
        *,
        max_attempts: int = 3,
        sleeper=time.sleep,
        max_inflight: int = DEFAULT_MAX_INFLIGHT,
        timeout: float = 600.0,
        transport=None,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.max_attempts = max_attempts
        self.sleeper = sleeper
        self.timeout = timeout
        self._limiter = threading.Semaphore(max_inflight)
        if transport is None:
            import requests

            transport = requests.Session()
        self._transport = transport
        self._rng = random.Random()

    def generate(self, messages, params: ModelParams, prompt_kind=None) -> str:
        body = {
            "model": params.model_id,
            "messages": messages,
            "temperature": params.temperature,
            "top_p": params.top_p,
        }
        if params.max_output_tokens:
            body["max_tokens"] = params.max_output_tokens
        if params.reasoning_level:
            body["reasoning_effort"] = params.reasoning_level
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                base = _BACKOFFS[min(attempt - 1, len(_BACKOFFS) - 1)]
                self.sleeper(base + self._rng.uniform(0, base / 4))
            try:
                with self._limiter:
                    resp = self._transport.post(
                        f"{self.base_url}/chat/completions",
                        json=body,
                        headers=headers,
                        timeout=self.timeout,
                    )
            except Exception as exc:  # connection-level failure
                last_error = TransportError(str(exc))
                continue
            if resp.status_code == 429:
                last_error = RateLimited(f"HTTP 429 from {self.base_url}")
                continue
            if resp.status_code >= 500:
                last_error = TransportError(f"HTTP {resp.status_code} from {self.base_url}")
                continue
            if resp.status_code != 200:
                raise BadResponse(f"HTTP {resp.status_code} from {self.base_url}")
            try:
                doc = resp.json()
                return doc["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BadResponse(f"unparseable completion body: {exc}") from exc
        raise last_error if last_error else TransportError("retries exhausted")


@dataclass
class MockScript:
    """Ordered canned responses, matched by call index or prompt kind.

    Each entry is a dict with a ``response`` and optionally ``index``
    (1-based call ordinal) or ``kind`` (a PromptKind value). Selection per
    call: exact index match first, then the first unconsumed kind match,
    then the first unconsumed keyless entry. An exhausted script raises
    ScriptExhausted, deterministically.
    """

    entries: list

    @staticmethod
    def from_responses(*responses: str) -> "MockScript":
        return MockScript(entries=[{"response": r} for r in responses])


class ScriptedLlm:
    """Deterministic in-process stand-in for the generation model."""

    def __init__(self, script: MockScript):
        self._entries = [dict(e) for e in script.entries]
        self._consumed = [False] * len(self._entries)
        self._calls = 0

    def generate(self, messages, params: ModelParams, prompt_kind=None) -> str:
        self._calls += 1
        kind = prompt_kind.value if isinstance(prompt_kind, PromptKind) else prompt_kind
        for i, entry in enumerate(self._entries):
            if self._consumed[i]:
                continue
            if entry.get("index") == self._calls:
                self._consumed[i] = True
                return entry["response"]
        for i, entry in enumerate(self._entries):
            if self._consumed[i] or "index" in entry:
                continue
            if entry.get("kind") == kind:
                self._consumed[i] = True
                return entry["response"]
        for i, entry in enumerate(self._entries):
            if self._consumed[i] or "index" in entry or "kind" in entry:
                continue
            self._consumed[i] = True
            return entry["response"]
        raise ScriptExhausted(f"mock script exhausted at call {self._calls}")


class Gateway:
    """Uniform front for generation + summarization with saturation tracking."""

    def __init__(
        self,
        gen_client,
        gen_params: ModelParams,
        summarizer_client=None,
        summarizer_params: ModelParams | None = None,
        *,
        reserved_output_tokens: int | None = None,
    ):
        self.gen_client = gen_client
        self.gen_params = gen_params
        self.summarizer_client = summarizer_client
        self.summarizer_params = summarizer_params
        self.reserved_output_tokens = reserved_output_tokens
        self.summarizer_calls = 0

    def new_session(self) -> DialogSession:
        session = DialogSession(params=self.gen_params)
        preamble = build_preamble()
        session.append_turn("preamble", preamble.text)
        return session

    def _reserved(self, params: ModelParams) -> int:
        if self.reserved_output_tokens is not None:
            return self.reserved_output_tokens
        return params.max_output_tokens or DEFAULT_RESERVED_OUTPUT_TOKENS

    def is_saturated(self, session: DialogSession, next_prompt: Prompt) -> bool:
        """True iff sending next_prompt would overrun the context window
        after reserving output space. Monotone in session growth."""
        budget = session.params.context_length
        needed = session.used_tokens_estimate + next_prompt.token_estimate + self._reserved(session.params)
        return needed > budget

    def complete(self, session: DialogSession, prompt: Prompt) -> str:
        """One generation call. The turn pair is appended only on success,
        so a failed call never mutates the session."""
        if self.is_saturated(session, prompt):
            raise SaturationSignal("dialog session is saturated")
        messages = session.messages() + [{"role": "user", "content": prompt.text}]
        response = self.gen_client.generate(messages, session.params, prompt_kind=prompt.kind)
        session.append_turn("user", prompt.text)
        session.append_turn("assistant", response)
        return response

    def summarize(self, log: str, params: ModelParams | None = None) -> str:
        """Summarize a compiler log with the secondary model. Raises the
        client's transport errors; callers fall back to truncation."""
        client = self.summarizer_client or self.gen_client
        params = params or self.summarizer_params or self.gen_params
        prompt_text = build_summarization_prompt(log)
        messages = [{"role": "user", "content": prompt_text}]
        self.summarizer_calls += 1
        return client.generate(messages, params, prompt_kind="Summarization")


def gateway_from_env(
    gen_params: ModelParams,
    summarizer_params: ModelParams | None = None,
    **kwargs,
) -> Gateway:
    """Build an HTTP-backed gateway from environment variables."""
    url = os.environ.get("OPFORGE_LLM_URL")
    if not url:
        raise TransportError("OPFORGE_LLM_URL is not set")
    gen = HttpLlmClient(url, os.environ.get("OPFORGE_LLM_KEY", ""))
    summarizer = None
    if summarizer_params is not None:
        s_url = os.environ.get("OPFORGE_SUMMARIZER_URL", url)
        summarizer = HttpLlmClient(s_url, os.environ.get("OPFORGE_SUMMARIZER_KEY", ""))
    return Gateway(gen, gen_params, summarizer, summarizer_params, **kwargs)
