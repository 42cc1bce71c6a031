"""Chat-completion providers: OpenAI- and Anthropic-compatible HTTP clients and a scripted mock."""

from __future__ import annotations

import copy
import json
import logging
import os
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

import httpx

log = logging.getLogger(__name__)

DEFAULT_MAX_OUTPUT_TOKENS = 4096
WORLD_MAX_OUTPUT_TOKENS = 8192


class LLMError(RuntimeError):
    """Base class for failures that a pipeline stage may retry."""


class TransportError(LLMError):
    pass


class RateLimited(LLMError):
    pass


class AuthError(RuntimeError):
    """Missing or rejected credentials. Not retryable."""


class ScriptExhausted(LLMError):
    pass


class ProviderKind(str, Enum):
    OPENAI = "OpenAICompatible"
    ANTHROPIC = "AnthropicCompatible"
    MOCK = "Mock"


@dataclass
class ChatRequest:
    system_prompt: str
    messages: list[tuple[str, str]]
    temperature: float = 1.0
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    # pipeline step tag; the mock uses it to pick a script queue
    step: Optional[str] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        for role, _ in self.messages:
            if role not in ("user", "assistant"):
                raise ValueError(f"bad message role {role!r}")


class MockScript:
    """FIFO queue of scripted replies per step; records every request it receives."""

    def __init__(self, responses: list[tuple[str, str]] = ()):
        self._initial = [(str(s), t) for s, t in responses]
        self.queues: dict[str, deque[str]] = defaultdict(deque)
        for step, text in self._initial:
            self.queues[step].append(text)
        self.received: list[tuple[str, ChatRequest]] = []

    def fresh(self) -> "MockScript":
        """Copy with full queues and empty recording, for an independent run."""
        return MockScript(self._initial)

    def reply(self, req: ChatRequest) -> str:
        step = req.step or "default"
        self.received.append((step, copy.deepcopy(req)))
        q = self.queues.get(step)
        if not q:
            raise ScriptExhausted(f"mock script has no reply left for step {step!r}")
        return q.popleft()

    def prompts(self, step: Optional[str] = None) -> list[str]:
        """Full rendered text (system + messages) of recorded requests."""
        out = []
        for s, req in self.received:
            if step is None or s == step:
                out.append(req.system_prompt + "\n" + "\n".join(c for _, c in req.messages))
        return out

    def steps_seen(self) -> list[str]:
        return [s for s, _ in self.received]

    @classmethod
    def load(cls, path) -> "MockScript":
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        return cls([(d["step"], d["text"]) for d in data])


@dataclass
class ProviderConfig:
    provider_kind: ProviderKind = ProviderKind.MOCK
    model_name: str = "mock"
    endpoint_url: str = ""
    api_key_env_var: str = ""
    request_timeout: float = 120.0
    max_retries_per_call: int = 3
    backoff_base: float = 1.0
    mock: Optional[MockScript] = field(default=None, repr=False)
    transport: Optional[httpx.BaseTransport] = field(default=None, repr=False)

    def __post_init__(self):
        self.provider_kind = ProviderKind(self.provider_kind)
        if self.max_retries_per_call < 0:
            raise ValueError("max_retries_per_call must be >= 0")

    @property
    def is_mock(self) -> bool:
        return self.provider_kind is ProviderKind.MOCK

    def to_dict(self) -> dict:
        return {
            "provider_kind": self.provider_kind.value,
            "model_name": self.model_name,
            "endpoint_url": self.endpoint_url,
            "api_key_env_var": self.api_key_env_var,
            "request_timeout": self.request_timeout,
            "max_retries_per_call": self.max_retries_per_call,
        }

    def fresh(self) -> "ProviderConfig":
        """Copy owning its own mock queue (if any)."""
        cfg = copy.copy(self)
        if self.mock is not None:
            cfg.mock = self.mock.fresh()
        return cfg


def mock_script(responses: list[tuple[str, str]]) -> ProviderConfig:
    return ProviderConfig(ProviderKind.MOCK, model_name="mock", mock=MockScript(responses))


_DEFAULT_ENDPOINTS = {
    ProviderKind.OPENAI: "https://api.openai.com/v1",
    ProviderKind.ANTHROPIC: "https://api.anthropic.com",
}
_DEFAULT_KEY_VARS = {
    ProviderKind.OPENAI: "OPENAI_API_KEY",
    ProviderKind.ANTHROPIC: "ANTHROPIC_API_KEY",
}


def _openai_payload(cfg: ProviderConfig, req: ChatRequest) -> tuple[str, dict, dict]:
    base = (cfg.endpoint_url or _DEFAULT_ENDPOINTS[cfg.provider_kind]).rstrip("/")
    msgs = [{"role": "system", "content": req.system_prompt}] if req.system_prompt else []
    msgs += [{"role": r, "content": c} for r, c in req.messages]
    body: dict[str, Any] = {
        "model": cfg.model_name,
        "messages": msgs,
        "temperature": req.temperature,
        "max_tokens": req.max_output_tokens,
    }
    if req.seed is not None:
        body["seed"] = req.seed
    return f"{base}/chat/completions", body, {}


def _anthropic_payload(cfg: ProviderConfig, req: ChatRequest) -> tuple[str, dict, dict]:
    base = (cfg.endpoint_url or _DEFAULT_ENDPOINTS[cfg.provider_kind]).rstrip("/")
    body = {
        "model": cfg.model_name,
        "system": req.system_prompt,
        "messages": [{"role": r, "content": c} for r, c in req.messages],
        "temperature": req.temperature,
        "max_tokens": req.max_output_tokens,
    }
    return f"{base}/v1/messages", body, {"anthropic-version": "2023-06-01"}


def _extract_text(kind: ProviderKind, data: dict) -> str:
    try:
        if kind is ProviderKind.OPENAI:
            return data["choices"][0]["message"]["content"] or ""
        return "".join(b.get("text", "") for b in data["content"] if b.get("type", "text") == "text")
    except (KeyError, IndexError, TypeError) as e:
        raise TransportError(f"unexpected response shape: {e}") from e


def complete(cfg: ProviderConfig, req: ChatRequest,
             sleep: Callable[[float], None] = time.sleep) -> str:
    """Send one chat request and return the assistant text."""
    if cfg.is_mock:
        if cfg.mock is None:
            raise ScriptExhausted("mock provider has no script")
        return cfg.mock.reply(req)

    key_var = cfg.api_key_env_var or _DEFAULT_KEY_VARS[cfg.provider_kind]
    key = os.environ.get(key_var)
    if not key:
        raise AuthError(f"environment variable {key_var} is not set")

    if cfg.provider_kind is ProviderKind.OPENAI:
        url, body, headers = _openai_payload(cfg, req)
        headers["Authorization"] = f"Bearer {key}"
    else:
        url, body, headers = _anthropic_payload(cfg, req)
        headers["x-api-key"] = key

    last: Exception | None = None
    with httpx.Client(timeout=cfg.request_timeout, transport=cfg.transport) as client:
        for attempt in range(cfg.max_retries_per_call + 1):
            if attempt:
                sleep(cfg.backoff_base * 2 ** (attempt - 1))
            try:
                resp = client.post(url, json=body, headers=headers)
            except httpx.HTTPError as e:
                last = TransportError(str(e))
                log.warning("transport error on attempt %d: %s", attempt + 1, e)
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if resp.status_code == 429:
                last = RateLimited("HTTP 429")
                continue
            if resp.status_code >= 500:
                last = TransportError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return _extract_text(cfg.provider_kind, resp.json())
    assert last is not None
    raise last
