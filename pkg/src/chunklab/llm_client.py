"""Minimal chat-completions client for live mode.

Speaks the de facto OpenAI-compatible JSON protocol over HTTPS. Decoding is
always deterministic: every request goes out with temperature 0. Transport
failures, 5xx, and 429 are retried with exponential backoff (base 1 s,
factor 2, multiplicative jitter); auth failures are not retried. A per-
endpoint semaphore caps in-flight requests at ``max_concurrent``.
"""

from __future__ import annotations

import os
import random
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional

import httpx

from .chunker import approx_provider_tokens

BACKOFF_BASE_SECONDS = 1.0
BACKOFF_FACTOR = 2.0
BACKOFF_JITTER = 0.25  # delay is scaled by 1 + U(0, jitter)

_RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


class ClientError(RuntimeError):
    """Base class for live-client failures."""


class AuthError(ClientError):
    """Missing key or endpoint rejected credentials; never retried."""


class MalformedResponseError(ClientError):
    """Endpoint returned 200 with a body the chat schema cannot explain."""


class RetriesExhaustedError(ClientError):
    """All max_retries + 1 attempts failed with retryable errors."""


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    api_key_env: str = "CHUNKLAB_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    max_concurrent: int = 4

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")


@dataclass(frozen=True)
class ChatExchange:
    system: str
    user: str
    temperature: float
    max_output_tokens: int
    response_text: str
    input_tokens: int
    output_tokens: int
    latency: float
    attempt_count: int


_limiters: dict = {}
_limiters_lock = threading.Lock()


def _limiter(config: EndpointConfig) -> threading.Semaphore:
    with _limiters_lock:
        sem = _limiters.get(config)
        if sem is None:
            sem = threading.Semaphore(config.max_concurrent)
            _limiters[config] = sem
        return sem


def complete(
    config: EndpointConfig,
    system: str,
    user: str,
    max_output_tokens: int = 512,
    transport: Optional[httpx.BaseTransport] = None,
    sleeper: Callable[[float], None] = time.sleep,
) -> ChatExchange:
    """One chat completion with retries; temperature is always 0."""
    api_key = os.environ.get(config.api_key_env)
    if not api_key:
        raise AuthError(f"environment variable {config.api_key_env} is not set")
    payload = {
        "model": config.model_name,
        "messages": [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ],
        "temperature": 0,
        "max_tokens": max_output_tokens,
    }
    headers = {"Authorization": f"Bearer {api_key}"}
    url = config.base_url.rstrip("/") + "/chat/completions"
    attempts = config.max_retries + 1
    started = time.perf_counter()
    failure: Exception = RetriesExhaustedError("no attempt was made")
    with _limiter(config):
        with httpx.Client(timeout=config.timeout, transport=transport) as client:
            for attempt in range(1, attempts + 1):
                if attempt > 1:
                    # retry r waits at least base * factor^(r-1), plus jitter
                    delay = BACKOFF_BASE_SECONDS * BACKOFF_FACTOR ** (attempt - 2)
                    sleeper(delay * (1.0 + BACKOFF_JITTER * random.random()))
                try:
                    response = client.post(url, json=payload, headers=headers)
                except httpx.TransportError as exc:
                    failure = exc
                    continue
                if response.status_code in (401, 403):
                    raise AuthError(f"endpoint rejected credentials: {response.status_code}")
                if response.status_code in _RETRYABLE_STATUS:
                    failure = ClientError(f"retryable status {response.status_code}")
                    continue
                if response.status_code != 200:
                    raise ClientError(f"unexpected status {response.status_code}")
                return _parse_response(
                    response, system, user, max_output_tokens,
                    time.perf_counter() - started, attempt,
                )
    raise RetriesExhaustedError(
        f"gave up after {attempts} attempts; last failure: {failure}"
    )


def _parse_response(response, system, user, max_output_tokens, latency, attempt):
    try:
        data = response.json()
        text = data["choices"][0]["message"]["content"]
    except (ValueError, LookupError, TypeError) as exc:
        raise MalformedResponseError(f"cannot parse chat response: {exc}") from exc
    usage = data.get("usage") or {}
    input_tokens = usage.get("prompt_tokens")
    if input_tokens is None:
        input_tokens = approx_provider_tokens(system) + approx_provider_tokens(user)
    output_tokens = usage.get("completion_tokens")
    if output_tokens is None:
        output_tokens = approx_provider_tokens(text)
    return ChatExchange(
        system=system,
        user=user,
        temperature=0.0,
        max_output_tokens=max_output_tokens,
        response_text=text,
        input_tokens=int(input_tokens),
        output_tokens=int(output_tokens),
        latency=latency,
        attempt_count=attempt,
    )
