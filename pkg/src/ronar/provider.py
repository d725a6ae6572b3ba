"""Text-generation provider boundary.

Two implementations: a deterministic mock for tests/offline work and an
HTTP chat-completions client. The mock's response is a digest string that
encodes the directive mode, how many numbered history items it saw, and a
stable hash of the full prompt, plus any ECHO{...} tokens planted in the
prompt. That is enough to make structural assertions (prompt containment,
mode isolation, determinism) without a live model.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
import uuid
from dataclasses import dataclass, field

from .errors import RonarError

DEFAULT_MAX_TOKENS = 512
DEFAULT_MAX_INFLIGHT = 4

_MODE_RE = re.compile(r"^mode=(\w+)", re.MULTILINE)
_ITEM_RE = re.compile(r"^\[(\d+)\] ", re.MULTILINE)
_ECHO_RE = re.compile(r"ECHO\{([^{}]*)\}")


class ProviderUnavailable(RonarError):
    pass


class ResponseTooLong(RonarError):
    pass


class RateLimited(RonarError):
    def __init__(self, retry_after: float):
        self.retry_after = retry_after
        super().__init__(f"rate limited, retry after {retry_after}s")


@dataclass(frozen=True)
class ProviderRequest:
    system_prompt: str
    user_prompt: str
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = 0.0
    request_id: str = field(default_factory=lambda: uuid.uuid4().hex)


@dataclass(frozen=True)
class ProviderResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    latency_s: float
    provider: str


_inflight = threading.BoundedSemaphore(DEFAULT_MAX_INFLIGHT)


def set_max_inflight(n: int) -> None:
    """Cap concurrent provider calls across all threads."""
    global _inflight
    if n < 1:
        raise ValueError("need at least one in-flight slot")
    _inflight = threading.BoundedSemaphore(n)


class TextProvider:
    name = "abstract"

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        with _inflight:
            return self._complete(request)

    def _complete(self, request: ProviderRequest) -> ProviderResponse:
        raise NotImplementedError


class MockProvider(TextProvider):
    """Deterministic provider: same request, byte-identical response."""

    name = "mock"

    def __init__(self, capture: list[ProviderRequest] | None = None):
        # When given, every request is appended for prompt-capture tests.
        self.capture = capture

    def _complete(self, request: ProviderRequest) -> ProviderResponse:
        if self.capture is not None:
            self.capture.append(request)
        full = request.system_prompt + "\n" + request.user_prompt
        mode_match = _MODE_RE.search(full)
        mode = mode_match.group(1) if mode_match else "none"
        hist = len(_ITEM_RE.findall(full))
        digest = hashlib.sha256(full.encode("utf-8")).hexdigest()[:12]
        text = f"MOCK[mode={mode};hist={hist};h={digest}]"
        echoes = _ECHO_RE.findall(full)
        if echoes:
            text += " " + " ".join(echoes)
        return ProviderResponse(
            text=text,
            prompt_tokens=len(full.split()),
            completion_tokens=len(text.split()),
            latency_s=0.0,
            provider=self.name,
        )


class HttpProvider(TextProvider):
    """Chat-completions client; the credential comes from an env var only."""

    name = "http"

    def __init__(
        self,
        endpoint: str,
        model: str,
        credential_env_var: str = "",
        timeout: float = 60.0,
        max_response_chars: int = 200_000,
    ):
        self.endpoint = endpoint
        self.model = model
        self.credential_env_var = credential_env_var
        self.timeout = timeout
        self.max_response_chars = max_response_chars

    def _complete(self, request: ProviderRequest) -> ProviderResponse:
        import httpx

        headers = {"Content-Type": "application/json"}
        if self.credential_env_var:
            credential = os.environ.get(self.credential_env_var)
            if not credential:
                raise ProviderUnavailable(f"env var {self.credential_env_var!r} not set")
            headers["Authorization"] = f"Bearer {credential}"
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        start = time.monotonic()
        try:
            resp = httpx.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise ProviderUnavailable(str(exc)) from exc
        if resp.status_code == 429:
            raise RateLimited(float(resp.headers.get("retry-after", 1.0)))
        if resp.status_code in (401, 403) or resp.status_code >= 500:
            raise ProviderUnavailable(f"HTTP {resp.status_code}")
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
            usage = body.get("usage", {})
        except (KeyError, IndexError, ValueError) as exc:
            raise ProviderUnavailable(f"malformed response: {exc}") from exc
        if len(text) > self.max_response_chars:
            raise ResponseTooLong(f"{len(text)} chars")
        return ProviderResponse(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            latency_s=time.monotonic() - start,
            provider=self.name,
        )


def load_provider(config) -> TextProvider:
    """Build a provider from a config dict or a JSON config file path.

    Schema: {"provider": "mock"|"http", "endpoint": ..., "model": ...,
    "credential_env_var": ...}. The file never holds the credential itself.
    """
    if isinstance(config, str):
        with open(config, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    kind = config.get("provider", "mock")
    if kind == "mock":
        return MockProvider()
    if kind == "http":
        return HttpProvider(
            endpoint=config["endpoint"],
            model=config["model"],
            credential_env_var=config.get("credential_env_var", ""),
        )
    raise ValueError(f"unknown provider kind {kind!r}")
