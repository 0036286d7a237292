"""HTTP client for the generation/embedding backend wire protocol.

Endpoints:
  POST /v1/generate  JSON {prompt, seed, duration_s, sample_rate_hz, channels}
                     -> 200 WAV bytes (audio/wav), 422 unsupported spec,
                        503 transient overload (retryable)
  POST /v1/embed     WAV bytes (audio/wav) -> {"dim": int, "embedding": [...]}
  GET  /v1/health    -> {"backend_identity": str}

The special endpoint string ``"stub"`` selects the built-in deterministic
in-process doubles instead of HTTP, so the full pipeline can run offline.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field
from typing import Any, Callable, TypeVar

import requests

__all__ = [
    "BackendClient",
    "BackendError",
    "TransientBackendError",
    "PermanentBackendError",
    "STUB_ENDPOINT",
]

STUB_ENDPOINT = "stub"

# Per-record retry policy: exponential backoff, base 1 s, factor 2,
# jitter +/-20%, at most retry_budget attempts in total.
BACKOFF_FACTOR = 2.0
BACKOFF_JITTER = 0.2


class BackendError(RuntimeError):
    """Base class for backend request failures."""


class TransientBackendError(BackendError):
    """Retryable failure: overload, timeout, connection trouble, 5xx."""


class PermanentBackendError(BackendError):
    """Non-retryable failure: the backend rejected the request outright."""


class _HttpTransport:
    def __init__(self, endpoint: str, timeout: float):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self._session = requests.Session()

    def _raise_for(self, resp: requests.Response, what: str) -> None:
        if resp.status_code == 503:
            raise TransientBackendError(f"{what}: backend overloaded (503)")
        if resp.status_code >= 500:
            raise TransientBackendError(f"{what}: server error {resp.status_code}")
        if resp.status_code != 200:
            detail = resp.text[:200]
            raise PermanentBackendError(
                f"{what}: rejected with {resp.status_code}: {detail}"
            )

    def generate(self, prompt: str, seed: int, clip_spec: Any) -> bytes:
        body = {
            "prompt": prompt,
            "seed": seed,
            "duration_s": clip_spec.duration_s,
            "sample_rate_hz": clip_spec.sample_rate_hz,
            "channels": clip_spec.channels,
        }
        try:
            resp = self._session.post(
                f"{self.endpoint}/v1/generate", json=body, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise TransientBackendError(f"generate: {exc}") from exc
        self._raise_for(resp, "generate")
        return resp.content

    def embed(self, wav_bytes: bytes) -> list[float]:
        try:
            resp = self._session.post(
                f"{self.endpoint}/v1/embed",
                data=wav_bytes,
                headers={"Content-Type": "audio/wav"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransientBackendError(f"embed: {exc}") from exc
        self._raise_for(resp, "embed")
        payload = resp.json()
        return payload["embedding"]

    def health(self) -> str:
        try:
            resp = self._session.get(
                f"{self.endpoint}/v1/health", timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise TransientBackendError(f"health: {exc}") from exc
        self._raise_for(resp, "health")
        return resp.json()["backend_identity"]


@dataclass
class BackendClient:
    """Connection settings plus single-request methods for one backend.

    ``endpoint`` is either an HTTP base URL or ``"stub"``. The methods here
    perform one attempt each; retry orchestration lives in
    :func:`call_with_retries` so callers control checkpointing between
    attempts.
    """

    endpoint: str
    timeout: float = 30.0
    retry_budget: int = 3
    max_in_flight: int = 4
    backoff_base: float = 1.0
    _transport: Any = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.retry_budget < 1:
            raise ValueError("retry_budget must be >= 1")

    def transport(self) -> Any:
        if self._transport is None:
            if self.endpoint == STUB_ENDPOINT:
                from .stub_backend import StubBackend  # deferred: avoids cycle

                self._transport = StubBackend()
            else:
                self._transport = _HttpTransport(self.endpoint, self.timeout)
        return self._transport

    def generate(self, prompt: str, seed: int, clip_spec: Any) -> bytes:
        return self.transport().generate(prompt, seed, clip_spec)

    def embed(self, wav_bytes: bytes) -> list[float]:
        return self.transport().embed(wav_bytes)

    def health(self) -> str:
        return self.transport().health()


T = TypeVar("T")


def call_with_retries(
    client: BackendClient,
    fn: Callable[[], T],
    *,
    rng: random.Random | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[T | None, int, str | None]:
    """Run ``fn`` with the client's retry budget and backoff policy.

    Returns (result, attempts, error). ``result`` is None and ``error`` is
    the last failure message when the budget is exhausted or the failure is
    permanent; permanent failures are not retried.
    """
    rng = rng or random
    last_error: str | None = None
    for attempt in range(1, client.retry_budget + 1):
        try:
            return fn(), attempt, None
        except PermanentBackendError as exc:
            return None, attempt, str(exc)
        except TransientBackendError as exc:
            last_error = str(exc)
            if attempt < client.retry_budget:
                delay = client.backoff_base * BACKOFF_FACTOR ** (attempt - 1)
                delay *= 1.0 + rng.uniform(-BACKOFF_JITTER, BACKOFF_JITTER)
                sleep(delay)
    return None, client.retry_budget, last_error
