"""JSON-over-HTTP client shared by the remote model and remote verifier."""
from __future__ import annotations

import logging
import threading
import time
from typing import Any, Callable, Optional

import httpx

log = logging.getLogger(__name__)


class TransportError(RuntimeError):
    """Base class for remote-call failures. ``payload`` holds the raw response body."""

    def __init__(self, message: str, payload: Any = None, attempts: int = 0):
        super().__init__(message)
        self.payload = payload
        self.attempts = attempts


class RemoteTimeout(TransportError):
    pass


class RemoteHTTPError(TransportError):
    def __init__(self, message: str, status: int, payload: Any = None, attempts: int = 0):
        super().__init__(message, payload, attempts)
        self.status = status


class MalformedResponse(TransportError):
    pass


class JsonClient:
    """POSTs JSON with per-call timeout and bounded exponential-backoff retries.

    Timeouts, connection failures and 5xx responses are retried; 4xx are not.
    ``max_in_flight`` caps concurrent requests from this client.
    """

    def __init__(
        self,
        base_url: str,
        token: Optional[str] = None,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        max_in_flight: int = 8,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Optional[Callable[[float], None]] = None,
    ):
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._client = httpx.Client(base_url=base_url, headers=headers, timeout=timeout, transport=transport)
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep or time.sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()
        self.retries = 0
        self.last_retries = 0

    def close(self) -> None:
        self._client.close()

    def post(self, path: str, body: dict) -> dict:
        attempts = 0
        while True:
            attempts += 1
            err: TransportError
            try:
                with self._slots:
                    resp = self._client.post(path, json=body)
            except httpx.TimeoutException as exc:
                err = RemoteTimeout(f"POST {path} timed out: {exc}", None, attempts)
            except httpx.TransportError as exc:
                err = TransportError(f"POST {path} failed: {exc}", None, attempts)
            else:
                if resp.status_code < 400:
                    try:
                        data = resp.json()
                    except ValueError as exc:
                        raise MalformedResponse(f"POST {path}: body is not JSON", resp.text, attempts) from exc
                    if not isinstance(data, dict):
                        raise MalformedResponse(f"POST {path}: expected a JSON object", data, attempts)
                    with self._lock:
                        self.last_retries = attempts - 1
                    return data
                err = RemoteHTTPError(f"POST {path} returned HTTP {resp.status_code}", resp.status_code, resp.text, attempts)
                if resp.status_code < 500:
                    raise err
            if attempts > self.max_retries:
                raise err
            with self._lock:
                self.retries += 1
            delay = self.backoff * 2 ** (attempts - 1)
            log.warning("%s; retrying in %.2fs", err, delay)
            self._sleep(delay)
