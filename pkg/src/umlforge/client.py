"""HTTP client for a multimodal inference endpoint.

Request (``POST {base_url}/generate``)::

    {"model": "...", "prompt": "<image>\\n Generate ...", "image": "<base64 PNG>",
     "options": {...}}            # options only when configured

Response: a JSON object whose ``text`` field holds the generated output
(``response`` and ``output`` are accepted as fallbacks).
"""

from __future__ import annotations

import base64
import logging
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import httpx

from .corpus import DatasetEntry

log = logging.getLogger(__name__)

TOKEN_ENV = "UMLFORGE_API_TOKEN"

STATUS_OK = "ok"
STATUS_TIMEOUT = "timeout"
STATUS_TRANSPORT = "transport"
STATUS_AUTH = "auth"


def default_extract(payload: Any) -> str:
    if isinstance(payload, dict):
        for key in ("text", "response", "output"):
            value = payload.get(key)
            if isinstance(value, str):
                return value
    raise ValueError("response JSON has no text field")


@dataclass
class EndpointConfig:
    base_url: str
    model: str = "llava-v1.5"
    timeout_seconds: float = 120.0
    max_concurrent: int = 4
    max_retries: int = 2
    backoff_seconds: float = 0.5
    options: dict[str, Any] = field(default_factory=dict)
    token_env: str = TOKEN_ENV
    path: str = "/generate"
    build_body: Callable[[EndpointConfig, str, str], dict] | None = None
    extract_text: Callable[[Any], str] = default_extract

    def __post_init__(self) -> None:
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be at least 1")
        if self.timeout_seconds <= 0:
            raise ValueError("timeout_seconds must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + self.path

    def headers(self) -> dict[str, str]:
        token = os.environ.get(self.token_env)
        return {"Authorization": f"Bearer {token}"} if token else {}

    def body(self, prompt: str, image_b64: str) -> dict:
        if self.build_body is not None:
            return self.build_body(self, prompt, image_b64)
        body: dict[str, Any] = {"model": self.model, "prompt": prompt, "image": image_b64}
        if self.options:
            body["options"] = dict(self.options)
        return body


@dataclass
class ModelResponse:
    entry_id: str
    raw_text: str
    latency_seconds: float
    attempts: int
    status: str = STATUS_OK
    http_status: int | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


def _encode_image(path: Path) -> str:
    return base64.b64encode(path.read_bytes()).decode("ascii")


def query_one(
    entry: DatasetEntry,
    cfg: EndpointConfig,
    root: Path = Path("."),
    client: httpx.Client | None = None,
) -> ModelResponse:
    """Send one image/prompt pair, retrying transport failures with exponential backoff.

    Failures never raise; they are recorded on the returned response.
    """
    body = cfg.body(entry.prompt, _encode_image(root / entry.image_path))
    own = client is None
    http = client or httpx.Client()
    started = time.monotonic()
    attempts = 0
    status, http_status, error = STATUS_TRANSPORT, None, None
    try:
        while attempts <= cfg.max_retries:
            if attempts:
                time.sleep(cfg.backoff_seconds * 2 ** (attempts - 1))
            attempts += 1
            try:
                reply = http.post(cfg.url, json=body, headers=cfg.headers(), timeout=cfg.timeout_seconds)
            except httpx.TimeoutException as exc:
                status, http_status, error = STATUS_TIMEOUT, None, str(exc) or "timed out"
                continue
            except httpx.TransportError as exc:
                status, http_status, error = STATUS_TRANSPORT, None, str(exc)
                continue
            http_status = reply.status_code
            if reply.status_code in (401, 403):
                status, error = STATUS_AUTH, f"HTTP {reply.status_code}"
                break
            if reply.status_code >= 500 or reply.status_code == 429:
                status, error = STATUS_TRANSPORT, f"HTTP {reply.status_code}"
                continue
            if reply.status_code >= 400:
                status, error = STATUS_TRANSPORT, f"HTTP {reply.status_code}"
                break
            try:
                text = cfg.extract_text(reply.json())
            except ValueError as exc:
                status, error = STATUS_TRANSPORT, f"bad response body: {exc}"
                break
            return ModelResponse(entry.id, text, time.monotonic() - started, attempts, STATUS_OK, http_status)
    finally:
        if own:
            http.close()
    log.warning("entry %s failed after %d attempt(s): %s", entry.id, attempts, error)
    return ModelResponse(entry.id, "", time.monotonic() - started, attempts, status, http_status, error)


@dataclass
class BatchTiming:
    total_seconds: float
    mean_latency: float
    p50_latency: float
    p95_latency: float

    @property
    def total_hours(self) -> float:
        return self.total_seconds / 3600.0


def _percentile(sorted_values: list[float], q: float) -> float:
    if len(sorted_values) == 1:
        return sorted_values[0]
    pos = (len(sorted_values) - 1) * q
    lo = int(pos)
    hi = min(lo + 1, len(sorted_values) - 1)
    return sorted_values[lo] + (sorted_values[hi] - sorted_values[lo]) * (pos - lo)


def latency_summary(latencies: Sequence[float], total_seconds: float) -> BatchTiming:
    ordered = sorted(latencies)
    return BatchTiming(
        total_seconds,
        statistics.fmean(ordered),
        _percentile(ordered, 0.50),
        _percentile(ordered, 0.95),
    )


def run_batch(
    entries: Sequence[DatasetEntry],
    cfg: EndpointConfig,
    root: Path = Path("."),
) -> tuple[list[ModelResponse], BatchTiming]:
    """Query every entry with at most ``cfg.max_concurrent`` requests in flight.

    Responses come back in input order, one per entry.
    """
    if not entries:
        raise ValueError("run_batch needs at least one entry")
    limits = httpx.Limits(max_connections=cfg.max_concurrent, max_keepalive_connections=cfg.max_concurrent)
    started = time.monotonic()
    with httpx.Client(limits=limits) as client, ThreadPoolExecutor(max_workers=cfg.max_concurrent) as pool:
        responses = list(pool.map(lambda e: query_one(e, cfg, root, client), entries))
    total = time.monotonic() - started
    return responses, latency_summary([r.latency_seconds for r in responses], total)
