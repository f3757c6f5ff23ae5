"""Provider-agnostic chat-completion client with re-execution on invalid output.

Every prompt goes out as a single user message in a fresh conversation.
Transport failures are retried with exponential backoff; outputs failing
validation are regenerated from scratch.  Every request is archived.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

from .errors import CardSimError, ConfigError

logger = logging.getLogger(__name__)

DEFAULT_MAX_REGENERATIONS = 3


# --------------------------------------------------------------------------
# errors

class TransportError(CardSimError):
    kind = "transport"
    retryable = True


class AuthenticationError(TransportError):
    kind = "authentication"
    retryable = False


class RateLimitError(TransportError):
    kind = "rate-limit"


class RequestTimeoutError(TransportError):
    kind = "timeout"


class CapabilityError(ConfigError):
    """Endpoint is not flagged for the large outputs a variant needs."""


class ExhaustedRetriesError(CardSimError):
    def __init__(self, records):
        self.records = list(records)
        codes = [r.validation_outcome for r in self.records]
        super().__init__(f"no valid output after {len(self.records)} attempt(s): {codes}")


# --------------------------------------------------------------------------
# endpoints

@dataclass(frozen=True)
class ModelEndpoint:
    provider_name: str  # "openai" | "anthropic" | "mock"
    model_id: str
    base_url: str = ""
    credentials_ref: Optional[str] = None  # env var holding the API key
    temperature: Optional[float] = None  # None: provider default
    large_output: bool = False
    requests_per_minute: Optional[float] = None
    timeout: float = 600.0
    max_tokens: int = 16384
    responses: tuple = ()  # mock only: canned responses, served in order

    def credential(self):
        if not self.credentials_ref:
            return None
        value = os.environ.get(self.credentials_ref)
        if not value:
            raise ConfigError(f"environment variable {self.credentials_ref} is not set",
                              location=f"endpoint {self.model_id}")
        return value

    def public_dict(self):
        """Serializable view; never contains the secret itself."""
        return {
            "provider_name": self.provider_name,
            "model_id": self.model_id,
            "base_url": self.base_url,
            "credentials_ref": self.credentials_ref,
            "temperature": self.temperature,
            "large_output": self.large_output,
        }


def load_endpoints(text, base_dir=None):
    """Parse an endpoints JSON document: ``{"name": {endpoint fields}}``.

    Mock endpoints may list ``response_files`` (paths relative to
    ``base_dir``) instead of inline ``responses``.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed endpoints file: {exc.msg}",
                          location=f"line {exc.lineno}") from None
    out = {}
    allowed = set(ModelEndpoint.__dataclass_fields__) | {"response_files"}
    for name, spec in doc.items():
        if not isinstance(spec, dict):
            raise ConfigError("endpoint must be an object", location=name)
        unknown = set(spec) - allowed
        if unknown:
            raise ConfigError(f"unknown endpoint fields {sorted(unknown)}", location=name)
        spec = dict(spec)
        files = spec.pop("response_files", None)
        if files:
            root = Path(base_dir or ".")
            spec["responses"] = tuple((root / f).read_text(encoding="utf-8") for f in files)
        else:
            spec["responses"] = tuple(spec.get("responses", ()))
        spec.setdefault("model_id", name)
        if "provider_name" not in spec:
            raise ConfigError("missing provider_name", location=name)
        out[name] = ModelEndpoint(**spec)
    return out


# --------------------------------------------------------------------------
# rate limiting

class RateLimiter:
    """Thread-safe token bucket shared by every caller of one endpoint."""

    def __init__(self, per_minute, clock=time.monotonic, sleep=time.sleep):
        self.rate = per_minute / 60.0
        self.capacity = max(1.0, per_minute / 60.0)
        self.tokens = self.capacity
        self.clock = clock
        self.sleep = sleep
        self.stamp = clock()
        self.lock = threading.Lock()

    def acquire(self):
        while True:
            with self.lock:
                now = self.clock()
                self.tokens = min(self.capacity, self.tokens + (now - self.stamp) * self.rate)
                self.stamp = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            self.sleep(wait)


_limiters = {}
_limiters_lock = threading.Lock()


def _limiter_for(endpoint):
    if not endpoint.requests_per_minute:
        return None
    key = (endpoint.provider_name, endpoint.base_url, endpoint.model_id)
    with _limiters_lock:
        if key not in _limiters:
            _limiters[key] = RateLimiter(endpoint.requests_per_minute)
        return _limiters[key]


# --------------------------------------------------------------------------
# transports

class Transport:
    """Sends one single-message conversation and returns the reply text."""

    def send(self, endpoint, prompt_text):
        raise NotImplementedError


class MockTransport(Transport):
    """Serves canned responses in order; the last one repeats.

    Entries may be strings, exceptions (raised) or callables taking the
    prompt text.  ``requests`` records every prompt received.
    """

    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []
        self._lock = threading.Lock()

    def send(self, endpoint, prompt_text):
        with self._lock:
            i = min(len(self.requests), len(self.responses) - 1)
            self.requests.append(prompt_text)
        item = self.responses[i]
        if isinstance(item, BaseException):
            raise item
        if callable(item):
            return item(prompt_text)
        return item


class HTTPTransport(Transport):
    """Minimal chat-completion adapters over httpx.

    ``openai`` speaks the ``/chat/completions`` contract (also served by many
    other providers); ``anthropic`` speaks ``/v1/messages``.
    """

    def __init__(self, client=None):
        self._client = client

    def _http(self, timeout):
        if self._client is None:
            import httpx
            self._client = httpx.Client(timeout=timeout)
        return self._client

    def send(self, endpoint, prompt_text):
        import httpx

        key = endpoint.credential()
        if endpoint.provider_name == "openai":
            url = endpoint.base_url.rstrip("/") or "https://api.openai.com/v1"
            url += "/chat/completions"
            headers = {"Authorization": f"Bearer {key}"} if key else {}
            body = {"model": endpoint.model_id,
                    "messages": [{"role": "user", "content": prompt_text}]}
            extract = lambda d: d["choices"][0]["message"]["content"]  # noqa: E731
        elif endpoint.provider_name == "anthropic":
            url = (endpoint.base_url.rstrip("/") or "https://api.anthropic.com") + "/v1/messages"
            headers = {"x-api-key": key or "", "anthropic-version": "2023-06-01"}
            body = {"model": endpoint.model_id, "max_tokens": endpoint.max_tokens,
                    "messages": [{"role": "user", "content": prompt_text}]}
            extract = lambda d: "".join(  # noqa: E731
                b.get("text", "") for b in d["content"] if b.get("type") == "text")
        else:
            raise ConfigError(f"no HTTP adapter for provider {endpoint.provider_name!r}")
        if endpoint.temperature is not None:
            body["temperature"] = endpoint.temperature
        try:
            resp = self._http(endpoint.timeout).post(url, json=body, headers=headers,
                                                     timeout=endpoint.timeout)
        except httpx.TimeoutException as exc:
            raise RequestTimeoutError(str(exc)) from None
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from None
        if resp.status_code in (401, 403):
            raise AuthenticationError(f"HTTP {resp.status_code}")
        if resp.status_code == 429:
            raise RateLimitError("HTTP 429")
        if resp.status_code in (408, 504):
            raise RequestTimeoutError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return extract(resp.json())
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise TransportError(f"unexpected response body: {exc}") from None


def transport_for(endpoint):
    if endpoint.provider_name == "mock":
        if not endpoint.responses:
            raise ConfigError("mock endpoint has no responses", location=endpoint.model_id)
        return MockTransport(endpoint.responses)
    return HTTPTransport()


# --------------------------------------------------------------------------
# generation

@dataclass
class GenerationRecord:
    study_id: str
    prompt_checksum: str
    variant: str
    model_id: str
    trial_index: int
    attempt_index: int
    raw_response: str
    timestamp: str
    validation_outcome: object  # "pass" or list of error codes
    report: Optional[dict] = field(default=None, repr=False)
    endpoint: Optional[dict] = None  # public settings only, never the credential

    def as_dict(self):
        return {
            "study_id": self.study_id,
            "prompt_checksum": self.prompt_checksum,
            "variant": self.variant,
            "model_id": self.model_id,
            "trial_index": self.trial_index,
            "attempt_index": self.attempt_index,
            "timestamp": self.timestamp,
            "validation_outcome": self.validation_outcome,
            "report": self.report,
            "endpoint": self.endpoint,
            "raw_response": self.raw_response,
        }


def _safe(part):
    return re.sub(r"[^A-Za-z0-9._-]+", "_", str(part)) or "_"


def archive_path(root, record):
    return (Path(root) / _safe(record.study_id) / _safe(record.variant)
            / _safe(record.model_id) / f"trial-{record.trial_index:03d}"
            / f"attempt-{record.attempt_index:03d}.json")


def archive_record(root, record):
    path = archive_path(root, record)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record.as_dict(), indent=2, ensure_ascii=False) + "\n",
                    encoding="utf-8")
    return path


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def generate(prompt, endpoint, transport=None, transport_retries=3, backoff=1.0,
             sleep=time.sleep, on_failure=None):
    """Send ``prompt`` once (plus transport retries) and return the reply text.

    Authentication errors surface immediately; other transport errors are
    retried up to ``transport_retries`` times with exponential backoff.
    ``on_failure(exc)`` is called for every failed request.
    """
    transport = transport or transport_for(endpoint)
    limiter = _limiter_for(endpoint)
    attempt = 0
    while True:
        if limiter:
            limiter.acquire()
        try:
            return transport.send(endpoint, prompt.text)
        except TransportError as exc:
            if on_failure:
                on_failure(exc)
            if not exc.retryable or attempt >= transport_retries:
                raise
            delay = backoff * (2 ** attempt)
            logger.info("%s error from %s, retrying in %.1fs", exc.kind, endpoint.model_id, delay)
            sleep(delay)
            attempt += 1


def generate_validated(prompt, endpoint, validator, max_regenerations=DEFAULT_MAX_REGENERATIONS,
                       seed=None, transport=None, study_id="study", trial_index=1,
                       archive_dir=None, transport_retries=3, backoff=1.0, sleep=time.sleep,
                       clock=_now):
    """Generate until ``validator(response)`` passes.

    ``validator`` returns ``(parsed, ValidationReport)``.  Returns
    ``(parsed, records)`` for the first passing response; raises
    :class:`ExhaustedRetriesError` after ``max_regenerations`` regenerations.
    Every request, including transport failures, becomes a record (and a
    file under ``archive_dir`` when given).  ``seed`` is recorded for
    provenance only; providers are called with their default sampling.
    """
    if max_regenerations < 0:
        raise ValueError("max_regenerations must be >= 0")
    if prompt.variant.needs_large_output and not endpoint.large_output:
        raise CapabilityError(
            f"{prompt.variant.value} needs an endpoint flagged large_output; "
            f"{endpoint.model_id} is not", location=endpoint.model_id)
    transport = transport or transport_for(endpoint)
    records = []

    def record(raw, outcome, report=None):
        rec = GenerationRecord(study_id, prompt.checksum, prompt.variant.value,
                               endpoint.model_id, trial_index, len(records) + 1, raw,
                               clock(), outcome, report, endpoint.public_dict())
        records.append(rec)
        if archive_dir is not None:
            archive_record(archive_dir, rec)
        return rec

    def failed(exc):
        record("", [f"TRANSPORT_{exc.kind.upper().replace('-', '_')}"])

    for _ in range(max_regenerations + 1):
        try:
            raw = generate(prompt, endpoint, transport, transport_retries, backoff, sleep,
                           on_failure=failed)
        except TransportError as exc:
            exc.records = records
            raise
        parsed, report = validator(raw)
        if report.passed:
            record(raw, "pass", report.as_dict())
            return parsed, records
        record(raw, report.error_codes(), report.as_dict())
    raise ExhaustedRetriesError([r for r in records if r.raw_response or r.report])
