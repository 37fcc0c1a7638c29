"""Vision-language backend gateway.

Submits prompts (text plus base64 images), accounts tokens and latency, and
parses structured verdicts out of free-form replies. Parsing is total: every
reply becomes either a Verdict or a Fallback, never an exception.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Union

import requests

from .domain import ClimcheckError, Label, Scheme, parse_label
from .prompting import PromptSpec

log = logging.getLogger(__name__)


class BackendError(ClimcheckError):
    """Permanent backend failure; retrying cannot help."""


class BackendTransportError(BackendError):
    """Transient backend failure (network, 5xx, rate limit); retryable."""


@dataclass(frozen=True)
class ModelResponse:
    raw_text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_s: float = 0.0

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")
        if self.latency_s < 0:
            raise ValueError("latency must be non-negative")


@dataclass(frozen=True)
class Verdict:
    """A parsed, legal model answer.

    confidence is None when the reply had a legal label but no usable
    confidence; such verdicts are excluded from confidence averages but are
    not fallbacks.
    """

    label: Label
    confidence: Optional[int] = None
    justification: str = ""
    drafts: tuple[str, ...] = ()


class FallbackReason(Enum):
    UNPARSEABLE = "Unparseable"
    ILLEGAL_LABEL = "IllegalLabel"
    EXPLICIT_REFUSAL = "ExplicitRefusal"
    BACKEND_FAILURE = "BackendFailure"


@dataclass(frozen=True)
class Fallback:
    """The model gave no usable verdict; counts toward the rejection rate."""

    reason: FallbackReason
    raw_text: str = ""


class Backend(ABC):
    """A chat-style vision model. Implementations must be thread-safe."""

    @abstractmethod
    def submit(self, prompt: PromptSpec, *, temperature: float = 0.0) -> ModelResponse:
        """Run one prompt. Raises BackendTransportError on transient faults."""


class ScriptedBackend(Backend):
    """Replays recorded replies from <dir>/<sample_id>__<template_id>.json.

    Reply files: {"raw_text": ..., "prompt_tokens": ..., "completion_tokens":
    ..., "latency_s": ...}. A missing file is a permanent error: the script
    does not cover that call. An optional "fail_first" count makes the first
    N submits raise a transport error, for retry tests.
    """

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise BackendError(f"scripted reply directory not found: {self.directory}")
        self._attempts: dict[str, int] = {}

    def submit(self, prompt: PromptSpec, *, temperature: float = 0.0) -> ModelResponse:
        key = f"{prompt.sample_id}__{prompt.template_id}"
        path = self.directory / f"{key}.json"
        if not path.exists():
            raise BackendError(f"no scripted reply for {key}")
        row = json.loads(path.read_text(encoding="utf-8"))
        seen = self._attempts.get(key, 0)
        self._attempts[key] = seen + 1
        if seen < int(row.get("fail_first", 0)):
            raise BackendTransportError(f"scripted transport failure for {key}")
        return ModelResponse(
            raw_text=row.get("raw_text", ""),
            prompt_tokens=int(row.get("prompt_tokens", 0)),
            completion_tokens=int(row.get("completion_tokens", 0)),
            latency_s=float(row.get("latency_s", 0.0)),
        )


def _encode_image(path: Path) -> str:
    suffix = path.suffix.lower().lstrip(".") or "png"
    if suffix == "jpg":
        suffix = "jpeg"
    data = base64.b64encode(path.read_bytes()).decode("ascii")
    return f"data:image/{suffix};base64,{data}"


def _redact(obj):
    """Strip credential material from a request body before logging."""
    if isinstance(obj, dict):
        return {
            key: "<redacted>" if key.lower() in ("authorization", "api_key", "key")
            else _redact(value)
            for key, value in obj.items()
        }
    if isinstance(obj, list):
        return [_redact(item) for item in obj]
    if isinstance(obj, str) and obj.startswith("data:image/"):
        return f"<{len(obj)} bytes of image data>"
    return obj


class LiveBackend(Backend):
    """OpenAI-style chat completions endpoint with vision input."""

    def __init__(
        self,
        endpoint: Optional[str] = None,
        model: Optional[str] = None,
        *,
        trace: bool = False,
        timeout: float = 120.0,
    ):
        self.endpoint = endpoint or os.environ.get(
            "VLM_ENDPOINT", "https://api.openai.com/v1/chat/completions"
        )
        self.model = model or os.environ.get("VLM_MODEL", "gpt-4o")
        self.trace = trace
        self.timeout = timeout

    def _api_key(self) -> str:
        key = os.environ.get("VLM_API_KEY", "")
        if not key:
            raise BackendError("VLM_API_KEY is not set")
        return key

    def submit(self, prompt: PromptSpec, *, temperature: float = 0.0) -> ModelResponse:
        content: list[dict] = [{"type": "text", "text": prompt.user_text}]
        for ref in prompt.image_refs:
            content.append(
                {"type": "image_url", "image_url": {"url": _encode_image(ref)}}
            )
        body = {
            "model": self.model,
            "temperature": temperature,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": content},
            ],
        }
        if self.trace:
            log.info(
                "request %s__%s: %s",
                prompt.sample_id,
                prompt.template_id,
                json.dumps(_redact(body), ensure_ascii=False),
            )
        started = time.monotonic()
        try:
            resp = requests.post(
                self.endpoint,
                json=body,
                headers={"Authorization": f"Bearer {self._api_key()}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise BackendTransportError(f"POST {self.endpoint}: {exc}") from exc
        latency = time.monotonic() - started
        if resp.status_code >= 500 or resp.status_code == 429:
            raise BackendTransportError(f"HTTP {resp.status_code} from backend")
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code} from backend: {resp.text[:500]}")
        raw = resp.json()
        if self.trace:
            log.info(
                "response %s__%s: %s",
                prompt.sample_id,
                prompt.template_id,
                json.dumps(_redact(raw), ensure_ascii=False),
            )
        try:
            text = raw["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed backend reply: {exc}") from exc
        usage = raw.get("usage") or {}
        return ModelResponse(
            raw_text=text,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            latency_s=latency,
        )


def complete(
    prompt: PromptSpec,
    backend: Backend,
    *,
    temperature: float = 0.0,
    attempts: int = 3,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> ModelResponse:
    """Submit a prompt with retries on transient failures.

    Unreadable images fail hard before any call goes out. Permanent backend
    errors propagate immediately; the caller decides whether that becomes a
    BackendFailure fallback or an abort.
    """
    for ref in prompt.image_refs:
        if not Path(ref).is_file():
            raise ClimcheckError(f"image not readable: {ref}")
    last: Optional[BackendTransportError] = None
    for attempt in range(attempts):
        try:
            return backend.submit(prompt, temperature=temperature)
        except BackendTransportError as exc:
            last = exc
            log.warning(
                "attempt %d/%d failed for %s__%s: %s",
                attempt + 1,
                attempts,
                prompt.sample_id,
                prompt.template_id,
                exc,
            )
            if attempt + 1 < attempts:
                sleep(backoff * (2 ** attempt))
    assert last is not None
    raise last


_REFUSAL_PHRASES = (
    "cannot verify",
    "can't verify",
    "cannot assess",
    "unable to verify",
    "unable to assess",
    "cannot assist",
    "can't assist",
    "cannot help with",
    "i'm sorry, but",
    "i am sorry, but",
)


def _candidate_objects(raw_text: str):
    decoder = json.JSONDecoder()
    idx = raw_text.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(raw_text, idx)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            yield obj
        idx = raw_text.find("{", idx + 1)


def parse_verdict(response: ModelResponse, scheme: Scheme) -> Union[Verdict, Fallback]:
    """Extract the first structured verdict from a raw reply.

    Total function: any string maps to exactly one of Verdict or Fallback.
    Out-of-range or non-integral confidence is a parse failure, not a value
    to clamp; a missing confidence is tolerated.
    """
    raw = response.raw_text
    found_object = False
    for obj in _candidate_objects(raw):
        if "label" not in obj:
            continue
        found_object = True
        try:
            label = parse_label(str(obj["label"]), scheme)
        except ValueError:
            return Fallback(FallbackReason.ILLEGAL_LABEL, raw)

        confidence = obj.get("confidence")
        if confidence is not None:
            if isinstance(confidence, bool) or not isinstance(confidence, int):
                return Fallback(FallbackReason.UNPARSEABLE, raw)
            if not 0 <= confidence <= 100:
                return Fallback(FallbackReason.UNPARSEABLE, raw)

        drafts = obj.get("drafts") or ()
        if not isinstance(drafts, (list, tuple)):
            drafts = ()
        return Verdict(
            label=label,
            confidence=confidence,
            justification=str(obj.get("justification", "") or ""),
            drafts=tuple(str(d) for d in drafts),
        )

    if not found_object:
        lowered = raw.lower()
        if any(phrase in lowered for phrase in _REFUSAL_PHRASES):
            return Fallback(FallbackReason.EXPLICIT_REFUSAL, raw)
    return Fallback(FallbackReason.UNPARSEABLE, raw)


def format_reply(verdict: Verdict) -> str:
    """Render a Verdict the way a well-behaved model would answer.

    parse_verdict(format_reply(v)) recovers v's label and confidence; used
    by tests and handy for synthesizing scripted replies.
    """
    row: dict = {"label": verdict.label.value}
    if verdict.confidence is not None:
        row["confidence"] = verdict.confidence
    row["justification"] = verdict.justification
    if verdict.drafts:
        row["drafts"] = list(verdict.drafts)
    return json.dumps(row, ensure_ascii=False)
