"""Shared helpers for the test suite: fake backends, counting clients,
tiny image factories."""

from __future__ import annotations

import json
import struct
import threading
import time
import zlib
from pathlib import Path

from climcheck.domain import Sample
from climcheck.inference import (
    Backend,
    BackendError,
    BackendTransportError,
    ModelResponse,
)
from climcheck.retrieval import FixtureSourceClient, SourceClient, TransportError


def png_bytes(rgb=(10, 120, 200), size: int = 4) -> bytes:
    def chunk(tag: bytes, data: bytes) -> bytes:
        return (
            struct.pack(">I", len(data))
            + tag
            + data
            + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)
        )

    ihdr = struct.pack(">IIBBBBB", size, size, 8, 2, 0, 0, 0)
    idat = zlib.compress((b"\x00" + bytes(rgb) * size) * size)
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", idat)
        + chunk(b"IEND", b"")
    )


def make_sample(
    directory: Path,
    sid: str = "s1",
    claim: str = "The glacier shrank.",
    description=None,
    gold=None,
) -> Sample:
    image = directory / f"{sid}.png"
    image.write_bytes(png_bytes())
    return Sample(
        id=sid,
        claim=claim,
        image_ref=image.name,
        description=description,
        gold=gold,
        image_path=image,
    )


def reply_text(label: str, confidence=80, drafts: bool = False) -> str:
    obj: dict = {"label": label}
    if confidence is not None:
        obj["confidence"] = confidence
    obj["justification"] = "because"
    if drafts:
        obj["drafts"] = ["draft one", "draft two"]
    return "Some reasoning first.\n" + json.dumps(obj)


class FakeBackend(Backend):
    """In-memory backend keyed '<sample_id>__<template_id>'.

    Reply values may be raw text, a dict of ModelResponse fields, or a
    callable over the PromptSpec. fail_first[key] makes the first N submits
    for that key raise transport errors. Tracks every call and the peak
    number of concurrent submits.
    """

    def __init__(self, replies=None, default=None, hold_s: float = 0.0):
        self.replies = dict(replies or {})
        self.default = default
        self.fail_first: dict = {}
        self.hold_s = hold_s
        self.calls: list = []
        self.max_inflight = 0
        self._inflight = 0
        self._seen: dict = {}
        self._lock = threading.Lock()

    def submit(self, prompt, *, temperature: float = 0.0) -> ModelResponse:
        key = f"{prompt.sample_id}__{prompt.template_id}"
        with self._lock:
            self.calls.append(key)
            self._inflight += 1
            self.max_inflight = max(self.max_inflight, self._inflight)
            seen = self._seen.get(key, 0)
            self._seen[key] = seen + 1
        try:
            if self.hold_s:
                time.sleep(self.hold_s)
            if seen < self.fail_first.get(key, 0):
                raise BackendTransportError(f"flaky reply for {key}")
            value = self.replies.get(key, self.default)
            if value is None:
                raise BackendError(f"no fake reply for {key}")
            if callable(value):
                value = value(prompt)
            if isinstance(value, str):
                return ModelResponse(
                    raw_text=value, prompt_tokens=40, completion_tokens=12, latency_s=0.01
                )
            return ModelResponse(**value)
        finally:
            with self._lock:
                self._inflight -= 1


class CannedClient(SourceClient):
    """Returns canned payloads per sample id and counts every lookup."""

    def __init__(self, source, payloads=None, default=None):
        self.source = source
        self.payloads = dict(payloads or {})
        self.default = default if default is not None else {}
        self.lookups: list = []

    def lookup(self, sample):
        self.lookups.append(sample.id)
        payload = self.payloads.get(sample.id, self.default)
        if isinstance(payload, dict) and "transport_error" in payload:
            raise TransportError(str(payload["transport_error"]))
        return payload


class CountingFixtureClient(FixtureSourceClient):
    """FixtureSourceClient that counts lookups, for cache warmth checks."""

    def __init__(self, source, fixture_dir):
        super().__init__(source, fixture_dir)
        self.lookups = 0

    def lookup(self, sample):
        self.lookups += 1
        return super().lookup(sample)


def search_payload(n: int = 2, prefix: str = "hit") -> dict:
    return {
        "items": [
            {
                "title": f"{prefix} {k}",
                "snippet": f"snippet {k}",
                "link": f"https://web.example/{prefix}/{k}",
            }
            for k in range(n)
        ]
    }
