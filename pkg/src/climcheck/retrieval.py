"""Evidence retrieval: four external source clients, a replay cache, retries.

Each source returns a SourceResult. Failures are first-class values, not
exceptions: a result with no items and no image finding is unsuccessful but
still cached, so a flaky upstream is not re-hammered on the next run.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import tempfile
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import requests

from .domain import (
    ClimcheckError,
    Sample,
    SourceKind,
    priority_rank,
)

log = logging.getLogger(__name__)

MAX_ITEMS_PER_SOURCE = 10
CACHE_VERSION = 1


class TransportError(ClimcheckError):
    """A retryable upstream failure (network error, 5xx, rate limit)."""


class CacheError(ClimcheckError):
    """The on-disk evidence cache is unreadable or corrupt."""


class MatchKind(Enum):
    EXACT = "Exact"
    VISUAL = "Visual"


@dataclass(frozen=True)
class EvidenceItem:
    """One retrieved snippet of evidence."""

    title: str = ""
    snippet: str = ""
    url: str = ""
    published: Optional[str] = None
    match_kind: Optional[MatchKind] = None
    verdict_hint: Optional[str] = None

    def to_json(self) -> dict:
        row = {"title": self.title, "snippet": self.snippet, "url": self.url}
        if self.published is not None:
            row["published"] = self.published
        if self.match_kind is not None:
            row["match_kind"] = self.match_kind.value
        if self.verdict_hint is not None:
            row["verdict_hint"] = self.verdict_hint
        return row

    @classmethod
    def from_json(cls, row: dict) -> "EvidenceItem":
        kind = row.get("match_kind")
        return cls(
            title=row.get("title", ""),
            snippet=row.get("snippet", ""),
            url=row.get("url", ""),
            published=row.get("published"),
            match_kind=MatchKind(kind) if kind else None,
            verdict_hint=row.get("verdict_hint"),
        )


@dataclass(frozen=True)
class SourceResult:
    """Outcome of querying one source for one sample.

    success is derived, never stored independently: a lookup succeeded iff it
    produced at least one item or an image-level finding.
    """

    source: SourceKind
    items: tuple[EvidenceItem, ...] = ()
    about_image: Optional[str] = None
    fetched_at: Optional[str] = None
    error: Optional[str] = None

    @property
    def success(self) -> bool:
        return bool(self.items) or bool(self.about_image)

    @classmethod
    def failed(cls, source: SourceKind, error: str, fetched_at: Optional[str] = None) -> "SourceResult":
        return cls(source=source, items=(), about_image=None, fetched_at=fetched_at, error=error)

    def to_json(self) -> dict:
        return {
            "v": CACHE_VERSION,
            "source": self.source.value,
            "items": [item.to_json() for item in self.items],
            "about_image": self.about_image,
            "fetched_at": self.fetched_at,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, row: dict) -> "SourceResult":
        if row.get("v") != CACHE_VERSION:
            raise CacheError(f"unsupported cache entry version: {row.get('v')!r}")
        return cls(
            source=SourceKind(row["source"]),
            items=tuple(EvidenceItem.from_json(r) for r in row.get("items", [])),
            about_image=row.get("about_image"),
            fetched_at=row.get("fetched_at"),
            error=row.get("error"),
        )


@dataclass(frozen=True)
class EvidenceBundle:
    """All per-source results for one sample, keyed by SourceKind."""

    sample_id: str
    results: dict = field(default_factory=dict)

    def ordered(self) -> list[SourceResult]:
        return [
            self.results[kind]
            for kind in sorted(self.results, key=priority_rank)
        ]


def _now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class EvidenceCache:
    """Replay cache at <root>/<sample_id>/<source>.json, one file per lookup."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    def _path(self, sample_id: str, source: SourceKind) -> Path:
        return self.root / sample_id / f"{source.value}.json"

    def load(self, sample_id: str, source: SourceKind) -> Optional[SourceResult]:
        path = self._path(sample_id, source)
        if not path.exists():
            return None
        try:
            row = json.loads(path.read_text(encoding="utf-8"))
            return SourceResult.from_json(row)
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise CacheError(f"corrupt cache entry {path}: {exc}") from exc

    def store(self, sample_id: str, result: SourceResult) -> None:
        path = self._path(sample_id, result.source)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = json.dumps(result.to_json(), ensure_ascii=False, indent=1)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


# -- payload mappers ---------------------------------------------------------
#
# Each mapper turns one provider's raw JSON into a SourceResult. They are
# separated from the HTTP clients so scripted fixtures and live responses go
# through identical normalization.


def fact_check_result(payload: dict, fetched_at: Optional[str] = None) -> SourceResult:
    items = []
    for claim in payload.get("claims", [])[:MAX_ITEMS_PER_SOURCE]:
        reviews = claim.get("claimReview") or [{}]
        review = reviews[0]
        items.append(
            EvidenceItem(
                title=review.get("title", "") or claim.get("text", ""),
                snippet=claim.get("text", ""),
                url=review.get("url", ""),
                published=review.get("reviewDate"),
                verdict_hint=review.get("textualRating"),
            )
        )
    if not items:
        return SourceResult.failed(
            SourceKind.FACT_CHECK, "no fact-check entries found", fetched_at
        )
    return SourceResult(
        source=SourceKind.FACT_CHECK, items=tuple(items), fetched_at=fetched_at
    )


def web_search_result(payload: dict, fetched_at: Optional[str] = None) -> SourceResult:
    items = []
    for row in payload.get("items", [])[:MAX_ITEMS_PER_SOURCE]:
        items.append(
            EvidenceItem(
                title=row.get("title", ""),
                snippet=row.get("snippet", ""),
                url=row.get("link", ""),
                published=row.get("published"),
            )
        )
    if not items:
        return SourceResult.failed(
            SourceKind.GOOGLE_SEARCH, "no search results", fetched_at
        )
    return SourceResult(
        source=SourceKind.GOOGLE_SEARCH, items=tuple(items), fetched_at=fetched_at
    )


def gpt_preview_result(payload: dict, fetched_at: Optional[str] = None) -> SourceResult:
    """Normalize model-generated search previews: summary plus source link.

    Previews without any source link are dropped wholesale; an unattributed
    summary is the model talking to itself, not evidence.
    """
    items = []
    for row in payload.get("previews", [])[:MAX_ITEMS_PER_SOURCE]:
        url = (row.get("url") or row.get("link") or "").strip()
        if not url:
            continue
        items.append(
            EvidenceItem(
                title=row.get("title", ""),
                snippet=row.get("summary", "") or row.get("snippet", ""),
                url=url,
            )
        )
    if not items:
        return SourceResult.failed(
            SourceKind.GPT_SEARCH, "no previews with a source link", fetched_at
        )
    return SourceResult(
        source=SourceKind.GPT_SEARCH, items=tuple(items), fetched_at=fetched_at
    )


def reverse_image_result(payload: dict, fetched_at: Optional[str] = None) -> SourceResult:
    """Normalize reverse image search output.

    Thumbnail-only hits (no title and no snippet) carry no verifiable text and
    are filtered out. Exact matches of the image rank before visually similar
    ones regardless of provider order.
    """
    exact, visual = [], []
    for row in payload.get("matches", []):
        title = (row.get("title") or "").strip()
        snippet = (row.get("snippet") or "").strip()
        if not title and not snippet:
            continue
        kind = MatchKind.EXACT if row.get("exact") else MatchKind.VISUAL
        item = EvidenceItem(
            title=title,
            snippet=snippet,
            url=row.get("url", ""),
            published=row.get("published"),
            match_kind=kind,
        )
        (exact if kind is MatchKind.EXACT else visual).append(item)
    items = (exact + visual)[:MAX_ITEMS_PER_SOURCE]
    about = payload.get("about_image") or None
    if not items and not about:
        return SourceResult.failed(
            SourceKind.REVERSE_IMAGE, "no usable matches", fetched_at
        )
    return SourceResult(
        source=SourceKind.REVERSE_IMAGE,
        items=tuple(items),
        about_image=about,
        fetched_at=fetched_at,
    )


_MAPPERS: dict[SourceKind, Callable[..., SourceResult]] = {
    SourceKind.FACT_CHECK: fact_check_result,
    SourceKind.GOOGLE_SEARCH: web_search_result,
    SourceKind.GPT_SEARCH: gpt_preview_result,
    SourceKind.REVERSE_IMAGE: reverse_image_result,
}


def map_payload(source: SourceKind, payload: dict, fetched_at: Optional[str] = None) -> SourceResult:
    return _MAPPERS[source](payload, fetched_at)


# -- clients -----------------------------------------------------------------


class SourceClient(ABC):
    """One evidence provider. lookup() returns the raw provider payload."""

    source: SourceKind

    @abstractmethod
    def lookup(self, sample: Sample) -> dict:
        """Fetch the raw payload for a sample. Raises TransportError on flake."""


class FixtureSourceClient(SourceClient):
    """Replays canned payloads from <dir>/<sample_id>.json.

    A missing file means the provider had nothing, not an error. A payload of
    {"transport_error": "..."} simulates a network failure for retry tests.
    """

    def __init__(self, source: SourceKind, fixture_dir: Union[str, Path]):
        self.source = source
        self.fixture_dir = Path(fixture_dir)

    def lookup(self, sample: Sample) -> dict:
        path = self.fixture_dir / f"{sample.id}.json"
        if not path.exists():
            return {}
        payload = json.loads(path.read_text(encoding="utf-8"))
        if "transport_error" in payload:
            raise TransportError(str(payload["transport_error"]))
        return payload


def _require_env(name: str) -> str:
    value = os.environ.get(name, "")
    if not value:
        raise ClimcheckError(f"environment variable {name} is not set")
    return value


def _get_json(url: str, *, params: dict = None, timeout: float = 20.0) -> dict:
    try:
        resp = requests.get(url, params=params, timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(f"GET {url}: {exc}") from exc
    if resp.status_code >= 500 or resp.status_code == 429:
        raise TransportError(f"GET {url}: HTTP {resp.status_code}")
    resp.raise_for_status()
    return resp.json()


def _post_json(url: str, body: dict, *, headers: dict = None, timeout: float = 60.0) -> dict:
    try:
        resp = requests.post(url, json=body, headers=headers or {}, timeout=timeout)
    except requests.RequestException as exc:
        raise TransportError(f"POST {url}: {exc}") from exc
    if resp.status_code >= 500 or resp.status_code == 429:
        raise TransportError(f"POST {url}: HTTP {resp.status_code}")
    resp.raise_for_status()
    return resp.json()


class FactCheckClient(SourceClient):
    """Queries a claim-review aggregation API for published fact checks."""

    source = SourceKind.FACT_CHECK
    endpoint = "https://factchecktools.googleapis.com/v1alpha1/claims:search"

    def lookup(self, sample: Sample) -> dict:
        return _get_json(
            self.endpoint,
            params={"query": sample.claim, "key": _require_env("FACTCHECK_API_KEY")},
        )


class GoogleSearchClient(SourceClient):
    """Standard programmable web search over the claim text."""

    source = SourceKind.GOOGLE_SEARCH
    endpoint = "https://www.googleapis.com/customsearch/v1"

    def lookup(self, sample: Sample) -> dict:
        params = {
            "q": sample.claim,
            "key": _require_env("SEARCH_API_KEY"),
            "num": MAX_ITEMS_PER_SOURCE,
        }
        cx = os.environ.get("SEARCH_ENGINE_ID")
        if cx:
            params["cx"] = cx
        return _get_json(self.endpoint, params=params)


class GptSearchClient(SourceClient):
    """Asks a search-capable chat model for sourced previews of the claim.

    The model is instructed to answer as JSON; anything it returns without a
    source link is discarded downstream by gpt_preview_result().
    """

    source = SourceKind.GPT_SEARCH

    _instruction = (
        "Search the web for reporting on the claim below. Respond with JSON "
        'of the form {"previews": [{"title": ..., "summary": ..., "url": ...}]} '
        "listing up to 10 results. Every preview must cite the source url.\n\n"
        "Claim: {claim}"
    )

    def __init__(self, endpoint: Optional[str] = None, model: Optional[str] = None):
        self.endpoint = endpoint or os.environ.get(
            "VLM_ENDPOINT", "https://api.openai.com/v1/chat/completions"
        )
        self.model = model or os.environ.get("VLM_MODEL", "gpt-4o")

    def lookup(self, sample: Sample) -> dict:
        body = {
            "model": self.model,
            "messages": [
                {
                    "role": "user",
                    "content": self._instruction.replace("{claim}", sample.claim),
                }
            ],
            "response_format": {"type": "json_object"},
        }
        headers = {"Authorization": f"Bearer {_require_env('SEARCH_API_KEY')}"}
        raw = _post_json(self.endpoint, body, headers=headers)
        try:
            content = raw["choices"][0]["message"]["content"]
            return json.loads(content)
        except (KeyError, IndexError, TypeError, json.JSONDecodeError):
            return {}


class ReverseImageClient(SourceClient):
    """Posts the image (base64) to a reverse image search endpoint."""

    source = SourceKind.REVERSE_IMAGE

    def __init__(self, endpoint: Optional[str] = None):
        self.endpoint = endpoint or os.environ.get("IMAGE_SEARCH_URL", "")

    def lookup(self, sample: Sample) -> dict:
        if not self.endpoint:
            raise ClimcheckError("IMAGE_SEARCH_URL is not configured")
        data = base64.b64encode(sample.image_path.read_bytes()).decode("ascii")
        headers = {"Authorization": f"Bearer {_require_env('IMAGE_SEARCH_API_KEY')}"}
        return _post_json(self.endpoint, {"image": data}, headers=headers)


def fixture_clients(root: Union[str, Path]) -> dict[SourceKind, SourceClient]:
    """Build scripted clients for every source from <root>/<source_slug>/."""
    root = Path(root)
    return {
        kind: FixtureSourceClient(kind, root / kind.value) for kind in SourceKind
    }


def live_clients() -> dict[SourceKind, SourceClient]:
    return {
        SourceKind.FACT_CHECK: FactCheckClient(),
        SourceKind.GPT_SEARCH: GptSearchClient(),
        SourceKind.REVERSE_IMAGE: ReverseImageClient(),
        SourceKind.GOOGLE_SEARCH: GoogleSearchClient(),
    }


# -- orchestration -----------------------------------------------------------


def fetch(
    sample: Sample,
    source: SourceKind,
    client: SourceClient,
    cache: Optional[EvidenceCache] = None,
    *,
    refresh: bool = False,
    attempts: int = 3,
    backoff: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> SourceResult:
    """Fetch one source for one sample, cache-first with retries.

    Transport errors retry with exponential backoff; after the final attempt
    the failure is recorded in the cache like any other empty result, so the
    next run replays it instead of re-querying (pass refresh=True to force).
    """
    if cache is not None and not refresh:
        hit = cache.load(sample.id, source)
        if hit is not None:
            return hit

    result: Optional[SourceResult] = None
    for attempt in range(attempts):
        try:
            payload = client.lookup(sample)
            result = map_payload(source, payload, fetched_at=_now_iso())
            break
        except TransportError as exc:
            log.warning("%s lookup failed for %s: %s", source.value, sample.id, exc)
            if attempt + 1 < attempts:
                sleep(backoff * (2 ** attempt))
            else:
                result = SourceResult.failed(source, str(exc), fetched_at=_now_iso())
    assert result is not None

    if cache is not None:
        cache.store(sample.id, result)
    return result


class Retriever:
    """Gathers evidence for samples across the configured sources."""

    def __init__(
        self,
        clients: dict[SourceKind, SourceClient],
        cache: Optional[EvidenceCache] = None,
        *,
        refresh: bool = False,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.clients = clients
        self.cache = cache
        self.refresh = refresh
        self.sleep = sleep

    def gather(self, sample: Sample, sources: Sequence[SourceKind]) -> EvidenceBundle:
        results = {}
        for source in sources:
            client = self.clients.get(source)
            if client is None:
                raise ClimcheckError(f"no client configured for source {source.value}")
            results[source] = fetch(
                sample,
                source,
                client,
                self.cache,
                refresh=self.refresh,
                sleep=self.sleep,
            )
        return EvidenceBundle(sample_id=sample.id, results=results)


def success_rates(bundles: Sequence[EvidenceBundle]) -> dict[str, float]:
    """Fraction of samples with a successful lookup, per source seen.

    Raises on an empty input: a rate over zero samples is undefined and
    silently returning zeros would misread as total failure.
    """
    if not bundles:
        raise ClimcheckError("success_rates needs at least one bundle")
    counts: dict[SourceKind, int] = {}
    hits: dict[SourceKind, int] = {}
    for bundle in bundles:
        for source, result in bundle.results.items():
            counts[source] = counts.get(source, 0) + 1
            if result.success:
                hits[source] = hits.get(source, 0) + 1
    return {
        source.value: hits.get(source, 0) / counts[source]
        for source in sorted(counts, key=priority_rank)
    }
