"""Core vocabulary: samples, label taxonomies, evidence sources, run configuration.

Everything here is immutable after construction and safe to share across
concurrent tasks.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union


class ClimcheckError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(ClimcheckError):
    """Invalid configuration, manifest, or CLI input. Maps to exit code 2."""


class Label4(Enum):
    """Four-way factuality taxonomy."""

    ACCURATE = "Accurate"
    MISLEADING = "Misleading"
    FALSE = "False"
    UNVERIFIABLE = "Unverifiable"


class Label2(Enum):
    """Binary factuality taxonomy."""

    ACCURATE = "Accurate"
    DISINFORMATION = "Disinformation"


Label = Union[Label4, Label2]


class Scheme(Enum):
    FOUR_CLASS = "4class"
    TWO_CLASS = "2class"


class Strategy(Enum):
    COT = "CoT"
    COD = "CoD"


class AssemblyMode(Enum):
    CONDITIONAL = "conditional"
    CONCAT = "concat"


class SourceKind(Enum):
    """External evidence sources, declared in reliability-priority order.

    FACT_CHECK is the most reliable and always fed to the model first;
    GOOGLE_SEARCH is the least and fed last.
    """

    FACT_CHECK = "factcheck"
    GPT_SEARCH = "gptsearch"
    REVERSE_IMAGE = "reverseimage"
    GOOGLE_SEARCH = "googlesearch"

    @property
    def display_name(self) -> str:
        return _SOURCE_DISPLAY[self]


_SOURCE_DISPLAY = {
    SourceKind.FACT_CHECK: "Fact-check sites",
    SourceKind.GPT_SEARCH: "GPT search",
    SourceKind.REVERSE_IMAGE: "Reverse image search",
    SourceKind.GOOGLE_SEARCH: "Google search",
}

# Lower index = higher priority when assembling evidence context.
SOURCE_PRIORITY: tuple[SourceKind, ...] = (
    SourceKind.FACT_CHECK,
    SourceKind.GPT_SEARCH,
    SourceKind.REVERSE_IMAGE,
    SourceKind.GOOGLE_SEARCH,
)


def priority_rank(source: SourceKind) -> int:
    return SOURCE_PRIORITY.index(source)


def legal_labels(scheme: Scheme) -> frozenset[str]:
    """Canonical label spellings that are legal under the given scheme."""
    if scheme is Scheme.FOUR_CLASS:
        return frozenset(label.value for label in Label4)
    return frozenset(label.value for label in Label2)


def scheme_label_order(scheme: Scheme) -> tuple[str, ...]:
    """Canonical label ordering for reports and confusion matrices."""
    if scheme is Scheme.FOUR_CLASS:
        return tuple(label.value for label in Label4)
    return tuple(label.value for label in Label2)


def map_to_binary(label: Label4) -> Label2:
    """Collapse the four-way taxonomy: anything not Accurate is Disinformation."""
    if label is Label4.ACCURATE:
        return Label2.ACCURATE
    return Label2.DISINFORMATION


def parse_label(text: str, scheme: Scheme) -> Label:
    """Parse a label spelling case-insensitively; emission stays canonical."""
    want = text.strip().lower()
    enum_cls = Label4 if scheme is Scheme.FOUR_CLASS else Label2
    for member in enum_cls:
        if member.value.lower() == want:
            return member
    raise ValueError(f"not a legal {scheme.value} label: {text!r}")


def parse_gold(text: str) -> Label:
    """Parse a manifest gold value. Accepts any of the five known spellings."""
    want = text.strip().lower()
    for member in Label4:
        if member.value.lower() == want:
            return member
    if want == Label2.DISINFORMATION.value.lower():
        return Label2.DISINFORMATION
    raise ValueError(f"unknown gold label: {text!r}")


def gold_for_scheme(gold: Optional[Label], scheme: Scheme) -> Optional[Label]:
    """Project a stored gold label into the scheme under evaluation.

    Four-way golds collapse to binary under the two-class scheme. A binary
    Disinformation gold cannot be projected onto the four-class scheme and is
    treated as missing (the sample is skipped by the metrics).
    """
    if gold is None:
        return None
    if scheme is Scheme.TWO_CLASS:
        if isinstance(gold, Label4):
            return map_to_binary(gold)
        return gold
    if isinstance(gold, Label4):
        return gold
    if gold is Label2.ACCURATE:
        return Label4.ACCURATE
    return None


@dataclass(frozen=True)
class Sample:
    """One dataset row: an image-claim pair plus optional annotation fields.

    image_ref keeps the path exactly as written in the manifest; image_path
    is the resolved location used to read the file.
    """

    id: str
    claim: str
    image_ref: str
    description: Optional[str] = None
    gold: Optional[Label] = None
    image_path: Path = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.image_path is None:
            object.__setattr__(self, "image_path", Path(self.image_ref))


def load_manifest(path: Union[str, Path]) -> list[Sample]:
    """Read a JSON-lines manifest. Image paths resolve relative to the manifest.

    Raises ConfigError on malformed lines, duplicate or empty ids, empty
    claims, or unknown gold spellings. Image readability is checked separately
    by validate_images() so evaluation-only flows can work without the image
    files present.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc

    samples: list[Sample] = []
    seen: set[str] = set()
    base = path.parent
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(row, dict):
            raise ConfigError(f"{path}:{lineno}: expected an object per line")
        for key in ("id", "claim", "image"):
            if key not in row:
                raise ConfigError(f"{path}:{lineno}: missing required key {key!r}")
        sample_id = str(row["id"])
        if not sample_id:
            raise ConfigError(f"{path}:{lineno}: empty id")
        if sample_id in seen:
            raise ConfigError(f"{path}:{lineno}: duplicate id {sample_id!r}")
        seen.add(sample_id)
        claim = str(row["claim"])
        if not claim.strip():
            raise ConfigError(f"{path}:{lineno}: empty claim for id {sample_id!r}")
        gold = None
        if row.get("gold") is not None:
            try:
                gold = parse_gold(str(row["gold"]))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
        description = row.get("description")
        if description is not None:
            description = str(description)
        image_ref = str(row["image"])
        samples.append(
            Sample(
                id=sample_id,
                claim=claim,
                image_ref=image_ref,
                description=description,
                gold=gold,
                image_path=(base / image_ref),
            )
        )
    return samples


def write_manifest(samples: Iterable[Sample], path: Union[str, Path]) -> None:
    """Write samples back out in the manifest wire format (UTF-8, LF)."""
    lines = []
    for s in samples:
        row: dict = {"id": s.id, "claim": s.claim, "image": s.image_ref}
        if s.description is not None:
            row["description"] = s.description
        if s.gold is not None:
            row["gold"] = s.gold.value
        lines.append(json.dumps(row, ensure_ascii=False))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def validate_images(samples: Sequence[Sample]) -> None:
    """Check every sample's image resolves to a readable file; raise otherwise."""
    bad = [
        s.id
        for s in samples
        if not (s.image_path.is_file() and os.access(s.image_path, os.R_OK))
    ]
    if bad:
        raise ConfigError(f"unreadable image for samples: {', '.join(bad)}")


@dataclass(frozen=True)
class RunConfig:
    """Everything that identifies one experiment run.

    sources may be empty, which means the model runs on internal knowledge
    only. temperature is the determinism knob forwarded to the backend; 0.0
    is the most deterministic setting.
    """

    scheme: Scheme
    strategy: Strategy
    sources: tuple[SourceKind, ...] = ()
    assembly_mode: AssemblyMode = AssemblyMode.CONDITIONAL
    token_budget: int = 6000
    concurrency_limit: int = 4
    temperature: float = 0.0
    cache_dir: Path = Path("cache")
    output_dir: Path = Path("out")
    run_id: str = ""

    def __post_init__(self):
        if len(set(self.sources)) != len(self.sources):
            raise ConfigError(f"duplicate sources in run config: {self.sources}")
        if self.token_budget < 256:
            raise ConfigError(f"token_budget must be >= 256, got {self.token_budget}")
        if self.concurrency_limit < 1:
            raise ConfigError("concurrency_limit must be a positive integer")
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "cache_dir", Path(self.cache_dir))
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        if not self.run_id:
            object.__setattr__(self, "run_id", self.default_run_id())

    def sources_label(self) -> str:
        if not self.sources:
            return "internal"
        if set(self.sources) == set(SOURCE_PRIORITY):
            return "combination"
        return "+".join(s.value for s in self.sources)

    def default_run_id(self) -> str:
        return "-".join(
            (
                self.scheme.value,
                self.strategy.value.lower(),
                self.sources_label(),
                self.assembly_mode.value,
            )
        )

    def snapshot(self) -> dict:
        """Semantic identity of the run, embedded in its record.

        Deliberately excludes paths and the concurrency knob: neither affects
        results, and resumption must work from a different working directory.
        """
        return {
            "run_id": self.run_id,
            "scheme": self.scheme.value,
            "strategy": self.strategy.value,
            "sources": [s.value for s in self.sources],
            "assembly_mode": self.assembly_mode.value,
            "token_budget": self.token_budget,
            "temperature": self.temperature,
        }


def parse_sources(value) -> tuple[SourceKind, ...]:
    """Parse a sources spec: 'internal', 'combination', or a list of slugs."""
    if value is None:
        return ()
    if isinstance(value, str):
        word = value.strip().lower()
        if word in ("", "internal", "none"):
            return ()
        if word in ("combination", "all"):
            return SOURCE_PRIORITY
        value = [part.strip() for part in word.split("+")]
    kinds = []
    for item in value:
        if isinstance(item, SourceKind):
            kinds.append(item)
            continue
        slug = str(item).strip().lower()
        for kind in SourceKind:
            if kind.value == slug:
                kinds.append(kind)
                break
        else:
            raise ConfigError(f"unknown evidence source: {item!r}")
    if len(set(kinds)) != len(kinds):
        raise ConfigError(f"duplicate sources: {value!r}")
    return tuple(kinds)
