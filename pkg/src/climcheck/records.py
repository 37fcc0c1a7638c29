"""Run records: the per-sample ledger a verification run leaves behind.

A record is JSON lines: one entry per sample in manifest order, then a final
summary line. The format is append-friendly so an interrupted run can resume
by reading back what it already wrote. Timestamps live in a separate
meta.json sidecar so record files stay byte-identical across reruns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, TextIO, Union

from .domain import ClimcheckError, Label, Scheme, parse_gold, parse_label
from .inference import Fallback, FallbackReason, Verdict

RECORD_VERSION = 1


class RecordError(ClimcheckError):
    """A run record is malformed or inconsistent with the manifest."""


def _outcome_to_json(outcome: Union[Verdict, Fallback]) -> dict:
    if isinstance(outcome, Verdict):
        row: dict = {
            "label": outcome.label.value,
            "confidence": outcome.confidence,
            "justification": outcome.justification,
        }
        if outcome.drafts:
            row["drafts"] = list(outcome.drafts)
        return {"verdict": row}
    return {"fallback": {"reason": outcome.reason.value, "raw_text": outcome.raw_text}}


def _outcome_from_json(row: dict, scheme: Scheme) -> Union[Verdict, Fallback]:
    if "verdict" in row:
        v = row["verdict"]
        return Verdict(
            label=parse_label(v["label"], scheme),
            confidence=v.get("confidence"),
            justification=v.get("justification", ""),
            drafts=tuple(v.get("drafts", ())),
        )
    if "fallback" in row:
        f = row["fallback"]
        return Fallback(FallbackReason(f["reason"]), f.get("raw_text", ""))
    raise RecordError(f"entry outcome is neither verdict nor fallback: {row}")


@dataclass(frozen=True)
class SampleEntry:
    """Everything recorded about one sample in one run."""

    sample_id: str
    outcome: Union[Verdict, Fallback]
    source_success: dict = field(default_factory=dict)  # source slug -> bool
    est_tokens: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_s: float = 0.0
    gold: Optional[Label] = None

    @property
    def rejected(self) -> bool:
        return isinstance(self.outcome, Fallback)

    def to_json(self) -> dict:
        row = {
            "sample_id": self.sample_id,
            "source_success": dict(self.source_success),
            "est_tokens": self.est_tokens,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "latency_s": self.latency_s,
            "gold": self.gold.value if self.gold else None,
        }
        row.update(_outcome_to_json(self.outcome))
        return row

    @classmethod
    def from_json(cls, row: dict, scheme: Scheme) -> "SampleEntry":
        gold = row.get("gold")
        return cls(
            sample_id=row["sample_id"],
            outcome=_outcome_from_json(row, scheme),
            source_success=dict(row.get("source_success", {})),
            est_tokens=int(row.get("est_tokens", 0)),
            prompt_tokens=int(row.get("prompt_tokens", 0)),
            completion_tokens=int(row.get("completion_tokens", 0)),
            latency_s=float(row.get("latency_s", 0.0)),
            gold=parse_gold(gold) if gold else None,
        )


@dataclass
class RunRecord:
    """A parsed record file: config snapshot, entries, completion state."""

    config: dict
    entries: list = field(default_factory=list)
    degraded: bool = False
    complete: bool = False

    @property
    def scheme(self) -> Scheme:
        return Scheme(self.config["scheme"])

    @property
    def run_id(self) -> str:
        return self.config["run_id"]


def dump_line(row: dict) -> str:
    return json.dumps(row, ensure_ascii=False, sort_keys=True)


def write_entry(fh: TextIO, entry: SampleEntry) -> None:
    fh.write(dump_line(entry.to_json()) + "\n")
    fh.flush()


def write_header(fh: TextIO, config_snapshot: dict) -> None:
    fh.write(dump_line({"config": config_snapshot, "v": RECORD_VERSION}) + "\n")
    fh.flush()


def write_summary(fh: TextIO, *, total: int, degraded: bool) -> None:
    fh.write(dump_line({"summary": {"degraded": degraded, "total": total}}) + "\n")
    fh.flush()


def read_record(path: Union[str, Path]) -> RunRecord:
    """Parse a record file, complete or not.

    An interrupted run leaves a header and some entries; complete stays
    False until the summary line is present and consistent.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise RecordError(f"cannot read record {path}: {exc}") from exc
    if not lines:
        raise RecordError(f"record {path} is empty")

    head = json.loads(lines[0])
    if "config" not in head or head.get("v") != RECORD_VERSION:
        raise RecordError(f"record {path} has no valid header line")
    record = RunRecord(config=head["config"])
    scheme = record.scheme

    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        row = json.loads(line)
        if "summary" in row:
            summary = row["summary"]
            if summary.get("total") != len(record.entries):
                raise RecordError(
                    f"record {path} summary says {summary.get('total')} entries, "
                    f"found {len(record.entries)}"
                )
            record.degraded = bool(summary.get("degraded"))
            record.complete = True
            break
        try:
            record.entries.append(SampleEntry.from_json(row, scheme))
        except (KeyError, ValueError) as exc:
            raise RecordError(f"{path}:{lineno}: bad entry: {exc}") from exc
    return record


def write_record(record: RunRecord, path: Union[str, Path]) -> None:
    """Write a complete record in one shot (used by tests and evaluate)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        write_header(fh, record.config)
        for entry in record.entries:
            write_entry(fh, entry)
        write_summary(fh, total=len(record.entries), degraded=record.degraded)


def write_meta(path: Union[str, Path], *, run_id: str, started: str, finished: Optional[str]) -> None:
    row = {"run_id": run_id, "started": started, "finished": finished}
    Path(path).write_text(
        json.dumps(row, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
        newline="\n",
    )


def backend_failures(entries: Sequence[SampleEntry]) -> int:
    return sum(
        1
        for e in entries
        if isinstance(e.outcome, Fallback)
        and e.outcome.reason is FallbackReason.BACKEND_FAILURE
    )
