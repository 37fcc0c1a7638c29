"""Ensemble gold-label annotation.

Each sample is labeled by several role prompts and the votes are resolved by
strict majority: 3 of 4 in the four-class scheme, 4 of 5 in the two-class
scheme (which adds a description-only voter). Samples with no majority go to
an undecided list instead of the labeled manifest.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from .domain import Label, Sample, Scheme
from .inference import (
    Backend,
    BackendError,
    Fallback,
    FallbackReason,
    Verdict,
    complete,
    parse_verdict,
)
from .prompting import IMAGE_ROLES, Role, build_role_prompt

log = logging.getLogger(__name__)

ROLE_SETS: dict[Scheme, tuple[Role, ...]] = {
    Scheme.FOUR_CLASS: IMAGE_ROLES,
    Scheme.TWO_CLASS: IMAGE_ROLES + (Role.DESCRIPTION_ONLY,),
}

VOTE_THRESHOLDS: dict[Scheme, int] = {
    Scheme.FOUR_CLASS: 3,
    Scheme.TWO_CLASS: 4,
}


def majority_vote(votes: Sequence[Optional[Label]], threshold: int) -> Optional[Label]:
    """Return the label reaching the threshold, or None.

    None entries are fallback votes and count for no label. The threshold
    must demand a strict majority so the winner is unique.
    """
    if not votes:
        raise ValueError("majority_vote needs at least one vote")
    if threshold < len(votes) // 2 + 1:
        raise ValueError(
            f"threshold {threshold} is not a strict majority of {len(votes)} votes"
        )
    counts = Counter(vote for vote in votes if vote is not None)
    for label, count in counts.most_common(1):
        if count >= threshold:
            return label
    return None


@dataclass(frozen=True)
class VoteRecord:
    """How one sample was voted on: every role's ballot plus the outcome."""

    sample_id: str
    votes: tuple  # of (Role, Label | Fallback)
    decided: Optional[Label]
    agreement: int

    def to_json(self) -> dict:
        ballots = []
        for role, outcome in self.votes:
            if isinstance(outcome, Fallback):
                ballots.append({"role": role.value, "fallback": outcome.reason.value})
            else:
                ballots.append({"role": role.value, "label": outcome.label.value})
        return {
            "sample_id": self.sample_id,
            "votes": ballots,
            "decided": self.decided.value if self.decided else None,
            "agreement": self.agreement,
        }


@dataclass(frozen=True)
class UndecidedRecord:
    sample_id: str
    reason: str

    def to_json(self) -> dict:
        return {"sample_id": self.sample_id, "reason": self.reason}


def _vote_sample(
    sample: Sample,
    scheme: Scheme,
    backend: Backend,
    catalog: Optional[dict],
    sleep: Callable[[float], None],
) -> VoteRecord:
    votes = []
    for role in ROLE_SETS[scheme]:
        prompt = build_role_prompt(sample, role, scheme, catalog)
        try:
            response = complete(prompt, backend, sleep=sleep)
            outcome = parse_verdict(response, scheme)
        except BackendError as exc:
            log.warning("role %s failed for %s: %s", role.value, sample.id, exc)
            outcome = Fallback(FallbackReason.BACKEND_FAILURE, str(exc))
        votes.append((role, outcome))

    ballots = [
        outcome.label if isinstance(outcome, Verdict) else None
        for _, outcome in votes
    ]
    decided = majority_vote(ballots, VOTE_THRESHOLDS[scheme])
    agreement = max(Counter(b for b in ballots if b is not None).values(), default=0)
    return VoteRecord(
        sample_id=sample.id,
        votes=tuple(votes),
        decided=decided,
        agreement=agreement,
    )


def extract_labels(
    samples: Sequence[Sample],
    scheme: Scheme,
    backend: Backend,
    *,
    catalog: Optional[dict] = None,
    concurrency: int = 4,
    sleep: Callable[[float], None] = None,  # type: ignore[assignment]
) -> tuple[list[Sample], list[VoteRecord], list[UndecidedRecord]]:
    """Vote-label every sample. Returns (labeled, vote records, undecided).

    Output order follows the input manifest regardless of scheduling. Labeled
    samples carry the decided label in their gold field; everything else goes
    to undecided with a reason.
    """
    if sleep is None:
        import time

        sleep = time.sleep

    jobs: dict[str, VoteRecord] = {}
    skipped: dict[str, UndecidedRecord] = {}
    votable = []
    for sample in samples:
        if scheme is Scheme.TWO_CLASS and not sample.description:
            skipped[sample.id] = UndecidedRecord(sample.id, "missing description")
        else:
            votable.append(sample)

    if votable:
        with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
            futures = {
                sample.id: pool.submit(
                    _vote_sample, sample, scheme, backend, catalog, sleep
                )
                for sample in votable
            }
            for sample_id, future in futures.items():
                jobs[sample_id] = future.result()

    labeled: list[Sample] = []
    records: list[VoteRecord] = []
    undecided: list[UndecidedRecord] = []
    for sample in samples:
        if sample.id in skipped:
            undecided.append(skipped[sample.id])
            continue
        record = jobs[sample.id]
        records.append(record)
        if record.decided is None:
            undecided.append(UndecidedRecord(sample.id, "no majority"))
        else:
            labeled.append(dataclasses.replace(sample, gold=record.decided))
    return labeled, records, undecided


def write_vote_records(records: Sequence[VoteRecord], path: Union[str, Path]) -> None:
    lines = [json.dumps(r.to_json(), ensure_ascii=False) for r in records]
    Path(path).write_text(
        "\n".join(lines) + ("\n" if lines else ""), encoding="utf-8", newline="\n"
    )


def write_undecided(records: Sequence[UndecidedRecord], path: Union[str, Path]) -> None:
    lines = [json.dumps(r.to_json(), ensure_ascii=False) for r in records]
    Path(path).write_text(
        "\n".join(lines) + ("\n" if lines else ""), encoding="utf-8", newline="\n"
    )
