"""Evidence assembly: render source results as text and fit them to a budget.

Two modes. Conditional walks sources in priority order and stops at the first
block that needs trimming, which keeps the output a prefix of the priority
order and monotone under budget growth. Concat keeps every successful source
and trims from the least reliable end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .domain import AssemblyMode, ClimcheckError, RunConfig, SourceKind, priority_rank
from .retrieval import EvidenceBundle, EvidenceItem, SourceResult


def estimate_tokens(text: str) -> int:
    """Cheap token estimate: one token per four bytes of UTF-8, rounded up."""
    return math.ceil(len(text.encode("utf-8")) / 4)


def _item_line(item: EvidenceItem) -> str:
    tag = None
    if item.match_kind is not None:
        tag = item.match_kind.value
    elif item.verdict_hint:
        tag = item.verdict_hint
    head = f"- [{tag}] " if tag else "- "
    line = f"{head}{item.title} — {item.snippet}"
    if item.url:
        line += f" ({item.url})"
    return line


def render_block(result: SourceResult, keep_items: Optional[int] = None) -> str:
    """Render one successful source as a plain-text block.

    keep_items limits how many leading items appear; None keeps them all.
    Rendering a failed result is a programming error, not a data condition.
    """
    if not result.success:
        raise ClimcheckError(
            f"cannot render unsuccessful result for {result.source.value}"
        )
    items = result.items if keep_items is None else result.items[:keep_items]
    lines = [f"### {result.source.display_name}"]
    lines.extend(_item_line(item) for item in items)
    if result.about_image:
        lines.append(f"About the image: {result.about_image}")
    return "\n".join(lines)


@dataclass(frozen=True)
class AssembledContext:
    """Budget-trimmed evidence, in priority order, ready for the prompt."""

    blocks: tuple[tuple[SourceKind, str], ...]
    est_tokens: int
    dropped: tuple[SourceKind, ...]

    @property
    def text(self) -> str:
        return "\n\n".join(body for _, body in self.blocks)


def _fit_block(result: SourceResult, room: int) -> Optional[str]:
    """Largest rendering of result that fits in room tokens, or None.

    Items are dropped from the tail. A block that had items must keep at
    least one; a block that never had any (image-level finding only) stands
    or falls as-is.
    """
    full = render_block(result)
    if estimate_tokens(full) <= room:
        return full
    for keep in range(len(result.items) - 1, 0, -1):
        text = render_block(result, keep_items=keep)
        if estimate_tokens(text) <= room:
            return text
    return None


def assemble(bundle: EvidenceBundle, config: RunConfig) -> AssembledContext:
    """Select and trim evidence blocks for one sample under the token budget."""
    extra = set(bundle.results) - set(config.sources)
    if extra:
        raise ClimcheckError(
            "bundle has sources outside the run config: "
            + ", ".join(s.value for s in sorted(extra, key=priority_rank))
        )

    ordered = sorted(config.sources, key=priority_rank)
    budget = config.token_budget
    blocks: list[tuple[SourceKind, str]] = []
    dropped: list[SourceKind] = []
    used = 0

    if config.assembly_mode is AssemblyMode.CONDITIONAL:
        exhausted = False
        for source in ordered:
            result = bundle.results.get(source)
            if result is None or not result.success:
                dropped.append(source)
                continue
            if exhausted:
                dropped.append(source)
                continue
            text = render_block(result)
            cost = estimate_tokens(text)
            if used + cost <= budget:
                blocks.append((source, text))
                used += cost
                continue
            # Needs trimming. Whatever happens, nothing lower-priority may
            # follow, or a bigger budget could push it back out again.
            fitted = _fit_block(result, budget - used)
            if fitted is None:
                dropped.append(source)
            else:
                blocks.append((source, fitted))
                used += estimate_tokens(fitted)
            exhausted = True
        return AssembledContext(tuple(blocks), used, tuple(dropped))

    # concat: keep everything successful, then trim from the bottom up
    kept: list[tuple[SourceKind, SourceResult, str]] = []
    for source in ordered:
        result = bundle.results.get(source)
        if result is None or not result.success:
            dropped.append(source)
        else:
            kept.append((source, result, render_block(result)))

    def total(rows) -> int:
        return sum(estimate_tokens(text) for _, _, text in rows)

    while kept and total(kept) > budget:
        source, result, _ = kept[-1]
        room = budget - total(kept[:-1])
        fitted = _fit_block(result, room) if room > 0 else None
        if fitted is None:
            kept.pop()
            dropped.append(source)
        else:
            kept[-1] = (source, result, fitted)
            break

    blocks = [(source, text) for source, _, text in kept]
    used = sum(estimate_tokens(text) for _, text in blocks)
    dropped.sort(key=priority_rank)
    return AssembledContext(tuple(blocks), used, tuple(dropped))


def assemble_all(
    bundles: Sequence[EvidenceBundle], config: RunConfig
) -> dict[str, AssembledContext]:
    return {bundle.sample_id: assemble(bundle, config) for bundle in bundles}
