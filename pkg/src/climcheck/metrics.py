"""Evaluation metrics and report emission.

Internal values are exact ratios; rounding happens only when a report is
formatted. Rejected samples (fallback outcomes) are counted by the rejection
rate and excluded from accuracy, macro scores, and the confusion matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Optional, Sequence, Union

from .domain import ClimcheckError, Label, Scheme, gold_for_scheme, scheme_label_order
from .inference import Verdict
from .records import RunRecord

class MetricsError(ClimcheckError):
    """Metrics were asked for something undefined (empty input, no golds)."""


@dataclass(frozen=True)
class ConfusionMatrix:
    """Square count matrix indexed (gold row, predicted column)."""

    labels: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]

    @classmethod
    def from_pairs(
        cls, golds: Sequence[Label], preds: Sequence[Label], scheme: Scheme
    ) -> "ConfusionMatrix":
        if len(golds) != len(preds):
            raise MetricsError("gold and prediction lists differ in length")
        labels = scheme_label_order(scheme)
        index = {name: i for i, name in enumerate(labels)}
        grid = [[0] * len(labels) for _ in labels]
        for gold, pred in zip(golds, preds):
            grid[index[gold.value]][index[pred.value]] += 1
        return cls(labels=labels, counts=tuple(tuple(row) for row in grid))

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    @property
    def trace(self) -> int:
        return sum(self.counts[i][i] for i in range(len(self.labels)))

    def row_sum(self, i: int) -> int:
        return sum(self.counts[i])

    def col_sum(self, j: int) -> int:
        return sum(row[j] for row in self.counts)

    def to_json(self) -> dict:
        return {"labels": list(self.labels), "counts": [list(r) for r in self.counts]}


def rejection_rate(fallbacks: int, total: int) -> float:
    """Fraction of samples that produced a fallback response."""
    if total <= 0:
        raise MetricsError("rejection rate over zero samples is undefined")
    if fallbacks < 0 or fallbacks > total:
        raise MetricsError(f"impossible fallback count {fallbacks} of {total}")
    return fallbacks / total


def accuracy(preds: Sequence[Label], golds: Sequence[Label]) -> float:
    """Exact-match accuracy as a percentage. Caller excludes rejections."""
    if len(preds) != len(golds):
        raise MetricsError("prediction and gold lists differ in length")
    if not preds:
        raise MetricsError("accuracy over zero samples is undefined")
    matches = sum(1 for p, g in zip(preds, golds) if p == g)
    return 100.0 * matches / len(preds)


def macro_scores(confusion: ConfusionMatrix) -> tuple[float, float, float]:
    """Unweighted per-class mean of precision, recall, F1, as fractions.

    Per-class 0/0 defines to 0. Classes absent from both gold and prediction
    are left out of the mean entirely.
    """
    if confusion.total == 0:
        raise MetricsError("macro scores over an empty confusion matrix")
    precisions, recalls, f1s = [], [], []
    for i in range(len(confusion.labels)):
        gold_n = confusion.row_sum(i)
        pred_n = confusion.col_sum(i)
        if gold_n == 0 and pred_n == 0:
            continue
        tp = confusion.counts[i][i]
        precision = tp / pred_n if pred_n else 0.0
        recall = tp / gold_n if gold_n else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)
    n = len(precisions)
    return sum(precisions) / n, sum(recalls) / n, sum(f1s) / n


def label_distribution(preds: Sequence[Label]) -> dict:
    dist: dict = {}
    for pred in preds:
        dist[pred.value] = dist.get(pred.value, 0) + 1
    return dist


@dataclass(frozen=True)
class EvalReport:
    """All metrics for one run, numeric and exact; formatting comes later."""

    run_id: str
    scheme: Scheme
    config: dict
    total_samples: int
    rejected: int
    rejection: float
    evaluated: int
    total_tokens: int
    avg_prompt_tokens: float
    avg_total_tokens: float
    avg_time_s: float
    success_rates: dict = field(default_factory=dict)
    accuracy_pct: Optional[float] = None
    macro_precision_pct: Optional[float] = None
    macro_recall_pct: Optional[float] = None
    macro_f1_pct: Optional[float] = None
    confusion: Optional[ConfusionMatrix] = None
    label_dist: dict = field(default_factory=dict)
    confidence_avg: Optional[float] = None
    evaluation_error: Optional[str] = None


def fmt2(value: Optional[float]) -> str:
    """Two-decimal fixed-point with half-up rounding: 69.6 -> '69.60'."""
    if value is None:
        return "n/a"
    return str(Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def fmt1(value: Optional[float]) -> str:
    if value is None:
        return "n/a"
    return str(Decimal(repr(value)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def fmt_rejection(fraction: float) -> str:
    """Rejection rate as a one-decimal percentage: 0.026 -> '2.6%'."""
    return fmt1(100.0 * fraction) + "%"


def fmt_tokens(count: int) -> str:
    return f"{count:,}"


def build_report(record: RunRecord, scheme: Optional[Scheme] = None) -> EvalReport:
    """Fold a run record into an EvalReport.

    Evaluation fields need gold labels; without any, they stay None and
    evaluation_error says why. Token and time accounting never depends on
    golds.
    """
    if scheme is None:
        scheme = record.scheme
    entries = record.entries
    if not entries:
        raise MetricsError("cannot report on a record with no entries")

    total = len(entries)
    rejected = sum(1 for e in entries if e.rejected)
    total_tokens = sum(e.prompt_tokens + e.completion_tokens for e in entries)
    avg_prompt = sum(e.prompt_tokens for e in entries) / total
    avg_all = total_tokens / total
    avg_time = sum(e.latency_s for e in entries) / total

    sources: dict = {}
    for entry in entries:
        for slug, ok in entry.source_success.items():
            seen, hits = sources.get(slug, (0, 0))
            sources[slug] = (seen + 1, hits + (1 if ok else 0))
    success = {slug: hits / seen for slug, (seen, hits) in sorted(sources.items())}

    confidences = [
        e.outcome.confidence
        for e in entries
        if isinstance(e.outcome, Verdict) and e.outcome.confidence is not None
    ]
    confidence_avg = sum(confidences) / len(confidences) if confidences else None

    pairs = []
    for entry in entries:
        if entry.rejected:
            continue
        gold = gold_for_scheme(entry.gold, scheme)
        if gold is None:
            continue
        pairs.append((gold, entry.outcome.label))

    base = dict(
        run_id=record.run_id,
        scheme=scheme,
        config=record.config,
        total_samples=total,
        rejected=rejected,
        rejection=rejection_rate(rejected, total),
        evaluated=len(pairs),
        total_tokens=total_tokens,
        avg_prompt_tokens=avg_prompt,
        avg_total_tokens=avg_all,
        avg_time_s=avg_time,
        success_rates=success,
        confidence_avg=confidence_avg,
    )
    if not pairs:
        return EvalReport(
            **base, evaluation_error="no evaluable samples carry a gold label"
        )

    golds = [g for g, _ in pairs]
    preds = [p for _, p in pairs]
    confusion = ConfusionMatrix.from_pairs(golds, preds, scheme)
    precision, recall, f1 = macro_scores(confusion)
    return EvalReport(
        **base,
        accuracy_pct=accuracy(preds, golds),
        macro_precision_pct=100.0 * precision,
        macro_recall_pct=100.0 * recall,
        macro_f1_pct=100.0 * f1,
        confusion=confusion,
        label_dist=label_distribution(preds),
    )


def report_to_json(report: EvalReport) -> dict:
    return {
        "run_id": report.run_id,
        "scheme": report.scheme.value,
        "config": report.config,
        "metrics": {
            "total_samples": report.total_samples,
            "evaluated": report.evaluated,
            "rejected": report.rejected,
            "rejection_rate": report.rejection,
            "accuracy": report.accuracy_pct,
            "macro_precision": report.macro_precision_pct,
            "macro_recall": report.macro_recall_pct,
            "macro_f1": report.macro_f1_pct,
            "confidence_avg": report.confidence_avg,
            "total_tokens": report.total_tokens,
            "avg_prompt_tokens": report.avg_prompt_tokens,
            "avg_total_tokens": report.avg_total_tokens,
            "avg_time_s": report.avg_time_s,
        },
        "display": {
            "accuracy": fmt2(report.accuracy_pct),
            "macro_precision": fmt2(report.macro_precision_pct),
            "macro_recall": fmt2(report.macro_recall_pct),
            "macro_f1": fmt2(report.macro_f1_pct),
            "rejection_rate": fmt_rejection(report.rejection),
            "confidence_avg": fmt2(report.confidence_avg),
            "total_tokens": fmt_tokens(report.total_tokens),
            "avg_prompt_tokens": fmt1(report.avg_prompt_tokens),
            "avg_time_s": fmt2(report.avg_time_s),
        },
        "label_distribution": report.label_dist,
        "success_rates": report.success_rates,
        "confusion": report.confusion.to_json() if report.confusion else None,
        "evaluation_error": report.evaluation_error,
    }


def write_report_json(report: EvalReport, path: Union[str, Path]) -> None:
    Path(path).write_text(
        json.dumps(report_to_json(report), ensure_ascii=False, indent=2, sort_keys=True)
        + "\n",
        encoding="utf-8",
        newline="\n",
    )


def write_confusion_csv(report: EvalReport, path: Union[str, Path]) -> None:
    if report.confusion is None:
        raise MetricsError("no confusion matrix to write")
    confusion = report.confusion
    lines = ["gold\\predicted," + ",".join(confusion.labels)]
    for label, row in zip(confusion.labels, confusion.counts):
        lines.append(label + "," + ",".join(str(n) for n in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


_SUMMARY_COLUMNS = (
    ("Run", 34, "<"),
    ("Accuracy", 8, ">"),
    ("Precision", 9, ">"),
    ("Recall", 7, ">"),
    ("F1", 7, ">"),
    ("Rejection", 9, ">"),
    ("Confidence", 10, ">"),
    ("Total Tokens", 12, ">"),
    ("Avg Prompt", 10, ">"),
    ("Avg Time (s)", 12, ">"),
)


def _summary_cells(row: dict) -> tuple[str, ...]:
    d = row["display"]
    return (
        row["run_id"],
        d["accuracy"],
        d["macro_precision"],
        d["macro_recall"],
        d["macro_f1"],
        d["rejection_rate"],
        d["confidence_avg"],
        d["total_tokens"],
        d["avg_prompt_tokens"],
        d["avg_time_s"],
    )


def summary_lines_from_json(rows: Sequence[dict]) -> list[str]:
    """Fixed-width grid over serialized reports, one row per run."""
    if not rows:
        raise MetricsError("summary over zero reports")
    header = "  ".join(f"{name:{align}{width}}" for name, width, align in _SUMMARY_COLUMNS)
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            "  ".join(
                f"{cell:{align}{width}}"
                for cell, (_, width, align) in zip(_summary_cells(row), _SUMMARY_COLUMNS)
            )
        )
    return lines


def summary_lines(reports: Sequence[EvalReport]) -> list[str]:
    return summary_lines_from_json([report_to_json(r) for r in reports])


def write_summary_txt(reports: Sequence[EvalReport], path: Union[str, Path]) -> None:
    Path(path).write_text(
        "\n".join(summary_lines(reports)) + "\n", encoding="utf-8", newline="\n"
    )
