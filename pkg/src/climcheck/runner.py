"""Orchestration: drive retrieval, assembly, prompting, and inference per
sample with bounded concurrency, persist the run record, and emit reports.

Records are append-only JSON lines flushed in manifest order, so an
interrupted run resumes exactly where it stopped and a finished run is never
re-executed.
"""

from __future__ import annotations

import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import yaml

from .assembly import AssembledContext, assemble
from .domain import (
    ClimcheckError,
    ConfigError,
    RunConfig,
    Sample,
    Scheme,
    Strategy,
    AssemblyMode,
    parse_sources,
    validate_images,
)
from .inference import Backend, BackendError, Fallback, FallbackReason, complete, parse_verdict
from .metrics import (
    EvalReport,
    build_report,
    write_confusion_csv,
    write_report_json,
    write_summary_txt,
)
from .prompting import build_verdict_prompt
from .records import (
    RecordError,
    RunRecord,
    SampleEntry,
    backend_failures,
    read_record,
    write_entry,
    write_header,
    write_meta,
    write_summary,
)
from .retrieval import EvidenceBundle, EvidenceCache, Retriever

log = logging.getLogger(__name__)


def _now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def run_paths(config: RunConfig) -> dict:
    out = Path(config.output_dir) / config.run_id
    return {
        "dir": out,
        "record": out / "record.jsonl",
        "meta": out / "meta.json",
        "report": out / "report.json",
        "confusion": out / "confusion.csv",
        "summary": out / "summary.txt",
    }


def _process_sample(
    sample: Sample,
    config: RunConfig,
    backend: Backend,
    retriever: Optional[Retriever],
    catalog: Optional[dict],
    sleep: Callable[[float], None],
) -> SampleEntry:
    if config.sources and retriever is not None:
        bundle = retriever.gather(sample, config.sources)
    else:
        bundle = EvidenceBundle(sample_id=sample.id, results={})
    context: AssembledContext = assemble(bundle, config)
    prompt = build_verdict_prompt(
        sample, context, config.strategy, config.scheme, catalog
    )
    source_success = {
        source.value: result.success for source, result in bundle.results.items()
    }
    try:
        response = complete(
            prompt, backend, temperature=config.temperature, sleep=sleep
        )
    except BackendError as exc:
        log.warning("backend failed for %s: %s", sample.id, exc)
        return SampleEntry(
            sample_id=sample.id,
            outcome=Fallback(FallbackReason.BACKEND_FAILURE, str(exc)),
            source_success=source_success,
            est_tokens=context.est_tokens,
            gold=sample.gold,
        )
    return SampleEntry(
        sample_id=sample.id,
        outcome=parse_verdict(response, config.scheme),
        source_success=source_success,
        est_tokens=context.est_tokens,
        prompt_tokens=response.prompt_tokens,
        completion_tokens=response.completion_tokens,
        latency_s=response.latency_s,
        gold=sample.gold,
    )


def _resume_state(
    record_path: Path, config: RunConfig, samples: Sequence[Sample]
) -> tuple[Optional[RunRecord], list[SampleEntry]]:
    """Returns (completed record, already-done entries). Raises on mismatch."""
    if not record_path.exists():
        return None, []
    record = read_record(record_path)
    if record.config != config.snapshot():
        raise ConfigError(
            f"existing record {record_path} was produced by a different "
            "configuration; move it away or change the run id"
        )
    ids = [s.id for s in samples]
    recorded = [e.sample_id for e in record.entries]
    if recorded != ids[: len(recorded)]:
        raise RecordError(
            f"record {record_path} does not match the manifest order; "
            "it cannot be resumed against this manifest"
        )
    if record.complete:
        if len(recorded) != len(ids):
            raise RecordError(
                f"record {record_path} is complete but covers {len(recorded)} "
                f"of {len(ids)} manifest samples"
            )
        return record, record.entries
    return None, record.entries


def run_experiment(
    config: RunConfig,
    samples: Sequence[Sample],
    backend: Backend,
    clients: Optional[dict] = None,
    *,
    refresh: bool = False,
    catalog: Optional[dict] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> RunRecord:
    """Execute one run over the manifest, resuming any partial record."""
    if not samples:
        raise ConfigError("manifest has no samples")
    paths = run_paths(config)
    paths["dir"].mkdir(parents=True, exist_ok=True)

    done_record, done = _resume_state(paths["record"], config, samples)
    if done_record is not None:
        log.info("run %s already complete; skipping", config.run_id)
        return done_record

    pending = list(samples[len(done):])
    validate_images(pending)

    retriever = None
    if config.sources:
        if not clients:
            raise ClimcheckError("run config requests sources but no clients given")
        missing = [s.value for s in config.sources if s not in clients]
        if missing:
            raise ClimcheckError(f"no client configured for: {', '.join(missing)}")
        retriever = Retriever(
            clients,
            EvidenceCache(config.cache_dir),
            refresh=refresh,
            sleep=sleep,
        )

    started = _now_iso()
    write_meta(paths["meta"], run_id=config.run_id, started=started, finished=None)

    mode = "a" if done else "w"
    entries: list[SampleEntry] = list(done)
    with paths["record"].open(mode, encoding="utf-8", newline="\n") as fh:
        if not done:
            write_header(fh, config.snapshot())
        with ThreadPoolExecutor(max_workers=config.concurrency_limit) as pool:
            futures = [
                pool.submit(
                    _process_sample, sample, config, backend, retriever, catalog, sleep
                )
                for sample in pending
            ]
            # Flush strictly in manifest order: entry i is written only once
            # every earlier entry is on disk, which keeps partial records
            # resumable prefixes.
            for future in futures:
                entry = future.result()
                entries.append(entry)
                write_entry(fh, entry)
        degraded = backend_failures(entries) * 2 > len(entries)
        write_summary(fh, total=len(entries), degraded=degraded)

    write_meta(
        paths["meta"], run_id=config.run_id, started=started, finished=_now_iso()
    )
    if degraded:
        log.warning(
            "run %s degraded: more than half of samples hit backend failures",
            config.run_id,
        )
    return RunRecord(
        config=config.snapshot(), entries=entries, degraded=degraded, complete=True
    )


def write_run_reports(record: RunRecord, out_dir: Union[str, Path]) -> EvalReport:
    """Emit report.json, confusion.csv, and summary.txt for one run."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = build_report(record)
    write_report_json(report, out_dir / "report.json")
    if report.confusion is not None:
        write_confusion_csv(report, out_dir / "confusion.csv")
    write_summary_txt([report], out_dir / "summary.txt")
    return report


def sweep(
    configs: Sequence[RunConfig],
    samples: Sequence[Sample],
    backend: Backend,
    clients: Optional[dict] = None,
    *,
    refresh: bool = False,
    catalog: Optional[dict] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[list[RunRecord], list[EvalReport]]:
    """Run several configurations and emit one combined summary grid."""
    if not configs:
        raise ConfigError("sweep needs at least one run configuration")
    run_ids = [c.run_id for c in configs]
    dupes = sorted({rid for rid in run_ids if run_ids.count(rid) > 1})
    if dupes:
        raise ConfigError(f"duplicate run ids in sweep: {', '.join(dupes)}")
    if len({str(c.cache_dir) for c in configs}) > 1:
        raise ConfigError("sweep runs must share one cache directory")
    if len({str(c.output_dir) for c in configs}) > 1:
        raise ConfigError("sweep runs must share one output directory")

    records: list[RunRecord] = []
    reports: list[EvalReport] = []
    for config in configs:
        record = run_experiment(
            config,
            samples,
            backend,
            clients,
            refresh=refresh,
            catalog=catalog,
            sleep=sleep,
        )
        records.append(record)
        reports.append(write_run_reports(record, run_paths(config)["dir"]))
    write_summary_txt(reports, Path(configs[0].output_dir) / "summary.txt")
    return records, reports


def _config_from_row(row: dict, defaults: dict) -> RunConfig:
    merged = {**defaults, **row}
    try:
        scheme = Scheme(str(merged.get("scheme", "4class")))
        strategy_raw = str(merged.get("strategy", "CoT"))
        strategy = next(
            (s for s in Strategy if s.value.lower() == strategy_raw.lower()), None
        )
        if strategy is None:
            raise ConfigError(f"unknown strategy: {strategy_raw!r}")
        mode = AssemblyMode(str(merged.get("assembly_mode", "conditional")))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(
        scheme=scheme,
        strategy=strategy,
        sources=parse_sources(merged.get("sources")),
        assembly_mode=mode,
        token_budget=int(merged.get("token_budget", 6000)),
        concurrency_limit=int(merged.get("concurrency", defaults.get("concurrency", 4))),
        temperature=float(merged.get("temperature", 0.0)),
        cache_dir=Path(defaults.get("cache_dir", "cache")),
        output_dir=Path(defaults.get("output_dir", "out")),
        run_id=str(merged.get("run_id", "")),
    )


def load_run_configs(
    path: Union[str, Path],
    *,
    cache_dir: Union[str, Path],
    output_dir: Union[str, Path],
    concurrency: int,
) -> list[RunConfig]:
    """Parse a YAML or JSON config file into run configurations.

    Two sections, either or both: `runs`, a list of explicit run settings,
    and `matrix`, whose schemes/strategies/sources lists are expanded as a
    cross-product. Paths and concurrency come from the command line, not the
    file, so one file works across machines.
    """
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")

    defaults = {
        "cache_dir": str(cache_dir),
        "output_dir": str(output_dir),
        "concurrency": concurrency,
    }
    defaults.update(data.get("defaults") or {})

    configs: list[RunConfig] = []
    for row in data.get("runs") or []:
        if not isinstance(row, dict):
            raise ConfigError(f"config {path}: each run must be a mapping")
        configs.append(_config_from_row(row, defaults))

    matrix = data.get("matrix")
    if matrix:
        schemes = matrix.get("schemes") or [matrix.get("scheme", "4class")]
        strategies = matrix.get("strategies") or [matrix.get("strategy", "CoT")]
        sources_list = matrix.get("sources") or ["internal"]
        for scheme, strategy, sources in itertools.product(
            schemes, strategies, sources_list
        ):
            row = {"scheme": scheme, "strategy": strategy, "sources": sources}
            for key in ("assembly_mode", "token_budget", "temperature"):
                if key in matrix:
                    row[key] = matrix[key]
            configs.append(_config_from_row(row, defaults))

    if not configs:
        raise ConfigError(f"config {path} defines no runs")
    return configs
