"""Command line entry points.

Exit codes: 0 success, 2 configuration problems, 3 a run completed but more
than half of its samples hit backend failures (degraded).
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import click

from .annotation import extract_labels, write_undecided, write_vote_records
from .domain import (
    ClimcheckError,
    ConfigError,
    RunConfig,
    Sample,
    Scheme,
    Strategy,
    AssemblyMode,
    load_manifest,
    parse_sources,
    validate_images,
    write_manifest,
)
from .inference import Backend, LiveBackend, ScriptedBackend
from .metrics import fmt2, summary_lines_from_json
from .records import read_record
from .retrieval import EvidenceCache, Retriever, fixture_clients, live_clients, success_rates
from .runner import load_run_configs, run_experiment, run_paths, sweep, write_run_reports

log = logging.getLogger(__name__)


@dataclass
class Invocation:
    manifest: Optional[str]
    config_path: Optional[str]
    cache_dir: str
    out_dir: str
    backend_spec: str
    refresh: bool
    trace: bool
    concurrency: int

    def samples(self) -> list[Sample]:
        if not self.manifest:
            raise ConfigError("--manifest is required for this command")
        return load_manifest(self.manifest)

    def backend(self) -> Backend:
        spec = self.backend_spec
        if spec == "live":
            return LiveBackend(trace=self.trace)
        if spec.startswith("scripted:"):
            root = Path(spec.split(":", 1)[1])
            replies = root / "replies"
            return ScriptedBackend(replies if replies.is_dir() else root)
        raise ConfigError(
            f"unknown backend {spec!r}; expected 'live' or 'scripted:<dir>'"
        )

    def clients(self) -> dict:
        spec = self.backend_spec
        if spec == "live":
            return live_clients()
        if spec.startswith("scripted:"):
            root = Path(spec.split(":", 1)[1])
            return fixture_clients(root / "retrieval")
        raise ConfigError(
            f"unknown backend {spec!r}; expected 'live' or 'scripted:<dir>'"
        )

    def run_configs(self) -> list[RunConfig]:
        if not self.config_path:
            raise ConfigError("--config is required for this command")
        return load_run_configs(
            self.config_path,
            cache_dir=self.cache_dir,
            output_dir=self.out_dir,
            concurrency=self.concurrency,
        )


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except ClimcheckError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


@click.group()
@click.option("--manifest", type=str, default=None, help="JSONL manifest of samples.")
@click.option("--config", "config_path", type=str, default=None, help="Run config file (YAML or JSON).")
@click.option("--cache-dir", type=str, default="cache", show_default=True, help="Evidence cache directory.")
@click.option("--out", "out_dir", type=str, default="out", show_default=True, help="Output directory.")
@click.option("--backend", "backend_spec", type=str, default="live", show_default=True, help="live or scripted:<dir>.")
@click.option("--refresh", is_flag=True, help="Bypass the evidence cache and refetch.")
@click.option("--trace", is_flag=True, help="Log backend requests and replies (credentials redacted).")
@click.option("--concurrency", type=int, default=4, show_default=True, help="Max in-flight samples.")
@click.version_option(package_name="climcheck")
@click.pass_context
def main(ctx, manifest, config_path, cache_dir, out_dir, backend_spec, refresh, trace, concurrency):
    """Verify image-claim pairs for climate disinformation."""
    logging.basicConfig(
        level=logging.INFO if trace else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    ctx.obj = Invocation(
        manifest=manifest,
        config_path=config_path,
        cache_dir=cache_dir,
        out_dir=out_dir,
        backend_spec=backend_spec,
        refresh=refresh,
        trace=trace,
        concurrency=concurrency,
    )


@main.command()
@click.option("--sources", default="combination", show_default=True, help="Sources to prefetch.")
@click.pass_obj
@guarded
def retrieve(inv: Invocation, sources):
    """Prefetch evidence into the cache, no model calls."""
    samples = inv.samples()
    kinds = parse_sources(sources)
    if not kinds:
        raise ConfigError("retrieve needs at least one source")
    retriever = Retriever(
        inv.clients(), EvidenceCache(inv.cache_dir), refresh=inv.refresh
    )
    bundles = [retriever.gather(sample, kinds) for sample in samples]
    rates = success_rates(bundles)
    click.echo(json.dumps({"samples": len(bundles), "success_rates": rates}, indent=2))


@main.command()
@click.option("--scheme", type=click.Choice([s.value for s in Scheme]), default="4class", show_default=True)
@click.pass_obj
@guarded
def annotate(inv: Invocation, scheme):
    """Ensemble-vote gold labels and write a labeled manifest."""
    samples = inv.samples()
    scheme = Scheme(scheme)
    validate_images(samples)
    labeled, votes, undecided = extract_labels(
        samples,
        scheme,
        inv.backend(),
        concurrency=inv.concurrency,
    )
    out = Path(inv.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(labeled, out / "labeled.jsonl")
    write_vote_records(votes, out / "votes.jsonl")
    write_undecided(undecided, out / "undecided.jsonl")
    click.echo(
        f"labeled {len(labeled)} of {len(samples)} samples "
        f"({len(undecided)} undecided) -> {out / 'labeled.jsonl'}"
    )


def _single_run_config(inv: Invocation, scheme, strategy, sources, assembly_mode, token_budget, temperature, run_id) -> RunConfig:
    if inv.config_path:
        configs = inv.run_configs()
        if len(configs) != 1:
            raise ConfigError(
                f"config defines {len(configs)} runs; use the sweep command"
            )
        return configs[0]
    strat = next(
        (s for s in Strategy if s.value.lower() == strategy.lower()), None
    )
    if strat is None:
        raise ConfigError(f"unknown strategy: {strategy!r}")
    return RunConfig(
        scheme=Scheme(scheme),
        strategy=strat,
        sources=parse_sources(sources),
        assembly_mode=AssemblyMode(assembly_mode),
        token_budget=token_budget,
        concurrency_limit=inv.concurrency,
        temperature=temperature,
        cache_dir=Path(inv.cache_dir),
        output_dir=Path(inv.out_dir),
        run_id=run_id or "",
    )


@main.command()
@click.option("--scheme", type=click.Choice([s.value for s in Scheme]), default="4class", show_default=True)
@click.option("--strategy", type=str, default="CoT", show_default=True, help="CoT or CoD.")
@click.option("--sources", type=str, default="internal", show_default=True, help="internal, combination, or slug+slug.")
@click.option("--assembly-mode", type=click.Choice([m.value for m in AssemblyMode]), default="conditional", show_default=True)
@click.option("--token-budget", type=int, default=6000, show_default=True)
@click.option("--temperature", type=float, default=0.0, show_default=True)
@click.option("--run-id", type=str, default=None)
@click.pass_obj
@guarded
def verify(inv: Invocation, scheme, strategy, sources, assembly_mode, token_budget, temperature, run_id):
    """Run one verification experiment over the manifest."""
    config = _single_run_config(
        inv, scheme, strategy, sources, assembly_mode, token_budget, temperature, run_id
    )
    record = run_experiment(
        config,
        inv.samples(),
        inv.backend(),
        inv.clients() if config.sources else None,
        refresh=inv.refresh,
    )
    report = write_run_reports(record, run_paths(config)["dir"])
    click.echo(
        f"run {config.run_id}: {report.total_samples} samples, "
        f"accuracy {fmt2(report.accuracy_pct)}, "
        f"rejected {report.rejected} -> {run_paths(config)['dir']}"
    )
    if record.degraded:
        click.echo("run degraded: backend failed on more than half the samples", err=True)
        sys.exit(3)


@main.command(name="sweep")
@click.pass_obj
@guarded
def sweep_cmd(inv: Invocation):
    """Run every configuration in the config file, then one combined summary."""
    configs = inv.run_configs()
    needs_clients = any(c.sources for c in configs)
    records, reports = sweep(
        configs,
        inv.samples(),
        inv.backend(),
        inv.clients() if needs_clients else None,
        refresh=inv.refresh,
    )
    click.echo(
        f"{len(records)} runs complete -> {Path(inv.out_dir) / 'summary.txt'}"
    )
    if any(r.degraded for r in records):
        click.echo("at least one run degraded", err=True)
        sys.exit(3)


@main.command()
@click.argument("record_path", type=str)
@click.pass_obj
@guarded
def evaluate(inv: Invocation, record_path):
    """Rebuild reports from an existing run record."""
    record = read_record(record_path)
    if not record.complete:
        raise ClimcheckError(
            f"record {record_path} is incomplete; resume the run first"
        )
    out_dir = Path(record_path).parent
    report = write_run_reports(record, out_dir)
    click.echo(
        f"evaluated {report.total_samples} samples "
        f"(rejected {report.rejected}) -> {out_dir / 'report.json'}"
    )


@main.command(name="report")
@click.argument("report_paths", type=str, nargs=-1, required=True)
@click.pass_obj
@guarded
def report_cmd(inv: Invocation, report_paths):
    """Merge per-run report.json files into one summary grid."""
    rows = []
    for path in report_paths:
        try:
            rows.append(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read report {path}: {exc}") from exc
    lines = summary_lines_from_json(rows)
    out = Path(inv.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    click.echo("\n".join(lines))


if __name__ == "__main__":
    main()
