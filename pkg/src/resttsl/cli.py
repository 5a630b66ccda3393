"""``resttsl`` command line.

Exit codes: 0 success, 2 input/validation errors, 3 provider failures.
"""

from __future__ import annotations

import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import click

from .errors import ResttslError, ValidationFailed
from .gateway import CostLedger
from .metrics import (
    ingest_run_report,
    rank_models,
    rank_table,
    score_table,
    to_csv,
    to_markdown,
    write_metrics_json,
)
from .pipeline import MODES, Pipeline, PipelineConfig, derive_file, validate_files, write_atomic
from .tsl import serialize_tsl
from .validation import has_errors


class _State:
    def __init__(self, config_path, mode, strict, force, parallel, locale):
        self.config_path = config_path
        self.mode = mode
        self.strict = strict
        self.force = force
        self.parallel = parallel
        self.locale = locale

    def config(self, mode: str | None = None) -> PipelineConfig:
        if self.config_path is None:
            raise click.UsageError("--config is required for this command")
        cfg = PipelineConfig.load(self.config_path)
        return cfg.with_overrides(mode=mode or self.mode)

    def pipeline(self, mode: str | None = None) -> Pipeline:
        return Pipeline(self.config(mode), force=self.force, strict=self.strict)


def _pairs(cfg: PipelineConfig, model: str | None, project: str | None):
    models = [cfg.model(model)] if model else list(cfg.models)
    projects = [cfg.project(project)] if project else list(cfg.projects)
    return [(m, p) for m in models for p in projects]


def _run_pairs(state: _State, pairs, stage) -> None:
    """Run ``stage`` per (model, project), up to --parallel at once; re-raise the first error."""
    def one(pair):
        m, p = pair
        result = stage(m, p)
        status = "skipped (exists)" if result.skipped else "written"
        return f"{m.label}/{p.project_id}: {result.path.name} {status}", result

    workers = max(1, state.parallel)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(one, pair) for pair in pairs]
        results = [f.result() for f in futures]
    for line, _ in results:
        click.echo(line)


@click.group()
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None, help="Pipeline YAML config.")
@click.option("--mode", type=click.Choice(MODES), default=None, help="Override the configured provider mode.")
@click.option("--strict", is_flag=True, help="Fail when generated TSL has validation errors.")
@click.option("--force", is_flag=True, help="Redo stages whose artifacts already exist.")
@click.option("--parallel", type=click.IntRange(min=1), default=1, show_default=True,
              help="Concurrent (model, project) pipelines.")
@click.option("--locale", type=click.Choice(["en", "pt"]), default="en", show_default=True,
              help="Decimal separator for emitted reports.")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def cli(ctx, config_path, mode, strict, force, parallel, locale, verbose):
    """OpenAPI to TSL to integration tests, with model scoring and ranking."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    ctx.obj = _State(config_path, mode, strict, force, parallel, locale)


@cli.command("gen-tsl")
@click.option("--model", default=None)
@click.option("--project", default=None)
@click.pass_obj
def gen_tsl(state: _State, model, project):
    """Send the TSL prompt and persist the parsed, validated TSL."""
    pipe = state.pipeline()
    _run_pairs(state, _pairs(pipe.config, model, project), pipe.gen_tsl)


@cli.command("gen-tests")
@click.option("--model", default=None)
@click.option("--project", default=None)
@click.pass_obj
def gen_tests(state: _State, model, project):
    """Send one test prompt per TSL segment and assemble the suite."""
    pipe = state.pipeline()
    _run_pairs(state, _pairs(pipe.config, model, project), pipe.gen_tests)


@cli.command()
@click.option("--model", default=None)
@click.option("--project", default=None)
@click.pass_obj
def replay(state: _State, model, project):
    """Rerun both generation stages from recorded cassettes."""
    pipe = state.pipeline(mode="replay")
    pairs = _pairs(pipe.config, model, project)
    _run_pairs(state, pairs, pipe.gen_tsl)
    _run_pairs(state, pairs, pipe.gen_tests)


@cli.command()
@click.option("--project", default=None)
@click.option("--openapi", "openapi_path", type=click.Path(exists=True, path_type=Path), default=None,
              help="Derive from a single spec instead of the configured projects.")
@click.pass_obj
def derive(state: _State, project, openapi_path):
    """Category-Partition baseline TSL (no model involved)."""
    if openapi_path is not None:
        click.echo(serialize_tsl(derive_file(openapi_path)), nl=False)
        return
    pipe = state.pipeline()
    projects = [pipe.config.project(project)] if project else list(pipe.config.projects)
    for p in projects:
        result = pipe.derive(p)
        click.echo(f"derived/{p.project_id}: {result.path}")


@cli.command()
@click.option("--model", default=None)
@click.option("--project", default=None)
@click.option("--openapi", "openapi_path", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--tsl", "tsl_path", type=click.Path(exists=True, path_type=Path), default=None)
@click.pass_obj
def validate(state: _State, model, project, openapi_path, tsl_path):
    """Check TSL against its OpenAPI document; exit 2 on any error-severity issue."""
    if (openapi_path is None) != (tsl_path is None):
        raise click.UsageError("--openapi and --tsl go together")
    found = []
    if openapi_path is not None:
        found.append((str(tsl_path), validate_files(openapi_path, tsl_path)))
    else:
        pipe = state.pipeline()
        for m, p in _pairs(pipe.config, model, project):
            found.append((f"{m.label}/{p.project_id}", pipe.validate(m, p)))
    failed = False
    for label, issues in found:
        for i in issues:
            click.echo(f"{label}: {i.severity} {i.code} [{i.case_id}] {i.message}")
        failed = failed or has_errors(issues)
        if not issues:
            click.echo(f"{label}: ok")
    if failed:
        raise ValidationFailed("validation errors found")


@cli.command()
@click.option("--model", required=True)
@click.option("--project", required=True)
@click.argument("tests_report", type=click.Path(path_type=Path))
@click.argument("coverage_report", type=click.Path(path_type=Path))
@click.argument("mutation_report", type=click.Path(path_type=Path))
@click.pass_obj
def ingest(state: _State, model, project, tests_report, coverage_report, mutation_report):
    """Turn external test/coverage/mutation reports into the run's metrics.json."""
    pipe = state.pipeline()
    m, p = pipe.config.model(model), pipe.config.project(project)
    art = pipe.artifacts(m, p)
    run = ingest_run_report(tests_report, coverage_report, mutation_report, m.label, p.project_id)
    if run.total_cost == 0 and art.ledger.exists():
        run = replace(run, total_cost=CostLedger.load(art.ledger).total())
    art.root.mkdir(parents=True, exist_ok=True)
    write_metrics_json(run, art.metrics)
    click.echo(f"{m.label}/{p.project_id}: SR {run.success_rate:.1f} C {run.branch_coverage:.1f} "
               f"M {run.mutation_score:.1f}")


def _reports_dir(pipe: Pipeline) -> Path:
    return pipe.config.run_root / "reports"


@cli.command()
@click.pass_obj
def score(state: _State):
    """Average each model's metrics over projects and emit score.md / score.csv."""
    pipe = state.pipeline()
    rows = pipe.score_rows()
    table = score_table(rows, state.locale)
    out = _reports_dir(pipe)
    write_atomic(out / "score.md", to_markdown(table))
    write_atomic(out / "score.csv", to_csv(table, state.locale))
    click.echo(to_markdown(table), nl=False)


@cli.command()
@click.pass_obj
def rank(state: _State):
    """Rank models per metric with deltas from first place; emit rank.md / rank.csv."""
    pipe = state.pipeline()
    rows = pipe.score_rows()
    ranking = rank_models(rows)
    out = _reports_dir(pipe)
    scores, ranks = score_table(rows, state.locale), rank_table(ranking, state.locale)
    write_atomic(out / "score.md", to_markdown(scores))
    write_atomic(out / "score.csv", to_csv(scores, state.locale))
    write_atomic(out / "rank.md", to_markdown(ranks))
    write_atomic(out / "rank.csv", to_csv(ranks, state.locale))
    write_atomic(out / "rank.json", json.dumps(
        {m: [{"model": e.model_id, "value": str(e.value), "delta": None if e.delta is None else str(e.delta)}
             for e in entries] for m, entries in ranking.columns.items()}, indent=2) + "\n")
    click.echo(to_markdown(ranks), nl=False)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="resttsl", standalone_mode=False)
    except ResttslError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
