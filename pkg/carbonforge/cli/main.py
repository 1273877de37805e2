#!/usr/bin/env python3
"""
Carbonforge CLI - carbon footprints from inventories, neighbours and teardowns

Every subcommand writes one JSON document to stdout; logs, tables and
errors go to stderr. Exit codes: 0 success, 1 usage, 2 data/validation,
3 backend failure.
"""
from __future__ import annotations

import sys
from pathlib import Path
from typing import Any, Callable, List, Optional, Sequence, Tuple

import click
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from ..agents.orchestrator import Budget, SimulatedClock, WallClock, run_selfplay
from ..agents.scaling import DIMENSIONS, make_agent_suite, sweep_budget
from ..core.config import CarbonforgeConfig, load_config
from ..core.errors import BackendError, CarbonforgeError, DataValidationError
from ..core.estimator import (
    CalibrationTransform,
    IndexRecord,
    apply_calibration,
    build_index,
    estimate,
    index_records,
    load_index,
    save_index,
)
from ..core.evaluation import (
    compare_baselines,
    cross_company_eval,
    k_sweep,
    kfold_cv,
    masking_sweep,
    runtime_scaling,
    scaling_sweep,
)
from ..core.generalizer import (
    MaterialEntry,
    build_grid_index,
    estimate_grid_ci,
    estimate_material_ef,
    grid_index_records,
    material_entries,
    material_entry,
    run_masked_benchmark,
)
from ..core.ingestion import (
    aggregate_regions,
    dedup_similar,
    load_corpus,
    load_efdb,
    parse_grid_records,
    parse_pcf_records,
    records_by_category,
)
from ..core.lcia import EFGenerator, EmissionFactorDB, assess
from ..core.logs import configure_logging
from ..core.models import (
    MATERIAL_SCHEMA,
    CFBreakdown,
    EmissionFactor,
    FeatureVector,
    LifeCycleInventory,
    grid_schema,
)
from ..core.reports import Report
from ..core.serialization import dumps_canonical, loads, read_json
from ..core.synthetic import make_grid_world, make_material_db, make_product_world
from ..core.vision import (
    board_dimensions,
    calibrate_scale,
    hpf_score,
    rank_board_views,
)
from ..plugins import ProviderRegistry, default_registry

err_console = Console(stderr=True)


class CarbonforgeGroup(click.Group):
    """Maps usage errors to exit 1 and carbonforge errors to their own codes"""

    def invoke(self, ctx: click.Context) -> Any:
        try:
            return super().invoke(ctx)
        except CarbonforgeError as exc:
            err_console.print(f"[red]error:[/red] {exc.message}")
            ctx.exit(exc.exit_code)

    def main(self, args: Optional[Sequence[str]] = None, prog_name: Optional[str] = None,
             complete_var: Optional[str] = None, standalone_mode: bool = True, **extra: Any) -> Any:
        try:
            rv = super().main(args=args, prog_name=prog_name, complete_var=complete_var,
                              standalone_mode=False, **extra)
            code = rv if isinstance(rv, int) else 0
        except click.ClickException as exc:
            exc.show()
            code = 1
        except click.exceptions.Abort:
            err_console.print("aborted")
            code = 1
        if standalone_mode:
            sys.exit(code)
        return code


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _emit(obj: Any) -> None:
    click.echo(dumps_canonical(obj).decode("utf-8"), nl=False)


def _emit_report(report: Report, csv_path: Optional[str]) -> None:
    if csv_path:
        report.to_csv(csv_path)
        err_console.print(f"[dim]wrote {csv_path}[/dim]")
    _emit(report)


def _json_arg(value: str) -> Any:
    """A JSON file path or an inline JSON document"""
    path = Path(value)
    if path.is_file():
        return read_json(path)
    try:
        return loads(value)
    except ValueError as exc:
        raise DataValidationError(f"expected a JSON file or inline JSON, got {value!r}") from exc


def _validate(model: Any, data: Any, what: str) -> Any:
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise DataValidationError(f"invalid {what}: {exc.errors()[0]['msg']}") from exc


def _feature_query(data: Any, specs: Any) -> FeatureVector:
    values = data.get('values', data) if isinstance(data, dict) else data
    return _validate(FeatureVector, {'schema': specs, 'values': values}, "query")


def _config(ctx: click.Context) -> CarbonforgeConfig:
    return ctx.obj['config']


def _registry(ctx: click.Context) -> ProviderRegistry:
    return ctx.obj['registry']


def _provider(ctx: click.Context) -> Any:
    cfg = _config(ctx)
    return _registry(ctx).create("embedding", cfg.embedding.provider, cfg)


def _report_rejected(kind: str, rejected: Sequence[Any]) -> None:
    for r in rejected:
        err_console.print(f"[yellow]{kind} row {r.row} rejected:[/yellow] {r.reason}")


def _load_pcf_index_records(path: str, category: str) -> List[IndexRecord]:
    parsed = parse_pcf_records(path)
    _report_rejected("pcf", parsed.rejected)
    grouped = records_by_category(parsed.records)
    if category not in grouped:
        raise DataValidationError(f"no {category!r} records in {path}; found {sorted(grouped)}")
    return index_records(grouped[category])


def _load_grid_index_records(path: str) -> List[IndexRecord]:
    parsed = parse_grid_records(path)
    _report_rejected("grid", parsed.rejected)
    return grid_index_records(parsed.records, aggregate=True)


def records_options(f: Callable[..., Any]) -> Callable[..., Any]:
    """Shared options selecting the estimator training records"""
    f = click.option('--synthetic-grid', 'synthetic_grid', type=int, help='Synthetic grid world regions')(f)
    f = click.option('--synthetic', 'synthetic', type=int, help='Synthetic product world size')(f)
    f = click.option('--category', default='laptop', show_default=True, help='Product category for --pcf')(f)
    f = click.option('--grid', 'grid_path', type=click.Path(exists=True, dir_okay=False), help='Grid CSV')(f)
    f = click.option('--pcf', 'pcf_path', type=click.Path(exists=True, dir_okay=False), help='PCF CSV')(f)
    return f


def _records(pcf_path: Optional[str], grid_path: Optional[str], category: str,
             synthetic: Optional[int], synthetic_grid: Optional[int], seed: int) -> List[IndexRecord]:
    chosen = [x for x in (pcf_path, grid_path, synthetic, synthetic_grid) if x is not None]
    if len(chosen) != 1:
        raise click.UsageError("choose exactly one of --pcf, --grid, --synthetic, --synthetic-grid")
    if pcf_path:
        return _load_pcf_index_records(pcf_path, category)
    if grid_path:
        return _load_grid_index_records(grid_path)
    if synthetic is not None:
        return make_product_world(synthetic, seed=seed)
    return grid_index_records(make_grid_world(synthetic_grid, seed=seed), aggregate=True)


# ---------------------------------------------------------------------------
# Root
# ---------------------------------------------------------------------------


@click.group(cls=CarbonforgeGroup)
@click.option('--config', '-c', 'config_path', type=click.Path(), help='Config file path')
@click.option('--log-level', type=click.Choice(['debug', 'info', 'warning', 'error']), help='Log level')
@click.option('--log-format', type=click.Choice(['pretty', 'json', 'compact']), help='Log format')
@click.pass_context
def cli(ctx: click.Context, config_path: Optional[str], log_level: Optional[str],
        log_format: Optional[str]) -> None:
    """
    Carbonforge - automated product carbon footprints

    Examples:
      carbonforge estimate --index data/demo/index.json --query data/demo/query.json
      carbonforge lcia assess --lci phone.json --efdb efdb.jsonl --fallback
      carbonforge agent run --query "Fairphone Demo" --corpus tests/fixtures/corpus
    """
    cfg = load_config(config_path)
    configure_logging(log_level or cfg.logging.level, log_format or cfg.logging.format, console=err_console)
    ctx.ensure_object(dict)
    ctx.obj['config'] = cfg
    ctx.obj['registry'] = default_registry()


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------


@cli.group()
def ingest() -> None:
    """Validate raw data files into canonical JSON"""


@ingest.command('pcf')
@click.argument('path', type=click.Path(exists=True, dir_okay=False))
@click.option('--dedup', is_flag=True, help='Collapse near-identical products per category')
def ingest_pcf(path: str, dedup: bool) -> None:
    """Parse a product carbon footprint CSV"""
    parsed = parse_pcf_records(path)
    _report_rejected("pcf", parsed.rejected)
    records = parsed.records
    if dedup:
        kept = []
        for _, group in sorted(records_by_category(records).items()):
            survivors, dropped = dedup_similar(group)
            kept.extend(survivors)
            if dropped:
                err_console.print(f"[dim]dedup dropped {len(dropped)} record(s)[/dim]")
        records = kept
    _emit({'records': records, 'rejected': [r.model_dump() for r in parsed.rejected]})


@ingest.command('grid')
@click.argument('path', type=click.Path(exists=True, dir_okay=False))
@click.option('--aggregate', is_flag=True, help='One annual record per region')
def ingest_grid(path: str, aggregate: bool) -> None:
    """Parse a grid carbon intensity CSV"""
    parsed = parse_grid_records(path)
    _report_rejected("grid", parsed.rejected)
    records = aggregate_regions(parsed.records) if aggregate else parsed.records
    _emit({'records': records, 'rejected': [r.model_dump() for r in parsed.rejected]})


@ingest.command('efdb')
@click.argument('path', type=click.Path(exists=True, dir_okay=False))
def ingest_efdb(path: str) -> None:
    """Validate an emission factor database (JSON lines)"""
    parsed = load_efdb(path)
    _report_rejected("efdb", parsed.rejected)
    _emit({'records': parsed.records, 'rejected': [r.model_dump() for r in parsed.rejected]})


# ---------------------------------------------------------------------------
# index / estimate
# ---------------------------------------------------------------------------


@cli.group()
def index() -> None:
    """Build estimator index snapshots"""


@index.command('build')
@click.option('--pcf', 'pcf_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--category', required=True, help='Product category to index')
@click.option('--out', 'out_path', type=click.Path(), required=True, help='Snapshot path')
def index_build(pcf_path: str, category: str, out_path: str) -> None:
    """Index one category of a PCF CSV"""
    idx = build_index(_load_pcf_index_records(pcf_path, category), category=category)
    save_index(idx, out_path)
    _emit({'category': idx.category, 'size': idx.size, 'dim': idx.dim, 'path': out_path})


@cli.command('estimate')
@click.option('--index', 'index_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--query', 'query', required=True, help='Query features: JSON file or inline JSON')
@click.option('--k', type=int, help='Neighbours (default from config)')
@click.option('--calibrate', help='Calibration transform {"scale", "shift"}: JSON file or inline')
@click.pass_context
def estimate_cmd(ctx: click.Context, index_path: str, query: str, k: Optional[int],
                 calibrate: Optional[str]) -> None:
    """Estimate a product footprint from its nearest indexed neighbours"""
    idx = load_index(index_path)
    result = estimate(idx, _feature_query(_json_arg(query), idx.specs), k or _config(ctx).estimator.k)
    if calibrate:
        result = apply_calibration(_validate(CalibrationTransform, _json_arg(calibrate), "calibration"), result)
    _emit(result)


# ---------------------------------------------------------------------------
# ef
# ---------------------------------------------------------------------------


@cli.group()
def ef() -> None:
    """Generate emission factors missing from the database"""


@ef.command('grid')
@click.option('--grid', 'grid_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--query', required=True, help='Source shares: JSON file or inline JSON')
@click.option('--k', type=int)
@click.pass_context
def ef_grid(ctx: click.Context, grid_path: str, query: str, k: Optional[int]) -> None:
    """Carbon intensity (gCO2e/kWh) of a grid mix"""
    parsed = parse_grid_records(grid_path)
    _report_rejected("grid", parsed.rejected)
    idx = build_grid_index(parsed.records)
    _emit(estimate_grid_ci(idx, _feature_query(_json_arg(query), grid_schema()), k or _config(ctx).estimator.k))


@ef.command('material')
@click.option('--efdb', 'efdb_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--id', 'ef_id', help='Estimate this database entry with itself hidden')
@click.option('--description', help='Describe a new material instead of --id')
@click.option('--unit', default='gram', show_default=True)
@click.option('--features', help='Domain properties: JSON file or inline JSON')
@click.option('--k', type=int)
@click.option('--mode', type=click.Choice(['text_only', 'text_plus_domain']))
@click.pass_context
def ef_material(ctx: click.Context, efdb_path: str, ef_id: Optional[str], description: Optional[str],
                unit: str, features: Optional[str], k: Optional[int], mode: Optional[str]) -> None:
    """Raw-material EF from analogous materials (log-space neighbours)"""
    if (ef_id is None) == (description is None):
        raise click.UsageError("give exactly one of --id or --description")
    cfg = _config(ctx)
    provider = _provider(ctx)
    parsed = load_efdb(efdb_path)
    _report_rejected("efdb", parsed.rejected)
    db = material_entries(parsed.records, provider)
    if ef_id is not None:
        matches = [e for e in db if e.id == ef_id]
        if not matches:
            raise DataValidationError(f"no emission factor {ef_id!r} in {efdb_path}")
        query: MaterialEntry = matches[0]
    else:
        domain = _feature_query(_json_arg(features), MATERIAL_SCHEMA) if features else None
        # placeholder value; estimate_material_ef never reads the query's EF
        placeholder = _validate(EmissionFactor, {
            'id': "query", 'description': description, 'isic_class': "unknown", 'unit': unit,
            'kgco2e_per_unit': 1.0, 'features': domain,
        }, "material query")
        query = material_entry(placeholder, provider)
    _emit(estimate_material_ef(db, query, k or cfg.lcia.k, mode or cfg.lcia.mode, mask_self=ef_id is not None))


# ---------------------------------------------------------------------------
# lcia
# ---------------------------------------------------------------------------


@cli.group()
def lcia() -> None:
    """Impact assessment of life cycle inventories"""


def _breakdown_table(lci: LifeCycleInventory, breakdown: CFBreakdown) -> Table:
    table = Table(title=f"{lci.product}: {breakdown.total_kgco2e:.3f} kgCO2e")
    table.add_column("#", style="dim")
    table.add_column("Class", style="cyan")
    table.add_column("Description")
    table.add_column("EF", style="yellow")
    table.add_column("kgCO2e", justify="right", style="green")
    for contrib in breakdown.per_entry:
        entry = lci.entries[contrib.entry_index]
        table.add_row(str(contrib.entry_index), entry.component_class, entry.description,
                      contrib.ef_id, f"{contrib.contribution_kgco2e:.4f}")
    return table


@lcia.command('assess')
@click.option('--lci', 'lci_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--efdb', 'efdb_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--fallback/--no-fallback', default=None, help='Generate EFs for unmatched entries')
@click.option('--threshold', type=float, help='Cosine similarity needed for a match')
@click.option('--table', 'show_table', is_flag=True, help='Print a breakdown table to stderr')
@click.pass_context
def lcia_assess(ctx: click.Context, lci_path: str, efdb_path: str, fallback: Optional[bool],
                threshold: Optional[float], show_table: bool) -> None:
    """Footprint of an LCI against an EF database"""
    cfg = _config(ctx)
    lci = _validate(LifeCycleInventory, read_json(lci_path), "life cycle inventory")
    parsed = load_efdb(efdb_path)
    _report_rejected("efdb", parsed.rejected)
    db = EmissionFactorDB(parsed.records, _provider(ctx))
    fallback = cfg.lcia.fallback if fallback is None else fallback
    breakdown = assess(
        lci, db,
        threshold=cfg.lcia.threshold if threshold is None else threshold,
        fallback=fallback,
        generator=EFGenerator(db, cfg.lcia.k, cfg.lcia.mode) if fallback else None,
    )
    if show_table:
        err_console.print(_breakdown_table(lci, breakdown))
    _emit(breakdown)


# ---------------------------------------------------------------------------
# vision
# ---------------------------------------------------------------------------


@cli.group()
def vision() -> None:
    """Teardown image scoring and calibration"""


@vision.command('score')
@click.argument('images', nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--cutoff', type=float)
@click.pass_context
def vision_score(ctx: click.Context, images: Tuple[str, ...], cutoff: Optional[float]) -> None:
    """High-frequency energy of each image"""
    cfg = _config(ctx).vision
    _emit([
        {'image': path, 'hf_energy': hpf_score(path, cutoff or cfg.cutoff, cfg.max_side)}
        for path in images
    ])


@vision.command('rank')
@click.argument('images', nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--lambda-energy', type=float)
@click.pass_context
def vision_rank(ctx: click.Context, images: Tuple[str, ...], lambda_energy: Optional[float]) -> None:
    """Order candidate views by component count and HF energy"""
    cfg = _config(ctx)
    detector = _registry(ctx).create("detector", cfg.vision.detector, cfg)
    scores, skipped = rank_board_views(
        {path: path for path in images}, detector,
        lambda_energy=cfg.vision.lambda_energy if lambda_energy is None else lambda_energy,
        cutoff=cfg.vision.cutoff,
    )
    for s in skipped:
        err_console.print(f"[yellow]skipped {s.doc_id}:[/yellow] {s.reason}")
    _emit({'scores': scores, 'skipped': skipped})


@vision.command('dims')
@click.option('--ref-mm', nargs=2, type=float, required=True, help='Known reference width height (mm)')
@click.option('--ref-bbox', nargs=4, type=int, required=True, help='Reference box x y w h (px)')
@click.option('--board-bbox', nargs=4, type=int, required=True, help='Board box x y w h (px)')
def vision_dims(ref_mm: Tuple[float, float], ref_bbox: Tuple[int, int, int, int],
                board_bbox: Tuple[int, int, int, int]) -> None:
    """Board dimensions in mm from a reference component"""
    cal = calibrate_scale(ref_mm, ref_bbox)
    _emit({'calibration': cal, 'board': board_dimensions(board_bbox, cal)})


# ---------------------------------------------------------------------------
# agent
# ---------------------------------------------------------------------------


@cli.group()
def agent() -> None:
    """Two-role self-play inventory construction"""


@agent.command('run')
@click.option('--query', required=True, help='Product name or image reference')
@click.option('--corpus', 'corpus_dir', type=click.Path(exists=True, file_okay=False), required=True)
@click.option('--budget', help='{"max_thinking_ms", "max_rounds", "max_documents"}: JSON file or inline')
@click.option('--docs-per-query', type=int)
@click.option('--transcript', 'transcript_path', type=click.Path(), help='Also write the transcript here')
@click.pass_context
def agent_run(ctx: click.Context, query: str, corpus_dir: str, budget: Optional[str],
              docs_per_query: Optional[int], transcript_path: Optional[str]) -> None:
    """Build an LCI for a product from a document corpus"""
    cfg = _config(ctx)
    settings = cfg.agent
    budget_model = _validate(Budget, _json_arg(budget) if budget else settings.budget.model_dump(), "budget")
    backend_name = "http" if cfg.backend.url else settings.backend
    corpus = load_corpus(corpus_dir)
    backend = _registry(ctx).create("backend", backend_name, cfg, corpus=corpus)
    detector = _registry(ctx).create("detector", cfg.vision.detector, cfg)
    clock = SimulatedClock(**settings.latency.model_dump()) if backend_name == "fixture" else WallClock()
    with backend:
        lci, transcript = run_selfplay(query, budget_model, backend, detector, clock=clock,
                                       docs_per_query=docs_per_query or settings.docs_per_query)
    if transcript_path:
        Path(transcript_path).parent.mkdir(parents=True, exist_ok=True)
        Path(transcript_path).write_bytes(dumps_canonical(transcript))
    err_console.print(
        f"[cyan]{transcript.status}[/cyan] after {transcript.reasoning_steps} round(s), "
        f"{transcript.documents_read} document(s), {transcript.tokens_used} token(s)"
    )
    _emit({'lci': lci, 'transcript': transcript})
    if transcript.status == "backend_error":
        raise BackendError(transcript.error or "backend failure")


@agent.command('scaling')
@click.option('--suite-size', type=int, default=20, show_default=True)
@click.option('--dimension', type=click.Choice(sorted(DIMENSIONS)), default='rounds', show_default=True)
@click.option('--values', help='Comma-separated budget values (default grid per dimension)')
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--workers', type=int)
@click.option('--csv', 'csv_path', type=click.Path())
@click.pass_context
def agent_scaling(ctx: click.Context, suite_size: int, dimension: str, values: Optional[str], seed: int,
                  workers: Optional[int], csv_path: Optional[str]) -> None:
    """Sweep one budget dimension over the synthetic product suite"""
    cfg = _config(ctx)
    grid = [int(v) for v in values.split(",")] if values else None
    report = sweep_budget(
        make_agent_suite(suite_size, seed), dimension, grid,
        latency=cfg.agent.latency.model_dump(), docs_per_query=cfg.agent.docs_per_query,
        max_workers=workers or cfg.parallel.max_workers,
    )
    _emit_report(report, csv_path)


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


@cli.group('eval')
def eval_group() -> None:
    """Accuracy experiments"""


def _eval_defaults(ctx: click.Context, seed: Optional[int], k: Optional[int]) -> Tuple[int, int]:
    cfg = _config(ctx)
    return (cfg.evaluation.seed if seed is None else seed), (k or cfg.estimator.k)


@eval_group.command('cv')
@records_options
@click.option('--k-folds', type=int)
@click.option('--holdout', type=float)
@click.option('--seed', type=int)
@click.option('--k', type=int)
@click.option('--csv', 'csv_path', type=click.Path())
@click.pass_context
def eval_cv(ctx: click.Context, pcf_path: Optional[str], grid_path: Optional[str], category: str,
            synthetic: Optional[int], synthetic_grid: Optional[int], k_folds: Optional[int],
            holdout: Optional[float], seed: Optional[int], k: Optional[int], csv_path: Optional[str]) -> None:
    """Holdout then k-fold cross-validation"""
    cfg = _config(ctx)
    seed, k = _eval_defaults(ctx, seed, k)
    records = _records(pcf_path, grid_path, category, synthetic, synthetic_grid, seed)
    report = kfold_cv(records, k_folds or cfg.evaluation.k_folds,
                      cfg.evaluation.holdout if holdout is None else holdout, seed, k,
                      max_workers=cfg.parallel.max_workers)
    _emit_report(report, csv_path)


eval_group.add_command(eval_cv, 'kfold')


@eval_group.command('scaling')
@records_options
@click.option('--sizes', help='Comma-separated training sizes')
@click.option('--repeats', type=int)
@click.option('--seed', type=int)
@click.option('--k', type=int)
@click.option('--csv', 'csv_path', type=click.Path())
@click.pass_context
def eval_scaling(ctx: click.Context, pcf_path: Optional[str], grid_path: Optional[str], category: str,
                 synthetic: Optional[int], synthetic_grid: Optional[int], sizes: Optional[str],
                 repeats: Optional[int], seed: Optional[int], k: Optional[int], csv_path: Optional[str]) -> None:
    """MAPE against training-set size"""
    cfg = _config(ctx)
    seed, k = _eval_defaults(ctx, seed, k)
    records = _records(pcf_path, grid_path, category, synthetic, synthetic_grid, seed)
    grid = [int(s) for s in sizes.split(",")] if sizes else cfg.evaluation.sizes
    report = scaling_sweep(records, grid, repeats or cfg.evaluation.repeats, seed, k,
                           cfg.evaluation.holdout, max_workers=cfg.parallel.max_workers)
    _emit_report(report, csv_path)


@eval_group.command('masking')
@records_options
@click.option('--fractions', default='0,0.1,0.25,0.5', show_default=True)
@click.option('--repeats', type=int, default=5, show_default=True)
@click.option('--seed', type=int)
@click.option('--k', type=int)
@click.option('--csv', 'csv_path', type=click.Path())
@click.pass_context
def eval_masking(ctx: click.Context, pcf_path: Optional[str], grid_path: Optional[str], category: str,
                 synthetic: Optional[int], synthetic_grid: Optional[int], fractions: str, repeats: int,
                 seed: Optional[int], k: Optional[int], csv_path: Optional[str]) -> None:
    """MAPE with a share of feature values hidden"""
    cfg = _config(ctx)
    seed, k = _eval_defaults(ctx, seed, k)
    records = _records(pcf_path, grid_path, category, synthetic, synthetic_grid, seed)
    report = masking_sweep(records, [float(f) for f in fractions.split(",")], repeats, seed, k,
                           cfg.evaluation.holdout, max_workers=cfg.parallel.max_workers)
    _emit_report(report, csv_path)


@eval_group.command('ksweep')
@records_options
@click.option('--ks', default='1,3,5,10,20', show_default=True)
@click.option('--seed', type=int)
@click.option('--csv', 'csv_path', type=click.Path())
@click.pass_context
def eval_ksweep(ctx: click.Context, pcf_path: Optional[str], grid_path: Optional[str], category: str,
                synthetic: Optional[int], synthetic_grid: Optional[int], ks: str, seed: Optional[int],
                csv_path: Optional[str]) -> None:
    """MAPE per neighbour count"""
    cfg = _config(ctx)
    seed, _ = _eval_defaults(ctx, seed, None)
    records = _records(pcf_path, grid_path, category, synthetic, synthetic_grid, seed)
    _emit_report(k_sweep(records, [int(v) for v in ks.split(",")], seed, cfg.evaluation.holdout), csv_path)


@eval_group.command('baselines')
@records_options
@click.option('--seed', type=int)
@click.option('--k', type=int)
@click.option('--csv', 'csv_path', type=click.Path())
@click.pass_context
def eval_baselines(ctx: click.Context, pcf_path: Optional[str], grid_path: Optional[str], category: str,
                   synthetic: Optional[int], synthetic_grid: Optional[int], seed: Optional[int],
                   k: Optional[int], csv_path: Optional[str]) -> None:
    """kNN weighted Gaussian against standard regressors"""
    seed, k = _eval_defaults(ctx, seed, k)
    records = _records(pcf_path, grid_path, category, synthetic, synthetic_grid, seed)
    _emit_report(compare_baselines(records, seed, _config(ctx).evaluation.holdout, k), csv_path)


@eval_group.command('runtime')
@click.option('--sizes', default='1000,2000,4000', show_default=True)
@click.option('--queries', 'n_queries', type=int, default=50, show_default=True)
@click.option('--seed', type=int)
@click.option('--csv', 'csv_path', type=click.Path())
@click.pass_context
def eval_runtime(ctx: click.Context, sizes: str, n_queries: int, seed: Optional[int],
                 csv_path: Optional[str]) -> None:
    """Per-query latency against index size"""
    seed, k = _eval_defaults(ctx, seed, None)
    _emit_report(runtime_scaling([int(s) for s in sizes.split(",")], n_queries, seed, k), csv_path)


@eval_group.command('transfer')
@click.option('--source', 'source_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--target', 'target_path', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--category', default='laptop', show_default=True)
@click.option('--calibration-fraction', type=float, default=0.2, show_default=True)
@click.option('--seed', type=int)
@click.option('--k', type=int)
@click.option('--csv', 'csv_path', type=click.Path())
@click.pass_context
def eval_transfer(ctx: click.Context, source_path: str, target_path: str, category: str,
                  calibration_fraction: float, seed: Optional[int], k: Optional[int],
                  csv_path: Optional[str]) -> None:
    """Cross-company estimation before and after calibration"""
    seed, k = _eval_defaults(ctx, seed, k)
    report = cross_company_eval(
        _load_pcf_index_records(source_path, category), _load_pcf_index_records(target_path, category),
        k, calibration_fraction, seed,
    )
    _emit_report(report, csv_path)


@eval_group.command('benchmark')
@click.option('--efdb', 'efdb_path', type=click.Path(exists=True, dir_okay=False),
              help='EF database; the synthetic material set when omitted')
@click.option('--n-masked', type=int, default=90, show_default=True)
@click.option('--mode', type=click.Choice(['text_only', 'text_plus_domain']))
@click.option('--seed', type=int)
@click.option('--k', type=int)
@click.option('--csv', 'csv_path', type=click.Path())
@click.pass_context
def eval_benchmark(ctx: click.Context, efdb_path: Optional[str], n_masked: int, mode: Optional[str],
                   seed: Optional[int], k: Optional[int], csv_path: Optional[str]) -> None:
    """Masked material EF benchmark"""
    cfg = _config(ctx)
    seed = cfg.evaluation.seed if seed is None else seed
    if efdb_path:
        parsed = load_efdb(efdb_path)
        _report_rejected("efdb", parsed.rejected)
        factors = parsed.records
    else:
        factors = make_material_db(seed=seed)
    db = material_entries(factors, _provider(ctx))
    report = run_masked_benchmark(db, min(n_masked, len(db)), k or cfg.lcia.k, mode or cfg.lcia.mode, seed,
                                  max_workers=cfg.parallel.max_workers)
    _emit_report(report, csv_path)


def main() -> None:
    """Entry point for the CLI"""
    sys.exit(cli.main(prog_name="carbonforge", standalone_mode=False))


if __name__ == '__main__':
    main()
