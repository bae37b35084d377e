"""Command-line interface for higgsflow."""

from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import typer

from .bundle import BundleMetricState
from .config import ConfigError, list_presets, resolve_config, save_config
from .flow import FlowAbort, FlowConfig, FlowDiagnostics, run_flow
from .geometry import classification_residuals
from .io_ops import read_report, read_series, read_snapshot, write_report, write_series, write_snapshot
from .scenario import Scenario, build_scenario
from .stability import (
    VerdictWithheld,
    collect_blowup_samples,
    destabilization_verdict,
    extract_projection,
    proof_constant,
    sigma_inequality_check,
    sup_vs_L1_check,
)
from .utils import ensure_dir, format_elapsed, format_value
from .verify import CLASS_TOL, format_table, run_verification, series_rows

app = typer.Typer(help="Donaldson heat flow laboratory for Higgs bundles on lattice tori.")


def flow_config_from(config: Dict[str, Any], progress: bool = True) -> FlowConfig:
    flow = dict(config["flow"])
    flow["record_every"] = config["output"]["record_every"]
    flow["snapshot_every"] = config["stability"]["snapshot_every"]
    flow["keep_snapshots"] = max(flow["keep_snapshots"], config["stability"]["samples"])
    flow["progress"] = progress and flow.get("progress", True)
    return FlowConfig.from_dict(flow)


def analyze_blowup(
    scenario: Scenario, diagnostics: FlowDiagnostics
) -> Tuple[str, Dict[str, Any]]:
    """Projection extraction and slope verdict for a divergent run."""
    settings = scenario.config["stability"]
    bundle, metric, state0 = scenario.bundle, scenario.metric, scenario.state0
    summary: Dict[str, Any] = {}
    try:
        samples = collect_blowup_samples(diagnostics, settings["sigmas"], count=settings["samples"])
        constant = proof_constant(diagnostics, state0, bundle, metric)
        summary["sigma_inequality"] = [
            sigma_inequality_check(sample, state0, bundle, metric, sigma, constant)
            for sample in samples
            for sigma in settings["sigmas"]
        ]
        summary["sup_vs_L1"] = [sup_vs_L1_check(sample, metric) for sample in samples]
        summary["sample_times"] = [sample.t for sample in samples]
        candidate = extract_projection(
            samples,
            bundle,
            metric,
            gap=settings["gap"],
            threshold=settings["threshold"],
            gate=settings["residual_gate"],
        )
        verdict = destabilization_verdict(
            candidate,
            state0,
            bundle,
            metric,
            slope_tol=settings["slope_tol"],
            gate=settings["residual_gate"],
        )
    except VerdictWithheld as e:
        summary["reason"] = str(e)
        summary["per_sigma"] = e.per_sigma
        return "diverged+no-verdict", summary
    except ValueError as e:
        summary["reason"] = str(e)
        return "diverged+no-verdict", summary

    summary.update(
        {
            "sigma": candidate.sigma,
            "t": candidate.t,
            "rank": candidate.rank_estimate,
            "spectral_gap": candidate.spectral_gap,
            "residuals": candidate.residuals,
            "per_sigma": candidate.per_sigma,
            **verdict,
        }
    )
    return ("diverged+destabilized" if verdict["destabilizing"] else "diverged+no-verdict"), summary


def _verdict(status: str) -> str:
    return {"converged": "converged", "max_steps": "unresolved"}.get(status, status)


def _persist(
    scenario: Scenario,
    run_dir: Path,
    rows,
    state: BundleMetricState,
    diagnostics: FlowDiagnostics,
    report: Dict[str, Any],
) -> Dict[str, Any]:
    paths = {
        "series": str(write_series(rows, run_dir / "series.csv")),
        "config": str(run_dir / "config.json"),
        "report": str(run_dir / "report.json"),
    }
    if scenario.config["output"]["snapshot"]:
        snapshot = write_snapshot(state, run_dir / "state", dt=diagnostics.dt, extra={"mu": diagnostics.mu})[0]
        paths["snapshot"] = str(snapshot)
    save_config(scenario.config, paths["config"])
    report["paths"] = paths
    write_report(report, paths["report"])
    return report


def _report(
    scenario: Scenario,
    diagnostics: FlowDiagnostics,
    state: BundleMetricState,
    verdict: str,
    stability: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    final = diagnostics.final
    gauduchon = classification_residuals(scenario.metric)["gauduchon_res"] <= CLASS_TOL
    invariants = series_rows(
        diagnostics,
        scenario.grid.complex_dim,
        gauduchon,
        per_step=scenario.config["output"]["record_every"] == 1,
        bounded=diagnostics.status != "diverged",
    )
    return {
        "scenario": scenario.config["scenario"],
        "created_at": datetime.now().isoformat(),
        "status": diagnostics.status,
        "verdict": verdict,
        "final_Y": final["Y"],
        "steps": int(state.step),
        "t_final": float(state.t),
        "dt_final": diagnostics.dt,
        "mu": diagnostics.mu,
        "invariants": invariants,
        "stability": stability or {},
    }


def run_scenario(
    config: Dict[str, Any],
    out_dir: Optional[str] = None,
    progress: bool = True,
    start: Optional[BundleMetricState] = None,
    previous_rows=None,
    dt: Optional[float] = None,
) -> Dict[str, Any]:
    """Build, flow, analyze and persist one scenario under ``out_dir`` (default ``output.dir``)."""
    run_dir = ensure_dir(Path(out_dir or config["output"]["dir"]) / config["scenario"])
    typer.echo(f"🧮 Building scenario {config['scenario']}...")
    scenario = build_scenario(config)
    flow_config = flow_config_from(config, progress)
    if dt is not None:
        flow_config.dt = dt
    state0 = start if start is not None else scenario.state0

    started = datetime.now()
    try:
        state, diagnostics = run_flow(state0, scenario.bundle, scenario.metric, flow_config)
    except FlowAbort as e:
        write_report(
            {"scenario": config["scenario"], "status": "aborted", "verdict": "aborted", "error": str(e)},
            run_dir / "report.json",
        )
        raise

    stability = None
    verdict = _verdict(diagnostics.status)
    if diagnostics.status == "diverged":
        typer.echo("🔍 Analyzing blowup...")
        verdict, stability = analyze_blowup(scenario, diagnostics)

    rows = list(diagnostics.rows)
    if previous_rows:
        rows = list(previous_rows) + rows[1:]
    report = _report(scenario, diagnostics, state, verdict, stability)
    report["elapsed"] = format_elapsed((datetime.now() - started).total_seconds())
    return _persist(scenario, run_dir, rows, state, diagnostics, report)


def _load(source: str, seed: Optional[int] = None, record_every: Optional[int] = None) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if seed is not None:
        overrides["seed"] = seed
    if record_every is not None:
        overrides["output"] = {"record_every": record_every}
    typer.echo(f"🔍 Loading config {source}...")
    return resolve_config(source, overrides)


def _fail(message: str) -> None:
    typer.echo(f"❌ {message}")
    raise typer.Exit(1)


@app.command("run")
def run(
    config: str = typer.Option(..., "--config", "-c", help="Config path or bundled preset name"),
    out_dir: Optional[str] = typer.Option(None, "--out-dir", "-o", help="Output root (defaults to output.dir)"),
    record_every: Optional[int] = typer.Option(None, "--record-every", help="Record diagnostics every k steps"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override the config seed"),
):
    """Run a scenario end to end and write series, snapshot and report."""
    try:
        settings = _load(config, seed, record_every)
        report = run_scenario(settings, out_dir)
    except (ConfigError, FlowAbort, OSError, ValueError, RuntimeError) as e:
        _fail(str(e))

    typer.echo(f"✅ {report['scenario']}: {report['verdict']} after {report['steps']} steps")
    typer.echo(f"   final Y = {format_value(report['final_Y'])}")
    typer.echo(f"📁 Output: {Path(report['paths']['report']).parent}")


@app.command("verify")
def verify(
    config: str = typer.Option(..., "--config", "-c", help="Config path or bundled preset name"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override the config seed"),
):
    """Run the identity and invariant checks and print a pass/fail table."""
    try:
        settings = _load(config, seed)
        scenario = build_scenario(settings)
        typer.echo("🧮 Running identity checks...")
        rows = run_verification(scenario)
    except (ConfigError, FlowAbort, OSError, ValueError, RuntimeError) as e:
        _fail(str(e))

    for line in format_table(rows):
        typer.echo(line)
    failed = [row["name"] for row in rows if not row["ok"]]
    if failed:
        _fail(f"{len(failed)} checks off expectation: {', '.join(failed)}")
    typer.echo(f"✅ All {len(rows)} checks as expected")


@app.command("report")
def report(
    run_dir: str = typer.Argument(..., help="Directory of a finished run"),
):
    """Re-render a report from a persisted run."""
    try:
        stored = read_report(Path(run_dir) / "report.json")
        series = read_series(Path(run_dir) / "series.csv")
    except (OSError, ValueError) as e:
        _fail(str(e))

    typer.echo(f"📄 {stored.get('scenario')}: {stored.get('verdict')}")
    typer.echo(f"   steps {stored.get('steps')}, t = {stored.get('t_final')}, final Y = {format_value(stored.get('final_Y', float('nan')))}")
    typer.echo(f"   recorded rows: {len(series['t'])}, Y from {format_value(series['Y'][0])} to {format_value(series['Y'][-1])}")
    typer.echo(f"   sup|Lambda F_theta| max {format_value(float(np.max(series['sup_LF'])))}, trace_h_sup max {format_value(float(np.max(series['trace_h_sup'])))}")
    if stored.get("invariants"):
        for line in format_table(stored["invariants"]):
            typer.echo(line)
    stability = stored.get("stability") or {}
    if "mu_sub" in stability:
        typer.echo(f"   subobject slope {format_value(stability['mu_sub'])} vs mu(E) {format_value(stability['mu_E'])}")
    elif "reason" in stability:
        typer.echo(f"   verdict withheld: {stability['reason']}")


@app.command("resume")
def resume(
    run_dir: str = typer.Argument(..., help="Directory of a persisted run"),
    steps: int = typer.Option(..., "--steps", "-k", help="Number of further steps"),
    out_dir: Optional[str] = typer.Option(None, "--out-dir", "-o", help="Output root (defaults to the run's parent)"),
):
    """Continue a persisted snapshot for k more steps."""
    source = Path(run_dir)
    try:
        settings = resolve_config(source / "config.json")
        settings["flow"]["max_steps"] = steps
        state, meta = read_snapshot(source / "state.json")
        previous = read_series(source / "series.csv")
        rows = [dict(zip(previous, values)) for values in zip(*previous.values())]
        report = run_scenario(
            settings,
            out_dir or str(source.parent),
            start=state,
            previous_rows=rows,
            dt=meta.get("dt"),
        )
    except (ConfigError, FlowAbort, OSError, ValueError, RuntimeError) as e:
        _fail(str(e))

    typer.echo(f"✅ Resumed {report['scenario']}: {report['verdict']} at step {report['steps']}")


@app.command("batch")
def batch(
    csv: str = typer.Option(..., "--csv", help="CSV with a config column (path or preset)"),
    out_dir: str = typer.Option("runs", "--out-dir", "-o", help="Output root directory"),
    workers: int = typer.Option(2, "--workers", "-w", help="Number of parallel workers"),
):
    """Run a list of configs on a thread pool."""
    from .batch_processor import BatchProcessor

    processor = BatchProcessor(out_dir, max_workers=workers)
    processor.load_from_csv(csv)
    if len(processor.jobs) == 0:
        typer.echo("⚠️  No jobs to process")
        raise typer.Exit(0)

    summary = processor.process_all()
    typer.echo(f"   Completed: {summary['completed']}")
    typer.echo(f"   Failed: {summary['failed']}")
    if summary["failed"]:
        raise typer.Exit(1)


@app.command("presets")
def presets():
    """List bundled scenarios."""
    names = list_presets()
    if not names:
        typer.echo("⚠️  No presets found")
        return
    for name in names:
        typer.echo(f"📄 {name}")


def main():
    app()


if __name__ == "__main__":
    main()
