"""Identity and invariant suite run against a scenario without a full flow."""

from typing import Any, Dict, List

import numpy as np

from .bundle import (
    chern_numbers,
    curvature_difference_residual,
    curvature_lp_norm,
    higgs_residuals,
    random_sections,
    section_curvature_residual,
    trace_condition_residual,
    twist_consistency_residual,
)
from .flow import (
    FlowConfig,
    M_convexity_check,
    Y_derivative_identity_check,
    c0_proxy_check,
    gauduchon_M_derivative_check,
    lambda_F_evolution_check,
    log_accumulation_residual,
    monotonicity_violation,
    run_flow,
)
from .geometry import (
    HermitianMetricField,
    build_metric,
    classification_residuals,
    integration_by_parts_check,
    torsion_adjoint_check,
    torsion_divergence_check,
    random_test_forms,
    torsion_identity_residuals,
)
from .scenario import Scenario
from .utils import format_value

IDENTITY_TOL = 1e-8
CLASS_TOL = 1e-8


def _row(
    name: str, value: float, tol: float, expected: str = "pass", direction: str = "le"
) -> Dict[str, Any]:
    value = float(value)
    passed = value <= tol if direction == "le" else value >= tol
    return {
        "name": name,
        "value": value,
        "tol": tol,
        "passed": bool(passed),
        "expected": expected,
        "ok": bool(passed if expected == "pass" else not passed),
    }


def _expect(condition: bool) -> str:
    return "pass" if condition else "fail"


def _short_flow(scenario: Scenario, metric: HermitianMetricField, steps: int, dt: float):
    flow = scenario.config["flow"]
    config = FlowConfig(
        dt=dt,
        max_steps=steps,
        stop_Y=0.0,
        scheme="midpoint",
        functional_quadrature_nodes=flow["functional_quadrature_nodes"],
        blowup_threshold=np.inf,
        max_halvings=flow["max_halvings"],
        sup_slack=flow["sup_slack"],
        keep_snapshots=1,
        progress=False,
    )
    _, diagnostics = run_flow(scenario.state0, scenario.bundle, metric, config)
    return diagnostics


def _identity_rows(scenario: Scenario, rng: np.random.Generator) -> List[Dict[str, Any]]:
    metric = scenario.metric
    verify = scenario.config["verify"]
    classes = classification_residuals(metric)
    semikaehler = classes["semikaehler_res"] <= CLASS_TOL
    gauduchon = classes["gauduchon_res"] <= CLASS_TOL

    rows = [_row("gauduchon_residual", classes["gauduchon_res"], CLASS_TOL)]
    torsion = torsion_identity_residuals(metric)
    rows.append(_row("torsion_semikaehler_identity", torsion["semik_id"], IDENTITY_TOL, _expect(semikaehler)))
    rows.append(_row("torsion_gauduchon_identity", torsion["gaud_id"], IDENTITY_TOL, _expect(gauduchon)))

    pairs = random_test_forms(scenario.grid, rng, verify["random_forms"])
    rows.append(_row("torsion_adjoint", max(torsion_adjoint_check(metric, psi, phi)["relative"] for phi, psi in pairs), IDENTITY_TOL))
    rows.append(_row("torsion_divergence", max(torsion_divergence_check(metric, phi)["relative"] for phi, _ in pairs), IDENTITY_TOL))
    rows.append(
        _row(
            "integration_by_parts",
            max(integration_by_parts_check(metric, phi, psi)["relative"] for phi, psi in pairs),
            IDENTITY_TOL,
            _expect(semikaehler),
        )
    )
    return rows


def _bundle_rows(scenario: Scenario, rng: np.random.Generator) -> List[Dict[str, Any]]:
    bundle, metric, state0 = scenario.bundle, scenario.metric, scenario.state0
    residuals = higgs_residuals(bundle)
    rows = [
        _row("higgs_holomorphy", residuals["holomorphy"], bundle.holomorphy_tol),
        _row("higgs_integrability", residuals["integrability"], bundle.holomorphy_tol),
        _row("curvature_difference", curvature_difference_residual(state0, bundle), 1e-6),
        _row("trace_condition", trace_condition_residual(state0.reference(), bundle, metric), IDENTITY_TOL),
    ]
    if bundle.is_trivial:
        sections = random_sections(scenario.grid, bundle.rank, rng, 3)
        rows.append(_row("section_curvature", section_curvature_residual(state0, bundle, sections), 1e-6))
    else:
        rows.append(_row("twist_consistency", twist_consistency_residual(bundle), 1e-9))
    return rows


def series_rows(
    series: Any, complex_dim: int, gauduchon: bool, per_step: bool = True, bounded: bool = True
) -> List[Dict[str, Any]]:
    """Invariant rows computable from a recorded diagnostics series alone."""
    expected = _expect(gauduchon)
    Y = np.asarray(_values(series, "Y"))
    logdet = np.asarray(_values(series, "logdet_max"))
    rows = [_row("max_principle", monotonicity_violation(series, "sup_LF"), 1e-6)]
    if logdet[0] <= 1e-8:
        rows.append(_row("det_conservation", float(np.max(logdet)), 1e-8))
    rows.append(_row("Y_monotone", monotonicity_violation(series, "Y"), 1e-8, expected))
    if per_step and len(Y) >= 3 and float(np.max(Y)) > 1e-20:
        rows.append(_row("Ydot_identity", Y_derivative_identity_check(series), 1e-2, expected))
    if complex_dim == 1:
        rows.append(_row("M_monotone", monotonicity_violation(series, "M"), 1e-9))
    deg = _values(series, "deg")
    if deg is not None:
        deg = np.asarray(deg)
        rows.append(_row("degree_drift", float(np.max(np.abs(deg - deg[0]))), 1e-6, expected))
    if bounded and _values(series, "c0_proxy") is not None:
        rows.append(_row("c0_proxy", c0_proxy_check(series), 10.0))
    return rows


def _values(series: Any, name: str):
    if hasattr(series, "column"):
        return series.column(name) if series.rows and name in series.rows[0] else None
    return series.get(name)


def _flow_rows(scenario: Scenario) -> List[Dict[str, Any]]:
    bundle, metric, state0 = scenario.bundle, scenario.metric, scenario.state0
    verify = scenario.config["verify"]
    classes = classification_residuals(metric)
    gauduchon = classes["gauduchon_res"] <= CLASS_TOL
    dt = verify["dt"]

    series = _short_flow(scenario, metric, verify["flow_steps"], dt)
    moving = float(np.max(series.column("Y"))) > 1e-20

    rows = series_rows(series, scenario.grid.complex_dim, gauduchon)
    if classes["semikaehler_res"] <= CLASS_TOL:
        rows.append(_row("M_convexity", M_convexity_check(series), 1e-12))
    initial = curvature_lp_norm(state0, bundle, metric)
    if initial > 1e-12:
        final = curvature_lp_norm(series.snapshots[-1], bundle, metric)
        rows.append(_row("curvature_L2_growth", final / initial, 10.0))
    if moving:
        rows.append(_row("lambda_F_evolution", lambda_F_evolution_check(state0, bundle, metric, dt), 1e-2))
    if scenario.grid.complex_dim == 2 and moving and gauduchon:
        check = gauduchon_M_derivative_check(
            state0, bundle, metric, dt, scenario.config["flow"]["functional_quadrature_nodes"]
        )
        rows.append(_row("M_derivative", check["discrepancy"], 5e-2))
    if bundle.rank == 1:
        rows.append(_row("log_accumulation", log_accumulation_residual(state0, bundle, metric, dt, 3), 1e-8))
    if scenario.grid.complex_dim == 2:
        final = series.snapshots[-1]
        bg = chern_numbers(final, bundle, metric)["bg_integrand"]
        rows.append(_row("bogomolov_gieseker", bg, -1e-6, direction="ge"))

    if moving and scenario.config["verify"]["include_control"] and scenario.grid.complex_dim == 2:
        rows.extend(_control_rows(scenario, Y_derivative_identity_check(series)))
    return rows


def _control_rows(scenario: Scenario, reference_discrepancy: float) -> List[Dict[str, Any]]:
    """Ydot identity on a metric that is deliberately not Gauduchon."""
    spec = dict(scenario.config["metric"])
    if spec.get("kind") != "nonkaehler":
        spec = {"kind": "nonkaehler", "amplitude": 0.1}
    control = build_metric(scenario.grid, spec)
    verify = scenario.config["verify"]
    series = _short_flow(scenario, control, verify["flow_steps"], verify["dt"])
    discrepancy = Y_derivative_identity_check(series)
    return [
        _row("control_Ydot_identity", discrepancy, 1e-2, expected="fail"),
        _row("control_separation", discrepancy / max(reference_discrepancy, 1e-300), 10.0, direction="ge"),
    ]


def run_verification(scenario: Scenario) -> List[Dict[str, Any]]:
    """Evaluate every identity check for a scenario and return pass/fail rows."""
    rng = np.random.default_rng(scenario.config["seed"] + 1)
    rows = _identity_rows(scenario, rng)
    rows.extend(_bundle_rows(scenario, rng))
    rows.extend(_flow_rows(scenario))
    return rows


def format_table(rows: List[Dict[str, Any]]) -> List[str]:
    width = max(len(row["name"]) for row in rows)
    lines = []
    for row in rows:
        mark = "✅" if row["ok"] else "❌"
        lines.append(
            f"{mark} {row['name']:<{width}}  {format_value(row['value'])}  "
            f"(tol {format_value(row['tol'])}, expected {row['expected']})"
        )
    return lines
