"""Command line interface.

Subcommands: ``simulate`` (forward dynamics + CSV artifacts), ``optimize``
(convex relaxation, control recovery, exactness verification), ``compare``
(uncontrolled vs optimal vs partially-controlled vs single-commodity-derived
control), ``calibrate`` (network model from road list + sensor CSV).

Exit codes: 0 success, 2 validation failure, 3 runtime failure,
4 infeasible relaxation, 5 exactness verification failure.  Nothing is
written unless the inputs validate.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .calibrate import (
    calibrate_network,
    inflow_from_sensors,
    initial_state_from_sensors,
    load_road_specs,
    load_sensor_csv,
)
from .lpformat import write_lp_file
from .network import save_network_config
from .optimize import (
    DEFAULT_SOLVE_TOL,
    DEFAULT_TIGHTNESS_TOL,
    aggregate_single_commodity,
    assemble_relaxation,
    broadcast_control,
    recover_controls,
    solve_relaxation,
    verify_tightness,
)
from .scenario import CostSpec, Scenario, load_scenario, save_scenario
from .simulate import (
    evaluate_cost,
    simulate,
    total_volume_report,
    write_flows_csv,
    write_summary_csv,
    write_totals_csv,
    write_trajectory_csv,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
EXIT_INFEASIBLE = 4
EXIT_TIGHTNESS = 5


def _fail(code: int, message) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _report_line(label: str, rep: dict) -> str:
    return (f"{label}: total {rep['total']:.1f}  [onramps {rep['onramps']:.1f}, "
            f"cells {rep['cells']:.1f}, offramps {rep['offramps']:.1f}]")


def _write_control_csv(graph, alpha: np.ndarray, h: float, path):
    """Dense control schedule as t,cell,commodity,alpha rows (t in hours)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "cell", "commodity", "alpha"])
        for t in range(alpha.shape[0]):
            for i, c in enumerate(graph.cells):
                for k, name in enumerate(graph.commodities):
                    w.writerow([f"{t * h:.10g}", c.id, name,
                                f"{alpha[t, k, i]:.10g}"])


def _write_solution_csv(solution, path):
    """Relaxed optimum as t,cell,commodity,x,z rows (z empty on the final
    state row, which has no outgoing step)."""
    problem = solution.problem
    g = problem.scenario.graph
    h = problem.scenario.h
    x_bar, z_bar = solution.x_bar, solution.z_bar
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "cell", "commodity", "x", "z"])
        for t in range(x_bar.shape[0]):
            for i, c in enumerate(g.cells):
                for k, name in enumerate(g.commodities):
                    z = f"{z_bar[t, k, i]:.10g}" if t < z_bar.shape[0] else ""
                    w.writerow([f"{t * h:.10g}", c.id, name,
                                f"{x_bar[t, k, i]:.10g}", z])


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except Exception as exc:
        return _fail(EXIT_VALIDATION, exc)
    try:
        result = simulate(scenario)
        baseline = None
        if scenario.control is not None:
            baseline = simulate(scenario.with_control(None))
    except Exception as exc:
        return _fail(EXIT_RUNTIME, exc)

    out = _ensure_out(args.out)
    write_trajectory_csv(result, os.path.join(out, "trajectory.csv"))
    write_flows_csv(result, os.path.join(out, "flows.csv"))
    write_totals_csv(result, os.path.join(out, "totals.csv"))
    reports = {}
    if baseline is not None:
        reports["uncontrolled"] = total_volume_report(baseline)
        reports["controlled"] = total_volume_report(result)
    else:
        reports["uncontrolled"] = total_volume_report(result)
    write_summary_csv(reports, os.path.join(out, "summary.csv"))

    g = scenario.graph
    print(f"scenario: {scenario.name} ({scenario.n_steps} steps x "
          f"{scenario.h * 3600:g} s, {g.n_cells} cells, "
          f"{g.n_commodities} commodities)")
    for label, rep in reports.items():
        print(_report_line(label, rep))
    print(f"cost ({scenario.cost.name}): "
          f"{evaluate_cost(result, scenario.cost):.10g}")
    print(f"wrote trajectory.csv, flows.csv, totals.csv, summary.csv to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# optimize
# ---------------------------------------------------------------------------


def _solve_or_code(problem, tol):
    """Returns (solution, exit_code); exit_code is None when usable."""
    solution = solve_relaxation(problem, tol=tol)
    if solution.status == "infeasible":
        msg = "relaxation infeasible"
        if solution.certificate:
            msg = f"{msg}: {solution.certificate}"
        return solution, _fail(EXIT_INFEASIBLE, msg)
    if not solution.success:
        return solution, _fail(EXIT_RUNTIME, f"solver failure: {solution.message}")
    return solution, None


def cmd_optimize(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        if args.tol is not None and not args.tol > 0:
            raise ValueError(f"--tol must be positive, got {args.tol}")
    except Exception as exc:
        return _fail(EXIT_VALIDATION, exc)
    solve_tol = args.tol if args.tol is not None else DEFAULT_SOLVE_TOL
    tight_tol = args.tol if args.tol is not None else DEFAULT_TIGHTNESS_TOL
    try:
        problem = assemble_relaxation(scenario)
        solution, code = _solve_or_code(problem, solve_tol)
        if code is not None:
            return code
        schedule = recover_controls(solution, tol=solve_tol)
        report = verify_tightness(scenario, solution, schedule=schedule,
                                  tol=tight_tol)
        baseline = simulate(scenario.with_control(None))
    except Exception as exc:
        return _fail(EXIT_RUNTIME, exc)

    out = _ensure_out(args.out)
    _write_solution_csv(solution, os.path.join(out, "solution.csv"))
    alpha = schedule.materialize(scenario.h, scenario.n_steps)
    _write_control_csv(scenario.graph, alpha, scenario.h,
                       os.path.join(out, "control.csv"))
    with open(os.path.join(out, "tightness.txt"), "w") as fh:
        fh.write(report.to_text() + "\n")
    write_totals_csv(report.result, os.path.join(out, "totals_optimal.csv"))
    write_totals_csv(baseline, os.path.join(out, "totals_uncontrolled.csv"))
    reports = {"uncontrolled": total_volume_report(baseline),
               "optimal": total_volume_report(report.result)}
    write_summary_csv(reports, os.path.join(out, "summary.csv"))
    if args.export_lp:
        write_lp_file(problem, os.path.join(out, args.export_lp))

    print(f"scenario: {scenario.name}")
    print(f"relaxation: {problem.variable_count} variables after flow "
          f"elimination ({problem.declared_variable_count} declared), "
          f"{problem.A_eq.shape[0]} equalities, {problem.A_ub.shape[0]} inequalities")
    print(f"objective: {solution.objective:.10g}")
    for label, rep in reports.items():
        print(_report_line(label, rep))
    print(report.to_text())
    print(f"wrote solution.csv, control.csv, tightness.txt, totals, summary to {out}")
    return EXIT_OK if report.passed else EXIT_TIGHTNESS


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


def cmd_compare(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        if args.tol is not None and not args.tol > 0:
            raise ValueError(f"--tol must be positive, got {args.tol}")
        g = scenario.graph
        if args.control_only:
            only = [s.strip() for s in args.control_only.split(",") if s.strip()]
        else:
            only = [g.commodities[0]]
        for k in only:
            if k not in g.commodity_index:
                raise ValueError(
                    f"unknown commodity in --control-only: {k!r} "
                    f"(scenario has: {', '.join(g.commodities)})")
    except Exception as exc:
        return _fail(EXIT_VALIDATION, exc)

    solve_tol = args.tol if args.tol is not None else DEFAULT_SOLVE_TOL
    tight_tol = args.tol if args.tol is not None else DEFAULT_TIGHTNESS_TOL
    multi = g.n_commodities > 1
    try:
        uncontrolled = simulate(scenario.with_control(None))
        problem = assemble_relaxation(scenario)
        solution, code = _solve_or_code(problem, solve_tol)
        if code is not None:
            return code
        schedule = recover_controls(solution, tol=solve_tol)
        report = verify_tightness(scenario, solution, schedule=schedule,
                                  tol=tight_tol)
        runs = {"uncontrolled": uncontrolled, "optimal": report.result}
        if multi:
            partial = simulate(scenario, control=schedule.restrict(only))
            runs[f"partial-{'+'.join(only)}"] = partial
            agg_scenario = aggregate_single_commodity(scenario, uncontrolled)
            agg_solution, code = _solve_or_code(
                assemble_relaxation(agg_scenario), solve_tol)
            if code is not None:
                return code
            agg_schedule = recover_controls(agg_solution, tol=solve_tol)
            single = simulate(
                scenario, control=broadcast_control(scenario, agg_schedule))
            runs["single-commodity"] = single
    except Exception as exc:
        return _fail(EXIT_RUNTIME, exc)

    costs = {name: evaluate_cost(r, scenario.cost) for name, r in runs.items()}
    volumes = {name: total_volume_report(r) for name, r in runs.items()}
    ranked = sorted(costs, key=costs.get)

    out = _ensure_out(args.out)
    for name, r in runs.items():
        fname = "totals_" + name.replace("-", "_").replace("+", "_") + ".csv"
        write_totals_csv(r, os.path.join(out, fname))
    with open(os.path.join(out, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "cost", "onramps", "cells", "offramps", "total"])
        for name in ranked:
            rep = volumes[name]
            w.writerow([name, f"{costs[name]:.10g}", f"{rep['onramps']:.10g}",
                        f"{rep['cells']:.10g}", f"{rep['offramps']:.10g}",
                        f"{rep['total']:.10g}"])

    print(f"scenario: {scenario.name} ({g.n_commodities} commodities; "
          f"controlled in partial run: {', '.join(only) if multi else 'n/a'})")
    if not multi:
        print("single commodity scenario: comparing uncontrolled vs optimal only")
    print(f"ranked by cost ({scenario.cost.name}):")
    for pos, name in enumerate(ranked, start=1):
        print(f"  {pos}. {name:<20s} {costs[name]:.10g}")
    print(report.to_text())
    print(f"wrote {len(runs)} totals CSVs and summary.csv to {out}")
    return EXIT_OK if report.passed else EXIT_TIGHTNESS


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    try:
        if not 0.0 <= args.split_p <= 1.0:
            raise ValueError(f"--split-p must be in [0, 1], got {args.split_p}")
        roads = load_road_specs(args.roads)
        table = load_sensor_csv(args.sensors)
        cal = calibrate_network(roads, table, split_p=args.split_p)
        x0 = initial_state_from_sensors(cal.graph, cal.diagram, table)
        inflow = inflow_from_sensors(cal.graph, table)
        window_hours = (table.t_end - table.t0).total_seconds() / 3600.0
        n_steps = max(1, round(window_hours / cal.recommended_h_hours))
        scenario = Scenario(cal.graph, cal.diagram, cal.routing, inflow, x0,
                            h=cal.recommended_h_hours, n_steps=n_steps,
                            cost=CostSpec.total_travel_time(), name="calibrated")
    except Exception as exc:
        return _fail(EXIT_VALIDATION, exc)

    out = _ensure_out(args.out)
    save_network_config(os.path.join(out, "network.json"),
                        cal.graph, cal.diagram, cal.routing)
    save_scenario(os.path.join(out, "scenario.json"), scenario, "network.json")
    with open(os.path.join(out, "calibration.json"), "w") as fh:
        json.dump({
            "recommended_h_hours": cal.recommended_h_hours,
            "recommended_h_seconds": cal.recommended_h_seconds,
            "split_p": cal.split_p,
            "n_cells": cal.graph.n_cells,
            "commodities": list(cal.graph.commodities),
            "horizon_steps": n_steps,
            "warnings": cal.warnings,
        }, fh, indent=2)
        fh.write("\n")

    for w in cal.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"roads: {len(roads)}  cells: {cal.graph.n_cells}  "
          f"commodities: {', '.join(cal.graph.commodities)}")
    print(f"recommended step: {cal.recommended_h_hours:g} h "
          f"({cal.recommended_h_seconds:g} s); horizon {n_steps} steps "
          f"covers the {window_hours:g} h sensor window")
    print(f"wrote network.json, scenario.json, calibration.json to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ctmflow",
        description="Multi-commodity freeway traffic: simulation, convex "
                    "optimal control, and sensor-based calibration.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the forward dynamics of a scenario")
    s.add_argument("scenario", help="scenario JSON file")
    s.add_argument("--out", default="out", help="output directory (default: out)")
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("optimize",
                       help="solve the relaxation, recover controls, verify exactness")
    o.add_argument("scenario", help="scenario JSON file")
    o.add_argument("--out", default="out", help="output directory (default: out)")
    o.add_argument("--tol", type=float, default=None,
                   help="numerical tolerance for the solve and the exactness "
                        "check (defaults: 1e-7 solve, 1e-6 exactness)")
    o.add_argument("--export-lp", nargs="?", const="problem.lp", default=None,
                   metavar="FILE",
                   help="also write the assembled LP in text form to FILE "
                        "inside --out (default name: problem.lp)")
    o.set_defaults(func=cmd_optimize)

    c = sub.add_parser("compare",
                       help="uncontrolled vs optimal vs partial vs "
                            "single-commodity-derived control")
    c.add_argument("scenario", help="scenario JSON file")
    c.add_argument("--out", default="out", help="output directory (default: out)")
    c.add_argument("--tol", type=float, default=None,
                   help="numerical tolerance (see optimize)")
    c.add_argument("--control-only", default=None, metavar="K[,K...]",
                   help="commodities that keep their optimal control in the "
                        "partial run; others are released (default: first "
                        "commodity)")
    c.set_defaults(func=cmd_compare)

    a = sub.add_parser("calibrate",
                       help="build a network model from a road list and a sensor CSV")
    a.add_argument("roads", help="road list CSV")
    a.add_argument("sensors", help="sensor flow CSV")
    a.add_argument("--out", default="out", help="output directory (default: out)")
    a.add_argument("--split-p", type=float, default=0.96, dest="split_p",
                   help="car fraction used for the supply fit (default: 0.96)")
    a.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
