"""Corridor demo: calibrate a 20-road network from sensor CSVs and compare
control strategies.

The bundled corridor preset ships synthetic 5-minute loop-detector counts
for a four-hour morning window.  This script calibrates the network model
from those counts (segmentation, routing estimation, supply fit, step
recommendation), then runs the four-way comparison the `compare` CLI
command performs: uncontrolled, multi-commodity optimal, car-only partial
control, and a control derived from a single-commodity aggregation.

    python demos/corridor_demo.py
"""

import time

from ctmflow import (
    aggregate_single_commodity,
    assemble_relaxation,
    corridor_scenario,
    evaluate_cost,
    recover_controls,
    simulate,
    solve_relaxation,
    verify_tightness,
)
from ctmflow.optimize import broadcast_control


def main():
    t0 = time.monotonic()
    scenario = corridor_scenario()
    g = scenario.graph
    print(f"calibrated corridor: {g.n_cells} cells over 20 roads, "
          f"{scenario.n_steps} steps of {scenario.h * 3600:g} s")

    uncontrolled = simulate(scenario)
    costs = {"uncontrolled": evaluate_cost(uncontrolled)}

    solution = solve_relaxation(assemble_relaxation(scenario))
    schedule = recover_controls(solution)
    report = verify_tightness(scenario, solution, schedule=schedule)
    costs["optimal"] = report.simulated_cost

    partial = simulate(scenario, control=schedule.restrict(["car"]))
    costs["partial-car"] = evaluate_cost(partial)

    agg = aggregate_single_commodity(scenario, uncontrolled)
    agg_solution = solve_relaxation(assemble_relaxation(agg))
    agg_schedule = recover_controls(agg_solution)
    single = simulate(scenario, control=broadcast_control(scenario, agg_schedule))
    costs["single-commodity"] = evaluate_cost(single)

    print(f"\ntotal travel time, ranked ({time.monotonic() - t0:.1f} s wall):")
    base = costs["uncontrolled"]
    for name in sorted(costs, key=costs.get):
        gain = 100 * (base - costs[name]) / base
        print(f"  {name:<18s} {costs[name]:14.2f}   ({gain:+.2f}% vs uncontrolled)")
    print(f"\ntightness {'PASS' if report.passed else 'FAIL'}: re-simulated "
          f"optimum deviates from the relaxation by {report.max_state_deviation:.1e}")
    print("car-only metering captures nearly the whole optimal gain here "
          "(trucks are few and exit\nquickly), while the single-commodity "
          "aggregation throws the car/truck asymmetry away\nand its control "
          "actively hurts — the case for modeling commodities separately.")


if __name__ == "__main__":
    main()
