"""Work-zone demo: metering trucks through a single-lane construction branch.

The bundled two-branch network sends every truck through a work zone whose
storage is cut to a quarter, while 80 % of cars take a posted detour exit.
This script simulates the uncontrolled rush, replays the hand-tuned truck
metering schedule, then solves the convex relaxation and re-simulates its
recovered optimal control, printing the total-travel-time comparison.

    python demos/work_zone_demo.py
"""

import numpy as np

from ctmflow import (
    assemble_relaxation,
    evaluate_cost,
    recover_controls,
    simulate,
    solve_relaxation,
    two_branch_heuristic_control,
    two_branch_scenario,
    verify_tightness,
)
from ctmflow.simulate import total_volume_report


def main():
    scenario = two_branch_scenario()
    g = scenario.graph
    print(f"network: {g.n_cells} cells, commodities {', '.join(g.commodities)}; "
          f"{scenario.n_steps} steps of {scenario.h * 3600:g} s")

    uncontrolled = simulate(scenario)
    ttt_unc = evaluate_cost(uncontrolled)
    rep = total_volume_report(uncontrolled)
    print(f"\nuncontrolled     TTT {ttt_unc:12.2f}   "
          f"(onramps {rep['onramps']:.1f}, cells {rep['cells']:.1f}, "
          f"offramps {rep['offramps']:.1f})")
    print(f"  worst saturation factor during the rush: "
          f"{uncontrolled.min_gamma():.3f}")

    heuristic = simulate(scenario, control=two_branch_heuristic_control(g))
    ttt_heu = evaluate_cost(heuristic)
    print(f"hand-tuned       TTT {ttt_heu:12.2f}   "
          f"({100 * (ttt_unc - ttt_heu) / ttt_unc:.2f}% better)")

    solution = solve_relaxation(assemble_relaxation(scenario))
    schedule = recover_controls(solution)
    report = verify_tightness(scenario, solution, schedule=schedule)
    print(f"optimal          TTT {report.simulated_cost:12.2f}   "
          f"({100 * (ttt_unc - report.simulated_cost) / ttt_unc:.2f}% better)")
    print(f"  relaxation objective {solution.objective:.2f}; re-simulated "
          f"trajectory matches it to {report.max_state_deviation:.1e} "
          f"(tightness {'PASS' if report.passed else 'FAIL'})")

    # where does the optimum meter?  average throttle per cell/commodity
    alpha = schedule.materialize(scenario.h, scenario.n_steps)
    print("\nmean optimal throttle over the horizon (1.0 = no control):")
    for ki, k in enumerate(g.commodities):
        cells = [f"{c.id}:{alpha[:, ki, i].mean():.2f}"
                 for i, c in enumerate(g.cells)
                 if alpha[:, ki, i].min() < 0.999]
        print(f"  {k:6s} {'  '.join(cells) if cells else '(untouched)'}")
    print("\nthe optimum meters trucks hard at the diverge and brushes cars "
          "only at the interchange,\nkeeping the work zone fed at exactly its "
          "discharge rate instead of burying it in queue.")


if __name__ == "__main__":
    main()
