"""Regenerate the bundled files under scenarios/ from the package presets.

Run from the repository root after changing anything in ctmflow.presets:

    python demos/regenerate_scenarios.py
"""

import os

from ctmflow.network import save_network_config
from ctmflow.presets import (
    two_branch_network,
    two_branch_scenario,
    write_corridor_roads_csv,
    write_corridor_sensor_csv,
)
from ctmflow.scenario import save_scenario

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..")


def main():
    tb_dir = os.path.join(ROOT, "scenarios", "two_branch")
    os.makedirs(tb_dir, exist_ok=True)
    graph, diagram, routing = two_branch_network()
    save_network_config(os.path.join(tb_dir, "network.json"), graph, diagram, routing)
    save_scenario(os.path.join(tb_dir, "scenario.json"),
                  two_branch_scenario(), "network.json")
    save_scenario(os.path.join(tb_dir, "scenario_heuristic.json"),
                  two_branch_scenario(heuristic=True), "network.json")
    print(f"wrote network.json, scenario.json, scenario_heuristic.json to {tb_dir}")

    cor_dir = os.path.join(ROOT, "scenarios", "corridor")
    os.makedirs(cor_dir, exist_ok=True)
    write_corridor_roads_csv(os.path.join(cor_dir, "roads.csv"))
    write_corridor_sensor_csv(os.path.join(cor_dir, "sensors.csv"))
    print(f"wrote roads.csv, sensors.csv to {cor_dir}")


if __name__ == "__main__":
    main()
