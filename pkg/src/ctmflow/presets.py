"""Bundled example networks.

Two presets ship with the package:

* ``two_branch_*``: a ten-cell freeway with a car/truck mix, two
  reduced-capacity work-zone cells, a truck-banned exit branch, and a
  hand-tuned two-phase truck-metering schedule;
* ``corridor_*``: a twenty-road corridor (Los Angeles area postmile
  ranges on I-405/I-105/I-110/SR-91/I-5/I-710/I-605) whose network model
  is calibrated from a deterministic, seeded synthetic sensor table of
  5-minute loop-detector flow counts over a four-hour morning window.
"""

from __future__ import annotations

import io
import math
from dataclasses import replace
from datetime import datetime, timedelta

import numpy as np

from .calibrate import (
    DEFAULT_SPLIT_P,
    CalibrationResult,
    RoadSpec,
    calibrate_network,
    inflow_from_sensors,
    initial_state_from_sensors,
    load_sensor_csv,
)
from .diagrams import (
    CarTruckSupplyParams,
    FundamentalDiagram,
    SupplyFunction,
    linear_demand,
)
from .network import Cell, NetworkGraph, RoutingEntry, RoutingSchedule
from .scenario import ControlSchedule, CostSpec, InflowProfile, Scenario

# ---------------------------------------------------------------------------
# two-branch freeway
# ---------------------------------------------------------------------------

TWO_BRANCH_CELL_IDS = tuple(str(i) for i in range(1, 11))
TWO_BRANCH_COMMODITIES = ("car", "truck")


# fraction of cars that stay on the mainline (through the work zone) at the
# cell-5 diverge; the rest take exit 7, which is closed to trucks
TWO_BRANCH_CAR_MAINLINE_SHARE = 0.20
# jam spacing per vehicle, miles (truck value covers an articulated rig)
TWO_BRANCH_L_CAR = 0.0028
TWO_BRANCH_L_TRUCK = 0.016


def two_branch_network():
    """Ten 0.5-mile cells: a two-lane approach 1..4 into a four-lane
    interchange cell 5 that diverges into the single-lane work-zone branch
    6->8 and the exit 7 (closed to trucks), then a final diverge from 8
    into exits 9 and 10.  Cell 1 is the entry ramp; construction barriers
    leave cells 5 and 6 only half / a quarter of their storage.  Signage
    diverts 80 % of cars to exit 7, but every truck must continue through
    the work zone.

    Returns (graph, diagram, routing).
    """
    half = 0.5
    cells = [
        Cell("1", None, "a", half, is_onramp=True),
        Cell("2", "a", "b", half, lanes=2),
        Cell("3", "b", "c", half, lanes=2),
        Cell("4", "c", "d", half, lanes=2),
        Cell("5", "d", "e", half, lanes=4, beta=0.5),
        Cell("6", "e", "f", half, beta=0.25),
        Cell("7", "e", None, half, is_offramp=True),
        Cell("8", "f", "g", half, lanes=2),
        Cell("9", "g", None, half, is_offramp=True),
        Cell("10", "g", None, half, is_offramp=True),
    ]
    graph = NetworkGraph(cells, TWO_BRANCH_COMMODITIES)

    demand_map = {
        c.id: {"car": linear_demand(60.0, half), "truck": linear_demand(40.0, half)}
        for c in cells
    }
    supply_map = {}
    for c in cells:
        if c.is_onramp or c.is_offramp:
            supply_map[c.id] = SupplyFunction(unbounded=True)
        else:
            params = CarTruckSupplyParams(w_mph=9.0, length_mi=half,
                                          n_lanes=c.lanes, beta=c.beta, p=0.9,
                                          l_car_mi=TWO_BRANCH_L_CAR,
                                          l_truck_mi=TWO_BRANCH_L_TRUCK)
            supply_map[c.id] = params.supply_function()
    diagram = FundamentalDiagram(graph, demand_map, supply_map)

    entries = []
    for k in TWO_BRANCH_COMMODITIES:
        for a, b in (("1", "2"), ("2", "3"), ("3", "4"), ("4", "5"), ("6", "8")):
            entries.append(RoutingEntry(k, a, b, 0.0, 1.0))
        entries.append(RoutingEntry(k, "8", "9", 0.0, 0.5))
        entries.append(RoutingEntry(k, "8", "10", 0.0, 0.5))
    # most cars follow the posted detour onto exit 7; trucks may not use it
    share = TWO_BRANCH_CAR_MAINLINE_SHARE
    entries.append(RoutingEntry("car", "5", "6", 0.0, share))
    entries.append(RoutingEntry("car", "5", "7", 0.0, 1.0 - share))
    entries.append(RoutingEntry("truck", "5", "6", 0.0, 1.0))
    routing = RoutingSchedule(graph, entries)
    return graph, diagram, routing


def two_branch_inflow(graph: NetworkGraph) -> InflowProfile:
    """Entry demand at cell 1: a light first phase, a surge between 250 s
    and 750 s, then nothing (the network drains)."""
    t_surge = 250.0 / 3600.0
    t_stop = 750.0 / 3600.0
    return InflowProfile(graph, [
        ("car", "1", 0.0, 1620.0),
        ("truck", "1", 0.0, 180.0),
        ("car", "1", t_surge, 2700.0),
        ("truck", "1", t_surge, 300.0),
        ("car", "1", t_stop, 0.0),
        ("truck", "1", t_stop, 0.0),
    ])


# hand-tuned truck holding pattern: because every truck must pass through the
# single-lane work zone, briefly slowing trucks on the approach (cells 2-4)
# and at the interchange (cell 5) keeps the mixed queue from choking the
# diverge for everyone.  Two phases, switch at 625 s, released at 1250 s.
_HEURISTIC_TRUCK_APPROACH = (0.85, 0.95)   # cells 2-4, phase 1 / phase 2
_HEURISTIC_TRUCK_DIVERGE = (0.70, 0.60)    # cell 5, phase 1 / phase 2


def two_branch_heuristic_control(graph: NetworkGraph) -> ControlSchedule:
    """Two-phase hand-tuned truck metering (switch at 625 s, released at
    1250 s); cars are left uncontrolled."""
    t2 = 625.0 / 3600.0
    t3 = 1250.0 / 3600.0
    entries = []
    for cid in ("2", "3", "4"):
        entries.extend([
            ("truck", cid, 0.0, _HEURISTIC_TRUCK_APPROACH[0]),
            ("truck", cid, t2, _HEURISTIC_TRUCK_APPROACH[1]),
            ("truck", cid, t3, 1.0),
        ])
    entries.extend([
        ("truck", "5", 0.0, _HEURISTIC_TRUCK_DIVERGE[0]),
        ("truck", "5", t2, _HEURISTIC_TRUCK_DIVERGE[1]),
        ("truck", "5", t3, 1.0),
    ])
    return ControlSchedule(graph, entries)


def two_branch_scenario(control: ControlSchedule | None = None,
                        heuristic: bool = False,
                        name: str | None = None) -> Scenario:
    """400 steps of 5 s starting from an empty network, total-travel-time
    cost.  Pass ``heuristic=True`` to bundle the hand-tuned schedule."""
    graph, diagram, routing = two_branch_network()
    if heuristic:
        if control is not None:
            raise ValueError("pass a control schedule or heuristic=True, not both")
        control = two_branch_heuristic_control(graph)
    x0 = np.zeros((graph.n_commodities, graph.n_cells))
    return Scenario(graph, diagram, routing, two_branch_inflow(graph), x0,
                    h=5.0 / 3600.0, n_steps=400, cost=CostSpec.total_travel_time(),
                    control=control,
                    name=name or ("two-branch-heuristic" if heuristic else "two-branch"))


# ---------------------------------------------------------------------------
# synthetic twenty-road corridor
# ---------------------------------------------------------------------------

# (road id, freeway-direction, postmile start, postmile end); six lanes each
_CORRIDOR_ROADS = (
    ("e1", "I405-S", 52.93, 45.14),
    ("e2", "I405-S", 44.37, 37.08),
    ("e3", "I405-S", 36.34, 31.82),
    ("e4", "I405-S", 30.55, 20.65),
    ("e5", "I105-E", 2.50, 7.20),
    ("e6", "I105-E", 7.56, 13.20),
    ("e7", "I105-E", 13.86, 17.30),
    ("e8", "I110-S", 15.22, 13.50),
    ("e9", "I110-S", 13.33, 9.93),
    ("e10", "SR91-E", 0.56, 5.40),
    ("e11", "SR91-E", 6.20, 10.22),
    ("e12", "SR91-E", 11.37, 18.14),
    ("e13", "SR91-E", 19.17, 23.87),
    ("e14", "I5-S", 123.21, 114.71),
    ("e15", "I5-S", 113.99, 107.25),
    ("e16", "I5-S", 105.71, 95.25),
    ("e17", "I710-S", 12.52, 10.50),
    ("e18", "I710-S", 10.29, 8.33),
    ("e19", "I710-S", 7.54, 4.29),
    ("e20", "I605-S", 9.35, 7.25),
)

CORRIDOR_WINDOW_START = datetime(2025, 6, 3, 6, 0)   # 06:00, four-hour window
CORRIDOR_SAMPLE_MINUTES = 5
CORRIDOR_WINDOW_HOURS = 4
# hour-of-window demand multipliers: build-up, peak, sustained, drain
_CORRIDOR_HOUR_SHAPE = (0.8, 1.1, 1.0, 0.6)
# morning mix is truck-heavy; trucks run short hops (high exit turnover)
# while cars are predominantly through traffic
_CORRIDOR_CAR_SHARE = 0.90
DEFAULT_CORRIDOR_SEED = 7


def corridor_roads(trim_stubs: bool = False, cell_length_mi: float = 2.0,
                   min_tail_mi: float = 1.2) -> list[RoadSpec]:
    """The twenty corridor road sections (six lanes, 60/40 mph car/truck
    free-flow speeds).

    With ``trim_stubs=True``, a road whose final segmentation cell would be
    shorter than ``min_tail_mi`` has its postmile range shortened to drop
    that stub: the synthetic sensor layout places no station inside such a
    sliver, and the modeled geometry keeps only instrumented cells.
    """
    roads = [RoadSpec(rid, fw, a, b) for rid, fw, a, b in _CORRIDOR_ROADS]
    if not trim_stubs:
        return roads
    out = []
    for r in roads:
        n_full = int(math.floor(r.length_mi / cell_length_mi + 1e-9))
        rem = r.length_mi - n_full * cell_length_mi
        if n_full >= 1 and 1e-9 < rem < min_tail_mi:
            direction = 1.0 if r.pm_end >= r.pm_start else -1.0
            r = replace(r, pm_end=r.pm_start + direction * n_full * cell_length_mi)
        out.append(r)
    return out


def write_corridor_roads_csv(path, trim_stubs: bool = True):
    roads = corridor_roads(trim_stubs=trim_stubs)
    with open(path, "w", newline="") as fh:
        fh.write("road,freeway,pm_start,pm_end,lanes,vff_car,vff_truck\n")
        for r in roads:
            fh.write(f"{r.road_id},{r.freeway},{r.pm_start:g},{r.pm_end:g},"
                     f"{r.lanes},{r.vff_mph['car']:g},{r.vff_mph['truck']:g}\n")


def _corridor_road_profiles(roads, rng):
    """Per-road draw of trunk demand, feeder demands, exit shares, and the
    mid-road bottleneck cap.  Deterministic in the rng state."""
    profiles = {}
    for road in roads:
        n = max(1, math.ceil(road.length_mi / 2.0 - 1e-9))
        trunk = rng.uniform(5200.0, 6800.0)
        feeders = {j: rng.uniform(350.0, 850.0) for j in range(2, n + 1)}
        exit_car = {j: rng.uniform(0.03, 0.06) for j in range(1, n + 1)}
        exit_truck = {j: rng.uniform(0.22, 0.35) for j in range(1, n + 1)}
        cap_fraction = rng.uniform(0.50, 0.62)
        bottleneck = 2 if n >= 2 else None
        profiles[road.road_id] = {
            "n": n, "trunk": trunk, "feeders": feeders,
            "exit_car": exit_car, "exit_truck": exit_truck,
            "cap_fraction": cap_fraction, "bottleneck": bottleneck,
        }
    return profiles


def _propagate_road_flows(profile, multiplier, cap):
    """March one road downstream for one demand level: arrivals are reduced
    by exits and fed by onramps; the registered (sensor) flow at the
    bottleneck cell is clipped at the cap, modeling congested throughput."""
    n = profile["n"]
    a_car = _CORRIDOR_CAR_SHARE * profile["trunk"] * multiplier
    a_truck = (1.0 - _CORRIDOR_CAR_SHARE) * profile["trunk"] * multiplier
    main, offs = {}, {}
    for j in range(1, n + 1):
        if j >= 2:
            feeder = profile["feeders"][j] * multiplier
            a_car += _CORRIDOR_CAR_SHARE * feeder
            a_truck += (1.0 - _CORRIDOR_CAR_SHARE) * feeder
        total = a_car + a_truck
        if cap is not None and j == profile["bottleneck"] and total > cap:
            shrink = cap / total
            a_car *= shrink
            a_truck *= shrink
        main[j] = (a_car, a_truck)
        off_car = profile["exit_car"][j] * a_car
        off_truck = profile["exit_truck"][j] * a_truck
        offs[j] = (off_car, off_truck)
        a_car -= off_car
        a_truck -= off_truck
    return main, offs


def corridor_sensor_rows(seed: int = DEFAULT_CORRIDOR_SEED,
                         trim_stubs: bool = True) -> list[tuple]:
    """Deterministic synthetic 5-minute flow counts for every corridor cell
    and commodity: (ISO timestamp, cell id, commodity, veh/h) tuples.

    Each road carries a morning-peak demand profile; the second mainline
    cell of every multi-cell road is a bottleneck whose registered flow
    saturates at 55-68 % of the peak arriving flow, so the calibrated
    supply there forces congestion.  Exit shares differ between cars and
    trucks, so the estimated routing is commodity-dependent.
    """
    roads = corridor_roads(trim_stubs=trim_stubs)
    rng = np.random.default_rng(seed)
    profiles = _corridor_road_profiles(roads, rng)

    # capacity cap per road: fraction of the peak arriving flow at the
    # bottleneck cell under the uncapped march
    caps = {}
    for road in roads:
        p = profiles[road.road_id]
        if p["bottleneck"] is None:
            caps[road.road_id] = None
            continue
        peak_main, _ = _propagate_road_flows(p, max(_CORRIDOR_HOUR_SHAPE), cap=None)
        peak_total = sum(peak_main[p["bottleneck"]])
        caps[road.road_id] = p["cap_fraction"] * peak_total

    n_samples = CORRIDOR_WINDOW_HOURS * 60 // CORRIDOR_SAMPLE_MINUTES + 1
    rows = []
    for s in range(n_samples):
        ts = CORRIDOR_WINDOW_START + timedelta(minutes=CORRIDOR_SAMPLE_MINUTES * s)
        iso = ts.isoformat()
        hour = min(s * CORRIDOR_SAMPLE_MINUTES // 60, CORRIDOR_WINDOW_HOURS - 1)
        mult = _CORRIDOR_HOUR_SHAPE[hour]
        for road in roads:
            p = profiles[road.road_id]
            main, offs = _propagate_road_flows(p, mult, caps[road.road_id])
            rid = road.road_id
            for j in range(1, p["n"] + 1):
                if j == 1:
                    on_car = _CORRIDOR_CAR_SHARE * p["trunk"] * mult
                    on_truck = (1.0 - _CORRIDOR_CAR_SHARE) * p["trunk"] * mult
                else:
                    feeder = p["feeders"][j] * mult
                    on_car = _CORRIDOR_CAR_SHARE * feeder
                    on_truck = (1.0 - _CORRIDOR_CAR_SHARE) * feeder
                rows.append((iso, f"{rid}_on{j}", "car", round(on_car, 1)))
                rows.append((iso, f"{rid}_on{j}", "truck", round(on_truck, 1)))
                rows.append((iso, f"{rid}_m{j}", "car", round(main[j][0], 1)))
                rows.append((iso, f"{rid}_m{j}", "truck", round(main[j][1], 1)))
                rows.append((iso, f"{rid}_off{j}", "car", round(offs[j][0], 1)))
                rows.append((iso, f"{rid}_off{j}", "truck", round(offs[j][1], 1)))
    return rows


def corridor_sensor_csv_text(seed: int = DEFAULT_CORRIDOR_SEED,
                             trim_stubs: bool = True) -> str:
    lines = ["timestamp,cell_id,commodity,flow_vph"]
    for iso, cell, commodity, flow in corridor_sensor_rows(seed, trim_stubs):
        lines.append(f"{iso},{cell},{commodity},{flow:g}")
    return "\n".join(lines) + "\n"


def write_corridor_sensor_csv(path, seed: int = DEFAULT_CORRIDOR_SEED,
                              trim_stubs: bool = True):
    with open(path, "w", newline="") as fh:
        fh.write(corridor_sensor_csv_text(seed, trim_stubs))


def corridor_sensor_table(seed: int = DEFAULT_CORRIDOR_SEED,
                          trim_stubs: bool = True):
    """The synthetic sensor rows parsed through the standard CSV loader."""
    return load_sensor_csv(io.StringIO(corridor_sensor_csv_text(seed, trim_stubs)))


def corridor_calibration(seed: int = DEFAULT_CORRIDOR_SEED,
                         split_p: float = DEFAULT_SPLIT_P) -> CalibrationResult:
    return calibrate_network(corridor_roads(trim_stubs=True),
                             corridor_sensor_table(seed), split_p=split_p)


def corridor_scenario(seed: int = DEFAULT_CORRIDOR_SEED, n_steps: int = 200,
                      split_p: float = DEFAULT_SPLIT_P,
                      name: str = "corridor-synth") -> Scenario:
    """Calibrated corridor scenario: 200 steps at the recommended 72 s step
    (four hours), sensor-derived initial state and onramp inflows,
    total-travel-time cost, no control bundled."""
    table = corridor_sensor_table(seed)
    cal = calibrate_network(corridor_roads(trim_stubs=True), table, split_p=split_p)
    x0 = initial_state_from_sensors(cal.graph, cal.diagram, table)
    inflow = inflow_from_sensors(cal.graph, table)
    return Scenario(cal.graph, cal.diagram, cal.routing, inflow, x0,
                    h=cal.recommended_h_hours, n_steps=n_steps,
                    cost=CostSpec.total_travel_time(), name=name)
