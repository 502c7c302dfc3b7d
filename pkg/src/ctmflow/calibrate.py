"""Network calibration from loop-detector style sensor data.

Pipeline: a road list (freeway, postmile range, lanes, free-flow speeds) is
segmented into fixed-length mainline cells with one collapsed onramp and one
collapsed offramp per cell; per-commodity routing matrices are estimated
from windowed flow count ratios; mainline supply functions are fit through
the registered capacity and the jam point; ramps are unbounded; the
recommended discretization step comes from the stability bound rounded down
to a round number of seconds.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .diagrams import (
    CarTruckSupplyParams,
    FundamentalDiagram,
    SupplyFunction,
    linear_demand,
    max_stable_step,
)
from .network import Cell, NetworkGraph, RoutingEntry, RoutingSchedule
from .scenario import InflowProfile

RAMP_VFF_MPH = 20.0
RAMP_LENGTH_MI = 0.5
RAMP_LANES = 1
DEFAULT_SPLIT_P = 0.96


@dataclass(frozen=True)
class RoadSpec:
    """One directed road: a postmile range on a freeway plus speeds.

    ``vff_mph`` maps commodity name to mainline free-flow speed; its key
    order fixes the commodity order of the calibrated network.
    """

    road_id: str
    freeway: str
    pm_start: float
    pm_end: float
    lanes: int = 6
    vff_mph: dict = field(default_factory=lambda: {"car": 60.0, "truck": 40.0})

    def __post_init__(self):
        if self.length_mi <= 0:
            raise ValueError(f"road {self.road_id!r}: postmile range is empty")
        if self.lanes <= 0:
            raise ValueError(f"road {self.road_id!r}: lanes must be positive")
        for k, v in self.vff_mph.items():
            if v <= 0:
                raise ValueError(f"road {self.road_id!r}: speed for {k!r} must be positive")

    @property
    def length_mi(self) -> float:
        return abs(self.pm_end - self.pm_start)


def _open_csv(path):
    """Accept a filesystem path or an already-open text stream.

    Returns (file object, label for error messages, needs_close)."""
    if hasattr(path, "read"):
        return path, getattr(path, "name", "<stream>"), False
    return open(path, newline=""), str(path), True


def load_road_specs(path) -> list[RoadSpec]:
    """Road list CSV: columns road, freeway, pm_start, pm_end, optional
    lanes, and one vff_<commodity> column per commodity (column order fixes
    commodity order)."""
    fh, label, needs_close = _open_csv(path)
    try:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{label}: empty file")
        required = {"road", "freeway", "pm_start", "pm_end"}
        missing = required - set(reader.fieldnames)
        if missing:
            raise ValueError(f"{label}: missing columns {sorted(missing)}")
        vff_cols = [c for c in reader.fieldnames if c.startswith("vff_")]
        if not vff_cols:
            raise ValueError(f"{label}: need at least one vff_<commodity> column")
        roads = []
        for ln, row in enumerate(reader, start=2):
            try:
                roads.append(RoadSpec(
                    road_id=row["road"].strip(),
                    freeway=row["freeway"].strip(),
                    pm_start=float(row["pm_start"]),
                    pm_end=float(row["pm_end"]),
                    lanes=int(row["lanes"]) if row.get("lanes") else 6,
                    vff_mph={c[len("vff_"):]: float(row[c]) for c in vff_cols},
                ))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{label}:{ln}: {exc}") from None
    finally:
        if needs_close:
            fh.close()
    if not roads:
        raise ValueError(f"{label}: no road rows")
    ids = [r.road_id for r in roads]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{label}: duplicate road ids")
    return roads


def segment_roads(roads: list[RoadSpec], cell_length_mi: float = 2.0,
                  ramp_length_mi: float = RAMP_LENGTH_MI) -> NetworkGraph:
    """Split each road into consecutive mainline cells of ``cell_length_mi``
    (last cell takes the remainder) and attach one onramp entering at each
    cell's tail junction and one offramp leaving at its head junction.

    Cell ids: ``<road>_m<j>`` mainline, ``<road>_on<j>`` / ``<road>_off<j>``
    ramps, j starting at 1.
    """
    if cell_length_mi <= 0:
        raise ValueError("cell length must be positive")
    commodities = list(roads[0].vff_mph)
    for r in roads:
        if list(r.vff_mph) != commodities:
            raise ValueError("all roads must declare the same commodities")
    cells = []
    for r in roads:
        n = max(1, math.ceil(r.length_mi / cell_length_mi - 1e-9))
        for j in range(1, n + 1):
            length = min(cell_length_mi, r.length_mi - (j - 1) * cell_length_mi)
            tail = f"{r.road_id}.n{j - 1}"
            head = f"{r.road_id}.n{j}"
            cells.append(Cell(f"{r.road_id}_m{j}", tail, head, length, lanes=r.lanes))
            cells.append(Cell(f"{r.road_id}_on{j}", None, tail, ramp_length_mi,
                              lanes=RAMP_LANES, is_onramp=True))
            cells.append(Cell(f"{r.road_id}_off{j}", head, None, ramp_length_mi,
                              lanes=RAMP_LANES, is_offramp=True))
    return NetworkGraph(cells, commodities)


def road_of_cell(cell_id: str) -> str:
    """Road id encoded in a segmented cell id."""
    return cell_id.rsplit("_", 1)[0]


def is_mainline(cell: Cell) -> bool:
    return not (cell.is_onramp or cell.is_offramp)


# -- sensor data -----------------------------------------------------------------


@dataclass
class SensorTable:
    """Windowed flow measurements: one series per (cell, commodity)."""

    series: dict            # (cell_id, commodity) -> (timestamps tuple, flows ndarray)
    commodities: tuple
    t0: datetime
    t_end: datetime

    def flows(self, cell_id: str, commodity: str) -> np.ndarray:
        key = (cell_id, commodity)
        if key not in self.series:
            return np.zeros(0)
        return self.series[key][1]

    def window_sum(self, cell_id: str, commodity: str) -> float:
        return float(self.flows(cell_id, commodity).sum())

    def first_flow(self, cell_id: str, commodity: str) -> float:
        f = self.flows(cell_id, commodity)
        return float(f[0]) if len(f) else 0.0

    def max_total_flow(self, cell_id: str) -> float:
        """Max over the window of the all-commodity total flow."""
        per_ts: dict = {}
        for k in self.commodities:
            key = (cell_id, k)
            if key not in self.series:
                continue
            for ts, f in zip(*self.series[key]):
                per_ts[ts] = per_ts.get(ts, 0.0) + f
        return max(per_ts.values(), default=0.0)

    def events(self, cell_id: str, commodity: str):
        """(hours since window start, flow) pairs for profile building."""
        key = (cell_id, commodity)
        if key not in self.series:
            return []
        ts, fl = self.series[key]
        return [((t - self.t0).total_seconds() / 3600.0, float(f))
                for t, f in zip(ts, fl)]


def load_sensor_csv(path) -> SensorTable:
    """Sensor CSV: header ``timestamp,cell_id,commodity,flow_vph`` with
    ISO-8601 timestamps; rows must be unique and time-ordered per
    (cell, commodity); flows nonnegative.  Errors carry line numbers."""
    records = {}
    commodities = []
    fh, label, needs_close = _open_csv(path)
    try:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{label}: empty file")
        missing = {"timestamp", "cell_id", "commodity", "flow_vph"} - set(reader.fieldnames)
        if missing:
            raise ValueError(f"{label}: missing columns {sorted(missing)}")
        for ln, row in enumerate(reader, start=2):
            try:
                ts = datetime.fromisoformat(row["timestamp"].strip())
            except ValueError:
                raise ValueError(f"{label}:{ln}: bad timestamp "
                                 f"{row['timestamp']!r}") from None
            try:
                flow = float(row["flow_vph"])
            except ValueError:
                raise ValueError(f"{label}:{ln}: bad flow {row['flow_vph']!r}") from None
            if flow < 0:
                raise ValueError(f"{label}:{ln}: negative flow {flow}")
            key = (row["cell_id"].strip(), row["commodity"].strip())
            if key[1] not in commodities:
                commodities.append(key[1])
            bucket = records.setdefault(key, [])
            if bucket:
                if ts == bucket[-1][0]:
                    raise ValueError(f"{label}:{ln}: duplicate timestamp for "
                                     f"cell {key[0]!r}, commodity {key[1]!r}")
                if ts < bucket[-1][0]:
                    raise ValueError(f"{label}:{ln}: timestamps not increasing for "
                                     f"cell {key[0]!r}, commodity {key[1]!r}")
            bucket.append((ts, flow))
    finally:
        if needs_close:
            fh.close()
    if not records:
        raise ValueError(f"{label}: no data rows")
    series = {k: (tuple(t for t, _ in v), np.array([f for _, f in v]))
              for k, v in records.items()}
    t0 = min(ts[0] for ts, _ in series.values())
    t_end = max(ts[-1] for ts, _ in series.values())
    return SensorTable(series, tuple(commodities), t0, t_end)


# -- estimators ------------------------------------------------------------------


def estimate_routing(adjacency, series: SensorTable, commodity: str,
                     cell_ids=None) -> np.ndarray:
    """Turning ratios of one commodity from windowed downstream flow counts:
    ratio from i to j = (window flow into j) / (window flow into all
    successors of i).  Rows with adjacency support but zero observed
    downstream flow fall back to a uniform split with a warning; rows with
    no successors (offramps) stay zero.

    ``adjacency`` is a NetworkGraph or a 0/1 matrix (then ``cell_ids`` must
    give the row ordering).
    """
    if isinstance(adjacency, NetworkGraph):
        cell_ids = [c.id for c in adjacency.cells]
        A = adjacency.adjacency_matrix()
    else:
        A = np.asarray(adjacency, dtype=float)
        if cell_ids is None:
            raise ValueError("cell_ids required when passing a raw adjacency matrix")
        if A.shape != (len(cell_ids), len(cell_ids)):
            raise ValueError("adjacency shape does not match cell_ids")
    sums = np.array([series.window_sum(c, commodity) for c in cell_ids])
    if (sums < 0).any():
        raise ValueError("negative window sums")
    R = A * sums[None, :]
    denom = R.sum(axis=1)
    out = np.zeros_like(R)
    for i in range(len(cell_ids)):
        support = np.flatnonzero(A[i])
        if not len(support):
            continue
        if denom[i] > 0:
            out[i] = R[i] / denom[i]
        else:
            warnings.warn(f"no downstream flow observed for cell {cell_ids[i]!r} "
                          f"({commodity}); using a uniform split", stacklevel=2)
            out[i, support] = 1.0 / len(support)
    return out


def estimate_routing_entries(graph: NetworkGraph, series: SensorTable) -> list[RoutingEntry]:
    entries = []
    for k in graph.commodities:
        R = estimate_routing(graph, series, k)
        for i, j in zip(*np.nonzero(R)):
            entries.append(RoutingEntry(k, graph.cells[i].id, graph.cells[j].id,
                                        0.0, float(R[i, j])))
    return entries


def calibrate_supply(series: SensorTable, params: CarTruckSupplyParams,
                     cell_id: str, speeds: tuple = (60.0, 40.0)) -> SupplyFunction:
    """Mainline supply through two points: the intersection of the registered
    capacity (max windowed total flow) with the aggregate demand line at the
    configured vehicle split, and zero at the jam weighted volume.

    ``speeds`` are the (first, second) commodity mainline free-flow speeds
    used for the aggregate demand line; the wave speed in ``params`` is not
    used (the slope follows from the two points)."""
    C = series.max_total_flow(cell_id)
    if C <= 0:
        raise ValueError(f"cell {cell_id!r}: no positive flow in the window, "
                         f"cannot register a capacity")
    v_tilde = params.p * speeds[0] + (1.0 - params.p) * speeds[1]
    rho_cap = C * params.length_mi * params.l_tilde / v_tilde
    rho_jam = params.beta * params.length_mi * params.n_lanes
    if rho_cap >= rho_jam:
        raise ValueError(
            f"cell {cell_id!r}: capacity point (weighted volume {rho_cap:.4g}) "
            f"is not below jam ({rho_jam:.4g}); measured capacity {C:.4g} veh/h "
            f"is inconsistent with the geometry")
    slope = -C / (rho_jam - rho_cap)
    intercept = -slope * rho_jam
    return SupplyFunction(intercept, slope,
                          weights={"car": params.l_car_mi, "truck": params.l_truck_mi})


def initial_state_from_sensors(graph: NetworkGraph, fd: FundamentalDiagram,
                               series: SensorTable) -> np.ndarray:
    """Initial volumes from the first measurement per (cell, commodity):
    volume = flow / demand slope (the free-flow inversion x = flow * L / vff)."""
    x0 = np.zeros((graph.n_commodities, graph.n_cells))
    for i, c in enumerate(graph.cells):
        for k_idx, k in enumerate(graph.commodities):
            flow = series.first_flow(c.id, k)
            if flow <= 0:
                continue
            slope = fd.demand_map[c.id][k].max_slope
            if slope <= 0:
                raise ValueError(f"cell {c.id!r}, commodity {k!r}: cannot invert "
                                 f"flow through a flat demand")
            x0[k_idx, i] = flow / slope
    return x0


def inflow_from_sensors(graph: NetworkGraph, series: SensorTable) -> InflowProfile:
    """Exogenous inflow events at onramps: each onramp's measured flow, held
    piecewise-constant over its sampling interval."""
    entries = []
    for c in graph.cells:
        if not c.is_onramp:
            continue
        for k in graph.commodities:
            for t_hours, flow in series.events(c.id, k):
                entries.append((k, c.id, t_hours, flow))
    return InflowProfile(graph, entries)


def recommended_step_hours(stability_bound_hours: float) -> float:
    """Largest multiple of 0.01 h (36 s) not above the bound; below 0.01 h,
    the largest whole second."""
    if stability_bound_hours <= 0:
        raise ValueError("stability bound must be positive")
    if math.isinf(stability_bound_hours):
        return 0.01
    coarse = math.floor(stability_bound_hours / 0.01 + 1e-12) * 0.01
    if coarse > 0:
        return round(coarse, 10)
    seconds = math.floor(stability_bound_hours * 3600.0 + 1e-9)
    if seconds >= 1:
        return seconds / 3600.0
    return stability_bound_hours


@dataclass
class CalibrationResult:
    graph: NetworkGraph
    diagram: FundamentalDiagram
    routing: RoutingSchedule
    recommended_h_hours: float
    split_p: float
    warnings: list

    @property
    def recommended_h_seconds(self) -> float:
        return self.recommended_h_hours * 3600.0


def calibrate_network(roads: list[RoadSpec], series: SensorTable,
                      split_p: float = DEFAULT_SPLIT_P,
                      cell_length_mi: float = 2.0,
                      ramp_length_mi: float = RAMP_LENGTH_MI,
                      l_car_mi: float = 0.0028,
                      l_truck_mi: float = 0.0075) -> CalibrationResult:
    """Full calibration: segmentation, demand, supply, routing, step size.

    Mainline demand is linear at each road's per-commodity speed over the
    cell length; ramp demand is linear at 20 mph over the ramp length for
    every commodity.  Only mainline cells get (calibrated) bounded supply;
    ramps accept any inflow.
    """
    graph = segment_roads(roads, cell_length_mi, ramp_length_mi)
    by_road = {r.road_id: r for r in roads}
    commodities = graph.commodities
    if len(commodities) < 2 and split_p != 1.0:
        split_p = 1.0

    demand_map, supply_map = {}, {}
    caught: list = []
    for c in graph.cells:
        road = by_road[road_of_cell(c.id)]
        if is_mainline(c):
            demand_map[c.id] = {
                k: linear_demand(road.vff_mph[k], c.length_mi) for k in commodities}
            params = CarTruckSupplyParams(
                w_mph=9.0, length_mi=c.length_mi, n_lanes=c.lanes, beta=c.beta,
                l_car_mi=l_car_mi, l_truck_mi=l_truck_mi, p=split_p)
            speeds = tuple(road.vff_mph[k] for k in commodities[:2])
            if len(speeds) == 1:
                speeds = (speeds[0], speeds[0])
            s = calibrate_supply(series, params, c.id, speeds=speeds)
            # re-key the weights onto the actual commodity names
            w = {commodities[0]: l_car_mi}
            if len(commodities) > 1:
                w[commodities[1]] = l_truck_mi
                for extra in commodities[2:]:
                    w[extra] = l_truck_mi
            supply_map[c.id] = SupplyFunction(s.intercept, s.slope, weights=w)
        else:
            demand_map[c.id] = {
                k: linear_demand(RAMP_VFF_MPH, c.length_mi) for k in commodities}
            supply_map[c.id] = SupplyFunction(unbounded=True)
    diagram = FundamentalDiagram(graph, demand_map, supply_map)

    with warnings.catch_warnings(record=True) as grabbed:
        warnings.simplefilter("always")
        entries = estimate_routing_entries(graph, series)
    caught.extend(str(w.message) for w in grabbed)
    routing = RoutingSchedule(graph, entries)

    h = recommended_step_hours(max_stable_step(graph, diagram))
    return CalibrationResult(graph, diagram, routing, h, split_p, caught)
