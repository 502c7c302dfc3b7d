"""Scenario bundle: everything one simulation or optimization run needs.

A scenario ties a network (graph + fundamental diagram + routing) to a
horizon: step length h (hours), number of steps N, exogenous inflow profile,
initial state, cost specification, and optionally a control schedule.
Inflows and controls are piecewise-constant in time, specified as events
(value holds from t_start until overwritten) and materialized to per-step
arrays when the scenario is bound.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .diagrams import FundamentalDiagram, max_stable_step
from .network import NetworkGraph, RoutingSchedule, load_network_config, validate_routing


class _EventTable:
    """Piecewise-constant (commodity, cell, t_start_hours, value) events."""

    def __init__(self, graph: NetworkGraph, entries, default: float):
        self.graph = graph
        self.default = float(default)
        cleaned = []
        for (commodity, cell, t_start, value) in entries:
            if commodity not in graph.commodity_index:
                raise ValueError(f"unknown commodity {commodity!r}")
            if cell not in graph.index:
                raise ValueError(f"unknown cell {cell!r}")
            if t_start < 0:
                raise ValueError(f"t_start must be >= 0, got {t_start}")
            cleaned.append((str(commodity), str(cell), float(t_start), float(value)))
        cleaned.sort(key=lambda e: (e[2], e[0], e[1]))
        self.entries = tuple(cleaned)

    def materialize(self, h: float, n_steps: int) -> np.ndarray:
        """(n_steps, K, E) array of the value active during each step."""
        g = self.graph
        out = np.full((n_steps, g.n_commodities, g.n_cells), self.default)
        for (commodity, cell, t_start, value) in self.entries:
            k = g.commodity_index[commodity]
            i = g.index[cell]
            t0 = int(math.ceil(t_start / h - 1e-9))
            if t0 < n_steps:
                out[max(t0, 0):, k, i] = value
        return out


class InflowProfile(_EventTable):
    """Exogenous inflow rates (veh/h) at onramp cells; zero elsewhere.

    Either event-based (like all piecewise-constant inputs) or backed by a
    dense (N, K, E) array, e.g. when profiles are derived from sensor data.
    """

    def __init__(self, graph: NetworkGraph, entries=(), array: np.ndarray | None = None):
        self._array = None
        if array is not None:
            if entries:
                raise ValueError("pass events or an array, not both")
            array = np.asarray(array, dtype=float)
            if array.ndim != 3 or array.shape[1:] != (graph.n_commodities, graph.n_cells):
                raise ValueError(f"inflow array must be (N, {graph.n_commodities}, "
                                 f"{graph.n_cells}), got {array.shape}")
            if array.min() < 0:
                raise ValueError("inflow rates must be >= 0")
            off_ramp = array[:, :, ~graph.onramp_mask]
            if off_ramp.size and off_ramp.max() > 0:
                raise ValueError("nonzero inflow on non-onramp cells")
            super().__init__(graph, (), default=0.0)
            self._array = array
            return
        super().__init__(graph, entries, default=0.0)
        for (commodity, cell, t_start, value) in self.entries:
            if value < 0:
                raise ValueError(f"inflow rate must be >= 0, got {value} "
                                 f"({commodity!r} at {cell!r})")
            if value > 0 and cell not in graph.onramps:
                raise ValueError(f"nonzero inflow on non-onramp cell {cell!r}")

    @classmethod
    def from_array(cls, graph: NetworkGraph, array: np.ndarray) -> "InflowProfile":
        return cls(graph, array=array)

    def materialize(self, h: float, n_steps: int) -> np.ndarray:
        if self._array is not None:
            if self._array.shape[0] < n_steps:
                raise ValueError(f"inflow array covers {self._array.shape[0]} steps, "
                                 f"scenario needs {n_steps}")
            return self._array[:n_steps]
        return super().materialize(h, n_steps)


class ControlSchedule:
    """Per-cell, per-commodity demand throttle alpha(t) in [0, 1].

    Built either from piecewise-constant events (alpha holds from t_start
    on) or from a dense (N, K, E) array, e.g. a recovered optimal control.
    """

    def __init__(self, graph: NetworkGraph, entries=(), array: np.ndarray | None = None):
        self.graph = graph
        if array is not None:
            array = np.asarray(array, dtype=float)
            if array.ndim != 3 or array.shape[1:] != (graph.n_commodities, graph.n_cells):
                raise ValueError(f"control array must be (N, {graph.n_commodities}, "
                                 f"{graph.n_cells}), got {array.shape}")
            if array.min() < -1e-12 or array.max() > 1 + 1e-12:
                raise ValueError("control values must lie in [0, 1]")
            self._array = np.clip(array, 0.0, 1.0)
            self._events = None
            return
        self._array = None
        self._events = _EventTable(graph, entries, default=1.0)
        for (commodity, cell, t_start, value) in self._events.entries:
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"control value must be in [0, 1], got {value}")

    @classmethod
    def uncontrolled(cls, graph: NetworkGraph) -> "ControlSchedule":
        return cls(graph, entries=())

    @classmethod
    def from_array(cls, graph: NetworkGraph, array: np.ndarray) -> "ControlSchedule":
        return cls(graph, array=array)

    @property
    def is_dense(self) -> bool:
        return self._array is not None

    def materialize(self, h: float, n_steps: int) -> np.ndarray:
        if self._array is not None:
            if self._array.shape[0] < n_steps:
                raise ValueError(f"control array covers {self._array.shape[0]} steps, "
                                 f"scenario needs {n_steps}")
            return self._array[:n_steps]
        return self._events.materialize(h, n_steps)

    def restrict(self, commodities) -> "ControlSchedule":
        """Keep control on the named commodities, reset others to alpha = 1."""
        keep = set(commodities)
        unknown = keep - set(self.graph.commodities)
        if unknown:
            raise ValueError(f"unknown commodities: {sorted(unknown)}")
        if self._array is not None:
            arr = self._array.copy()
            for ki, k in enumerate(self.graph.commodities):
                if k not in keep:
                    arr[:, ki, :] = 1.0
            return ControlSchedule(self.graph, array=arr)
        entries = [(c, cell, t, v) for (c, cell, t, v) in self._events.entries
                   if c in keep]
        return ControlSchedule(self.graph, entries=entries)


class PiecewisePoint(NamedTuple):
    x: float
    y: float


class _ConvexPWL:
    """Convex piecewise-linear g on [0, inf) through given breakpoints,
    g(0) = 0; the last segment extends to infinity."""

    def __init__(self, points, sign: int):
        pts = [PiecewisePoint(float(x), float(y)) for x, y in points]
        if len(pts) < 2:
            raise ValueError("piecewise cost needs at least two breakpoints")
        if any(pts[i + 1].x <= pts[i].x for i in range(len(pts) - 1)):
            raise ValueError("piecewise breakpoints must have strictly increasing x")
        if pts[0].x != 0.0 or pts[0].y != 0.0:
            raise ValueError("piecewise cost must start at (0, 0)")
        slopes = [(b.y - a.y) / (b.x - a.x) for a, b in zip(pts, pts[1:])]
        if any(s2 < s1 - 1e-12 for s1, s2 in zip(slopes, slopes[1:])):
            raise ValueError("piecewise cost must be convex (non-decreasing slopes)")
        if sign > 0 and min(slopes) < 0:
            raise ValueError("stage cost must be non-decreasing in volume")
        if sign < 0 and max(slopes) > 0:
            raise ValueError("stage cost must be non-increasing in outflow")
        self.points = tuple(pts)
        self.slopes = tuple(slopes)
        # supporting lines (slope, intercept): g(x) = max over lines
        self.lines = tuple((m, a.y - m * a.x) for m, a in zip(slopes, pts))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        vals = [m * x + b for (m, b) in self.lines]
        return np.max(vals, axis=0)


class CostSpec:
    """Separable convex stage cost, non-decreasing in volumes and
    non-increasing in outflows, summed over the horizon.

    Linear part: sum_t sum_k sum_i (x_weight_i * x + z_weight_i * z).
    Optional piecewise parts apply one convex function per state/outflow
    entry.  Volumes are summed over t = 0..N, outflows over t = 0..N-1.
    """

    def __init__(self, x_weight=0.0, z_weight=0.0, x_pwl=None, z_pwl=None,
                 name: str = "custom"):
        self.name = name
        self._x_weight = x_weight
        self._z_weight = z_weight
        self.x_pwl = _ConvexPWL(x_pwl, sign=+1) if x_pwl is not None else None
        self.z_pwl = _ConvexPWL(z_pwl, sign=-1) if z_pwl is not None else None

    @classmethod
    def total_travel_time(cls) -> "CostSpec":
        """Sum of all volumes over all steps (vehicle-steps)."""
        return cls(x_weight=1.0, name="ttt")

    @classmethod
    def total_travel_distance(cls) -> "CostSpec":
        """Negated length-weighted sum of outflows (maximizing distance)."""
        return cls(z_weight="-length", name="ttd")

    def weights(self, graph: NetworkGraph) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell linear coefficients (x_weight, z_weight), each (E,)."""
        def expand(w, sign):
            if isinstance(w, str):
                if w == "-length":
                    return -graph.lengths.copy()
                raise ValueError(f"unknown symbolic weight {w!r}")
            arr = np.broadcast_to(np.asarray(w, dtype=float), (graph.n_cells,)).copy()
            if sign > 0 and arr.min() < 0:
                raise ValueError("volume weights must be >= 0 (cost non-decreasing in x)")
            if sign < 0 and arr.max() > 0:
                raise ValueError("outflow weights must be <= 0 (cost non-increasing in z)")
            return arr
        return expand(self._x_weight, +1), expand(self._z_weight, -1)

    def restrict(self, cell_idx) -> "CostSpec":
        """The same cost over a subset of cells (the cost is separable, so
        per-cell weight arrays are simply selected; scalar and symbolic
        weights apply to any graph unchanged)."""
        def pick(w):
            return w if np.ndim(w) == 0 else np.asarray(w, dtype=float)[cell_idx]
        out = CostSpec.__new__(CostSpec)
        out.name = self.name
        out._x_weight = pick(self._x_weight)
        out._z_weight = pick(self._z_weight)
        out.x_pwl = self.x_pwl
        out.z_pwl = self.z_pwl
        return out

    @classmethod
    def from_config(cls, cfg: dict) -> "CostSpec":
        kind = cfg.get("kind", "ttt")
        if kind == "ttt":
            return cls.total_travel_time()
        if kind == "ttd":
            return cls.total_travel_distance()
        if kind == "pwl":
            return cls(x_weight=cfg.get("x_weight", 0.0),
                       z_weight=cfg.get("z_weight", 0.0),
                       x_pwl=cfg.get("x_points"),
                       z_pwl=cfg.get("z_points"),
                       name="pwl")
        raise ValueError(f"unknown cost kind {kind!r}")

    def to_config(self) -> dict:
        if self.name in ("ttt", "ttd"):
            return {"kind": self.name}
        cfg = {"kind": "pwl", "x_weight": self._x_weight, "z_weight": self._z_weight}
        if self.x_pwl is not None:
            cfg["x_points"] = [[p.x, p.y] for p in self.x_pwl.points]
        if self.z_pwl is not None:
            cfg["z_points"] = [[p.x, p.y] for p in self.z_pwl.points]
        return cfg


@dataclass
class Scenario:
    """Bound inputs for one run; construction enforces the step-size bound
    h <= min cell traversal time so the explicit update stays physical."""

    graph: NetworkGraph
    diagram: FundamentalDiagram
    routing: RoutingSchedule
    inflow: InflowProfile
    x0: np.ndarray            # (K, E) initial volumes
    h: float                  # hours
    n_steps: int
    cost: CostSpec
    control: ControlSchedule | None = None
    name: str = "scenario"

    def __post_init__(self):
        g = self.graph
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.x0.shape != (g.n_commodities, g.n_cells):
            raise ValueError(f"initial state must be ({g.n_commodities}, {g.n_cells}), "
                             f"got {self.x0.shape}")
        if self.x0.min() < 0:
            raise ValueError("initial volumes must be nonnegative")
        if self.n_steps < 1:
            raise ValueError(f"horizon must be >= 1 step, got {self.n_steps}")
        if self.h <= 0:
            raise ValueError(f"step length must be positive, got {self.h}")
        bound = max_stable_step(g, self.diagram)
        if self.h > bound * (1 + 1e-12):
            raise ValueError(
                f"step length {self.h} h exceeds the stability bound "
                f"{bound:.6g} h (min cell length / free-flow speed)")
        report = validate_routing(self.routing, g)
        if not report.ok:
            raise ValueError(str(report))

    # -- materialized per-step arrays -----------------------------------------

    def inflow_array(self) -> np.ndarray:
        return self.inflow.materialize(self.h, self.n_steps)

    def control_array(self) -> np.ndarray:
        ctl = self.control or ControlSchedule.uncontrolled(self.graph)
        return ctl.materialize(self.h, self.n_steps)

    def routing_arrays(self):
        return self.routing.step_pair_values(self.h, self.n_steps)

    def with_control(self, control: ControlSchedule | None, name: str | None = None):
        return Scenario(self.graph, self.diagram, self.routing, self.inflow,
                        self.x0.copy(), self.h, self.n_steps, self.cost,
                        control, name or self.name)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.h


def _resolve(base_dir: str, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def load_scenario(path) -> Scenario:
    """Load a scenario file (JSON).

    Keys: ``network`` (path to the network config, relative to the scenario
    file), ``horizon_steps``, ``step_hours`` or ``step_seconds``, ``cost``
    ({"kind": "ttt" | "ttd" | "pwl", ...}), ``initial_state`` (list of
    {cell, commodity, volume}), ``inflow`` (list of {commodity, cell,
    t_start, rate_vph}; t_start in hours), and optional ``control`` (list of
    {commodity, cell, t_start, alpha}).
    """
    path = os.fspath(path)
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON: {exc}") from None
    for key in ("network", "horizon_steps"):
        if key not in raw:
            raise ValueError(f"{path}: missing key {key!r}")
    if ("step_hours" in raw) == ("step_seconds" in raw):
        raise ValueError(f"{path}: exactly one of step_hours/step_seconds required")
    base = os.path.dirname(os.path.abspath(path))
    graph, diagram, routing = load_network_config(_resolve(base, raw["network"]))

    h = float(raw["step_hours"]) if "step_hours" in raw else float(raw["step_seconds"]) / 3600.0
    n_steps = int(raw["horizon_steps"])

    x0 = np.zeros((graph.n_commodities, graph.n_cells))
    for e in raw.get("initial_state", []):
        if e["cell"] not in graph.index:
            raise ValueError(f"{path}: initial_state references unknown cell {e['cell']!r}")
        if e["commodity"] not in graph.commodity_index:
            raise ValueError(f"{path}: initial_state references unknown commodity "
                             f"{e['commodity']!r}")
        x0[graph.commodity_index[e["commodity"]], graph.index[e["cell"]]] = float(e["volume"])

    inflow = InflowProfile(graph, [
        (e["commodity"], e["cell"], float(e.get("t_start", 0.0)), float(e["rate_vph"]))
        for e in raw.get("inflow", [])
    ])
    control = None
    if raw.get("control"):
        control = ControlSchedule(graph, [
            (e["commodity"], e["cell"], float(e.get("t_start", 0.0)), float(e["alpha"]))
            for e in raw["control"]
        ])
    cost = CostSpec.from_config(raw.get("cost", {"kind": "ttt"}))
    return Scenario(graph, diagram, routing, inflow, x0, h, n_steps, cost,
                    control, name=raw.get("name", os.path.basename(path)))


def save_scenario(path, scenario: Scenario, network_path: str):
    """Write the scenario JSON next to an already-saved network config."""
    g = scenario.graph
    raw = {
        "name": scenario.name,
        "network": network_path,
        "horizon_steps": scenario.n_steps,
        "step_hours": scenario.h,
        "cost": scenario.cost.to_config(),
        "initial_state": [
            {"cell": g.cells[i].id, "commodity": g.commodities[k],
             "volume": float(scenario.x0[k, i])}
            for k in range(g.n_commodities) for i in range(g.n_cells)
            if scenario.x0[k, i] != 0.0
        ],
        "inflow": [
            {"commodity": c, "cell": cell, "t_start": t, "rate_vph": v}
            for (c, cell, t, v) in scenario.inflow.entries
        ],
    }
    if scenario.control is not None and not scenario.control.is_dense:
        raw["control"] = [
            {"commodity": c, "cell": cell, "t_start": t, "alpha": v}
            for (c, cell, t, v) in scenario.control._events.entries
        ]
    with open(path, "w") as fh:
        json.dump(raw, fh, indent=1)
        fh.write("\n")
