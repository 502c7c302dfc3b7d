"""Fundamental diagrams: per-commodity demand and aggregate supply functions.

Demand functions are concave non-decreasing with d(0) = 0, stored as a finite
minimum of affine pieces; the canonical linear case is the single piece with
slope ``vff / length`` and intercept 0.  Supply functions are affine
non-increasing in the *weighted volume* (a per-commodity weighted sum of the
cell state, e.g. weighted by vehicle length); ramp cells that accept any
inflow carry an ``unbounded`` flag and evaluate to +inf.

Units network-wide: miles, hours, vehicles, vehicles/hour.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np


class AffinePiece(NamedTuple):
    slope: float      # 1/hour
    intercept: float  # vehicles/hour


class DemandFunction:
    """min over affine pieces; concave, non-decreasing, value 0 at x = 0."""

    def __init__(self, pieces):
        pieces = [AffinePiece(float(s), float(b)) for s, b in pieces]
        if not pieces:
            raise ValueError("demand function needs at least one affine piece")
        for p in pieces:
            if p.slope < 0:
                raise ValueError(f"demand piece slope must be >= 0, got {p.slope}")
            if p.intercept < 0:
                raise ValueError(f"demand piece intercept must be >= 0, got {p.intercept}")
        if min(p.intercept for p in pieces) != 0.0:
            raise ValueError("demand must vanish at 0: some piece needs intercept 0")
        pieces.sort(key=lambda p: (-p.slope, p.intercept))
        self.pieces = tuple(pieces)
        self.max_slope = self.pieces[0].slope

    def __call__(self, x: float) -> float:
        if x < 0:
            raise ValueError(f"volume must be nonnegative, got {x}")
        return min(p.slope * x + p.intercept for p in self.pieces)

    def __eq__(self, other):
        return isinstance(other, DemandFunction) and self.pieces == other.pieces

    def __repr__(self):
        return f"DemandFunction({list(self.pieces)!r})"


def linear_demand(vff_mph: float, length_mi: float,
                  capacity_vph: float | None = None) -> DemandFunction:
    """Linear demand (v/L)x, optionally capped at a flow capacity."""
    if vff_mph <= 0:
        raise ValueError(f"free-flow speed must be positive, got {vff_mph}")
    if length_mi <= 0:
        raise ValueError(f"cell length must be positive, got {length_mi}")
    pieces = [(vff_mph / length_mi, 0.0)]
    if capacity_vph is not None:
        if capacity_vph <= 0:
            raise ValueError(f"capacity must be positive, got {capacity_vph}")
        pieces.append((0.0, capacity_vph))
    return DemandFunction(pieces)


def demand(d: DemandFunction, x: float, alpha: float = 1.0) -> float:
    """Controlled demand alpha * d(x); alpha scales the whole rate."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"control coefficient must be in [0, 1], got {alpha}")
    return alpha * d(x)


class SupplyFunction:
    """Affine non-increasing cap on total inflow, as a function of the
    weighted volume; ``unbounded`` cells impose no cap (evaluate to +inf)."""

    def __init__(self, intercept: float = math.inf, slope: float = 0.0,
                 weights: Mapping[str, float] | None = None, unbounded: bool = False):
        self.unbounded = bool(unbounded)
        if self.unbounded:
            self.intercept = math.inf
            self.slope = 0.0
            self.weights = dict(weights) if weights else {}
            return
        intercept = float(intercept)
        slope = float(slope)
        if not math.isfinite(intercept) or intercept < 0:
            raise ValueError(f"supply intercept must be finite and >= 0, got {intercept}")
        if slope > 0:
            raise ValueError(f"supply slope must be <= 0, got {slope}")
        self.intercept = intercept
        self.slope = slope
        self.weights = dict(weights) if weights else {}
        for k, w in self.weights.items():
            if w <= 0:
                raise ValueError(f"supply weight for {k!r} must be positive, got {w}")

    def weight(self, commodity: str) -> float:
        return self.weights.get(commodity, 1.0)

    def __call__(self, weighted_volume: float, truncate: bool = True) -> float:
        if weighted_volume < 0:
            raise ValueError(f"weighted volume must be nonnegative, got {weighted_volume}")
        if self.unbounded:
            return math.inf
        value = self.intercept + self.slope * weighted_volume
        return max(0.0, value) if truncate else value

    def __repr__(self):
        if self.unbounded:
            return "SupplyFunction(unbounded=True)"
        return (f"SupplyFunction(intercept={self.intercept!r}, slope={self.slope!r}, "
                f"weights={self.weights!r})")


def supply(s: SupplyFunction, weighted_volume: float, truncate: bool = True) -> float:
    """Evaluate a supply cap. Simulation uses the truncated form max(0, .);
    the relaxation uses the raw affine value (truncate=False)."""
    return s(weighted_volume, truncate=truncate)


def weighted_volume(weights: Mapping[str, float], x: Mapping[str, float]) -> float:
    """Sum of w_k * x_k over the commodities present in ``x``."""
    total = 0.0
    for k, v in x.items():
        if k not in weights:
            raise KeyError(f"no supply weight for commodity {k!r}")
        if v < 0:
            raise ValueError(f"volume for {k!r} must be nonnegative, got {v}")
        total += weights[k] * v
    return total


@dataclass(frozen=True)
class CarTruckSupplyParams:
    """Two-class supply from wave speed and vehicle lengths: available space
    scaled by the average vehicle length l_tilde = p*l_car + (1-p)*l_truck."""

    w_mph: float
    length_mi: float
    n_lanes: int = 1
    beta: float = 1.0
    l_car_mi: float = 0.0028
    l_truck_mi: float = 0.0075
    p: float = 0.9

    def __post_init__(self):
        if self.w_mph <= 0:
            raise ValueError(f"wave speed must be positive, got {self.w_mph}")
        if self.length_mi <= 0:
            raise ValueError(f"cell length must be positive, got {self.length_mi}")
        if self.n_lanes <= 0:
            raise ValueError(f"lane count must be positive, got {self.n_lanes}")
        if not (0.0 < self.beta <= 1.0):
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"car fraction must be in [0, 1], got {self.p}")
        if self.l_tilde <= 0:
            raise ValueError("average vehicle length must be positive")

    @property
    def l_tilde(self) -> float:
        return self.p * self.l_car_mi + (1.0 - self.p) * self.l_truck_mi

    @property
    def intercept(self) -> float:
        # value at empty cell: (w/L) * beta*L*n / l_tilde
        return self.w_mph * self.beta * self.n_lanes / self.l_tilde

    @property
    def slope(self) -> float:
        # coefficient on the weighted volume sum(l_k x_k)
        return -self.w_mph / (self.length_mi * self.l_tilde)

    def supply_function(self, car: str = "car", truck: str = "truck") -> SupplyFunction:
        return SupplyFunction(self.intercept, self.slope,
                              weights={car: self.l_car_mi, truck: self.l_truck_mi})


def car_truck_supply(params: CarTruckSupplyParams, x_car: float, x_truck: float) -> float:
    """Two-class supply value (truncated at 0, as in forward simulation)."""
    if x_car < 0 or x_truck < 0:
        raise ValueError("volumes must be nonnegative")
    rho = params.l_car_mi * x_car + params.l_truck_mi * x_truck
    return max(0.0, params.intercept + params.slope * rho)


class FundamentalDiagram:
    """Per-cell per-commodity demand plus per-cell supply for one network.

    ``demand_map`` maps cell id -> {commodity -> DemandFunction} and must
    cover every (cell, commodity) pair; ``supply_map`` maps cell id ->
    SupplyFunction and must cover every cell.
    """

    def __init__(self, graph, demand_map, supply_map):
        self.graph = graph
        self.demand_map = {c: dict(demand_map[c]) for c in (x.id for x in graph.cells)}
        self.supply_map = dict(supply_map)
        for c in graph.cells:
            if c.id not in demand_map:
                raise ValueError(f"no demand functions for cell {c.id!r}")
            for k in graph.commodities:
                if k not in demand_map[c.id]:
                    raise ValueError(f"no demand function for cell {c.id!r}, "
                                     f"commodity {k!r}")
            if c.id not in supply_map:
                raise ValueError(f"no supply function for cell {c.id!r}")
        self._compile()

    def _compile(self):
        g = self.graph
        K, E = g.n_commodities, g.n_cells
        P = max(len(self.demand_map[c.id][k].pieces)
                for c in g.cells for k in g.commodities)
        self.demand_slopes = np.zeros((P, K, E))
        self.demand_intercepts = np.full((P, K, E), np.inf)
        for i, c in enumerate(g.cells):
            for ki, k in enumerate(g.commodities):
                for pi, piece in enumerate(self.demand_map[c.id][k].pieces):
                    self.demand_slopes[pi, ki, i] = piece.slope
                    self.demand_intercepts[pi, ki, i] = piece.intercept
        self.n_pieces = P
        self.supply_intercept = np.empty(E)
        self.supply_slope = np.zeros(E)
        self.supply_weights = np.ones((K, E))
        self.bounded_mask = np.zeros(E, dtype=bool)
        for i, c in enumerate(g.cells):
            s = self.supply_map[c.id]
            self.supply_intercept[i] = s.intercept
            self.bounded_mask[i] = not s.unbounded
            if not s.unbounded:
                self.supply_slope[i] = s.slope
                for ki, k in enumerate(g.commodities):
                    self.supply_weights[ki, i] = s.weight(k)

    # -- vectorized evaluation over full network state ------------------------

    def demand_values(self, x: np.ndarray) -> np.ndarray:
        """d_i^(k)(x_i^(k)) for a (K, E) state array; returns (K, E)."""
        vals = self.demand_slopes * x[None, :, :] + self.demand_intercepts
        return vals.min(axis=0)

    def supply_values(self, x: np.ndarray, truncate: bool = True) -> np.ndarray:
        """s_i at the weighted volume of a (K, E) state; +inf where unbounded."""
        rho = (self.supply_weights * x).sum(axis=0)
        vals = self.supply_intercept + self.supply_slope * rho
        if truncate:
            vals = np.maximum(vals, 0.0)
        vals[~self.bounded_mask] = np.inf
        return vals

    def demand_fn(self, cell_id: str, commodity: str) -> DemandFunction:
        return self.demand_map[cell_id][commodity]

    def supply_fn(self, cell_id: str) -> SupplyFunction:
        return self.supply_map[cell_id]

    # -- config (JSON) form ----------------------------------------------------

    def demand_config(self) -> dict:
        return {
            c.id: {k: {"pieces": [{"slope": p.slope, "intercept": p.intercept}
                                  for p in self.demand_map[c.id][k].pieces]}
                   for k in self.graph.commodities}
            for c in self.graph.cells
        }

    def supply_config(self) -> dict:
        out = {}
        for c in self.graph.cells:
            s = self.supply_map[c.id]
            if s.unbounded:
                out[c.id] = {"unbounded": True}
            else:
                out[c.id] = {"intercept_vph": s.intercept, "slope_per_h": s.slope,
                             "weights": {k: s.weight(k) for k in self.graph.commodities}}
        return out


def _demand_from_entry(entry: dict, cell) -> DemandFunction:
    if "pieces" in entry:
        return DemandFunction([(p["slope"], p["intercept"]) for p in entry["pieces"]])
    if "vff_mph" in entry:
        return linear_demand(float(entry["vff_mph"]), cell.length_mi,
                             capacity_vph=entry.get("capacity_vph"))
    raise ValueError(f"demand entry needs 'pieces' or 'vff_mph': {entry}")


def _supply_from_entry(entry: dict, cell, commodities) -> SupplyFunction:
    if entry.get("unbounded"):
        return SupplyFunction(unbounded=True)
    if "car_truck" in entry:
        ct = entry["car_truck"]
        params = CarTruckSupplyParams(
            w_mph=float(ct["w_mph"]),
            length_mi=cell.length_mi,
            n_lanes=cell.lanes,
            beta=cell.beta,
            l_car_mi=float(ct.get("l_car_mi", 0.0028)),
            l_truck_mi=float(ct.get("l_truck_mi", 0.0075)),
            p=float(ct.get("p", 0.9)),
        )
        if len(commodities) >= 2:
            return params.supply_function(car=commodities[0], truck=commodities[1])
        return SupplyFunction(params.intercept, params.slope,
                              weights={commodities[0]: params.l_car_mi})
    if "intercept_vph" in entry:
        return SupplyFunction(float(entry["intercept_vph"]),
                              float(entry.get("slope_per_h", 0.0)),
                              weights=entry.get("weights"))
    raise ValueError(f"supply entry needs 'unbounded', 'car_truck', or 'intercept_vph': {entry}")


def diagram_from_config(graph, demand_cfg: dict, supply_cfg: dict) -> FundamentalDiagram:
    """Build a diagram from the config sections.

    Both sections accept a ``"default"`` key applied to cells without their
    own entry.  Demand entries are per commodity: ``{"pieces": [...]}`` or
    ``{"vff_mph": v, "capacity_vph": optional}``.  Supply entries are
    ``{"unbounded": true}``, ``{"car_truck": {w_mph, p, l_car_mi,
    l_truck_mi}}`` (geometry taken from the cell record; commodity order
    taken as (car, truck) from the network commodity list), or explicit
    ``{"intercept_vph", "slope_per_h", "weights"}``.
    """
    demand_default = demand_cfg.get("default", {})
    supply_default = supply_cfg.get("default")
    demand_map, supply_map = {}, {}
    for c in graph.cells:
        per_cell = demand_cfg.get(c.id, {})
        demand_map[c.id] = {}
        for k in graph.commodities:
            entry = per_cell.get(k, demand_default.get(k))
            if entry is None:
                raise ValueError(f"no demand config for cell {c.id!r}, commodity {k!r}")
            demand_map[c.id][k] = _demand_from_entry(entry, c)
        s_entry = supply_cfg.get(c.id, supply_default)
        if s_entry is None:
            raise ValueError(f"no supply config for cell {c.id!r}")
        supply_map[c.id] = _supply_from_entry(s_entry, c, graph.commodities)
    return FundamentalDiagram(graph, demand_map, supply_map)


def max_stable_step(graph, fd: FundamentalDiagram) -> float:
    """Largest step length h (hours) honoring the per-cell transfer bound:
    h * max demand slope <= 1 for every cell and commodity, i.e.
    min over (i, k) of L_i / vff_i^(k) in the linear case."""
    bound = math.inf
    for c in graph.cells:
        for k in graph.commodities:
            slope = fd.demand_map[c.id][k].max_slope
            if slope > 0:
                bound = min(bound, 1.0 / slope)
    return bound
