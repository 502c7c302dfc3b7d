"""Directed-multigraph road network: cells, junctions, ramps, and routing.

A network is a set of *cells* (one-directional road sections, the links of a
multigraph) joined at *junction* nodes.  Boundary cells have no tail node
(onramps, where exogenous traffic enters) or no head node (offramps, where
traffic leaves).  Cell ids are unique strings, so parallel links between the
same node pair are allowed.

Units are fixed network-wide: miles, hours, vehicles, vehicles/hour.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-9  # absolute tolerance on routing row sums


class JunctionKind(enum.Enum):
    ORDINARY = "ordinary"
    MERGE = "merge"
    DIVERGE = "diverge"
    MIXED = "mixed"


@dataclass(frozen=True)
class Cell:
    """One road section. ``tail``/``head`` are junction node ids or None at
    the network boundary (None tail = onramp entry, None head = offramp exit)."""

    id: str
    tail: str | None
    head: str | None
    length_mi: float
    lanes: int = 1
    is_onramp: bool = False
    is_offramp: bool = False
    beta: float = 1.0  # capacity coefficient in (0, 1], e.g. lane closures

    def __post_init__(self):
        if self.length_mi <= 0:
            raise ValueError(f"cell {self.id!r}: length must be positive, got {self.length_mi}")
        if self.lanes <= 0:
            raise ValueError(f"cell {self.id!r}: lanes must be positive, got {self.lanes}")
        if not (0.0 < self.beta <= 1.0):
            raise ValueError(f"cell {self.id!r}: beta must be in (0, 1], got {self.beta}")
        if self.is_onramp and self.is_offramp:
            raise ValueError(f"cell {self.id!r} cannot be both an onramp and an offramp")


class NetworkGraph:
    """Immutable cell/junction structure with commodity list.

    Construction validates the structural rules:

    * onramp and offramp sets are disjoint (per-cell flags),
    * every declared node has at least one incoming and one outgoing cell
      (boundary endpoints must use a None tail/head instead of a dangling node),
    * every non-offramp cell has at least one successor,
    * onramps have no upstream cells and offramps no downstream cells.
    """

    def __init__(self, cells, commodities):
        cells = tuple(cells)
        commodities = tuple(commodities)
        if not commodities:
            raise ValueError("commodity list must be non-empty")
        if len(set(commodities)) != len(commodities):
            raise ValueError("commodity identifiers must be unique")
        ids = [c.id for c in cells]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate cell ids: {dupes}")

        self.cells = cells
        self.commodities = commodities
        self.index = {c.id: i for i, c in enumerate(cells)}
        self.n_cells = len(cells)
        self.n_commodities = len(commodities)
        self.commodity_index = {k: i for i, k in enumerate(commodities)}

        self.lengths = np.array([c.length_mi for c in cells])
        self.onramp_mask = np.array([c.is_onramp for c in cells], dtype=bool)
        self.offramp_mask = np.array([c.is_offramp for c in cells], dtype=bool)
        self.onramps = frozenset(c.id for c in cells if c.is_onramp)
        self.offramps = frozenset(c.id for c in cells if c.is_offramp)
        self.nodes = frozenset(
            n for c in cells for n in (c.tail, c.head) if n is not None
        )

        # adjacency: (i, j) when head of i is tail of j, i sends flow to j
        self._in_cells = {n: [] for n in self.nodes}
        self._out_cells = {n: [] for n in self.nodes}
        for i, c in enumerate(cells):
            if c.head is not None:
                self._in_cells[c.head].append(i)
            if c.tail is not None:
                self._out_cells[c.tail].append(i)
        pairs = []
        for i, c in enumerate(cells):
            if c.head is None:
                continue
            for j in self._out_cells[c.head]:
                pairs.append((i, j))
        pairs.sort()
        self.pairs = tuple(pairs)
        self.pair_index = {p: a for a, p in enumerate(pairs)}
        self.pair_from = np.array([i for (i, _) in pairs], dtype=int)
        self.pair_to = np.array([j for (_, j) in pairs], dtype=int)

        self._successors = [[] for _ in range(self.n_cells)]
        self._predecessors = [[] for _ in range(self.n_cells)]
        for (i, j) in pairs:
            self._successors[i].append(j)
            self._predecessors[j].append(i)

        self._validate_structure()

    def _validate_structure(self):
        for n in sorted(self.nodes):
            if not self._in_cells[n]:
                raise ValueError(
                    f"node {n!r} has no incoming cell; boundary entries must use a null tail"
                )
            if not self._out_cells[n]:
                raise ValueError(
                    f"node {n!r} has no outgoing cell; boundary exits must use a null head"
                )
        for i, c in enumerate(self.cells):
            if not c.is_offramp and not self._successors[i]:
                raise ValueError(f"cell {c.id!r} has no successors and is not an offramp")
            if c.is_onramp and self._predecessors[i]:
                raise ValueError(f"onramp {c.id!r} has upstream cells")
            if c.is_offramp and self._successors[i]:
                raise ValueError(f"offramp {c.id!r} has downstream cells")
            if c.tail is None and not c.is_onramp and self._predecessors[i]:
                raise ValueError(f"cell {c.id!r}: inconsistent boundary")

    # -- queries -------------------------------------------------------------

    def successors(self, cell_id: str) -> tuple[str, ...]:
        return tuple(self.cells[j].id for j in self._successors[self.index[cell_id]])

    def predecessors(self, cell_id: str) -> tuple[str, ...]:
        return tuple(self.cells[j].id for j in self._predecessors[self.index[cell_id]])

    def adjacency_matrix(self) -> np.ndarray:
        """0/1 matrix A with A[i, j] = 1 when cell i sends into cell j."""
        a = np.zeros((self.n_cells, self.n_cells))
        for (i, j) in self.pairs:
            a[i, j] = 1.0
        return a

    def cell(self, cell_id: str) -> Cell:
        return self.cells[self.index[cell_id]]


def adjacent_pairs(graph: NetworkGraph) -> list[tuple[str, str]]:
    """All (upstream, downstream) cell-id pairs sharing a junction, in a
    deterministic order (by cell position in the config)."""
    return [(graph.cells[i].id, graph.cells[j].id) for (i, j) in graph.pairs]


def classify_junction(graph: NetworkGraph, node: str) -> JunctionKind:
    """Classify a junction by its incoming/outgoing cell counts."""
    if node not in graph.nodes:
        raise KeyError(f"unknown node id {node!r}")
    n_in = len(graph._in_cells[node])
    n_out = len(graph._out_cells[node])
    if n_in == 1 and n_out == 1:
        return JunctionKind.ORDINARY
    if n_in > 1 and n_out == 1:
        return JunctionKind.MERGE
    if n_in == 1 and n_out > 1:
        return JunctionKind.DIVERGE
    return JunctionKind.MIXED


# -- routing ------------------------------------------------------------------


@dataclass(frozen=True)
class RoutingEntry:
    """Turning ratio set from ``t_start`` (hours) onward; entries persist
    until overwritten by a later entry for the same (commodity, from, to)."""

    commodity: str
    from_cell: str
    to_cell: str
    t_start: float
    ratio: float


class RoutingSchedule:
    """Piecewise-constant per-commodity turning ratios.

    Internally each breakpoint stores one value per adjacency pair (compact
    for large networks); entries addressing a non-adjacent (from, to) pair
    are kept aside so :func:`validate_routing` can flag them.  Ratios are
    held fixed within each discretization step.
    """

    def __init__(self, graph: NetworkGraph, entries):
        self.graph = graph
        self.entries = tuple(sorted(entries, key=lambda e: (e.t_start, e.commodity,
                                                            e.from_cell, e.to_cell)))
        for e in self.entries:
            if e.commodity not in graph.commodity_index:
                raise ValueError(f"routing entry references unknown commodity {e.commodity!r}")
            if e.from_cell not in graph.index or e.to_cell not in graph.index:
                raise ValueError(
                    f"routing entry references unknown cell {e.from_cell!r} or {e.to_cell!r}")
            if not (0.0 <= e.ratio <= 1.0):
                raise ValueError(f"turning ratio must be in [0, 1], got {e.ratio}")
            if e.t_start < 0:
                raise ValueError("routing t_start must be >= 0")

        K, P = graph.n_commodities, len(graph.pairs)
        times = sorted({e.t_start for e in self.entries} | {0.0})
        by_time = {}
        for e in self.entries:
            by_time.setdefault(e.t_start, []).append(e)
        self._breaks = []          # (t_start, (K, P) pair values)
        self._off_support = []     # (t_start, entries landing outside adjacency)
        current = np.zeros((K, P))
        off_current = {}
        for t in times:
            for e in by_time.get(t, []):
                key = (graph.index[e.from_cell], graph.index[e.to_cell])
                k = graph.commodity_index[e.commodity]
                if key in graph.pair_index:
                    current[k, graph.pair_index[key]] = e.ratio
                else:
                    off_current[(e.commodity,) + key] = e.ratio
            self._breaks.append((t, current.copy()))
            self._off_support.append((t, dict(off_current)))
        self._break_times = np.array([t for t, _ in self._breaks])

    def _pos(self, t_hours: float) -> int:
        pos = int(np.searchsorted(self._break_times, t_hours + 1e-12, side="right")) - 1
        return max(pos, 0)

    def pair_values(self, t_hours: float) -> np.ndarray:
        """(K, n_pairs) turning ratios active at ``t_hours``, over graph.pairs."""
        return self._breaks[self._pos(t_hours)][1]

    def matrix(self, commodity: str, t_hours: float) -> np.ndarray:
        """Dense (E, E) matrix of one commodity at ``t_hours`` (includes any
        off-adjacency entries, so invalid schedules render faithfully)."""
        g = self.graph
        k = g.commodity_index[commodity]
        pos = self._pos(t_hours)
        m = np.zeros((g.n_cells, g.n_cells))
        vals = self._breaks[pos][1]
        for a, (i, j) in enumerate(g.pairs):
            m[i, j] = vals[k, a]
        for (kk, i, j), r in self._off_support[pos][1].items():
            if kk == commodity:
                m[i, j] = r
        return m

    def step_pair_values(self, h: float, n_steps: int):
        """Per-step ratios: (uniques, step_to_unique) where ``uniques`` is a
        list of (K, n_pairs) arrays and ``step_to_unique`` maps each step to
        an index into it."""
        uniques, mapping = [], np.zeros(n_steps, dtype=int)
        last_pos = None
        for t in range(n_steps):
            pos = self._pos(t * h)
            if pos != last_pos:
                uniques.append(self._breaks[pos][1])
                last_pos = pos
            mapping[t] = len(uniques) - 1
        return uniques, mapping


@dataclass
class RoutingViolation:
    kind: str        # "row_sum" or "support"
    commodity: str
    t_start: float
    cell: str
    detail: str
    magnitude: float


@dataclass
class ValidationReport:
    violations: list[RoutingViolation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return "routing valid"
        lines = [f"{len(self.violations)} routing violation(s):"]
        for v in self.violations:
            lines.append(f"  [{v.kind}] commodity={v.commodity} t_start={v.t_start} "
                         f"cell={v.cell}: {v.detail}")
        return "\n".join(lines)


def validate_routing(schedule: RoutingSchedule, graph: NetworkGraph) -> ValidationReport:
    """Check every breakpoint: non-offramp rows sum to 1, offramp rows to 0
    (absolute tolerance 1e-9), and no mass outside the adjacency support."""
    if schedule.graph.n_cells != graph.n_cells or \
            set(schedule.graph.index) != set(graph.index):
        raise ValueError("routing schedule and graph have different cell sets")
    report = ValidationReport()
    pair_from = np.array([i for (i, _) in graph.pairs], dtype=int)
    targets = np.where(graph.offramp_mask, 0.0, 1.0)
    for (t_start, vals), (_, off) in zip(schedule._breaks, schedule._off_support):
        for ki, k in enumerate(graph.commodities):
            rows = np.zeros(graph.n_cells)
            if len(pair_from):
                np.add.at(rows, pair_from, vals[ki])
            for (kk, i, j), r in off.items():
                if kk == k and r != 0:
                    rows[i] += r
                    report.violations.append(RoutingViolation(
                        "support", k, t_start, graph.cells[i].id,
                        f"nonzero ratio {r:.12g} to non-adjacent cell "
                        f"{graph.cells[j].id!r}", r))
            for i in np.flatnonzero(np.abs(rows - targets) > ROW_SUM_TOL):
                err = rows[i] - targets[i]
                report.violations.append(RoutingViolation(
                    "row_sum", k, t_start, graph.cells[i].id,
                    f"row sums to {rows[i]:.12g}, expected {targets[i]:g} "
                    f"(deficit {-err:.12g})", abs(err)))
    return report


# -- config file I/O -----------------------------------------------------------


def _cell_from_dict(d: dict) -> Cell:
    required = {"id", "tail", "head", "length_mi"}
    missing = required - set(d)
    if missing:
        raise ValueError(f"cell entry missing keys: {sorted(missing)}")
    return Cell(
        id=str(d["id"]),
        tail=None if d["tail"] in (None, "") else str(d["tail"]),
        head=None if d["head"] in (None, "") else str(d["head"]),
        length_mi=float(d["length_mi"]),
        lanes=int(d.get("lanes", 1)),
        is_onramp=bool(d.get("is_onramp", False)),
        is_offramp=bool(d.get("is_offramp", False)),
        beta=float(d.get("beta", 1.0)),
    )


def load_network_config(path):
    """Load a network config file; returns (graph, diagram, routing).

    The file is JSON with four sections: ``commodities`` (ordered list),
    ``cells`` ({id, tail, head, length_mi, lanes, is_onramp, is_offramp,
    beta}), ``demand`` and ``supply`` (see :mod:`ctmflow.diagrams`), and
    ``routing`` ({commodity, from, to, t_start, ratio}; t_start in hours).
    """
    from .diagrams import diagram_from_config

    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON: {exc}") from None
    for section in ("commodities", "cells", "demand", "supply", "routing"):
        if section not in raw:
            raise ValueError(f"{path}: missing section {section!r}")
    cells = [_cell_from_dict(d) for d in raw["cells"]]
    graph = NetworkGraph(cells, [str(k) for k in raw["commodities"]])
    diagram = diagram_from_config(graph, raw["demand"], raw["supply"])
    entries = [
        RoutingEntry(str(e["commodity"]), str(e["from"]), str(e["to"]),
                     float(e.get("t_start", 0.0)), float(e["ratio"]))
        for e in raw["routing"]
    ]
    routing = RoutingSchedule(graph, entries)
    return graph, diagram, routing


def save_network_config(path, graph: NetworkGraph, diagram, routing: RoutingSchedule):
    """Write the JSON network config (inverse of :func:`load_network_config`)."""
    raw = {
        "commodities": list(graph.commodities),
        "cells": [
            {"id": c.id, "tail": c.tail, "head": c.head, "length_mi": c.length_mi,
             "lanes": c.lanes, "is_onramp": c.is_onramp, "is_offramp": c.is_offramp,
             "beta": c.beta}
            for c in graph.cells
        ],
        "demand": diagram.demand_config(),
        "supply": diagram.supply_config(),
        "routing": [
            {"commodity": e.commodity, "from": e.from_cell, "to": e.to_cell,
             "t_start": e.t_start, "ratio": e.ratio}
            for e in routing.entries
        ],
    }
    with open(path, "w") as fh:
        json.dump(raw, fh, indent=1, sort_keys=True)
        fh.write("\n")
