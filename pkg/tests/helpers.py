"""Shared test utilities.

``random_scenario`` draws small, structurally valid scenarios (2-6 cells,
1-3 commodities) with bounded mainline supplies and a step length safely
inside both the traversal-time bound and the jam-overshoot bound.

``oracle_simulate`` is an independent reference simulator written with
plain Python loops and scalar demand/supply evaluations -- deliberately
sharing no array code with ctmflow.simulate -- so the vectorized
implementation can be checked against a second reading of the same rules.
"""

import math

import numpy as np

from ctmflow.diagrams import FundamentalDiagram, SupplyFunction, linear_demand, max_stable_step
from ctmflow.network import Cell, NetworkGraph, RoutingEntry, RoutingSchedule
from ctmflow.scenario import ControlSchedule, CostSpec, InflowProfile, Scenario


# ---------------------------------------------------------------------------
# random scenario generator
# ---------------------------------------------------------------------------


def _topology(rng, n_cells):
    """Cells plus (from, to) id pairs for one of three patterns."""
    def main_len():
        return float(rng.uniform(0.3, 1.2))

    if n_cells >= 4 and rng.random() < 0.25:
        # merge: two onramps feeding one mainline chain ending in an offramp
        cells = [Cell("r1", None, "m", 0.4, is_onramp=True),
                 Cell("r2", None, "m", 0.4, is_onramp=True)]
        prev_node = "m"
        for j in range(n_cells - 3):
            cells.append(Cell(f"a{j}", prev_node, f"n{j}", main_len()))
            prev_node = f"n{j}"
        cells.append(Cell("out", prev_node, None, 0.4, is_offramp=True))
        links = [("r1", "a0"), ("r2", "a0")]
        for j in range(n_cells - 4):
            links.append((f"a{j}", f"a{j + 1}"))
        links.append((f"a{n_cells - 4}", "out"))
        return cells, links
    if n_cells >= 4 and rng.random() < 0.4:
        # diverge: onramp -> a -> {offramp exit, chain -> offramp}
        cells = [Cell("r", None, "n0", 0.4, is_onramp=True),
                 Cell("a", "n0", "n1", main_len()),
                 Cell("exit", "n1", None, 0.4, is_offramp=True)]
        links = [("r", "a")]
        prev, prev_node = "a", "n1"
        for j in range(n_cells - 4):
            cells.append(Cell(f"b{j}", prev_node, f"n{j + 2}", main_len()))
            links.append((prev, f"b{j}"))
            prev, prev_node = f"b{j}", f"n{j + 2}"
        cells.append(Cell("out", prev_node, None, 0.4, is_offramp=True))
        links.append((prev, "out"))
        links.append(("a", "exit"))
        return cells, links
    # plain chain: onramp -> mains -> offramp
    cells = [Cell("r", None, "n0", 0.4, is_onramp=True)]
    links = []
    prev, prev_node = "r", "n0"
    for j in range(n_cells - 2):
        cells.append(Cell(f"a{j}", prev_node, f"n{j + 1}", main_len()))
        links.append((prev, f"a{j}"))
        prev, prev_node = f"a{j}", f"n{j + 1}"
    cells.append(Cell("out", prev_node, None, 0.4, is_offramp=True))
    links.append((prev, "out"))
    return cells, links


def random_scenario(seed, n_steps=None, n_commodities=None, cost=None,
                    congest=True):
    """A small random scenario that satisfies every structural precondition.

    Mainline cells get bounded affine supplies; ramps are unbounded.  The
    step length is 80 % of the tighter of the traversal bound and the
    jam-overshoot bound, so simulation and relaxation agree everywhere.
    """
    rng = np.random.default_rng(seed)
    K = n_commodities or int(rng.integers(1, 4))
    commodities = [f"k{q}" for q in range(K)]
    n_cells = int(rng.integers(2, 7))
    cells, links = _topology(rng, n_cells)
    graph = NetworkGraph(cells, commodities)

    overshoot_bound = math.inf
    demand_map, supply_map = {}, {}
    for c in cells:
        demand_map[c.id] = {}
        for k in commodities:
            vff = float(rng.uniform(20.0, 65.0))
            cap = float(rng.uniform(200.0, 900.0)) if rng.random() < 0.3 else None
            demand_map[c.id][k] = linear_demand(vff, c.length_mi, capacity_vph=cap)
        if c.is_onramp or c.is_offramp:
            supply_map[c.id] = SupplyFunction(unbounded=True)
        else:
            weights = {k: float(rng.uniform(0.5, 2.0)) for k in commodities}
            w_max = max(weights.values())
            intercept = float(rng.uniform(200.0, 1200.0))
            rho_jam = float(rng.uniform(20.0, 60.0)) * w_max
            supply_map[c.id] = SupplyFunction(intercept, -intercept / rho_jam,
                                              weights=weights)
            overshoot_bound = min(overshoot_bound, rho_jam / (intercept * w_max))
    fd = FundamentalDiagram(graph, demand_map, supply_map)

    h = 0.8 * min(max_stable_step(graph, fd), overshoot_bound)
    N = n_steps or int(rng.integers(8, 51))

    entries = []
    for k in commodities:
        for (a, b) in links:
            entries.append(RoutingEntry(k, a, b, 0.0, 1.0))
    # rewrite diverge rows as a random split, optionally time-varying
    for i, c in enumerate(cells):
        succ = graph.successors(c.id)
        if len(succ) < 2:
            continue
        entries = [e for e in entries if e.from_cell != c.id]
        for k in commodities:
            r = float(rng.uniform(0.0, 1.0))
            entries.append(RoutingEntry(k, c.id, succ[0], 0.0, r))
            entries.append(RoutingEntry(k, c.id, succ[1], 0.0, 1.0 - r))
            if rng.random() < 0.5:
                t_mid = (N // 2) * h
                r2 = float(rng.uniform(0.0, 1.0))
                entries.append(RoutingEntry(k, c.id, succ[0], t_mid, r2))
                entries.append(RoutingEntry(k, c.id, succ[1], t_mid, 1.0 - r2))
    routing = RoutingSchedule(graph, entries)

    # initial state: mainline weighted volume kept at <= 80 % of jam
    x0 = np.zeros((K, graph.n_cells))
    for i, c in enumerate(cells):
        s = supply_map[c.id]
        draw = rng.uniform(0.0, 1.0, size=K)
        if s.unbounded:
            x0[:, i] = draw * rng.uniform(0.0, 30.0)
        else:
            rho_jam = -s.intercept / s.slope
            w = np.array([s.weight(k) for k in commodities])
            weighted = float((w * draw).sum())
            if weighted > 0:
                x0[:, i] = draw * (0.8 * rho_jam / weighted) * rng.uniform(0.2, 1.0)

    # inflow: a first phase and a mid-horizon switch; scale chosen to push a
    # bottleneck into saturation in most draws
    scale = 3.0 if congest else 0.5
    inflow_entries = []
    t_mid = (N // 2) * h
    for c in cells:
        if not c.is_onramp:
            continue
        for k in commodities:
            inflow_entries.append((k, c.id, 0.0, float(rng.uniform(0, scale * 600))))
            inflow_entries.append((k, c.id, t_mid, float(rng.uniform(0, 600))))
    inflow = InflowProfile(graph, inflow_entries)

    return Scenario(graph, fd, routing, inflow, x0, h, N,
                    cost or CostSpec.total_travel_time(),
                    name=f"random-{seed}")


# ---------------------------------------------------------------------------
# independent reference simulator (scalar loops, no shared array code)
# ---------------------------------------------------------------------------


def oracle_simulate(scenario, control=None):
    """Step the dynamics with per-cell scalar arithmetic.

    Returns (states, outflows, gammas) as plain nested lists converted to
    arrays: states (N+1, K, E), outflows (N, K, E), gammas (N, E).
    """
    g = scenario.graph
    fd = scenario.diagram
    h, N = scenario.h, scenario.n_steps
    commodities = list(g.commodities)
    ids = [c.id for c in g.cells]
    lam = scenario.inflow_array()
    if control is None:
        control = scenario.control or ControlSchedule.uncontrolled(g)
    alpha = control.materialize(h, N)

    x = {(k, cid): float(scenario.x0[ki, ci])
         for ki, k in enumerate(commodities) for ci, cid in enumerate(ids)}
    states = [[[x[(k, cid)] for cid in ids] for k in commodities]]
    outflows, gammas = [], []

    for t in range(N):
        R = {k: scenario.routing.matrix(k, t * h) for k in commodities}
        d = {}
        for ki, k in enumerate(commodities):
            for ci, cid in enumerate(ids):
                d[(k, cid)] = alpha[t, ki, ci] * fd.demand_map[cid][k](x[(k, cid)])
        # aggregate demand directed into each receiving cell
        directed = {cid: 0.0 for cid in ids}
        for k in commodities:
            for ci, cid in enumerate(ids):
                for cj, cjd in enumerate(ids):
                    directed[cjd] += R[k][ci, cj] * d[(k, cid)]
        # supply of each cell at its weighted volume
        s = {}
        for cid in ids:
            fn = fd.supply_map[cid]
            if fn.unbounded:
                s[cid] = math.inf
            else:
                wv = sum(fn.weight(k) * x[(k, cid)] for k in commodities)
                s[cid] = max(0.0, fn.intercept + fn.slope * wv)
        # one saturation factor per sending cell
        gamma = {}
        for ci, cid in enumerate(ids):
            ratio = 1.0
            for cj, cjd in enumerate(ids):
                if any(R[k][ci, cj] > 0 for k in commodities):
                    if directed[cjd] > 0:
                        ratio = min(ratio, s[cjd] / directed[cjd])
            gamma[cid] = ratio
        # outflows, transfers, update
        z = {key: gamma[key[1]] * val for key, val in d.items()}
        x_next = {}
        for ki, k in enumerate(commodities):
            for ci, cid in enumerate(ids):
                received = sum(R[k][cj, ci] * z[(k, cjd)]
                               for cj, cjd in enumerate(ids))
                val = x[(k, cid)] + h * (lam[t, ki, ci] + received - z[(k, cid)])
                x_next[(k, cid)] = max(0.0, val)
        x = x_next
        states.append([[x[(k, cid)] for cid in ids] for k in commodities])
        outflows.append([[z[(k, cid)] for cid in ids] for k in commodities])
        gammas.append([gamma[cid] for cid in ids])

    return np.array(states), np.array(outflows), np.array(gammas)


# ---------------------------------------------------------------------------
# invariant checks shared across test modules
# ---------------------------------------------------------------------------


def mass_balance_max_rel_err(result):
    """Worst relative error of the network-wide mass balance
    sum x(t+1) - sum x(t) = h * (inflow total - offramp outflow total)."""
    sc = result.scenario
    lam = sc.inflow_array()
    totals = result.states.sum(axis=(1, 2))
    lhs = np.diff(totals)
    off = result.outflows[:, :, sc.graph.offramp_mask].sum(axis=(1, 2))
    rhs = sc.h * (lam.sum(axis=(1, 2)) - off)
    scale = np.maximum(1.0, totals[:-1])
    return float(np.abs(lhs - rhs).max() / scale.max()) if len(lhs) else 0.0
