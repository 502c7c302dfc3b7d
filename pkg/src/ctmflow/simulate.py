"""Forward simulation of the controlled multi-commodity cell network.

Discrete dynamics (explicit Euler, step h hours):

    x_i^(k)(t+1) = x_i^(k)(t) + h * (lambda_i^(k)(t) + sum_j f_ji^(k)(t) - z_i^(k)(t))

with outflows set by the FIFO allocation rule: every flow leaving cell i is
scaled by one saturation factor gamma_i in [0, 1], chosen so that no
downstream cell receives more than its supply while turning ratios are
preserved.  Offramp cells discharge at the controlled demand (gamma = 1).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .diagrams import FundamentalDiagram
from .network import NetworkGraph
from .scenario import ControlSchedule, CostSpec, Scenario

NEG_STATE_TOL = 1e-9  # absolute slack for roundoff before declaring a real violation


def fifo_gamma(x: np.ndarray, routing: np.ndarray, alpha: np.ndarray,
               fd: FundamentalDiagram, truncate: bool = True):
    """Saturation factors for one step.

    ``x`` and ``alpha`` are (K, E); ``routing`` holds the turning ratios as a
    (K, n_pairs) array over ``graph.pairs``.  Returns (gamma (E,),
    controlled_demand (K, E)).  For each receiving cell j the aggregate
    directed demand is D_j = sum_k sum_i R_ij^(k) alpha_i^(k) d_i^(k)(x_i^(k));
    gamma_i = min(1, min over receivers j of i of s_j/D_j), with D_j = 0
    imposing no restriction and cells with no receivers (offramps) getting
    gamma = 1.
    """
    g = fd.graph
    pair_from, pair_to = g.pair_from, g.pair_to
    controlled = alpha * fd.demand_values(x)
    directed = np.zeros(g.n_cells)
    if len(pair_from):
        np.add.at(directed, pair_to, (routing * controlled[:, pair_from]).sum(axis=0))
    s = fd.supply_values(x, truncate=truncate)
    if not truncate and (s[fd.bounded_mask] < 0).any():
        bad = np.flatnonzero(fd.bounded_mask & (s < 0))
        names = [g.cells[i].id for i in bad]
        raise RuntimeError(f"negative supply (jam overshoot) at cells {names}")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(directed > 0, s / np.where(directed > 0, directed, 1.0), np.inf)
    gamma = np.ones(g.n_cells)
    if len(pair_from):
        sends = (routing > 0).any(axis=0)  # pairs with any commodity routed
        per_pair = np.where(sends, ratio[pair_to], np.inf)
        np.minimum.at(gamma, pair_from, per_pair)
        np.minimum(gamma, 1.0, out=gamma)
    return gamma, controlled


def step(x: np.ndarray, inflow: np.ndarray, alpha: np.ndarray,
         routing: np.ndarray, fd: FundamentalDiagram, h: float):
    """One explicit update. Returns (x_next, z, gamma) with z the (K, E)
    outflow rates and gamma the (E,) saturation factors."""
    g = fd.graph
    gamma, controlled = fifo_gamma(x, routing, alpha, fd)
    z = gamma[None, :] * controlled
    received = np.zeros_like(z)
    if len(g.pair_from):
        flows = routing * z[:, g.pair_from]
        for k in range(z.shape[0]):
            received[k] = np.bincount(g.pair_to, weights=flows[k], minlength=g.n_cells)
    x_next = x + h * (inflow + received - z)
    low = x_next.min()
    if low < 0:
        if low < -NEG_STATE_TOL:
            k, i = np.unravel_index(np.argmin(x_next), x_next.shape)
            raise RuntimeError(
                f"state went negative ({low:.3e}) at cell "
                f"{g.cells[i].id!r}, commodity {g.commodities[k]!r}")
        x_next = np.maximum(x_next, 0.0)
    return x_next, z, gamma


@dataclass
class SimulationResult:
    """Full trajectory: states (N+1, K, E), outflows (N, K, E), saturation
    factors (N, E), and per-adjacency-pair flows (N, K, |pairs|)."""

    scenario: Scenario
    states: np.ndarray
    outflows: np.ndarray
    gammas: np.ndarray
    pair_flows: np.ndarray

    @property
    def graph(self) -> NetworkGraph:
        return self.scenario.graph

    @property
    def n_steps(self) -> int:
        return self.outflows.shape[0]

    def min_gamma(self) -> float:
        return float(self.gammas.min()) if self.gammas.size else 1.0


def simulate(scenario: Scenario, control: ControlSchedule | None = None) -> SimulationResult:
    """Run the scenario horizon; deterministic for identical inputs."""
    g = scenario.graph
    fd = scenario.diagram
    h, n = scenario.h, scenario.n_steps
    lam = scenario.inflow_array()
    if control is None and scenario.control is not None:
        control = scenario.control
    alpha = (control or ControlSchedule.uncontrolled(g)).materialize(h, n)
    uniques, step_to_unique = scenario.routing_arrays()

    K, E = g.n_commodities, g.n_cells
    states = np.empty((n + 1, K, E))
    outflows = np.empty((n, K, E))
    gammas = np.empty((n, E))
    pair_flows = np.empty((n, K, len(g.pairs)))

    states[0] = scenario.x0
    for t in range(n):
        R = uniques[step_to_unique[t]]
        try:
            x_next, z, gamma = step(states[t], lam[t], alpha[t], R, fd, h)
        except RuntimeError as exc:
            raise RuntimeError(f"step {t}: {exc}") from None
        states[t + 1] = x_next
        outflows[t] = z
        gammas[t] = gamma
        pair_flows[t] = R * z[:, g.pair_from]
    return SimulationResult(scenario, states, outflows, gammas, pair_flows)


def evaluate_cost(result: SimulationResult, cost: CostSpec | None = None) -> float:
    """Stage costs summed over the horizon: volume terms over t = 0..N,
    outflow terms over t = 0..N-1."""
    cost = cost or result.scenario.cost
    xw, zw = cost.weights(result.graph)
    total = float(np.einsum("tki,i->", result.states, xw))
    total += float(np.einsum("tki,i->", result.outflows, zw))
    if cost.x_pwl is not None:
        total += float(cost.x_pwl(result.states).sum())
    if cost.z_pwl is not None:
        total += float(cost.z_pwl(result.outflows).sum())
    return total


def total_volume_series(result: SimulationResult) -> np.ndarray:
    """Network-wide volume at each time index, length N+1."""
    return result.states.sum(axis=(1, 2))


def total_volume_report(result: SimulationResult) -> dict:
    """Volume totals split by cell category (summed over time and
    commodities), as in the per-category comparison tables."""
    per_cell = result.states.sum(axis=(0, 1))
    g = result.graph
    onramps = float(per_cell[g.onramp_mask].sum())
    offramps = float(per_cell[g.offramp_mask].sum())
    cells = float(per_cell[~g.onramp_mask & ~g.offramp_mask].sum())
    return {"onramps": onramps, "cells": cells, "offramps": offramps,
            "total": onramps + cells + offramps}


# -- CSV export ----------------------------------------------------------------


def write_trajectory_csv(result: SimulationResult, path):
    """Rows (t, cell, commodity, x, z, gamma); t in hours. The final state
    row has empty z and gamma (no step leaves the last time point)."""
    g = result.graph
    h = result.scenario.h
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "cell", "commodity", "x", "z", "gamma"])
        for t in range(result.n_steps + 1):
            last = t == result.n_steps
            for i, c in enumerate(g.cells):
                for k, name in enumerate(g.commodities):
                    row = [f"{t * h:.10g}", c.id, name, f"{result.states[t, k, i]:.10g}"]
                    if last:
                        row += ["", ""]
                    else:
                        row += [f"{result.outflows[t, k, i]:.10g}",
                                f"{result.gammas[t, i]:.10g}"]
                    w.writerow(row)


def write_flows_csv(result: SimulationResult, path):
    """Rows (t, from, to, commodity, f) over adjacency pairs; t in hours."""
    g = result.graph
    h = result.scenario.h
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "from", "to", "commodity", "f"])
        for t in range(result.n_steps):
            for a, (i, j) in enumerate(g.pairs):
                for k, name in enumerate(g.commodities):
                    w.writerow([f"{t * h:.10g}", g.cells[i].id, g.cells[j].id,
                                name, f"{result.pair_flows[t, k, a]:.10g}"])


def write_totals_csv(result: SimulationResult, path):
    """Rows (t, total_volume); t in hours. Plot-ready volume curve."""
    series = total_volume_series(result)
    h = result.scenario.h
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "total_volume"])
        for t, v in enumerate(series):
            w.writerow([f"{t * h:.10g}", f"{v:.10g}"])


def write_summary_csv(reports: dict, path):
    """Volume-by-category table: one column per run, rows onramps / cells /
    offramps / total. ``reports`` maps run name -> total_volume_report dict."""
    names = list(reports)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["category"] + names)
        for row in ("onramps", "cells", "offramps", "total"):
            w.writerow([row] + [f"{reports[n][row]:.10g}" for n in names])
