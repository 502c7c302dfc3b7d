"""Convex relaxation of the finite-horizon network control problem.

The relaxation drops the control variables and treats per-cell outflows as
free decisions: minimize a convex separable cost over state trajectories
x_bar (t = 0..N) and outflow trajectories z_bar (t = 0..N-1), subject to the
shared discrete dynamics, per-piece demand caps 0 <= z_bar <= d(x_bar),
affine supply caps on bounded cells, and the fixed initial state.  With
piecewise-linear diagrams and costs this is a linear program.

Cell-to-cell flows f_bar are eliminated up front through the flow-splitting
identity f_bar = R z_bar (exact, since turning ratios are data), and
reconstructed after the solve.

The relaxation is *tight*: dividing the optimal z_bar by the demand at the
optimal x_bar yields an admissible control schedule whose closed-loop
simulation retraces x_bar exactly (no saturation ever binds), so the LP
optimum is attained by the original nonconvex control problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.sparse.csgraph import connected_components

from .network import NetworkGraph, RoutingEntry, RoutingSchedule
from .diagrams import FundamentalDiagram, SupplyFunction
from .scenario import ControlSchedule, CostSpec, InflowProfile, Scenario
from .simulate import SimulationResult, evaluate_cost, simulate

DEFAULT_SOLVE_TOL = 1e-7
DEFAULT_TIGHTNESS_TOL = 1e-6


@dataclass
class _RowBlock:
    """One homogeneous block of inequality rows, for error reporting."""
    kind: str          # "demand" | "supply" | "epi_x" | "epi_z"
    base: int          # first row index of the block
    count: int
    detail: dict = field(default_factory=dict)


class RelaxationProblem:
    """Assembled LP: min c @ v s.t. A_eq v = b_eq, A_ub v <= b_ub, bounds.

    Variable vector v stacks states x(t, k, i) for t = 0..N (row-major in
    (t, k, i)), then outflows z(t, k, i) for t = 0..N-1, then any epigraph
    variables for piecewise costs.  The initial state enters as fixed bounds
    on the t = 0 block.
    """

    def __init__(self, scenario: Scenario, cost: CostSpec):
        self.scenario = scenario
        self.cost = cost
        g = scenario.graph
        N, K, E = scenario.n_steps, g.n_commodities, g.n_cells
        self.N, self.K, self.E = N, K, E
        self.nx = (N + 1) * K * E
        self.nz = N * K * E
        self.n_pair_vars_eliminated = N * K * len(g.pairs)
        self._assemble()

    # variable indexing ------------------------------------------------------

    def ix(self, t, k, i):
        return (t * self.K + k) * self.E + i

    def iz(self, t, k, i):
        return self.nx + (t * self.K + k) * self.E + i

    @property
    def variable_count(self) -> int:
        """Variables actually sent to the solver."""
        return self.nx + self.nz + self.n_epi

    @property
    def declared_variable_count(self) -> int:
        """Nominal count of the relaxation including the eliminated
        cell-to-cell flow variables: |E||K|(N+1) + |E||K|N + |A||K|N."""
        return self.nx + self.nz + self.n_pair_vars_eliminated

    # assembly ----------------------------------------------------------------

    def _assemble(self):
        sc = self.scenario
        g = sc.graph
        fd = sc.diagram
        N, K, E = self.N, self.K, self.E
        h = sc.h
        lam = sc.inflow_array()
        self.routing_uniques, self.routing_of_step = sc.routing_arrays()

        KE = K * E
        rows_e, cols_e, vals_e = [], [], []

        # dynamics: x(t+1) - x(t) + h z(t) - h sum_pairs R z_from = h lam(t)
        r = np.arange(N * KE)
        rows_e += [r, r, r]
        cols_e += [r + KE, r, self.nx + r]
        vals_e += [np.ones(N * KE), -np.ones(N * KE), np.full(N * KE, h)]

        pf, pt = g.pair_from, g.pair_to
        for u, R in enumerate(self.routing_uniques):
            steps = np.flatnonzero(self.routing_of_step == u)
            if not len(steps) or not len(pf):
                continue
            kk, aa = np.nonzero(R)
            if not len(kk):
                continue
            row_off = kk * E + pt[aa]
            col_off = kk * E + pf[aa]
            base = steps[:, None] * KE
            rows_e.append((base + row_off[None, :]).ravel())
            cols_e.append(self.nx + (base + col_off[None, :]).ravel())
            vals_e.append(np.tile(-h * R[kk, aa], len(steps)))

        self.b_eq = (h * lam).reshape(-1)

        # inequality rows ------------------------------------------------------
        rows_u, cols_u, vals_u, rhs_u = [], [], [], []
        self.row_blocks: list[_RowBlock] = []
        row_base = 0

        # demand pieces: z(t,k,i) - slope x(t,k,i) <= intercept
        for p in range(fd.n_pieces):
            mask = np.isfinite(fd.demand_intercepts[p]).ravel()  # over (k, i)
            idx = np.flatnonzero(mask)
            if not len(idx):
                continue
            n_rows = N * len(idx)
            rr = row_base + np.arange(n_rows)
            tt = (np.arange(N)[:, None] * KE + idx[None, :]).ravel()
            rows_u += [rr]
            cols_u += [self.nx + tt]
            vals_u += [np.ones(n_rows)]
            slopes = fd.demand_slopes[p].ravel()[idx]
            nz = slopes != 0
            if nz.any():
                m = np.tile(nz, N)
                rows_u.append(rr[m])
                cols_u.append(tt[m])
                vals_u.append(np.tile(-slopes[nz], N))
            rhs_u.append(np.tile(fd.demand_intercepts[p].ravel()[idx], N))
            self.row_blocks.append(_RowBlock("demand", row_base, n_rows,
                                             {"piece": p, "flat_ki": idx}))
            row_base += n_rows

        # supply on bounded cells:
        #   sum_k sum_{pairs into j} R z_from - slope_j sum_k w_kj x(t,k,j) <= intercept_j
        bounded = np.flatnonzero(fd.bounded_mask)
        B = len(bounded)
        if B:
            rank = np.full(E, -1)
            rank[bounded] = np.arange(B)
            sup_base = row_base
            for u, R in enumerate(self.routing_uniques):
                steps = np.flatnonzero(self.routing_of_step == u)
                if not len(steps) or not len(pf):
                    continue
                kk, aa = np.nonzero(R)
                into_bounded = fd.bounded_mask[pt[aa]]
                kk, aa = kk[into_bounded], aa[into_bounded]
                if not len(kk):
                    continue
                row_off = rank[pt[aa]]
                col_off = kk * E + pf[aa]
                rows_u.append(sup_base + (steps[:, None] * B + row_off[None, :]).ravel())
                cols_u.append(self.nx + (steps[:, None] * KE + col_off[None, :]).ravel())
                vals_u.append(np.tile(R[kk, aa], len(steps)))
            # state term: -slope_j * w_kj on x(t, k, j)
            sl = fd.supply_slope[bounded]
            for k in range(K):
                w = fd.supply_weights[k, bounded]
                coef = -sl * w
                nzb = np.flatnonzero(coef != 0)
                if not len(nzb):
                    continue
                tt = np.arange(N)
                rows_u.append(sup_base + (tt[:, None] * B + nzb[None, :]).ravel())
                cols_u.append((tt[:, None] * KE + (k * E + bounded[nzb])[None, :]).ravel())
                vals_u.append(np.tile(coef[nzb], N))
            rhs_u.append(np.tile(fd.supply_intercept[bounded], N))
            self.row_blocks.append(_RowBlock("supply", sup_base, N * B,
                                             {"bounded_cells": bounded}))
            row_base += N * B

        # epigraph variables for piecewise costs
        self.n_epi_x = (N + 1) * KE if cost_has_x_pwl(self.cost) else 0
        self.n_epi_z = N * KE if cost_has_z_pwl(self.cost) else 0
        self.n_epi = self.n_epi_x + self.n_epi_z
        epi_x_off = self.nx + self.nz
        epi_z_off = epi_x_off + self.n_epi_x
        if self.n_epi_x:
            for (m, b) in self.cost.x_pwl.lines:
                rr = row_base + np.arange(self.n_epi_x)
                rows_u += [rr, rr]
                cols_u += [np.arange(self.n_epi_x), epi_x_off + np.arange(self.n_epi_x)]
                vals_u += [np.full(self.n_epi_x, m), -np.ones(self.n_epi_x)]
                rhs_u.append(np.full(self.n_epi_x, -b))
                self.row_blocks.append(_RowBlock("epi_x", row_base, self.n_epi_x,
                                                 {"line": (m, b)}))
                row_base += self.n_epi_x
        if self.n_epi_z:
            for (m, b) in self.cost.z_pwl.lines:
                rr = row_base + np.arange(self.n_epi_z)
                rows_u += [rr, rr]
                cols_u += [self.nx + np.arange(self.n_epi_z),
                           epi_z_off + np.arange(self.n_epi_z)]
                vals_u += [np.full(self.n_epi_z, m), -np.ones(self.n_epi_z)]
                rhs_u.append(np.full(self.n_epi_z, -b))
                self.row_blocks.append(_RowBlock("epi_z", row_base, self.n_epi_z,
                                                 {"line": (m, b)}))
                row_base += self.n_epi_z

        n_vars = self.nx + self.nz + self.n_epi
        self.A_eq = sp.csr_matrix(
            (np.concatenate(vals_e), (np.concatenate(rows_e), np.concatenate(cols_e))),
            shape=(N * KE, n_vars))
        if rows_u:
            self.A_ub = sp.csr_matrix(
                (np.concatenate(vals_u), (np.concatenate(rows_u), np.concatenate(cols_u))),
                shape=(row_base, n_vars))
            self.b_ub = np.concatenate(rhs_u)
        else:
            self.A_ub = sp.csr_matrix((0, n_vars))
            self.b_ub = np.zeros(0)

        # objective ------------------------------------------------------------
        xw, zw = self.cost.weights(g)
        self.c = np.zeros(n_vars)
        self.c[:self.nx] = np.tile(np.tile(xw, K), N + 1)
        self.c[self.nx:self.nx + self.nz] = np.tile(np.tile(zw, K), N)
        if self.n_epi:
            self.c[self.nx + self.nz:] = 1.0

        # bounds ---------------------------------------------------------------
        self.lb = np.zeros(n_vars)
        self.ub = np.full(n_vars, np.inf)
        x0 = sc.x0.reshape(-1)
        self.lb[:KE] = x0
        self.ub[:KE] = x0
        if self.n_epi:
            self.lb[self.nx + self.nz:] = -np.inf

    # helpers -----------------------------------------------------------------

    def describe_ub_row(self, row: int) -> str:
        g = self.scenario.graph
        for blk in self.row_blocks:
            if blk.base <= row < blk.base + blk.count:
                off = row - blk.base
                if blk.kind == "demand":
                    idx = blk.detail["flat_ki"]
                    t, pos = divmod(off, len(idx))
                    k, i = divmod(int(idx[pos]), self.E)
                    return (f"demand piece {blk.detail['piece']} at t={t}, "
                            f"cell {g.cells[i].id!r}, commodity {g.commodities[k]!r}")
                if blk.kind == "supply":
                    cells = blk.detail["bounded_cells"]
                    t, pos = divmod(off, len(cells))
                    return f"supply at t={t}, cell {g.cells[int(cells[pos])].id!r}"
                return f"{blk.kind} row {off}"
        return f"row {row}"

    def pack(self, x_bar: np.ndarray, z_bar: np.ndarray) -> np.ndarray:
        """Flatten (x_bar, z_bar) trajectories into a full variable vector,
        setting any epigraph variables to their exact stage-cost values."""
        if x_bar.shape != (self.N + 1, self.K, self.E):
            raise ValueError(f"x_bar must be {(self.N + 1, self.K, self.E)}, "
                             f"got {x_bar.shape}")
        if z_bar.shape != (self.N, self.K, self.E):
            raise ValueError(f"z_bar must be {(self.N, self.K, self.E)}, "
                             f"got {z_bar.shape}")
        parts = [x_bar.reshape(-1), z_bar.reshape(-1)]
        if self.n_epi_x:
            parts.append(self.cost.x_pwl(x_bar).reshape(-1))
        if self.n_epi_z:
            parts.append(self.cost.z_pwl(z_bar).reshape(-1))
        return np.concatenate(parts)

    def unpack(self, v: np.ndarray):
        x_bar = v[:self.nx].reshape(self.N + 1, self.K, self.E)
        z_bar = v[self.nx:self.nx + self.nz].reshape(self.N, self.K, self.E)
        return x_bar, z_bar

    def reconstruct_pair_flows(self, z_bar: np.ndarray) -> np.ndarray:
        """Cell-to-cell flows f = R z on adjacency pairs, (N, K, n_pairs)."""
        g = self.scenario.graph
        out = np.empty((self.N, self.K, len(g.pairs)))
        for t in range(self.N):
            R = self.routing_uniques[self.routing_of_step[t]]
            out[t] = R * z_bar[t][:, g.pair_from]
        return out


def cost_has_x_pwl(cost: CostSpec) -> bool:
    return cost.x_pwl is not None


def cost_has_z_pwl(cost: CostSpec) -> bool:
    return cost.z_pwl is not None


def assemble_relaxation(scenario: Scenario, cost: CostSpec | None = None) -> RelaxationProblem:
    """Build the LP for a scenario (cost defaults to the scenario's)."""
    return RelaxationProblem(scenario, cost or scenario.cost)


@dataclass
class SolveResult:
    status: str                     # "optimal" | "infeasible" | "unbounded" | "error"
    message: str
    objective: float | None
    x_bar: np.ndarray | None        # (N+1, K, E)
    z_bar: np.ndarray | None        # (N, K, E)
    f_bar: np.ndarray | None        # (N, K, n_pairs)
    residuals: dict
    problem: RelaxationProblem
    certificate: str | None = None

    @property
    def success(self) -> bool:
        return self.status == "optimal"


def _infeasibility_certificate(problem: RelaxationProblem) -> str | None:
    """Cheap single-row certificates: an initial-state supply row that is
    violated even with every outflow at zero can never be satisfied."""
    fd = problem.scenario.diagram
    x0 = problem.scenario.x0
    rho = (fd.supply_weights * x0).sum(axis=0)
    s0 = fd.supply_intercept + fd.supply_slope * rho
    bad = np.flatnonzero(fd.bounded_mask & (s0 < -1e-12))
    if len(bad):
        g = problem.scenario.graph
        lines = []
        for i in bad[:5]:
            lines.append(f"cell {g.cells[i].id!r}: initial weighted volume {rho[i]:.6g} "
                         f"gives supply {s0[i]:.6g} < 0 (above jam), so the t=0 "
                         f"supply constraint cannot hold for any outflow choice")
        return "; ".join(lines)
    return None


def _weak_components(graph: NetworkGraph) -> list[np.ndarray]:
    """Cell index groups of the weakly-connected adjacency components."""
    E = graph.n_cells
    if not len(graph.pair_from):
        return [np.array([i]) for i in range(E)]
    adj = sp.coo_matrix((np.ones(len(graph.pair_from)),
                         (graph.pair_from, graph.pair_to)), shape=(E, E))
    n, labels = connected_components(adj, directed=True, connection="weak")
    return [np.flatnonzero(labels == c) for c in range(n)]


def _restrict_scenario(sc: Scenario, comp: np.ndarray, cost: CostSpec) -> Scenario:
    """The scenario induced on one adjacency component (no control; the
    relaxation treats outflows as free decisions)."""
    g = sc.graph
    cells = [g.cells[int(i)] for i in comp]
    ids = {c.id for c in cells}
    sub_g = NetworkGraph(cells, g.commodities)
    fd = sc.diagram
    sub_fd = FundamentalDiagram(sub_g,
                                {c.id: fd.demand_map[c.id] for c in cells},
                                {c.id: fd.supply_map[c.id] for c in cells})
    sub_r = RoutingSchedule(sub_g, [e for e in sc.routing.entries
                                    if e.from_cell in ids])
    inflow = InflowProfile.from_array(sub_g, sc.inflow_array()[:, :, comp])
    return Scenario(sub_g, sub_fd, sub_r, inflow, sc.x0[:, comp], sc.h,
                    sc.n_steps, cost.restrict(comp), None,
                    name=f"{sc.name}[{cells[0].id}..]")


def _checked_optimal(problem: RelaxationProblem, v: np.ndarray, objective: float,
                     message: str, tol: float) -> SolveResult:
    """Wrap a candidate optimal point, verifying its residuals against the
    assembled system before trusting the solver's claim."""
    x_bar, z_bar = problem.unpack(v)
    eq_resid = float(np.abs(problem.A_eq @ v - problem.b_eq).max()) \
        if problem.b_eq.size else 0.0
    if problem.A_ub.shape[0]:
        ub_resid = float(np.maximum(problem.A_ub @ v - problem.b_ub, 0.0).max())
    else:
        ub_resid = 0.0
    lb_resid = float(np.maximum(problem.lb - v, 0.0).max())
    scale = max(1.0, float(np.abs(v).max()))
    residuals = {"eq": eq_resid, "ub": ub_resid, "bounds": lb_resid, "scale": scale}
    worst = max(eq_resid, ub_resid, lb_resid)
    if worst > tol * scale:
        return SolveResult(
            "error",
            f"solver point violates constraints: residual {worst:.3e} "
            f"exceeds {tol:.1e} * scale {scale:.3e}",
            objective, x_bar, z_bar, None, residuals, problem)
    return SolveResult("optimal", message, objective, x_bar, z_bar,
                       problem.reconstruct_pair_flows(z_bar), residuals, problem)


def _solve_monolithic(problem: RelaxationProblem, tol: float) -> SolveResult:
    primal_tol = min(1e-9, tol * 1e-2)
    # HiGHS sometimes exits with an unset model status, or claims optimality
    # on a point that violates constraints, depending on presolve/tolerance
    # settings.  Walk progressively more conservative settings and accept
    # only an answer that passes the independent residual check.
    attempts = (
        ("highs", {"presolve": True,
                   "primal_feasibility_tolerance": primal_tol,
                   "dual_feasibility_tolerance": min(1e-8, tol * 0.1)}),
        ("highs", {"presolve": False,
                   "primal_feasibility_tolerance": primal_tol,
                   "dual_feasibility_tolerance": min(1e-8, tol * 0.1)}),
        ("highs", {"presolve": True}),
        ("highs-ds", {"presolve": False,
                      "primal_feasibility_tolerance": primal_tol,
                      "dual_feasibility_tolerance": min(1e-8, tol * 0.1)}),
        ("highs-ds", {}),
        ("highs-ipm", {}),
    )
    last = None
    for method, options in attempts:
        res = linprog(
            problem.c,
            A_ub=problem.A_ub if problem.A_ub.shape[0] else None,
            b_ub=problem.b_ub if problem.A_ub.shape[0] else None,
            A_eq=problem.A_eq,
            b_eq=problem.b_eq,
            bounds=np.column_stack([problem.lb, problem.ub]),
            method=method,
            options=options,
        )
        if res.status == 2:
            return SolveResult("infeasible", res.message, None, None, None, None,
                               {}, problem,
                               certificate=_infeasibility_certificate(problem))
        if res.status == 3:
            raise RuntimeError("relaxation reported unbounded; the cost violates "
                               "the monotone sign conditions")
        if res.status == 0:
            last = _checked_optimal(problem, np.asarray(res.x), float(res.fun),
                                    res.message, tol)
            if last.status == "optimal":
                return last
        else:
            last = SolveResult("error", res.message, None, None, None, None,
                               {}, problem)
    return last


def solve_relaxation(problem: RelaxationProblem, tol: float = DEFAULT_SOLVE_TOL) -> SolveResult:
    """Solve the assembled LP with an exterior simplex/interior-point solver
    and check the returned point's residuals against ``tol``.

    A network whose adjacency splits into several weakly-connected
    components yields a block-diagonal LP (the cost is separable); each
    block is solved independently and the blocks are stitched back
    together.  Besides being faster, this keeps each solve small and
    well-conditioned where a monolithic solve of many disjoint roads is
    needlessly fragile.
    """
    sc = problem.scenario
    comps = _weak_components(sc.graph)
    if len(comps) == 1:
        return _solve_monolithic(problem, tol)

    g = sc.graph
    x_bar = np.zeros((problem.N + 1, problem.K, problem.E))
    z_bar = np.zeros((problem.N, problem.K, problem.E))
    total = 0.0
    for comp in comps:
        sub = _restrict_scenario(sc, comp, problem.cost)
        res = _solve_monolithic(RelaxationProblem(sub, sub.cost), tol)
        if res.status != "optimal":
            msg = (f"component containing cell {g.cells[int(comp[0])].id!r}: "
                   f"{res.message}")
            return SolveResult(res.status, msg, None, None, None, None, {},
                               problem, certificate=res.certificate)
        x_bar[:, :, comp] = res.x_bar
        z_bar[:, :, comp] = res.z_bar
        total += res.objective
    return _checked_optimal(problem, problem.pack(x_bar, z_bar), total,
                            f"solved as {len(comps)} independent components", tol)


def recover_controls(solution: SolveResult, fd: FundamentalDiagram | None = None,
                     tol: float = DEFAULT_SOLVE_TOL) -> ControlSchedule:
    """Controls from the relaxed optimum: alpha = z_bar / d(x_bar), with
    alpha = 1 where the demand is below ``tol`` veh/h -- the ratio of two
    solver-noise values is meaningless there (any alpha yields the same
    relaxed flow), and an arbitrary throttle would bite if the schedule is
    replayed on a perturbed trajectory where the cell is no longer empty.

    Ratios are clamped into [0, 1] only within a ``tol``-sized excursion
    (the worst excursion, in veh/h, is recorded on the returned schedule as
    ``clamp_magnitude``); larger excursions raise, since z_bar > d(x_bar)
    beyond solver precision means the solution is corrupted.
    """
    problem = solution.problem
    sc = problem.scenario
    fd = fd or sc.diagram
    if solution.x_bar is None:
        raise ValueError(f"cannot recover controls from a {solution.status} solution")
    x_bar, z_bar = solution.x_bar, solution.z_bar

    # batched demand evaluation over all steps
    vals = (fd.demand_slopes[:, None, :, :] * x_bar[None, :-1] +
            fd.demand_intercepts[:, None, :, :])
    d = vals.min(axis=0)                       # (N, K, E)
    z = np.maximum(z_bar, 0.0)

    scale = np.maximum(1.0, d)
    excess = z - d
    max_excess = float(excess.max(initial=0.0))
    if (excess > tol * scale).any():
        t, k, i = np.unravel_index(int(np.argmax(excess / scale)), excess.shape)
        raise ValueError(
            f"outflow exceeds demand beyond tolerance at t={t}, cell "
            f"{sc.graph.cells[i].id!r}, commodity {sc.graph.commodities[k]!r}: "
            f"z={z[t, k, i]:.9g} > d={d[t, k, i]:.9g}")

    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(d > tol, z / np.where(d > tol, d, 1.0), 1.0)
    alpha = np.clip(alpha, 0.0, 1.0)
    schedule = ControlSchedule.from_array(sc.graph, alpha)
    # Report clamping in flow units (veh/h shaved off z), not as the z/d
    # ratio, which explodes whenever a near-zero demand carries solver noise.
    schedule.clamp_magnitude = max(max_excess, 0.0)
    return schedule


@dataclass
class TightnessReport:
    passed: bool
    tol: float
    max_state_deviation: float
    min_gamma: float
    max_outflow_deviation: float
    max_pair_flow_deviation: float
    lp_objective: float
    simulated_cost: float
    schedule: ControlSchedule
    result: SimulationResult

    @property
    def cost_relative_error(self) -> float:
        denom = max(1.0, abs(self.lp_objective))
        return abs(self.simulated_cost - self.lp_objective) / denom

    def to_text(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return "\n".join([
            f"tightness: {status} (tolerance {self.tol:g})",
            f"max |x_sim - x_bar|:  {self.max_state_deviation:.3e}",
            f"min saturation factor: {self.min_gamma:.12f}",
            f"max |z_sim - z_bar|:  {self.max_outflow_deviation:.3e}",
            f"max |f_sim - f_bar|:  {self.max_pair_flow_deviation:.3e}",
            f"relaxation objective:  {self.lp_objective:.10g}",
            f"re-simulated cost:     {self.simulated_cost:.10g}",
            f"relative cost error:   {self.cost_relative_error:.3e}",
        ])


def verify_tightness(scenario: Scenario, solution: SolveResult,
                     schedule: ControlSchedule | None = None,
                     tol: float = DEFAULT_TIGHTNESS_TOL) -> TightnessReport:
    """Re-simulate under the recovered controls and compare against the
    relaxed optimum.  Passes when the closed-loop states match x_bar within
    ``tol`` and no saturation occurred (min gamma >= 1 - tol): the relaxed
    point is then an exactly attained trajectory of the original problem."""
    if solution.x_bar is None:
        raise ValueError(f"cannot verify a {solution.status} solution")
    if solution.x_bar.shape[0] != scenario.n_steps + 1:
        raise ValueError("scenario and solution horizons differ")
    if schedule is None:
        schedule = recover_controls(solution)
    result = simulate(scenario, control=schedule)
    dev = float(np.abs(result.states - solution.x_bar).max())
    zdev = float(np.abs(result.outflows - solution.z_bar).max())
    fdev = float(np.abs(result.pair_flows - solution.f_bar).max()) \
        if solution.f_bar is not None else math.nan
    min_gamma = result.min_gamma()
    cost_val = evaluate_cost(result, solution.problem.cost)
    passed = dev <= tol and min_gamma >= 1.0 - tol
    return TightnessReport(passed, tol, dev, min_gamma, zdev, fdev,
                           solution.objective, cost_val, schedule, result)


@dataclass
class FeasibilityCheck:
    feasible: bool
    max_violation: float
    worst: str

    def __bool__(self):
        return self.feasible


def check_feasible(problem: RelaxationProblem, x_bar: np.ndarray, z_bar: np.ndarray,
                   tol: float = DEFAULT_SOLVE_TOL) -> FeasibilityCheck:
    """Evaluate every constraint at the given trajectories (epigraph
    variables, if any, are set to their exact stage-cost values)."""
    v = problem.pack(np.asarray(x_bar, dtype=float), np.asarray(z_bar, dtype=float))
    worst_val, worst_desc = 0.0, "none"
    if problem.b_eq.size:
        r = np.abs(problem.A_eq @ v - problem.b_eq)
        i = int(np.argmax(r))
        if r[i] > worst_val:
            worst_val, worst_desc = float(r[i]), f"dynamics row {i}"
    if problem.A_ub.shape[0]:
        r = problem.A_ub @ v - problem.b_ub
        i = int(np.argmax(r))
        if r[i] > worst_val:
            worst_val, worst_desc = float(r[i]), problem.describe_ub_row(i)
    r_lo = problem.lb - v
    r_hi = v - problem.ub
    i = int(np.argmax(r_lo))
    if r_lo[i] > worst_val:
        worst_val, worst_desc = float(r_lo[i]), f"lower bound on variable {i}"
    i = int(np.argmax(r_hi))
    if r_hi[i] > worst_val:
        worst_val, worst_desc = float(r_hi[i]), f"upper bound on variable {i}"
    return FeasibilityCheck(worst_val <= tol, worst_val, worst_desc)


def embed_result(problem: RelaxationProblem, result: SimulationResult):
    """A simulated trajectory viewed as a candidate relaxation point."""
    return result.states, result.outflows


def convexity_probe(sol_a, sol_b, beta: float, problem: RelaxationProblem,
                    tol: float = DEFAULT_SOLVE_TOL) -> bool:
    """Feasibility of the convex combination of two points of the same
    problem: an executable witness that the feasible set is convex.
    Accepts SolveResult objects or (x_bar, z_bar) pairs."""
    if not (0.0 <= beta <= 1.0):
        raise ValueError(f"beta must be in [0, 1], got {beta}")

    def arrays(s):
        if isinstance(s, SolveResult):
            return s.x_bar, s.z_bar
        return s

    xa, za = arrays(sol_a)
    xb, zb = arrays(sol_b)
    if xa.shape != xb.shape or za.shape != zb.shape:
        raise ValueError("mismatched trajectory shapes")
    x = (1 - beta) * xa + beta * xb
    z = (1 - beta) * za + beta * zb
    return bool(check_feasible(problem, x, z, tol=tol))


def aggregate_single_commodity(scenario: Scenario,
                               uncontrolled: SimulationResult | None = None) -> Scenario:
    """Collapse a multi-commodity scenario to one class.

    Volumes and inflows are summed; the first commodity's demand functions
    and supply weight describe the aggregate; routing becomes the
    demand-share-weighted average of the per-commodity matrices, with the
    shares taken per step from the uncontrolled simulation (uniform where
    total demand is zero).  A control recovered on the aggregate can then be
    broadcast back to all commodities via :func:`broadcast_control`.
    """
    g = scenario.graph
    if g.n_commodities == 1:
        return scenario
    if uncontrolled is None:
        uncontrolled = simulate(scenario, control=ControlSchedule.uncontrolled(g))
    k0 = g.commodities[0]
    agg_graph = NetworkGraph(g.cells, [k0])
    fd = scenario.diagram
    demand_map = {c.id: {k0: fd.demand_map[c.id][k0]} for c in g.cells}
    supply_map = {}
    for c in g.cells:
        s = fd.supply_map[c.id]
        supply_map[c.id] = s if s.unbounded else SupplyFunction(
            s.intercept, s.slope, weights={k0: s.weight(k0)})
    agg_fd = FundamentalDiagram(agg_graph, demand_map, supply_map)

    # per-step aggregated turning ratios from demand shares
    N = scenario.n_steps
    h = scenario.h
    uniques, of_step = scenario.routing_arrays()
    entries = []
    prev = None
    for t in range(N):
        x = uncontrolled.states[t]
        d = fd.demand_values(x)                      # (K, E)
        totals = d.sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            shares = np.where(totals > 0, d / np.where(totals > 0, totals, 1.0),
                              1.0 / g.n_commodities)
        R = uniques[of_step[t]]                      # (K, n_pairs)
        # round-off in the demand shares can push an exact ratio a few ulp
        # outside [0, 1]; the row-sum validation tolerance absorbs the rest
        agg = np.clip((shares[:, g.pair_from] * R).sum(axis=0), 0.0, 1.0)
        if prev is not None and np.array_equal(agg, prev):
            continue
        for a in np.flatnonzero((agg != 0) | (prev is not None and prev != 0)):
            i, j = g.pairs[a]
            entries.append(RoutingEntry(k0, g.cells[i].id, g.cells[j].id,
                                        t * h, float(agg[a])))
        prev = agg
    routing = RoutingSchedule(agg_graph, entries)

    inflow = InflowProfile.from_array(
        agg_graph, scenario.inflow_array().sum(axis=1, keepdims=True))
    x0 = scenario.x0.sum(axis=0, keepdims=True)
    return Scenario(agg_graph, agg_fd, routing, inflow, x0, h, N,
                    scenario.cost, None, name=f"{scenario.name}-aggregate")


def broadcast_control(scenario: Scenario, agg_schedule: ControlSchedule) -> ControlSchedule:
    """Apply a single-commodity control to every commodity of a scenario."""
    arr = agg_schedule.materialize(scenario.h, scenario.n_steps)
    tiled = np.repeat(arr, scenario.graph.n_commodities, axis=1)
    return ControlSchedule.from_array(scenario.graph, tiled)
