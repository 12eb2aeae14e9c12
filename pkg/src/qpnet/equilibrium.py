"""Layer-wise Nash solves and the bottom-up equilibrium search for QP networks."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .lmcp import Lmcp, LmcpSolution, solve_lmcp
from .network import QpNetwork
from .polyhedra import EQ, EPS_FEAS, NncPolyhedron, PolyUnion, closure, contains
from .qp_kernel import QuadCost, is_empty
from .solution_graph import (GraphError, branch_regions, check_qp_solution,
                             local_node_graph)

logger = logging.getLogger(__name__)


class Action(Enum):
    CHECKED = "Checked"
    GRAPH_BUILT = "GraphBuilt"
    NASH_SOLVED = "NashSolved"
    RESTARTED = "Restarted"


class Termination(Enum):
    EQUILIBRIUM = "Equilibrium"
    CYCLE_DETECTED = "CycleDetected"
    ITERATION_LIMIT = "IterationLimit"
    LMCP_FAILURE = "LmcpFailure"
    INCONSISTENCY = "Inconsistency"


class LmcpFailure(RuntimeError):
    def __init__(self, message: str, solution: LmcpSolution | None = None, layer=None):
        super().__init__(message)
        self.solution = solution
        self.layer = layer


@dataclass(frozen=True)
class TraceEvent:
    iterate: tuple[float, ...]
    depth: int
    action: Action
    region_choices: tuple[tuple[int, int], ...] = ()

    def as_dict(self) -> dict:
        return {"iterate": list(self.iterate), "depth": self.depth, "action": self.action.value,
                "region_choices": {str(i): l for i, l in self.region_choices}}


@dataclass
class EquilibriumTrace:
    events: list[TraceEvent] = field(default_factory=list)
    termination: Termination | None = None
    message: str = ""

    def record(self, x, depth: int, action: Action, choices=None):
        ch = tuple(sorted((choices or {}).items()))
        self.events.append(TraceEvent(tuple(float(v) for v in x), depth, action, ch))

    @property
    def iterates(self) -> list[np.ndarray]:
        """Distinct consecutive iterates (the path of ``x``)."""
        out = []
        for e in self.events:
            if not out or out[-1] != e.iterate:
                out.append(e.iterate)
        return [np.array(v) for v in out]

    def count(self, action: Action) -> int:
        return sum(e.action is action for e in self.events)


@dataclass
class SearchOptions:
    tol: float = EPS_FEAS
    max_restarts: int = 200
    max_backtrack: int = 64
    lmcp_max_iter: int | None = None


@dataclass
class LayerNashProblem:
    """Per participating node: cost, closed branch and extended decision indices."""

    costs: list[QuadCost]
    branches: list[NncPolyhedron]
    indices: list[tuple[int, ...]]


# ---------------------------------------------------------------------------
# Nash step

def assemble_lmcp(problem: LayerNashProblem, x) -> tuple[Lmcp, list[int]]:
    """Stacked KKT system of all nodes in a layer as a bounded LMCP.

    Unknowns are ``(x_J, psi, lam)``: shared decisions, one free slack per
    stationarity row and one multiplier per constraint row.  Returns the
    problem and the ordered list ``J`` of decision coordinates.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    J = sorted(set().union(*[set(I) for I in problem.indices]))
    Jp = [k for k in range(n) if k not in set(J)]
    nJ = len(J)
    n_stat = sum(len(I) for I in problem.indices)
    n_con = sum(B.n_rows for B in problem.branches)
    k = nJ + n_stat + n_con
    M = np.zeros((k, k))
    q = np.zeros(k)
    l = np.full(k, -np.inf)
    u = np.full(k, np.inf)
    r_stat = nJ
    r_con = nJ + n_stat
    for cost, B, I in zip(problem.costs, problem.branches, problem.indices):
        B = closure(B)
        I = list(I)
        m = B.n_rows
        rows = slice(r_stat, r_stat + len(I))
        cols = slice(r_con, r_con + m)
        # stationarity: Q_I x + q_I - A_I' lam = 0
        M[rows, :nJ] = cost.Q[np.ix_(I, J)]
        q[rows] = cost.Q[np.ix_(I, Jp)] @ x[Jp] + cost.q[I]
        M[rows, cols] = -B.A[:, I].T
        # constraints: A x + b  complementary to lam
        M[cols, :nJ] = B.A[:, J]
        q[cols] = B.A[:, Jp] @ x[Jp] + B.b
        l[cols] = np.where(B.kind == EQ, -np.inf, 0.0)
        r_stat += len(I)
        r_con += m
    return Lmcp(M, q, l, u), J


def solve_layer_nash(problem: LayerNashProblem, x, max_iter: int | None = None) -> np.ndarray:
    """Simultaneous optimum of all nodes in a layer; only layer coordinates move."""
    x = np.asarray(x, dtype=float)
    p, J = assemble_lmcp(problem, x)
    sol = solve_lmcp(p, max_iter=max_iter)
    if not sol.ok:
        raise LmcpFailure(f"layer LMCP not solved: {sol.status.value} {sol.message}".strip(), sol)
    out = x.copy()
    out[J] = sol.z[:len(J)]
    return out


# ---------------------------------------------------------------------------
# search

@dataclass
class _NodeStatus:
    regions: list[NncPolyhedron]
    failing: list[int]


def _node_status(net: QpNetwork, i: int, graphs: dict, x, tol) -> _NodeStatus:
    node = net.nodes[i]
    child = [graphs[j] for j in net.children[i]]
    regions = [R for R in branch_regions(node.feasible, child) if not is_empty(R, hint=x)]
    failing = []
    for l, R in enumerate(regions):
        chk = check_qp_solution(node.cost, closure(R), net.controlled[i], x, tol)
        if not chk.optimal:
            failing.append(l)
    return _NodeStatus(regions, failing)


def _build_graph(net: QpNetwork, i: int, graphs: dict, x, tol) -> PolyUnion:
    node = net.nodes[i]
    child = [graphs[j] for j in net.children[i]]
    G = local_node_graph(node.cost, node.feasible, net.controlled[i], x, child, tol, node=i)
    return G.pieces


def find_equilibrium(net: QpNetwork, x0, opts: SearchOptions | None = None):
    """Search for a point in every node's solution graph.

    Returns ``(x, trace)``; ``trace.termination`` says whether an equilibrium
    was reached.
    """
    opts = opts or SearchOptions()
    net.check()
    x = np.array(x0, dtype=float)
    if x.shape != (net.n,):
        raise ValueError(f"initial point has shape {x.shape}, expected ({net.n},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("initial point must be finite")
    layers = net.depth_mapping.layers
    D = len(layers)
    trace = EquilibriumTrace()
    tol = opts.tol
    visited: set = set()
    restarts = 0
    graphs: dict[int, PolyUnion] = {}
    d = D

    def finish(term: Termination, msg: str = ""):
        trace.termination = term
        trace.message = msg
        if msg:
            logger.info("search stopped: %s (%s)", term.value, msg)
        return x, trace

    while True:
        layer = layers[d - 1]
        status = {}
        for i in layer:
            st = _node_status(net, i, graphs, x, tol)
            if not st.regions:
                return finish(Termination.INCONSISTENCY, f"node {i + 1} has no nonempty branch")
            status[i] = st
        choices = {i: (st.failing[0] if st.failing else 0) for i, st in status.items()}
        trace.record(x, d, Action.CHECKED, choices)
        unsatisfied = [i for i in layer if status[i].failing]
        if not unsatisfied:
            if d == 1:
                for i in range(net.N):
                    regions = status[i].regions if i in status else None
                    if regions is None:
                        child = [graphs[j] for j in net.children[i]]
                        regions = branch_regions(net.nodes[i].feasible, child)
                    if not any(contains(R, x, tol) for R in regions):
                        return finish(Termination.INCONSISTENCY,
                                      f"point lies on an excluded boundary of node {i + 1}'s feasible set")
                return finish(Termination.EQUILIBRIUM)
            try:
                for i in layer:
                    if net.parents[i]:
                        graphs[i] = _build_graph(net, i, graphs, x, tol)
            except GraphError as exc:
                return finish(Termination.INCONSISTENCY, str(exc))
            trace.record(x, d, Action.GRAPH_BUILT, choices)
            d -= 1
            continue

        key = (tuple(np.round(x, 9) + 0.0), d, tuple(sorted(choices.items())))
        if key in visited:
            return finish(Termination.CYCLE_DETECTED, f"revisited iterate at depth {d}")
        visited.add(key)

        candidates = [status[i].failing if status[i].failing else list(range(len(status[i].regions)))
                      for i in layer]
        x_new, used, last_exc = None, None, None
        for tried, combo in enumerate(itertools.product(*candidates)):
            if tried >= opts.max_backtrack:
                break
            pick = dict(zip(layer, combo))
            prob = LayerNashProblem(
                [net.nodes[i].cost for i in layer],
                [closure(status[i].regions[pick[i]]) for i in layer],
                [net.controlled[i] for i in layer])
            try:
                x_new = solve_layer_nash(prob, x, opts.lmcp_max_iter)
                used = pick
                break
            except LmcpFailure as exc:
                last_exc = exc
                logger.debug("LMCP failed at depth %d with branches %s", d, pick)
        if x_new is None:
            return finish(Termination.LMCP_FAILURE, f"depth {d}: {last_exc}")
        x = x_new
        trace.record(x, d, Action.NASH_SOLVED, used)
        restarts += 1
        if restarts > opts.max_restarts:
            return finish(Termination.ITERATION_LIMIT, f"{opts.max_restarts} restarts exhausted")
        graphs = {}
        d = D
        trace.record(x, d, Action.RESTARTED, used)


@dataclass
class VerifyReport:
    ok: bool
    nodes: dict[int, str]


def verify_equilibrium(net: QpNetwork, x, tol: float = EPS_FEAS) -> VerifyReport:
    """Rebuild local graphs bottom-up at ``x`` and check every node on every branch."""
    x = np.asarray(x, dtype=float)
    layers = net.depth_mapping.layers
    graphs: dict[int, PolyUnion] = {}
    report: dict[int, str] = {}
    ok = True
    for d in range(len(layers), 0, -1):
        for i in layers[d - 1]:
            node = net.nodes[i]
            child = [graphs[j] for j in net.children[i]]
            if any(g is None for g in child):
                report[i] = "ChildFailed"
                graphs[i] = None
                ok = False
                continue
            regions = branch_regions(node.feasible, child)
            if not any(contains(R, x, tol) for R in regions):
                report[i] = "NotFeasible"
                graphs[i] = None
                ok = False
                continue
            verdicts = [check_qp_solution(node.cost, closure(R), net.controlled[i], x, tol).verdict
                        for R in regions if not is_empty(R, hint=x)]
            bad = [v for v in verdicts if v.value != "Optimal"]
            if bad:
                report[i] = bad[0].value
                graphs[i] = None
                ok = False
                continue
            report[i] = "Optimal"
            if net.parents[i]:
                try:
                    graphs[i] = local_node_graph(node.cost, node.feasible, net.controlled[i], x,
                                                 child, tol, node=i).pieces
                except GraphError:
                    report[i] = "GraphFailed"
                    graphs[i] = None
                    ok = False
    return VerifyReport(ok, report)
