"""Quadratic program networks: nodes, edges and structural analysis.

Node and variable indices are 0-based throughout the Python API.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .polyhedra import NncPolyhedron
from .qp_kernel import QuadCost, CONVEX_TOL

logger = logging.getLogger(__name__)


class CycleError(ValueError):
    def __init__(self, cycle: Sequence[int]):
        self.cycle = list(cycle)
        path = " -> ".join(str(i) for i in self.cycle)
        super().__init__(f"network contains a cycle: {path}")


class NetworkError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        msgs = "; ".join(d.message for d in self.diagnostics if d.level == "error")
        super().__init__(msgs or "invalid network")


@dataclass(frozen=True)
class QpNode:
    cost: QuadCost
    feasible: NncPolyhedron
    decision_indices: tuple[int, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "decision_indices",
                           tuple(int(i) for i in self.decision_indices))

    @property
    def dim(self) -> int:
        return self.feasible.dim


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" or "warning"
    code: str
    message: str

    def __str__(self):
        return f"{self.level}: [{self.code}] {self.message}"


@dataclass(frozen=True)
class DepthMapping:
    layers: tuple[tuple[int, ...], ...]

    @property
    def depth(self) -> int:
        return len(self.layers)

    def depth_of(self) -> dict[int, int]:
        """Node -> 1-based depth."""
        return {i: d + 1 for d, layer in enumerate(self.layers) for i in layer}

    def is_valid_for(self, edges: Iterable[tuple[int, int]]) -> bool:
        dep = self.depth_of()
        return all(dep[j] > dep[i] for i, j in edges)


class QpNetwork:
    """Directed acyclic network of QP nodes sharing one decision vector."""

    def __init__(self, n: int, nodes: Sequence[QpNode], edges: Iterable[tuple[int, int]] = ()):
        self.n = int(n)
        self.nodes = tuple(nodes)
        self.edges = tuple(sorted({(int(i), int(j)) for i, j in edges}))

    def __repr__(self):
        return f"QpNetwork(n={self.n}, nodes={len(self.nodes)}, edges={list(self.edges)})"

    @property
    def N(self) -> int:
        return len(self.nodes)

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        ch = [[] for _ in range(self.N)]
        for i, j in self.edges:
            ch[i].append(j)
        return tuple(tuple(sorted(c)) for c in ch)

    @cached_property
    def parents(self) -> tuple[tuple[int, ...], ...]:
        pa = [[] for _ in range(self.N)]
        for i, j in self.edges:
            pa[j].append(i)
        return tuple(tuple(sorted(p)) for p in pa)

    def find_cycle(self) -> list[int] | None:
        color = [0] * self.N
        stack_path: list[int] = []

        def dfs(v):
            color[v] = 1
            stack_path.append(v)
            for w in self.children[v]:
                if color[w] == 1:
                    return stack_path[stack_path.index(w):] + [w]
                if color[w] == 0:
                    found = dfs(w)
                    if found:
                        return found
            stack_path.pop()
            color[v] = 2
            return None

        for v in range(self.N):
            if color[v] == 0:
                found = dfs(v)
                if found:
                    return found
        return None

    @cached_property
    def reachability(self) -> frozenset[tuple[int, int]]:
        """Transitive closure of the edge set."""
        cyc = self.find_cycle()
        if cyc:
            raise CycleError(cyc)
        R = set()
        for i in range(self.N):
            seen, todo = set(), list(self.children[i])
            while todo:
                j = todo.pop()
                if j not in seen:
                    seen.add(j)
                    todo.extend(self.children[j])
            R.update((i, j) for j in seen)
        return frozenset(R)

    @cached_property
    def descendants(self) -> tuple[tuple[int, ...], ...]:
        """``D^i``: the node itself and every node reachable from it."""
        R = self.reachability
        return tuple(tuple(sorted({i} | {j for (a, j) in R if a == i})) for i in range(self.N))

    def non_descendants(self, i: int) -> tuple[int, ...]:
        return tuple(j for j in range(self.N) if j not in self.descendants[i])

    @cached_property
    def controlled(self) -> tuple[tuple[int, ...], ...]:
        """Union of decision indices over each node's descendants."""
        out = []
        for i in range(self.N):
            s = set()
            for j in self.descendants[i]:
                s.update(self.nodes[j].decision_indices)
            out.append(tuple(sorted(s)))
        return tuple(out)

    @cached_property
    def parameter_indices(self) -> tuple[int, ...]:
        owned = set()
        for node in self.nodes:
            owned.update(node.decision_indices)
        return tuple(k for k in range(self.n) if k not in owned)

    @cached_property
    def sources(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.N) if not self.parents[i])

    @cached_property
    def depth_mapping(self) -> DepthMapping:
        return depth_mapping(self)

    def validate(self) -> list[Diagnostic]:
        return validate(self)

    def check(self) -> "QpNetwork":
        errs = [d for d in self.validate() if d.level == "error"]
        if errs:
            raise NetworkError(errs)
        return self


def reachability(net: QpNetwork) -> frozenset[tuple[int, int]]:
    return net.reachability


def descendant_sets(net: QpNetwork):
    """``(D^i, D^{-i})`` for every node."""
    return [(net.descendants[i], net.non_descendants(i)) for i in range(net.N)]


def reachability_matrix(net: QpNetwork) -> np.ndarray:
    """Reachability by boolean matrix powers (cross-check for the DFS version)."""
    A = np.zeros((net.N, net.N), dtype=bool)
    for i, j in net.edges:
        A[i, j] = True
    R = A.copy()
    P = A.copy()
    for _ in range(net.N):
        P = (P.astype(int) @ A.astype(int)) > 0
        if not P.any():
            break
        R |= P
    return R


def depth_mapping(net: QpNetwork) -> DepthMapping:
    """Longest-path layering: sources at depth 1, ``depth(j) = 1 + max depth(parents)``."""
    net.reachability  # raises on cycles
    depth = [0] * net.N
    order = _topological_order(net)
    for v in order:
        depth[v] = 1 + max((depth[p] for p in net.parents[v]), default=0)
    D = max(depth, default=0)
    layers = tuple(tuple(i for i in range(net.N) if depth[i] == d) for d in range(1, D + 1))
    mapping = DepthMapping(layers)
    assert mapping.is_valid_for(net.edges)
    return mapping


def _topological_order(net: QpNetwork) -> list[int]:
    indeg = [len(p) for p in net.parents]
    ready = sorted(i for i in range(net.N) if indeg[i] == 0)
    order = []
    while ready:
        v = ready.pop(0)
        order.append(v)
        for w in net.children[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
        ready.sort()
    return order


def redundant_edges(net: QpNetwork) -> list[tuple[int, int]]:
    """Edges whose removal leaves the reachability relation unchanged."""
    out = []
    for (i, j) in net.edges:
        others = [e for e in net.edges if e != (i, j)]
        sub = QpNetwork(net.n, net.nodes, others)
        if (i, j) in sub.reachability:
            out.append((i, j))
    return out


def validate(net: QpNetwork) -> list[Diagnostic]:
    """Structural checks; messages number nodes and variables from 1."""
    diags: list[Diagnostic] = []
    if net.n < 1:
        diags.append(Diagnostic("error", "dimension", "decision dimension must be positive"))
    if net.N == 0:
        diags.append(Diagnostic("error", "empty", "network has no nodes"))
    for i, j in net.edges:
        if not (0 <= i < net.N and 0 <= j < net.N):
            diags.append(Diagnostic("error", "edge", f"edge ({i + 1}, {j + 1}) references a missing node"))
        elif i == j:
            diags.append(Diagnostic("error", "cycle", f"self-loop on node {i + 1}"))
    if any(d.level == "error" for d in diags):
        return diags
    for k, node in enumerate(net.nodes):
        if node.feasible.dim != net.n:
            diags.append(Diagnostic("error", "dimension",
                                    f"node {k + 1} feasible set has dimension {node.feasible.dim}, expected {net.n}"))
        if node.cost.dim != net.n:
            diags.append(Diagnostic("error", "dimension",
                                    f"node {k + 1} cost has dimension {node.cost.dim}, expected {net.n}"))
        J = node.decision_indices
        if not J:
            diags.append(Diagnostic("error", "indices", f"node {k + 1} has no decision indices"))
        elif min(J) < 0 or max(J) >= net.n:
            diags.append(Diagnostic("error", "indices", f"node {k + 1} decision indices out of range"))
        elif len(set(J)) != len(J):
            diags.append(Diagnostic("error", "indices", f"node {k + 1} repeats a decision index"))
    if any(d.level == "error" for d in diags):
        return diags
    cyc = net.find_cycle()
    if cyc:
        path = " -> ".join(str(i + 1) for i in cyc)
        diags.append(Diagnostic("error", "cycle", f"cycle {path}"))
        return diags
    for k, node in enumerate(net.nodes):
        idx = net.controlled[k]
        lo = node.cost.min_eig(idx)
        if lo < -CONVEX_TOL:
            diags.append(Diagnostic("error", "convexity",
                                    f"node {k + 1} cost is not convex on its controlled block (min eigenvalue {lo:.3g})"))
    for (i, j) in redundant_edges(net):
        diags.append(Diagnostic("warning", "redundant-edge",
                                f"edge ({i + 1}, {j + 1}) is implied by other edges"))
    R = net.reachability
    for a in range(net.N):
        for b in range(a + 1, net.N):
            if (a, b) in R or (b, a) in R:
                continue
            shared = set(net.nodes[a].decision_indices) & set(net.nodes[b].decision_indices)
            if shared:
                diags.append(Diagnostic("warning", "shared-index",
                                        f"unrelated nodes {a + 1} and {b + 1} share variables {sorted(k + 1 for k in shared)}"))
    return diags
