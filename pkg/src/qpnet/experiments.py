"""Example networks and the constellation-game Monte Carlo study.

Random instances use numpy's Philox counter-based generator.  Instance ``k``
of a study seeded with ``s`` draws from ``SeedSequence([s, k])``, so any
instance can be regenerated on its own and workers need no coordination.
"""
from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .equilibrium import SearchOptions, Termination, find_equilibrium
from .network import QpNetwork, QpNode
from .polyhedra import NncPolyhedron, intersect
from .qp_kernel import QuadCost

logger = logging.getLogger(__name__)

N_PLAYERS = 4
BOX = 5.0
SUPER_EDGES = tuple((i, j) for i in range(1, 5) for j in range(1, 5) if i != j)


# ---------------------------------------------------------------------------
# small helpers

def sum_of_squares(n: int, terms: Iterable[tuple[np.ndarray, np.ndarray]]) -> QuadCost:
    """``sum_k |L_k x - c_k|^2`` as a :class:`QuadCost` (no 1/2 factor)."""
    Q = np.zeros((n, n))
    q = np.zeros(n)
    const = 0.0
    for L, c in terms:
        L = np.atleast_2d(L)
        c = np.atleast_1d(c)
        Q += 2.0 * L.T @ L
        q -= 2.0 * L.T @ c
        const += float(c @ c)
    return QuadCost(Q, q, const)


def _selector(n: int, idx: Sequence[int]) -> np.ndarray:
    S = np.zeros((len(idx), n))
    S[np.arange(len(idx)), list(idx)] = 1.0
    return S


def box_rows(n: int, idx: Sequence[int], bound: float) -> NncPolyhedron:
    """``|x_k| <= bound`` for ``k`` in ``idx``."""
    S = _selector(n, idx)
    return NncPolyhedron(np.vstack([-S, S]), np.full(2 * len(idx), bound), dim=n)


# ---------------------------------------------------------------------------
# bilevel example

def build_bilevel_example() -> QpNetwork:
    """Two nodes on ``x in R^4``; ``x[0], x[1]`` are parameters.

    Node 0 picks ``x[2]`` to minimize ``0.5 (x2 - x0)^2 + 0.5 (x3 - x1)^2``
    anticipating node 1, which picks ``x[3] >= 0`` to minimize ``0.5 (x3 - x2)^2``.
    """
    n = 4
    c0 = sum_of_squares(n, [(np.array([-1, 0, 1, 0.]), 0.0), (np.array([0, -1, 0, 1.]), 0.0)])
    c1 = sum_of_squares(n, [(np.array([0, 0, -1, 1.]), 0.0)])
    c0 = QuadCost(0.5 * c0.Q, 0.5 * c0.q, 0.5 * c0.const)
    c1 = QuadCost(0.5 * c1.Q, 0.5 * c1.q, 0.5 * c1.const)
    top = QpNode(c0, NncPolyhedron.universe(n), (2,), "leader")
    bottom = QpNode(c1, NncPolyhedron([[0, 0, 0, 1.]], [0.0], dim=n), (3,), "follower")
    return QpNetwork(n, [top, bottom], [(0, 1)])


# ---------------------------------------------------------------------------
# constellation game

@dataclass(frozen=True)
class ConstellationInstance:
    g: np.ndarray  # (4, 2) target locations
    r: np.ndarray  # (4, 4, 2) target offsets; r[i, j] for i != j, diagonal unused
    box: float = BOX


@dataclass(frozen=True)
class NetworkConfig:
    edges: tuple[tuple[int, int], ...]  # 1-based, canonical

    def label(self) -> str:
        return "{" + ",".join(f"({i},{j})" for i, j in self.edges) + "}"


def instance_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def sample_instance(seed: int, index: int = 0) -> ConstellationInstance:
    rng = instance_rng(seed, index)
    g = rng.standard_normal((N_PLAYERS, 2))
    r = np.zeros((N_PLAYERS, N_PLAYERS, 2))
    for i, j in itertools.permutations(range(N_PLAYERS), 2):
        r[i, j] = rng.standard_normal(2)
    return ConstellationInstance(g, r)


def constellation_costs(inst: ConstellationInstance) -> list[QuadCost]:
    n = 2 * N_PLAYERS
    sel = [_selector(n, (2 * i, 2 * i + 1)) for i in range(N_PLAYERS)]
    costs = []
    for i in range(N_PLAYERS):
        terms = [(sel[i], inst.g[i])]
        for j in range(N_PLAYERS):
            if j != i:
                terms.append((sel[j] - sel[i], inst.r[i, j]))
        costs.append(sum_of_squares(n, terms))
    return costs


def build_constellation_qpn(inst: ConstellationInstance, edges: Iterable[tuple[int, int]]) -> QpNetwork:
    """Four players on ``x = [p1, p2, p3, p4]``; ``edges`` are 1-based."""
    n = 2 * N_PLAYERS
    nodes = []
    for i, cost in enumerate(constellation_costs(inst)):
        J = (2 * i, 2 * i + 1)
        nodes.append(QpNode(cost, box_rows(n, J, inst.box), J, f"player{i + 1}"))
    return QpNetwork(n, nodes, [(i - 1, j - 1) for i, j in edges])


def _is_acyclic(edges, k=N_PLAYERS) -> bool:
    adj = {i: [j for a, j in edges if a == i] for i in range(1, k + 1)}
    state = {}

    def visit(v):
        state[v] = 1
        for w in adj[v]:
            if state.get(w) == 1 or (w not in state and not visit(w)):
                return False
        state[v] = 2
        return True

    return all(v in state or visit(v) for v in adj)


def _reach(edges, k=N_PLAYERS) -> set:
    R = set(edges)
    changed = True
    while changed:
        changed = False
        for (a, b), (c, d) in itertools.product(list(R), list(R)):
            if b == c and (a, d) not in R:
                R.add((a, d))
                changed = True
    return R


def _is_reduced(edges) -> bool:
    full = _reach(edges)
    return all(_reach([e for e in edges if e != f]) != full for f in edges)


def canonical_edges(edges: Iterable[tuple[int, int]]) -> tuple[tuple[int, int], ...]:
    """Lexicographically smallest sorted edge tuple over relabelings of players 2-4."""
    edges = list(edges)
    best = None
    for perm in itertools.permutations((2, 3, 4)):
        m = {1: 1, 2: perm[0], 3: perm[1], 4: perm[2]}
        cand = tuple(sorted((m[i], m[j]) for i, j in edges))
        if best is None or cand < best:
            best = cand
    return best


def enumerate_configs(return_raw_count: bool = False):
    """Acyclic, redundancy-free configurations up to relabeling of players 2-4."""
    raw = 0
    seen = set()
    for mask in range(1 << len(SUPER_EDGES)):
        raw += 1
        edges = [e for b, e in enumerate(SUPER_EDGES) if mask >> b & 1]
        if not _is_acyclic(edges) or not _is_reduced(edges):
            continue
        seen.add(canonical_edges(edges))
    configs = [NetworkConfig(e) for e in sorted(seen, key=lambda e: (len(e), e))]
    return (configs, raw) if return_raw_count else configs


def player_one_cost(inst: ConstellationInstance, edges, x0=None,
                    opts: SearchOptions | None = None) -> tuple[float, Termination]:
    net = build_constellation_qpn(inst, edges)
    x0 = np.zeros(net.n) if x0 is None else x0
    x, trace = find_equilibrium(net, x0, opts)
    return net.nodes[0].cost.value(x), trace.termination


@dataclass
class ConfigStats:
    config_id: int
    edges: tuple[tuple[int, int], ...]
    samples: int
    mean: float
    se: float

    @property
    def ci95(self) -> float:
        return 1.96 * self.se

    @property
    def label(self) -> str:
        return NetworkConfig(self.edges).label()


@dataclass
class StudyResult:
    stats: list[ConfigStats]
    dropped: int
    reductions: np.ndarray = field(repr=False)  # (kept instances, configs)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["config_id", "edges", "samples", "mean_reduction_pct", "se_pct", "ci95_pct"])
        for s in self.stats:
            w.writerow([s.config_id, s.label, s.samples, f"{100 * s.mean:.4f}",
                        f"{100 * s.se:.4f}", f"{100 * s.ci95:.4f}"])
        return buf.getvalue()


def _solve_instance(args):
    seed, index, config_edges, opts = args
    inst = sample_instance(seed, index)
    costs = []
    for edges in config_edges:
        try:
            c, term = player_one_cost(inst, edges, opts=opts)
        except Exception as exc:  # keep the study alive, the instance is dropped
            logger.warning("instance %d config %s raised %r", index, edges, exc)
            return index, None
        if term is not Termination.EQUILIBRIUM:
            logger.info("instance %d config %s ended with %s", index, edges, term.value)
            return index, None
        costs.append(c)
    return index, costs


def run_constellation_study(samples: int, seed: int = 0, configs: Sequence[NetworkConfig] | None = None,
                            jobs: int | None = 1, opts: SearchOptions | None = None,
                            progress: bool = False) -> StudyResult:
    """Node-1 relative cost change of each configuration against the edgeless one."""
    if samples < 1:
        raise ValueError("samples must be at least 1")
    configs = list(configs) if configs is not None else enumerate_configs()
    config_edges = [c.edges for c in configs]
    if () not in config_edges:
        config_edges = [()] + config_edges
        configs = [NetworkConfig(())] + configs
    base = config_edges.index(())
    work = [(seed, k, config_edges, opts) for k in range(samples)]
    jobs = jobs or os.cpu_count() or 1
    results: dict[int, list[float] | None] = {}
    if jobs == 1:
        it = map(_solve_instance, work)
        for done, (k, costs) in enumerate(it, 1):
            results[k] = costs
            if progress and done % 100 == 0:
                logger.info("%d/%d instances", done, samples)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for done, (k, costs) in enumerate(pool.map(_solve_instance, work, chunksize=8), 1):
                results[k] = costs
                if progress and done % 100 == 0:
                    logger.info("%d/%d instances", done, samples)
    kept = [results[k] for k in range(samples) if results[k] is not None]
    dropped = samples - len(kept)
    if dropped:
        logger.warning("dropped %d of %d instances", dropped, samples)
    C = np.array(kept).reshape(len(kept), len(configs))
    nash = C[:, base:base + 1]
    red = (C - nash) / np.abs(nash)
    stats = []
    m = red.shape[0]
    for cid, (cfg, col) in enumerate(zip(configs, red.T), 1):
        mean = float(col.mean()) if m else math.nan
        se = float(col.std(ddof=1) / math.sqrt(m)) if m > 1 else math.nan
        stats.append(ConfigStats(cid, cfg.edges, m, mean, se))
    return StudyResult(stats, dropped, red)


# ---------------------------------------------------------------------------
# robust polygon avoidance

def regular_polygon(sides: int, radius: float, phase: float = 0.0):
    """H-rep ``A y + b >= 0`` of a centered regular polygon with unit-norm rows."""
    ang = phase + 2 * np.pi * np.arange(sides) / sides
    normals = np.column_stack([np.cos(ang), np.sin(ang)])
    normals[np.abs(normals) < 1e-12] = 0.0
    apothem = radius * np.cos(np.pi / sides)
    return -normals, np.full(sides, apothem)


@dataclass
class AvoidanceInstance:
    p_e: np.ndarray
    p_o: list[np.ndarray]
    shape_e: tuple[np.ndarray, np.ndarray]
    shape_o: list[tuple[np.ndarray, np.ndarray]]
    u_e_bound: float = 15.0
    u_o_bound: float = 1.0
    goal_shift: float = 6.5
    vertical_weight: float = 1.0

    @property
    def M(self) -> int:
        return len(self.p_o)


def default_avoidance_instance(M: int = 2) -> AvoidanceInstance:
    """Planar instance: a square pulled right past ``M`` square obstacles."""
    starts = [np.array([0.0, -1.0]), np.array([3.0, -1.0])]
    while len(starts) < M:
        starts.append(np.array([3.0 * len(starts), -1.0]))
    square = regular_polygon(4, math.sqrt(2))
    return AvoidanceInstance(np.array([-5.0, 0.0]), starts[:M], square, [square] * M)


def avoidance_layout(M: int) -> dict:
    """Coordinate slices of ``x = [p_e, u_e, (p_o, u_o, q, eps) per obstacle]``."""
    lay = {"p_e": [0, 1], "u_e": [2, 3]}
    for i in range(M):
        o = 4 + 7 * i
        lay[f"p_o{i}"] = [o, o + 1]
        lay[f"u_o{i}"] = [o + 2, o + 3]
        lay[f"q{i}"] = [o + 4, o + 5]
        lay[f"eps{i}"] = [o + 6]
    lay["n"] = 4 + 7 * M
    return lay


def avoidance_initial_point(inst: AvoidanceInstance) -> np.ndarray:
    lay = avoidance_layout(inst.M)
    x = np.zeros(lay["n"])
    x[lay["p_e"]] = inst.p_e
    for i, p in enumerate(inst.p_o):
        x[lay[f"p_o{i}"]] = p
    return x


def build_avoidance_qpn(inst: AvoidanceInstance) -> QpNetwork:
    """Leader node 0, adversaries ``1..M`` and expansion nodes ``M+1..2M``.

    Positions ``p_e`` and ``p_o`` are parameters.  Expansion node ``k`` finds
    the smallest uniform growth ``eps_k`` of both polygons that makes them
    share a point ``q_k``; adversary ``k`` moves its obstacle to shrink that
    growth; the leader moves while keeping every growth nonnegative.
    """
    M = inst.M
    lay = avoidance_layout(M)
    n = lay["n"]
    S = lambda key: _selector(n, lay[key])
    # leader: 0.5 (u_x - shift)^2 + 0.5 w (p_y + u_y)^2
    ex, ey = np.zeros(n), np.zeros(n)
    ex[lay["u_e"][0]] = 1.0
    ey[lay["u_e"][1]] = 1.0
    ey[lay["p_e"][1]] = 1.0
    lead = sum_of_squares(n, [(ex, inst.goal_shift), (math.sqrt(inst.vertical_weight) * ey, 0.0)])
    lead = QuadCost(0.5 * lead.Q, 0.5 * lead.q, 0.5 * lead.const)
    rows_A, rows_b = [], []
    for i in range(M):
        a = np.zeros(n)
        a[lay[f"eps{i}"][0]] = 1.0
        rows_A.append(a)
        rows_b.append(0.0)
    C_lead = NncPolyhedron(np.array(rows_A).reshape(-1, n), rows_b, dim=n)
    C_lead = intersect(C_lead, box_rows(n, lay["u_e"], inst.u_e_bound))
    nodes = [QpNode(lead, C_lead, tuple(lay["u_e"]), "leader")]
    for i in range(M):
        c = np.zeros(n)
        c[lay[f"eps{i}"][0]] = 1.0
        nodes.append(QpNode(QuadCost(np.zeros((n, n)), c), box_rows(n, lay[f"u_o{i}"], inst.u_o_bound),
                            tuple(lay[f"u_o{i}"]), f"adversary{i + 1}"))
    for i in range(M):
        c = np.zeros(n)
        c[lay[f"eps{i}"][0]] = 1.0
        Ae, be = inst.shape_e
        Ao, bo = inst.shape_o[i]
        eps = np.zeros(n)
        eps[lay[f"eps{i}"][0]] = 1.0
        # A_e (p_e + u_e + q) + b_e + eps >= 0, same for the obstacle
        Ye = S("p_e") + S("u_e") + S(f"q{i}")
        Yo = S(f"p_o{i}") + S(f"u_o{i}") + S(f"q{i}")
        A = np.vstack([Ae @ Ye + eps, Ao @ Yo + eps])
        b = np.concatenate([be, bo])
        nodes.append(QpNode(QuadCost(np.zeros((n, n)), c), NncPolyhedron(A, b, dim=n),
                            tuple(lay[f"eps{i}"] + lay[f"q{i}"]), f"expansion{i + 1}"))
    edges = [(0, 1 + i) for i in range(M)] + [(1 + i, 1 + M + i) for i in range(M)]
    return QpNetwork(n, nodes, edges)
