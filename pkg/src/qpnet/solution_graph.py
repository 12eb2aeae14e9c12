"""Optimality certificates and local solution graphs of QPs and QPN nodes."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .polyhedra import (EQ, GE, GT, EPS_FEAS, NncPolyhedron, PolyUnion, VRep, closure,
                        complement_of_closure, contains, hrep_from_vrep, intersect,
                        project, vertex_enumerate)
from .qp_kernel import QuadCost, is_empty, nnls_certificate

logger = logging.getLogger(__name__)

MAX_WEAK = 20


class Verdict(Enum):
    NOT_FEASIBLE = "NotFeasible"
    NOT_OPTIMAL = "NotOptimal"
    OPTIMAL = "Optimal"


@dataclass
class CheckResult:
    verdict: Verdict
    multipliers: np.ndarray  # one per row of the feasible set, zero off the active set
    residual: float
    active: tuple[int, ...]

    @property
    def optimal(self) -> bool:
        return self.verdict is Verdict.OPTIMAL


@dataclass(frozen=True)
class ActiveSetPartition:
    strong: tuple[int, ...]
    weak: tuple[int, ...]
    inactive: tuple[int, ...]
    equality: tuple[int, ...]


@dataclass
class LocalGraph:
    pieces: PolyUnion
    reference: np.ndarray
    node: int | None = None

    def contains(self, x, tol: float = EPS_FEAS) -> bool:
        return self.pieces.contains(x, tol)

    def __len__(self):
        return len(self.pieces)


class GraphError(RuntimeError):
    pass


def check_qp_solution(cost: QuadCost, C: NncPolyhedron, J: Sequence[int], x,
                      tol: float = EPS_FEAS) -> CheckResult:
    """Decide whether ``x`` minimizes ``cost`` over coordinates ``J`` within ``closure(C)``.

    Active rows are those within ``tol`` of their boundary (equality rows are
    always active).  Optimality holds iff the reduced gradient lies in the cone
    of active row normals, certified by a nonnegative least-squares solve.
    """
    x = np.asarray(x, dtype=float)
    C = closure(C)
    J = list(J)
    r = C.scaled_residuals(x)
    k = C.kind
    m = C.n_rows
    if np.any(r[k == GE] < -tol) or np.any(np.abs(r[k == EQ]) > tol) or C.has_false_row():
        return CheckResult(Verdict.NOT_FEASIBLE, np.zeros(m), np.inf, ())
    active = np.flatnonzero((k == EQ) | (np.abs(r) <= tol))
    g = cost.grad(x)[J]
    lam_a, res = nnls_certificate(C.A[np.ix_(active, J)], g, eq_mask=(k[active] == EQ))
    lam = np.zeros(m)
    lam[active] = lam_a
    verdict = Verdict.OPTIMAL if res <= tol else Verdict.NOT_OPTIMAL
    return CheckResult(verdict, lam, res, tuple(int(i) for i in active))


def partition_active(C: NncPolyhedron, x, lam, tol: float = EPS_FEAS) -> ActiveSetPartition:
    C = closure(C)
    r = C.scaled_residuals(np.asarray(x, dtype=float))
    strong, weak, inactive, eq = [], [], [], []
    for i in range(C.n_rows):
        if C.kind[i] == EQ:
            eq.append(i)
        elif abs(r[i]) <= tol:
            (strong if lam[i] > tol else weak).append(i)
        else:
            inactive.append(i)
    return ActiveSetPartition(tuple(strong), tuple(weak), tuple(inactive), tuple(eq))


def _unforced_to_weak(C: NncPolyhedron, J: list[int], g: np.ndarray,
                      part: ActiveSetPartition, tol: float) -> ActiveSetPartition:
    """Demote strong rows whose multiplier can vanish.

    With dependent active normals the multiplier is not unique, and a row is
    only strongly active if every valid multiplier is positive on it.
    """
    if not part.strong:
        return part
    act = list(part.equality + part.strong + part.weak)
    G = C.A[np.ix_(act, J)]
    if np.linalg.matrix_rank(G, tol=1e-9 * max(1.0, np.abs(G).max())) == len(act):
        return part
    n_eq = len(part.equality)
    bounds = [(None, None)] * n_eq + [(0, None)] * (len(act) - n_eq)
    strong, demoted = [], []
    for k, row in enumerate(part.strong):
        c = np.zeros(len(act))
        c[n_eq + k] = 1.0
        res = linprog(c, A_eq=G.T, b_eq=g, bounds=bounds, method="highs")
        if res.status == 0 and res.fun <= tol:
            demoted.append(row)
        else:
            strong.append(row)
    if demoted:
        logger.debug("rows %s have non-unique multipliers and are treated as weak", demoted)
    return ActiveSetPartition(tuple(strong), tuple(sorted(part.weak + tuple(demoted))),
                              part.inactive, part.equality)


@lru_cache(maxsize=4096)
def _cone_hrep_cached(key: bytes, shape: tuple[int, int], n_eq: int):
    G = np.frombuffer(key, dtype=float).reshape(shape)
    rays = np.vstack([G, -G[:n_eq]]) if n_eq else G
    d = shape[1]
    H = hrep_from_vrep(VRep(np.zeros((1, d)), rays, d))
    return H.A.copy(), H.b.copy(), H.kind.copy()


def cone_hrep(G: np.ndarray, n_eq: int = 0) -> NncPolyhedron:
    """``{g : g = G' mu, mu_k >= 0 for k >= n_eq}`` as rows in ``g``.

    The first ``n_eq`` generators span a subspace (free sign); the rest are
    conic.  Computed by double description.
    """
    G = np.ascontiguousarray(G, dtype=float)
    d = G.shape[1]
    if G.shape[0] == 0:
        # the zero cone
        return NncPolyhedron(np.eye(d), np.zeros(d), [EQ] * d, dim=d)
    A, b, kind = _cone_hrep_cached(G.tobytes(), G.shape, n_eq)
    return NncPolyhedron(A, b, kind, dim=d)


def _branch_piece_cone(cost: QuadCost, C: NncPolyhedron, J, act: Sequence[int],
                       inact: Sequence[int]) -> NncPolyhedron:
    """Closed piece for active set ``act`` with the multiplier eliminated exactly."""
    n = C.dim
    eq_rows = [i for i in act if C.kind[i] == EQ]
    ge_rows = [i for i in act if C.kind[i] != EQ]
    order = eq_rows + ge_rows
    G = C.A[np.ix_(order, J)] if order else np.zeros((0, len(J)))
    K = cone_hrep(G, n_eq=len(eq_rows))
    # gradient on J as an affine map of x
    Gm = cost.Q[J, :]
    gv = cost.q[J]
    A_rows = [C.A[order], K.A @ Gm, C.A[list(inact)]]
    b_rows = [C.b[order], K.A @ gv + K.b, C.b[list(inact)]]
    k_rows = [np.full(len(order), int(EQ)), K.kind, np.full(len(inact), int(GE))]
    return NncPolyhedron(np.vstack(A_rows), np.concatenate(b_rows),
                         np.concatenate(k_rows).astype(np.int8), dim=n)


def _branch_piece_lifted(cost: QuadCost, C: NncPolyhedron, J, act: Sequence[int],
                         inact: Sequence[int]) -> NncPolyhedron | None:
    """Same piece via the primal-dual polyhedron in ``(x, lam)``, enumerated and projected."""
    n = C.dim
    act = list(act)
    inact = list(inact)
    na = len(act)
    rows, offs, kinds = [], [], []
    for i in act:
        rows.append(np.concatenate([C.A[i], np.zeros(na)])); offs.append(C.b[i]); kinds.append(EQ)
    for jj, j in enumerate(J):
        a = np.concatenate([cost.Q[j], -C.A[act, j]])
        rows.append(a); offs.append(cost.q[j]); kinds.append(EQ)
    for kk, i in enumerate(act):
        if C.kind[i] != EQ:
            a = np.zeros(n + na); a[n + kk] = 1.0
            rows.append(a); offs.append(0.0); kinds.append(GE)
    for i in inact:
        rows.append(np.concatenate([C.A[i], np.zeros(na)])); offs.append(C.b[i]); kinds.append(GE)
    H = NncPolyhedron(np.array(rows), offs, kinds, dim=n + na)
    try:
        V = vertex_enumerate(H)
    except ValueError:
        return None
    return hrep_from_vrep(project(V, range(n)))


def local_qp_graph(cost: QuadCost, C: NncPolyhedron, J: Sequence[int], x_star, lam_star,
                   tol: float = EPS_FEAS, method: str = "cone") -> LocalGraph:
    """Local solution graph of a QP around a certified minimizer.

    One closed piece per subset of the weakly active rows.  ``method`` selects
    how the multiplier is eliminated: ``"cone"`` (dual-cone rows) or
    ``"lifted"`` (vertex enumeration in primal-dual space).
    """
    C = closure(C)
    x_star = np.asarray(x_star, dtype=float)
    J = list(J)
    part = partition_active(C, x_star, np.asarray(lam_star, dtype=float), tol)
    part = _unforced_to_weak(C, J, cost.grad(x_star)[J], part, tol)
    if len(part.weak) > MAX_WEAK:
        raise GraphError(f"{len(part.weak)} weakly active rows exceed the limit of {MAX_WEAK}; "
                         "perturb the point or reduce degeneracy")
    builder = _branch_piece_cone if method == "cone" else _branch_piece_lifted
    pieces = []
    seen = set()
    weak = list(part.weak)
    for r in range(len(weak) + 1):
        for sub in itertools.combinations(weak, r):
            act = sorted(part.equality + part.strong + sub)
            inact = sorted(set(range(C.n_rows)) - set(act))
            P = builder(cost, C, J, act, inact)
            if P is None:
                logger.debug("empty primal-dual branch for active set %s", act)
                continue
            P = P.canonical()
            key = P.key()
            if key in seen or not contains(P, x_star, 10 * tol) or is_empty(P, hint=x_star):
                continue
            seen.add(key)
            pieces.append(P)
    return LocalGraph(PolyUnion(pieces, dim=C.dim).sorted(), x_star)


def _excludes(P: NncPolyhedron, x, tol) -> bool:
    return not contains(closure(P), x, tol)


def _violations(P: NncPolyhedron) -> list[NncPolyhedron]:
    """Single-row sets whose union is the complement of ``P`` (strictness respected)."""
    out = []
    for a, b, k in zip(P.A, P.b, P.kind):
        if not np.any(a):
            continue
        if k == GE:
            out.append(NncPolyhedron(-a[None], [-b], [GT], dim=P.dim))
        elif k == GT:
            out.append(NncPolyhedron(-a[None], [-b], [GE], dim=P.dim))
        else:
            out.append(NncPolyhedron(-a[None], [-b], [GT], dim=P.dim))
            out.append(NncPolyhedron(a[None], [b], [GT], dim=P.dim))
    return out


def is_subset(P: NncPolyhedron, Q: NncPolyhedron) -> bool:
    return all(is_empty(intersect(P, V)) for V in _violations(Q))


def remove_contained(U: PolyUnion) -> PolyUnion:
    """Drop pieces contained in another piece (ties keep the earlier one)."""
    pieces = list(U.pieces)
    keep = []
    for i, P in enumerate(pieces):
        dominated = False
        for j, Q in enumerate(pieces):
            if i == j:
                continue
            if is_subset(P, Q) and (j < i or not is_subset(Q, P)):
                dominated = True
                break
        if not dominated:
            keep.append(P)
    return PolyUnion(keep, dim=U.dim)


def branch_regions(C: NncPolyhedron, child_graphs: Sequence[PolyUnion]):
    """All ``C ∩ P_1 ∩ ... ∩ P_k`` for one piece ``P_j`` per child, unclosed."""
    combos = itertools.product(*[list(g.pieces) for g in child_graphs]) if child_graphs else [()]
    out = []
    for combo in combos:
        R = C
        for P in combo:
            R = intersect(R, P)
        out.append(R)
    return out


def local_node_graph(cost: QuadCost, C: NncPolyhedron, I: Sequence[int], x_star,
                     child_graphs: Sequence[PolyUnion], tol: float = EPS_FEAS,
                     node: int | None = None) -> LocalGraph:
    """Local solution graph of a network node from its children's local graphs.

    ``I`` is the union of decision indices over the node and its descendants.
    """
    x_star = np.asarray(x_star, dtype=float)
    n = C.dim
    regions = branch_regions(C, child_graphs)
    Z_sets = []
    for R in regions:
        Cl = closure(R)
        if not contains(Cl, x_star, tol):
            continue
        chk = check_qp_solution(cost, Cl, I, x_star, tol)
        if not chk.optimal:
            raise GraphError(f"point is not optimal on a branch of node {_label(node)} "
                             f"({chk.verdict.value}, residual {chk.residual:.3g})")
        S = local_qp_graph(cost, Cl, I, x_star, chk.multipliers, tol)
        # complements of rows inactive at x_star cannot reach x_star; skip them
        r = Cl.scaled_residuals(x_star)
        act = (Cl.kind == EQ) | (np.abs(r) <= 10 * tol)
        near = NncPolyhedron(Cl.A[act], Cl.b[act], Cl.kind[act], dim=n)
        Z = list(S.pieces) + list(complement_of_closure(near).pieces)
        Z_sets.append(Z)
    if not Z_sets:
        raise GraphError(f"no branch of node {_label(node)} contains the reference point")

    def keep(P):
        return not _excludes(P, x_star, 10 * tol) and not is_empty(P, hint=x_star)

    partial = [NncPolyhedron.universe(n)]
    for Z in Z_sets:
        nxt = []
        for P in partial:
            for Zp in Z:
                R = intersect(P, Zp)
                if keep(R):
                    nxt.append(R)
        partial = _dedup(nxt)
    result = []
    for P in partial:
        for R in regions:
            Q = intersect(P, R)
            if keep(Q):
                result.append(Q.canonical())
    if not result:
        raise GraphError(f"node {_label(node)} has no local solution piece at the reference point")
    U = remove_contained(PolyUnion(result, dim=n))
    return LocalGraph(U.sorted(), x_star, node)


def _label(node):
    return "?" if node is None else node + 1


def _dedup(pieces):
    seen, out = set(), []
    for P in pieces:
        P = P.canonical()
        k = P.key()
        if k not in seen:
            seen.add(k)
            out.append(P)
    return out
