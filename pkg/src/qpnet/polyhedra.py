"""Not-necessarily-closed (NNC) polyhedra and finite unions of them.

A polyhedron is stored in mixed H-representation: every row reads
``a . x + b  REL  0`` where ``REL`` is one of ``>=`` (:data:`GE`),
``>`` (:data:`GT`) or ``==`` (:data:`EQ`).  Vertex enumeration and the
reverse conversion use the incremental double-description method on the
homogenized cone.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

EPS_FEAS = 1e-6
EPS_PIV = 1e-9
MERGE_TOL = 1e-8


class Kind(IntEnum):
    GE = 0
    GT = 1
    EQ = 2


# plain ints keep numpy comparisons on kind arrays cheap
GE, GT, EQ = int(Kind.GE), int(Kind.GT), int(Kind.EQ)


@dataclass(frozen=True)
class Halfspace:
    """One row ``normal . x + offset REL 0``."""

    normal: np.ndarray
    offset: float
    kind: Kind = GE

    def __post_init__(self):
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=float).ravel())
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "kind", Kind(self.kind))


class NncPolyhedron:
    """Intersection of closed, open and hyperplane rows in ``R^dim``.

    The arrays are read-only; every operation returns a new object.
    """

    __slots__ = ("A", "b", "kind", "dim", "_canon", "_key")

    def __init__(self, A, b, kind=None, dim: int | None = None):
        A = np.asarray(A, dtype=float)
        if A.ndim == 1:
            A = A.reshape(0 if A.size == 0 else 1, -1) if dim is None else A.reshape(-1, dim)
        if dim is None:
            if A.shape[0] == 0 and A.shape[1] == 0:
                raise ValueError("dimension of an empty row set must be given")
            dim = A.shape[1]
        if A.size == 0:
            A = np.zeros((0, dim))
        if A.shape[1] != dim:
            raise ValueError(f"row length {A.shape[1]} does not match dim {dim}")
        b = np.asarray(b, dtype=float).ravel()
        if b.shape[0] != A.shape[0]:
            raise ValueError("offset count does not match row count")
        if kind is None:
            kind = np.zeros(A.shape[0], dtype=np.int8)
        kind = np.asarray(kind, dtype=np.int8).ravel()
        if kind.shape[0] != A.shape[0]:
            raise ValueError("kind count does not match row count")
        if dim < 1:
            raise ValueError("dim must be positive")
        for arr in (A, b, kind):
            arr.setflags(write=False)
        self.A, self.b, self.kind, self.dim = A, b, kind, int(dim)
        self._canon = None
        self._key = None

    # construction helpers
    @classmethod
    def universe(cls, dim: int) -> "NncPolyhedron":
        return cls(np.zeros((0, dim)), np.zeros(0), dim=dim)

    @classmethod
    def from_rows(cls, rows: Iterable[Halfspace], dim: int) -> "NncPolyhedron":
        rows = list(rows)
        if not rows:
            return cls.universe(dim)
        for r in rows:
            if r.normal.shape[0] != dim:
                raise ValueError(f"row length {r.normal.shape[0]} does not match dim {dim}")
        return cls(np.array([r.normal for r in rows]), [r.offset for r in rows],
                   [int(r.kind) for r in rows], dim=dim)

    @classmethod
    def box(cls, lower, upper) -> "NncPolyhedron":
        lower, upper = np.asarray(lower, float), np.asarray(upper, float)
        n = lower.shape[0]
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([-lower, upper]), dim=n)

    @property
    def rows(self) -> list[Halfspace]:
        return [Halfspace(a, b, Kind(k)) for a, b, k in zip(self.A, self.b, self.kind)]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def is_closed(self) -> bool:
        return not np.any(self.kind == GT)

    def __repr__(self):
        return f"NncPolyhedron(dim={self.dim}, rows={self.n_rows})"

    def residuals(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"point has shape {x.shape}, expected ({self.dim},)")
        return self.A @ x + self.b

    def scaled_residuals(self, x) -> np.ndarray:
        """Residuals divided by row norms (signed distance to each boundary)."""
        r = self.residuals(x)
        norms = np.linalg.norm(self.A, axis=1)
        return np.where(norms > 0, r / np.where(norms > 0, norms, 1.0), r)

    def contains(self, x, tol: float = EPS_FEAS) -> bool:
        return contains(self, x, tol)

    def normalized(self) -> "NncPolyhedron":
        """Unit-norm rows; trivially true zero rows dropped."""
        norms = np.linalg.norm(self.A, axis=1)
        nz = norms > EPS_PIV
        safe = np.where(nz, norms, 1.0)
        A = np.where(nz[:, None], self.A / safe[:, None], 0.0)
        b = np.where(nz, self.b / safe, self.b)
        keep = nz | ~_zero_rows_true(self.b, self.kind)
        return NncPolyhedron(A[keep], b[keep], self.kind[keep], dim=self.dim)

    def has_false_row(self) -> bool:
        """True when some zero-normal row can never hold."""
        zero = np.linalg.norm(self.A, axis=1) <= EPS_PIV
        return bool(np.any(zero & ~_zero_rows_true(self.b, self.kind)))

    def canonical(self) -> "NncPolyhedron":
        """Normalized rows, duplicates removed, sorted; used for dedup and output."""
        if self._canon is not None:
            return self._canon
        P = self.normalized()
        A, b, kind = P.A.copy(), P.b.copy(), P.kind.copy()
        if len(b):
            # equality rows get a sign convention: first nonzero entry positive
            big = np.abs(A) > MERGE_TOL
            first = np.argmax(big, axis=1)
            lead = A[np.arange(len(b)), first]
            flip = (kind == EQ) & big.any(axis=1) & (lead < 0)
            A[flip] *= -1.0
            b[flip] *= -1.0
            R = np.round(np.column_stack([A, b]) / MERGE_TOL).astype(np.int64)
            ineq = kind != EQ
            group = np.where(ineq, 0, 1)
            # a strict row supersedes its non-strict twin
            order = np.lexsort((-kind, *(R[:, c] for c in range(R.shape[1] - 1, -1, -1)), group))
            Rs, gs = R[order], group[order]
            first_of_group = np.ones(len(order), dtype=bool)
            first_of_group[1:] = np.any(Rs[1:] != Rs[:-1], axis=1) | (gs[1:] != gs[:-1])
            idx = order[first_of_group]
            ks = kind[idx]
            Ri = R[idx]
            final = np.lexsort((*(-Ri[:, c] for c in range(Ri.shape[1] - 1, -1, -1)), ks))
            idx = idx[final]
            A, b, kind = A[idx], b[idx], kind[idx]
        C = NncPolyhedron(A, b, kind, dim=self.dim)
        C._canon = C
        self._canon = C
        return C

    def key(self) -> tuple:
        if self._key is None:
            C = self.canonical()
            R = np.round(np.column_stack([C.A, C.b]) / MERGE_TOL).astype(np.int64)
            self._key = (C.dim, C.kind.tobytes(), R.tobytes())
        return self._key

    def to_text(self, names: Sequence[str] | None = None, precision: int = 6) -> str:
        names = names or [f"x{j + 1}" for j in range(self.dim)]
        rel = {GE: ">=", GT: ">", EQ: "="}
        lines = []
        for a, b, k in zip(self.A, self.b, self.kind):
            terms = []
            for j in np.flatnonzero(np.abs(a) > 1e-12):
                terms.append(f"{a[j]:+.{precision}g}*{names[j]}")
            lhs = " ".join(terms) if terms else "0"
            if abs(b) > 1e-12:
                lhs += f" {b:+.{precision}g}"
            lines.append(f"{lhs} {rel[Kind(k)]} 0")
        return "\n".join(lines) if lines else "(all of R^%d)" % self.dim


def _zero_rows_true(b: np.ndarray, kind: np.ndarray) -> np.ndarray:
    return np.where(kind == EQ, np.abs(b) <= EPS_FEAS,
                    np.where(kind == GT, b > EPS_FEAS, b >= -EPS_FEAS))


class PolyUnion:
    """Finite union of NNC polyhedra of a common dimension.

    An empty piece list is the empty set.  Pieces are deduplicated by their
    canonical row sets; emptiness pruning happens in the operations that can
    create empty pieces.
    """

    __slots__ = ("pieces", "dim")

    def __init__(self, pieces: Iterable[NncPolyhedron] = (), dim: int | None = None):
        pieces = list(pieces)
        if dim is None:
            if not pieces:
                raise ValueError("dim required for an empty union")
            dim = pieces[0].dim
        seen, unique = set(), []
        for p in pieces:
            if p.dim != dim:
                raise ValueError("all pieces must share one dimension")
            k = p.key()
            if k not in seen:
                seen.add(k)
                unique.append(p)
        self.pieces = tuple(unique)
        self.dim = int(dim)

    def __iter__(self) -> Iterator[NncPolyhedron]:
        return iter(self.pieces)

    def __len__(self):
        return len(self.pieces)

    def __getitem__(self, i):
        return self.pieces[i]

    def __repr__(self):
        return f"PolyUnion(dim={self.dim}, pieces={len(self.pieces)})"

    def contains(self, x, tol: float = EPS_FEAS) -> bool:
        return any(contains(p, x, tol) for p in self.pieces)

    def sorted(self) -> "PolyUnion":
        return PolyUnion(sorted(self.pieces, key=lambda p: p.key()), dim=self.dim)


@dataclass
class VRep:
    """Generators: ``conv(vertices) + coni(rays)``."""

    vertices: np.ndarray
    rays: np.ndarray
    dim: int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, self.dim)
        self.rays = np.asarray(self.rays, dtype=float).reshape(-1, self.dim)


# ---------------------------------------------------------------------------
# basic set operations

def contains(P: NncPolyhedron, x, tol: float = EPS_FEAS) -> bool:
    """Membership with tolerance.

    Non-strict rows may be violated by at most ``tol``, equality rows must hold
    within ``tol`` and strict rows need a margin larger than ``tol``.  Residuals
    are measured as distances (row norms divided out).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    r = P.scaled_residuals(x)
    k = P.kind
    return bool(np.all(r[k == GE] >= -tol) and np.all(np.abs(r[k == EQ]) <= tol)
                and np.all(r[k == GT] > tol))


def closure(P: NncPolyhedron) -> NncPolyhedron:
    """Relax every strict row to non-strict.

    This is the true closure whenever ``P`` is nonempty.  For empty ``P`` the
    result may be a nonempty over-approximation.
    """
    if P.is_closed:
        return P
    kind = P.kind.copy()
    kind[kind == GT] = GE
    return NncPolyhedron(P.A, P.b, kind, dim=P.dim)


def complement_of_closure(P: NncPolyhedron) -> PolyUnion:
    """``R^n \\ closure(P)`` as a union of open halfspaces, one per violated row."""
    pieces = []
    C = closure(P).normalized()
    if C.has_false_row():
        return PolyUnion([NncPolyhedron.universe(P.dim)], dim=P.dim)
    for a, b, k in zip(C.A, C.b, C.kind):
        if not np.any(a):
            continue
        pieces.append(NncPolyhedron(-a[None, :], [-b], [GT], dim=P.dim))
        if k == EQ:
            pieces.append(NncPolyhedron(a[None, :], [b], [GT], dim=P.dim))
    return PolyUnion(pieces, dim=P.dim)


def intersect(P: NncPolyhedron, Q: NncPolyhedron) -> NncPolyhedron:
    if P.dim != Q.dim:
        raise ValueError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    return NncPolyhedron(np.vstack([P.A, Q.A]), np.concatenate([P.b, Q.b]),
                         np.concatenate([P.kind, Q.kind]), dim=P.dim)


def intersect_unions(U: PolyUnion, V: PolyUnion, keep=None) -> PolyUnion:
    """Pairwise intersection of pieces with empty results dropped.

    ``keep`` is an optional extra filter applied to every candidate piece.
    """
    from .qp_kernel import is_empty

    if U.dim != V.dim:
        raise ValueError(f"dimension mismatch: {U.dim} vs {V.dim}")
    out = []
    for P, Q in itertools.product(U.pieces, V.pieces):
        R = intersect(P, Q)
        if keep is not None and not keep(R):
            continue
        if not is_empty(R):
            out.append(R)
    return PolyUnion(out, dim=U.dim)


# ---------------------------------------------------------------------------
# double description

def _dd_cone(A_ge: np.ndarray, A_eq: np.ndarray, d: int, tol: float = EPS_PIV):
    """Generators of ``{y : A_ge y >= 0, A_eq y = 0}``.

    Returns ``(rays, lineality)``; the cone equals ``coni(rays) + span(lineality)``
    and ``rays`` are extreme modulo the lineality space.
    """
    cons = [(a, True) for a in A_eq] + [(a, False) for a in A_ge]
    normed = []
    for a, is_eq in cons:
        nrm = np.linalg.norm(a)
        if nrm <= tol:
            continue
        normed.append((a / nrm, is_eq))
    # equalities first; inequalities in a fixed lexicographic order for determinism
    eqs = [c for c in normed if c[1]]
    ges = sorted((c for c in normed if not c[1]), key=lambda c: tuple(-c[0]))
    order = eqs + ges

    L = np.eye(d)
    R = np.zeros((0, d))
    Z = np.zeros((0, 0), dtype=bool)  # zero sets of rays w.r.t. processed rows
    n_done = 0
    for a, is_eq in order:
        if L.shape[0]:
            vl = L @ a
            k = int(np.argmax(np.abs(vl)))
            if abs(vl[k]) > tol:
                l = L[k] * np.sign(vl[k])
                al = a @ l
                others = np.delete(L, k, axis=0)
                L = others - np.outer(others @ a / al, l)
                L = _orthonormal_rows(L, tol)
                if R.shape[0]:
                    R = R - np.outer(R @ a / al, l)
                    R = _normalize_rows(R)
                Z = np.hstack([Z, np.ones((Z.shape[0], 1), dtype=bool)])
                if not is_eq:
                    R = np.vstack([R, l / np.linalg.norm(l)])
                    zl = np.ones((1, n_done + 1), dtype=bool)
                    zl[0, -1] = False
                    Z = np.vstack([Z, zl])
                n_done += 1
                continue
        s = R @ a if R.shape[0] else np.zeros(0)
        pos = np.flatnonzero(s > tol)
        neg = np.flatnonzero(s < -tol)
        zer = np.flatnonzero(np.abs(s) <= tol)
        new_R, new_Z = [], []
        if pos.size and neg.size:
            for p in pos:
                for q in neg:
                    common = Z[p] & Z[q]
                    # combinatorial adjacency test
                    if np.count_nonzero(np.all(Z[:, common], axis=1)) > 2:
                        continue
                    r = s[p] * R[q] - s[q] * R[p]
                    nrm = np.linalg.norm(r)
                    if nrm <= tol:
                        continue
                    new_R.append(r / nrm)
                    new_Z.append(np.append(common, True))
        keep = zer if is_eq else np.concatenate([pos, zer])
        keep.sort()
        Zk = np.hstack([Z[keep], (np.abs(s[keep]) <= tol)[:, None]]) if keep.size else np.zeros((0, n_done + 1), dtype=bool)
        Rk = R[keep]
        if new_R:
            Rk = np.vstack([Rk, np.array(new_R)])
            Zk = np.vstack([Zk, np.array(new_Z)])
        R, Z = Rk, Zk
        n_done += 1
    R, keep = _merge_rows(R)
    return R, L


def _normalize_rows(M: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(M, axis=1, keepdims=True)
    n[n == 0] = 1.0
    return M / n


def _orthonormal_rows(L: np.ndarray, tol: float) -> np.ndarray:
    if L.shape[0] == 0:
        return L
    u, s, vt = np.linalg.svd(L, full_matrices=False)
    r = int(np.sum(s > tol * max(1.0, s[0])))
    return vt[:r]


def _merge_rows(M: np.ndarray, tol: float = MERGE_TOL):
    """Drop near-duplicate rows (after unit normalization)."""
    if M.shape[0] == 0:
        return M, np.zeros(0, dtype=int)
    kept, idx = [], []
    for i, r in enumerate(M):
        if any(np.max(np.abs(r - k)) <= max(tol, 1e-7) for k in kept):
            continue
        kept.append(r)
        idx.append(i)
    return np.array(kept), np.array(idx)


def vertex_enumerate(P: NncPolyhedron) -> VRep:
    """Vertices and rays of ``closure(P)``.

    Lineality directions are returned as pairs of opposite rays.  Raises
    ``ValueError`` if the closure is empty.
    """
    C = closure(P)
    if C.has_false_row():
        raise ValueError("polyhedron is empty")
    n = C.dim
    Ah = np.column_stack([C.A, C.b])
    ge = Ah[C.kind != EQ]
    eq = Ah[C.kind == EQ]
    t_row = np.zeros(n + 1)
    t_row[-1] = 1.0
    R, L = _dd_cone(np.vstack([t_row[None, :], ge]), eq, n + 1)
    verts, rays = [], []
    for r in R:
        t = r[-1]
        if t > EPS_PIV:
            verts.append(r[:n] / t)
        else:
            rays.append(r[:n])
    for l in L:
        rays.append(l[:n])
        rays.append(-l[:n])
    if not verts:
        raise ValueError("polyhedron is empty")
    V = np.array(verts)
    V = _dedup_points(V)
    rays = _merge_rows(_normalize_rows(np.array(rays).reshape(-1, n)))[0] if rays else np.zeros((0, n))
    rays = rays[np.linalg.norm(rays, axis=1) > EPS_PIV] if rays.shape[0] else rays
    return VRep(_clean(V), _clean(rays), n)


def _clean(M: np.ndarray) -> np.ndarray:
    M = np.where(np.abs(M) < 1e-13, 0.0, M)
    return M + 0.0


def _dedup_points(V: np.ndarray, tol: float = MERGE_TOL) -> np.ndarray:
    kept = []
    for v in V:
        scale = max(1.0, np.max(np.abs(v)))
        if any(np.max(np.abs(v - k)) <= max(tol, 1e-9) * scale for k in kept):
            continue
        kept.append(v)
    return np.array(kept).reshape(-1, V.shape[1])


def project(V: VRep, keep: Sequence[int]) -> VRep:
    """Coordinate projection of all generators onto ``keep`` (0-based)."""
    keep = list(keep)
    if any(k < 0 or k >= V.dim for k in keep):
        raise ValueError("projection index out of range")
    if V.vertices.shape[0] == 0:
        raise ValueError("empty generator list")
    verts = _dedup_points(V.vertices[:, keep])
    rays = V.rays[:, keep]
    rays = rays[np.linalg.norm(rays, axis=1) > EPS_PIV]
    if rays.shape[0]:
        rays = _merge_rows(_normalize_rows(rays))[0]
    return VRep(verts, rays.reshape(-1, len(keep)), len(keep))


def hrep_from_vrep(V: VRep) -> NncPolyhedron:
    """Closed H-representation of ``conv(vertices) + coni(rays)``.

    Computed as the double description of the polar cone
    ``{(a, beta) : a.v + beta >= 0, a.r >= 0}``: its extreme rays are the facets
    and its lineality space gives the equality rows.
    """
    if V.vertices.shape[0] == 0:
        raise ValueError("empty generator list")
    k = V.dim
    gens = [np.append(v, 1.0) for v in V.vertices] + [np.append(r, 0.0) for r in V.rays]
    R, L = _dd_cone(np.array(gens), np.zeros((0, k + 1)), k + 1)
    A, b, kind = [], [], []
    for l in L:
        if np.linalg.norm(l[:k]) > EPS_PIV:
            A.append(l[:k]); b.append(l[k]); kind.append(EQ)
    for r in R:
        if np.linalg.norm(r[:k]) > EPS_PIV:
            A.append(r[:k]); b.append(r[k]); kind.append(GE)
    if not A:
        return NncPolyhedron.universe(k)
    return NncPolyhedron(np.array(A), b, kind, dim=k).canonical()
