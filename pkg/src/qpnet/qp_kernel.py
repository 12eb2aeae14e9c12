"""Convex QP over closed polyhedra, NNLS certificates and emptiness tests."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog, lsq_linear, nnls

from .polyhedra import EQ, GE, GT, EPS_FEAS, NncPolyhedron

logger = logging.getLogger(__name__)

CURV_TOL = 1e-10
CONVEX_TOL = 1e-8


class NonConvexError(ValueError):
    pass


@dataclass(frozen=True)
class QuadCost:
    """``0.5 x'Qx + q'x + const``; Q is symmetrized on construction."""

    Q: np.ndarray
    q: np.ndarray
    const: float = 0.0

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        q = np.asarray(self.q, dtype=float).ravel()
        if Q.shape != (q.shape[0], q.shape[0]):
            raise ValueError(f"Q has shape {Q.shape}, expected ({q.shape[0]}, {q.shape[0]})")
        Q = 0.5 * (Q + Q.T)
        Q.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "const", float(self.const))

    @property
    def dim(self) -> int:
        return self.q.shape[0]

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.Q @ x + self.q @ x + self.const)

    def grad(self, x) -> np.ndarray:
        return self.Q @ np.asarray(x, dtype=float) + self.q

    def min_eig(self, idx: Sequence[int]) -> float:
        idx = list(idx)
        if not idx:
            return 0.0
        return float(np.linalg.eigvalsh(self.Q[np.ix_(idx, idx)])[0])

    def is_convex_on(self, idx: Sequence[int], tol: float = CONVEX_TOL) -> bool:
        return self.min_eig(idx) >= -tol


class QpStatus(Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


@dataclass
class QpSolveResult:
    x_star: np.ndarray
    objective: float
    status: QpStatus
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0


def _reduce(cost: QuadCost, C: NncPolyhedron, free: Sequence[int], x_fixed):
    free = np.asarray(sorted(set(int(i) for i in free)), dtype=int)
    n = C.dim
    fixed = np.setdiff1d(np.arange(n), free)
    x_fixed = np.asarray(x_fixed, dtype=float)
    A = C.A[:, free]
    b = C.b + C.A[:, fixed] @ x_fixed[fixed]
    H = cost.Q[np.ix_(free, free)]
    c = cost.q[free] + cost.Q[np.ix_(free, fixed)] @ x_fixed[fixed]
    return free, A, b, H, c


def feasible_point(C: NncPolyhedron, free: Sequence[int] | None = None, x_fixed=None):
    """A point of ``closure(C)`` (restricted to the slice through ``x_fixed``), or None."""
    n = C.dim
    if free is None:
        free = range(n)
        x_fixed = np.zeros(n)
    free = np.asarray(sorted(set(free)), dtype=int)
    fixed = np.setdiff1d(np.arange(n), free)
    x_fixed = np.asarray(x_fixed, dtype=float)
    A = C.A[:, free]
    b = C.b + C.A[:, fixed] @ x_fixed[fixed]
    eq = C.kind == EQ
    ineq = ~eq
    if free.size == 0:
        ok = np.all(b[ineq] >= -EPS_FEAS) and np.all(np.abs(b[eq]) <= EPS_FEAS)
        return x_fixed.copy() if ok else None
    res = linprog(np.zeros(free.size),
                  A_ub=-A[ineq] if ineq.any() else None, b_ub=b[ineq] if ineq.any() else None,
                  A_eq=A[eq] if eq.any() else None, b_eq=-b[eq] if eq.any() else None,
                  bounds=[(None, None)] * free.size, method="highs-ds")
    if res.status != 0:
        return None
    x = x_fixed.copy()
    x[free] = res.x
    return x


def solve_qp(cost: QuadCost, C: NncPolyhedron, free: Sequence[int], x_fixed=None,
             max_iter: int = 500) -> QpSolveResult:
    """Minimize ``cost`` over the coordinates ``free`` within ``closure(C)``.

    Coordinates outside ``free`` keep their values from ``x_fixed``.  Primal
    active-set method on the nullspace of the working set; ties are broken by
    the lowest row index.
    """
    n = C.dim
    if cost.dim != n:
        raise ValueError(f"cost dimension {cost.dim} does not match polyhedron dimension {n}")
    if x_fixed is None:
        x_fixed = np.zeros(n)
    x_fixed = np.asarray(x_fixed, dtype=float)
    free_idx = sorted(set(int(i) for i in free))
    if not cost.is_convex_on(free_idx):
        raise NonConvexError(f"cost is not convex on coordinates {free_idx}")
    x0 = feasible_point(C, free_idx, x_fixed)
    if x0 is None:
        return QpSolveResult(x_fixed.copy(), np.inf, QpStatus.INFEASIBLE, np.zeros(C.n_rows))
    F, A, b, H, c = _reduce(cost, C, free_idx, x_fixed)
    y = x0[F].copy()
    m = A.shape[0]
    is_eq = C.kind == EQ
    tol = 1e-9

    def independent(rows, i):
        if not rows:
            return np.linalg.norm(A[i]) > tol
        M = A[rows]
        coef, *_ = np.linalg.lstsq(M.T, A[i], rcond=None)
        return np.linalg.norm(M.T @ coef - A[i]) > 1e-8 * max(1.0, np.linalg.norm(A[i]))

    W: list[int] = []
    for i in range(m):
        if is_eq[i] and independent(W, i):
            W.append(i)
    for i in range(m):
        if not is_eq[i] and abs(A[i] @ y + b[i]) <= 1e-9 and independent(W, i):
            W.append(i)

    lam_full = np.zeros(m)
    it = 0
    for it in range(1, max_iter + 1):
        g = H @ y + c
        Z = null_space(A[W]) if W else np.eye(F.size)
        if Z.shape[1]:
            Hz = Z.T @ H @ Z
            gz = Z.T @ g
        else:
            gz = np.zeros(0)
        if Z.shape[1] == 0 or np.linalg.norm(gz) <= 1e-10 * max(1.0, np.linalg.norm(g)):
            # stationary on the working set; inspect multipliers
            lam = np.linalg.lstsq(A[W].T, g, rcond=None)[0] if W else np.zeros(0)
            neg = [k for k, i in enumerate(W) if not is_eq[i] and lam[k] < -1e-10]
            if not neg:
                lam_full = np.zeros(m)
                lam_full[W] = lam
                break
            drop = min(neg, key=lambda k: W[k])
            W.pop(drop)
            continue
        w, U = np.linalg.eigh(Hz)
        flat = w <= CURV_TOL
        ray = False
        if np.any(flat):
            gflat = U[:, flat].T @ gz
            if np.linalg.norm(gflat) > 1e-10:
                pz = -U[:, flat] @ gflat
                ray = True
        if not ray:
            pz = -U[:, ~flat] @ ((U[:, ~flat].T @ gz) / w[~flat])
        p = Z @ pz
        Ap = A @ p
        slack = A @ y + b
        alpha, block = (np.inf if ray else 1.0), -1
        for i in range(m):
            if i in W or is_eq[i] or Ap[i] >= -1e-12:
                continue
            a_i = max(slack[i], 0.0) / -Ap[i]
            if a_i < alpha - 1e-14:
                alpha, block = a_i, i
        if not np.isfinite(alpha):
            x = x_fixed.copy()
            x[F] = y
            return QpSolveResult(x, -np.inf, QpStatus.UNBOUNDED, np.zeros(m), it)
        y = y + alpha * p
        if block >= 0:
            W.append(block)
    else:
        logger.warning("active-set QP hit the iteration cap (%d)", max_iter)
    x = x_fixed.copy()
    x[F] = y
    return QpSolveResult(x, cost.value(x), QpStatus.OPTIMAL, lam_full, it)


def nnls_certificate(A_IJ, q_tilde, eq_mask=None) -> tuple[np.ndarray, float]:
    """``argmin_{lam >= 0} |A_IJ' lam - q_tilde|`` and the attained residual.

    Rows flagged in ``eq_mask`` get a free-sign multiplier.
    """
    A_IJ = np.atleast_2d(np.asarray(A_IJ, dtype=float))
    q_tilde = np.asarray(q_tilde, dtype=float).ravel()
    if A_IJ.size == 0:
        return np.zeros(A_IJ.shape[0] if A_IJ.ndim == 2 and A_IJ.shape[1] == q_tilde.size else 0), \
            float(np.linalg.norm(q_tilde))
    if A_IJ.shape[1] != q_tilde.size:
        raise ValueError(f"A has {A_IJ.shape[1]} columns but q_tilde has length {q_tilde.size}")
    m = A_IJ.shape[0]
    eq_mask = np.zeros(m, dtype=bool) if eq_mask is None else np.asarray(eq_mask, dtype=bool)
    if q_tilde.size == 0:
        return np.zeros(m), 0.0
    M = np.hstack([A_IJ.T, -A_IJ[eq_mask].T])
    sol, _ = nnls(M, q_tilde, maxiter=50 * max(M.shape))
    lam = sol[:m].copy()
    lam[eq_mask] -= sol[m:]
    res = float(np.linalg.norm(A_IJ.T @ lam - q_tilde))
    if res > 1e-10 * max(1.0, float(np.abs(q_tilde).max())):
        # nnls occasionally stops at a non-optimal point while reporting a
        # zero residual; bounded-variable least squares is slower but robust
        lo = np.where(eq_mask, -np.inf, 0.0)
        alt = lsq_linear(A_IJ.T, q_tilde, bounds=(lo, np.inf), method="bvls",
                         tol=1e-14).x
        alt = np.where(eq_mask, alt, np.maximum(alt, 0.0))
        res_alt = float(np.linalg.norm(A_IJ.T @ alt - q_tilde))
        if res_alt < res:
            lam, res = alt, res_alt
    return lam, res


def max_strict_slack(P: NncPolyhedron):
    """Largest uniform margin ``t <= 1`` for strict rows over ``closure(P)``.

    Returns ``(t, x)``; ``t`` is ``-inf`` when the closure is empty and ``+inf``
    when there are no strict rows (then ``x`` is any feasible point).
    """
    if P.has_false_row():
        return -np.inf, None
    Pn = P.normalized()
    n = P.dim
    if Pn.n_rows == 0:
        return np.inf, np.zeros(n)
    A, b, k = Pn.A, Pn.b, Pn.kind
    gt = k == GT
    if not gt.any():
        x = feasible_point(Pn)
        return (np.inf, x) if x is not None else (-np.inf, None)
    ineq = k != EQ
    # variables (x, t): maximize t subject to a.x + b - [row strict] t >= 0
    A_ub = np.hstack([-A[ineq], gt[ineq].astype(float)[:, None]])
    b_ub = b[ineq]
    eq = k == EQ
    A_eq = np.hstack([A[eq], np.zeros((eq.sum(), 1))]) if eq.any() else None
    b_eq = -b[eq] if eq.any() else None
    cvec = np.zeros(n + 1)
    cvec[-1] = -1.0
    res = linprog(cvec, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=[(None, None)] * n + [(None, 1.0)], method="highs")
    if res.status != 0:
        return -np.inf, None
    return float(res.x[-1]), res.x[:n]


def is_empty(P: NncPolyhedron, tol: float = EPS_FEAS, hint=None) -> bool:
    """True iff no point satisfies all rows (strict rows need margin ``tol``).

    ``hint`` is a candidate witness tried before solving the LP.
    """
    if hint is not None and P.contains(hint, tol):
        return False
    if _opposite_rows_clash(P, tol):
        return True
    if hint is not None and _nudge_witness(P, hint, tol) is not None:
        return False
    t, _ = max_strict_slack(P)
    return not t > tol


def _opposite_rows_clash(P: NncPolyhedron, tol: float) -> bool:
    """Cheap certificate of emptiness from two antiparallel rows."""
    Pn = P.normalized()
    if Pn.n_rows < 2:
        return False
    A, b, k = Pn.A, Pn.b, Pn.kind
    G = A @ A.T
    ii, jj = np.nonzero(np.triu(G < -1.0 + 1e-12, 1))
    for i, j in zip(ii, jj):
        # a.x >= -b_i and a.x <= b_j (up to strictness)
        gap = b[i] + b[j]
        strict = k[i] == GT or k[j] == GT
        if gap < -tol or (strict and gap <= tol):
            return True
    return False


def _nudge_witness(P: NncPolyhedron, x, tol: float):
    """Try small steps from ``x`` into the strict rows that it violates."""
    Pn = P.normalized()
    A, b, k = Pn.A, Pn.b, Pn.kind
    r = A @ x + b
    if np.any(np.abs(r[k == EQ]) > tol) or np.any(r[k != EQ] < -tol):
        return None
    tight = (k == GT) & (r <= tol)
    if not tight.any():
        return None
    d = A[tight].sum(axis=0)
    Aeq = A[k == EQ]
    if Aeq.shape[0]:
        d = d - Aeq.T @ np.linalg.lstsq(Aeq.T, d, rcond=None)[0]
    if np.linalg.norm(d) < 1e-9:
        return None
    d /= np.linalg.norm(d)
    for t in (1e-4, 1e-3, 1e-2):
        y = x + t * d
        if Pn.contains(y, tol):
            return y
    return None


def interior_point(P: NncPolyhedron):
    """A point of ``P`` maximizing the strict-row margin, or None if empty."""
    t, x = max_strict_slack(P)
    if not t > EPS_FEAS:
        return None
    return x
