"""Bounded linear mixed complementarity problems.

Find ``z`` with ``l <= z <= u`` and ``w = M z + q`` such that ``w_i >= 0``
where ``z_i = l_i``, ``w_i <= 0`` where ``z_i = u_i`` and ``w_i = 0`` in
between.  Free components give plain linear equations.

The solver eliminates free variables by Gauss-Jordan steps, rewrites every
remaining bound as a nonnegative shift, and runs Lemke's method with a
lexicographic ratio test on the resulting standard LCP.  The final point is
polished by re-solving the linear system of its active set.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

logger = logging.getLogger(__name__)

PIV_TOL = 1e-11


class LmcpStatus(Enum):
    SOLVED = "Solved"
    RAY_TERMINATION = "RayTermination"
    ITERATION_LIMIT = "IterationLimit"


@dataclass(frozen=True)
class Lmcp:
    M: np.ndarray
    q: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        q = np.asarray(self.q, dtype=float).ravel()
        l = np.asarray(self.l, dtype=float).ravel()
        u = np.asarray(self.u, dtype=float).ravel()
        k = q.shape[0]
        if k < 1:
            raise ValueError("LMCP must have at least one variable")
        if M.shape != (k, k) or l.shape != (k,) or u.shape != (k,):
            raise ValueError("inconsistent LMCP dimensions")
        if not (np.all(np.isfinite(M)) and np.all(np.isfinite(q))):
            raise ValueError("M and q must be finite")
        if np.any(l > u) or np.any(np.isnan(l)) or np.any(np.isnan(u)):
            raise ValueError("bounds must satisfy l <= u")
        if np.any(l == np.inf) or np.any(u == -np.inf):
            raise ValueError("bounds must be attainable")
        for name, v in (("M", M), ("q", q), ("l", l), ("u", u)):
            object.__setattr__(self, name, v)

    @property
    def size(self) -> int:
        return self.q.shape[0]


@dataclass
class LmcpSolution:
    z: np.ndarray
    w_plus: np.ndarray
    w_minus: np.ndarray
    status: LmcpStatus
    iterations: int = 0
    residual: float = np.nan
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status is LmcpStatus.SOLVED


def residual(p: Lmcp, z: np.ndarray) -> float:
    """Largest violation of the mixed complementarity conditions at ``z``.

    Uses the natural residual ``min(w+, z - l)`` and ``min(w-, u - z)``.
    """
    w = p.M @ z + p.q
    wp, wm = np.maximum(w, 0.0), np.maximum(-w, 0.0)
    with np.errstate(invalid="ignore"):
        gap_l = np.where(np.isfinite(p.l), z - p.l, np.inf)
        gap_u = np.where(np.isfinite(p.u), p.u - z, np.inf)
    infeas = max(np.max(np.maximum(-gap_l, 0.0)), np.max(np.maximum(-gap_u, 0.0)))
    comp = max(np.max(np.minimum(wp, np.maximum(gap_l, 0.0))),
               np.max(np.minimum(wm, np.maximum(gap_u, 0.0))))
    return float(max(infeas, comp))


# ---------------------------------------------------------------------------
# Lemke

def lemke(M: np.ndarray, q: np.ndarray, max_iter: int):
    """Solve ``w = M z + q >= 0, z >= 0, z'w = 0``.

    Returns ``(z, status, iterations)``.
    """
    K = q.shape[0]
    if K == 0 or np.all(q >= 0):
        return np.zeros(K), LmcpStatus.SOLVED, 0
    # tableau columns: w (K) | z (K) | z0 | rhs
    T = np.hstack([np.eye(K), -M, -np.ones((K, 1)), q[:, None]])
    basis = np.arange(K)  # w variables
    z0 = 2 * K
    rhs = 2 * K + 1

    def pivot(r, c):
        T[r] /= T[r, c]
        col = T[:, c].copy()
        col[r] = 0.0
        T[:] -= np.outer(col, T[r])
        basis[r] = c

    r = int(np.argmin(q))
    pivot(r, z0)
    entering = K + r
    for it in range(1, max_iter + 1):
        col = T[:, entering]
        cand = np.flatnonzero(col > PIV_TOL * max(1.0, np.max(np.abs(col))))
        if cand.size == 0:
            return _extract(T, basis, K), LmcpStatus.RAY_TERMINATION, it
        # lexicographic ratio test on (rhs, inverse basis columns)
        ratios = T[cand, rhs] / col[cand]
        best = np.min(ratios)
        tied = cand[ratios <= best + 1e-12 * max(1.0, abs(best))]
        if tied.size > 1:
            # z0 leaves as soon as it is among the ties
            zt = tied[basis[tied] == z0]
            if zt.size:
                tied = zt
            else:
                for j in range(K):
                    v = T[tied, j] / col[tied]
                    m = np.min(v)
                    tied = tied[v <= m + 1e-12 * max(1.0, abs(m))]
                    if tied.size == 1:
                        break
        r = int(tied[0])
        out = int(basis[r])
        pivot(r, entering)
        if out == z0:
            return _extract(T, basis, K), LmcpStatus.SOLVED, it
        entering = out + K if out < K else out - K
    return _extract(T, basis, K), LmcpStatus.ITERATION_LIMIT, max_iter


def _extract(T, basis, K):
    z = np.zeros(K)
    for r, b in enumerate(basis):
        if K <= b < 2 * K:
            z[b - K] = T[r, -1]
    return np.maximum(z, 0.0)


# ---------------------------------------------------------------------------
# reduction to standard form

def _eliminate_free(M, q, F, tol=1e-10):
    """Gauss-Jordan on the free block with full pivoting.

    Returns the pivot (row, column) pairs and the reduced augmented matrix of
    the free rows, ``[M[F, :] | q[F]]`` after elimination.
    """
    aug = np.hstack([M[F], q[F, None]])
    k = len(F)
    pivots = []
    rows_left = list(range(k))
    cols_left = list(F)
    scale = max(1.0, np.max(np.abs(aug[:, :-1])) if aug.size else 1.0)
    while rows_left and cols_left:
        sub = np.abs(aug[np.ix_(rows_left, cols_left)])
        i, j = np.unravel_index(int(np.argmax(sub)), sub.shape)
        if sub[i, j] <= tol * scale:
            break
        r, c = rows_left[i], cols_left[j]
        aug[r] /= aug[r, c]
        for s in range(k):
            if s != r and aug[s, c] != 0.0:
                aug[s] -= aug[s, c] * aug[r]
        pivots.append((r, c))
        rows_left.remove(r)
        cols_left.remove(c)
    return pivots, aug, rows_left, cols_left


def solve_lmcp(p: Lmcp, max_iter: int | None = None, tol: float = 1e-8) -> LmcpSolution:
    k = p.size
    M, q, l, u = p.M, p.q, p.l, p.u
    lo_f, hi_f = np.isfinite(l), np.isfinite(u)
    fixed = lo_f & hi_f & (u - l <= 0)
    free = ~lo_f & ~hi_f
    bounded = ~fixed & ~free
    Fi = np.flatnonzero(free)
    Bi = np.flatnonzero(bounded)
    Xi = np.flatnonzero(fixed)

    # substitute fixed variables
    q1 = q + M[:, Xi] @ l[Xi]
    # z_pivot = -(aug[r, other cols] z_other + aug[r, -1]) for each pivot
    pivots, aug, rows_left, cols_left = _eliminate_free(M, q1, list(Fi))
    # leftover free rows: must be equations in bounded variables only
    eq_rows = []
    scale = max(1.0, np.max(np.abs(M)), np.max(np.abs(q)))
    for r in rows_left:
        coeffs = aug[r, Bi]
        if np.max(np.abs(coeffs), initial=0.0) <= 1e-10 * scale:
            if abs(aug[r, -1]) > 1e-9 * scale:
                z = np.where(fixed, l, 0.0)
                return LmcpSolution(z, np.zeros(k), np.zeros(k), LmcpStatus.RAY_TERMINATION,
                                    0, np.inf, "inconsistent linear equations among free rows")
            continue
        eq_rows.append(r)
    F2 = cols_left  # leftover free variables

    # express every variable as affine function of the reduced unknowns y = (z_B, z_F2)
    red = list(Bi) + list(F2)
    nr = len(red)
    pos = {c: j for j, c in enumerate(red)}
    E = np.zeros((k, nr))  # z = E y + e0
    e0 = np.where(fixed, l, 0.0).astype(float)
    for c, j in pos.items():
        E[c, j] = 1.0
    for r, c in pivots:
        for c2, j in pos.items():
            E[c, j] = -aug[r, c2]
        e0[c] = -aug[r, -1]
    # bounded rows and leftover equations as functions of y
    Mb = M[Bi] @ E
    qb = M[Bi] @ e0 + q[Bi]
    Ge = aug[np.ix_(eq_rows, red)] if eq_rows else np.zeros((0, nr))
    he = aug[eq_rows, -1] if eq_rows else np.zeros(0)
    nB, nF2, nE = len(Bi), len(F2), len(eq_rows)
    # leftover free columns that enter nothing are pinned to zero
    colnorm = np.abs(Mb[:, nB:]).sum(axis=0) + np.abs(Ge[:, nB:]).sum(axis=0)
    keepF = [j for j in range(nF2) if colnorm[j] > 1e-12 * scale]
    # pair equations with leftover free variables in order; extra free
    # variables get a trivially satisfied row, extra equations a zero column
    n_pairs = max(len(keepF), nE)

    # standard-form unknowns: s (per bounded), t (box extras), v+/v- (per pair)
    lb, ub = l[Bi], u[Bi]
    has_l, has_u = np.isfinite(lb), np.isfinite(ub)
    box = has_l & has_u
    box_idx = np.flatnonzero(box)
    nBox = len(box_idx)
    K = nB + nBox + 2 * n_pairs
    # y_B = shift + sign * s ; y_F2[keepF[p]] = v+_p - v-_p
    sign = np.where(has_l, 1.0, -1.0)
    shift = np.where(has_l, lb, ub)
    # map from standard unknowns to y
    Y = np.zeros((nr, K))
    y0 = np.zeros(nr)
    Y[np.arange(nB), np.arange(nB)] = sign
    y0[:nB] = shift
    vp0 = nB + nBox
    for pidx, j in enumerate(keepF):
        Y[nB + j, vp0 + 2 * pidx] = 1.0
        Y[nB + j, vp0 + 2 * pidx + 1] = -1.0
    Mhat = np.zeros((K, K))
    qhat = np.zeros(K)
    # bounded rows: sign * F  (+ t for box rows)
    Mhat[:nB] = sign[:, None] * (Mb @ Y)
    qhat[:nB] = sign * (Mb @ y0 + qb)
    for b, i in enumerate(box_idx):
        Mhat[i, nB + b] = 1.0
        Mhat[nB + b, i] = -1.0
        qhat[nB + b] = ub[i] - lb[i]
    for pidx in range(n_pairs):
        if pidx < nE:
            g = Ge[pidx] @ Y
            h = Ge[pidx] @ y0 + he[pidx]
            Mhat[vp0 + 2 * pidx] = g
            qhat[vp0 + 2 * pidx] = h
            Mhat[vp0 + 2 * pidx + 1] = -g
            qhat[vp0 + 2 * pidx + 1] = -h
    if max_iter is None:
        max_iter = max(50 * K, 100)
    x_std, status, iters = lemke(Mhat, qhat, max_iter)
    y = Y @ x_std + y0
    z = E @ y + e0
    if status is not LmcpStatus.SOLVED:
        # degenerate rows can stall the pivoting on a point that is already a
        # solution; accept it when the complementarity residual certifies it
        zc = _polish(p, np.clip(z, p.l, p.u))
        if residual(p, zc) <= tol * scale:
            logger.debug("Lemke stopped with %s at a certified solution", status.value)
            status = LmcpStatus.SOLVED
    sol = _finish(p, z, status, iters)
    if sol.status is LmcpStatus.SOLVED and sol.residual > tol * scale:
        msg = f"residual {sol.residual:.3g} above tolerance after polishing"
        logger.debug(msg)
        sol.status = LmcpStatus.RAY_TERMINATION
        sol.message = msg
    return sol


def _finish(p: Lmcp, z: np.ndarray, status: LmcpStatus, iters: int) -> LmcpSolution:
    z = np.clip(z, p.l, p.u)
    if status is LmcpStatus.SOLVED:
        z = _polish(p, z)
    w = p.M @ z + p.q
    msg = "" if status is LmcpStatus.SOLVED else f"Lemke stopped with {status.value}"
    return LmcpSolution(z, np.maximum(w, 0.0), np.maximum(-w, 0.0), status, iters,
                        residual(p, z), msg)


def _polish(p: Lmcp, z: np.ndarray) -> np.ndarray:
    """Re-solve the active-set linear system to remove pivoting round-off."""
    k = p.size
    scale = max(1.0, np.max(np.abs(z)))
    at_l = np.isfinite(p.l) & (z - p.l <= 1e-9 * scale)
    at_u = np.isfinite(p.u) & (p.u - z <= 1e-9 * scale) & ~at_l
    inner = ~(at_l | at_u)
    z_new = z.copy()
    z_new[at_l] = p.l[at_l]
    z_new[at_u] = p.u[at_u]
    I = np.flatnonzero(inner)
    if I.size:
        A = p.M[np.ix_(I, I)]
        rhs = -(p.q[I] + p.M[np.ix_(I, np.flatnonzero(~inner))] @ z_new[~inner])
        sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        # stay in the same null-space coset as the pivoting result
        N = _nullspace(A)
        if N.shape[1]:
            sol = sol + N @ (N.T @ (z[I] - sol))
        z_new[I] = sol
    z_new = np.clip(z_new, p.l, p.u)
    return z_new if residual(p, z_new) <= residual(p, z) else z


def _nullspace(A: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    if A.size == 0:
        return np.eye(A.shape[1])
    _, s, vt = np.linalg.svd(A)
    r = int(np.sum(s > rtol * max(1.0, s[0] if s.size else 0.0)))
    return vt[r:].T


def projected_gauss_seidel(p: Lmcp, iters: int = 20000, tol: float = 1e-12) -> np.ndarray:
    """Reference fixed-point iteration; converges for positive definite ``M``."""
    z = np.clip(np.zeros(p.size), p.l, p.u)
    for _ in range(iters):
        z_old = z.copy()
        for i in range(p.size):
            r = p.M[i] @ z + p.q[i]
            z[i] = min(max(z[i] - r / p.M[i, i], p.l[i]), p.u[i])
        if np.max(np.abs(z - z_old)) <= tol:
            break
    return z
