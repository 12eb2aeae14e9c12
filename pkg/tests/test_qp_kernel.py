import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st
from scipy.linalg import null_space
from scipy.optimize import linprog

from qpnet.polyhedra import EQ, GE, GT, NncPolyhedron
from qpnet.qp_kernel import (NonConvexError, QpStatus, QuadCost, interior_point, is_empty,
                             nnls_certificate, solve_qp)
from qpnet.solution_graph import Verdict, check_qp_solution

from oracles import sample_descent


def test_quadcost_symmetrizes_and_evaluates():
    c = QuadCost([[2.0, 1.0], [0.0, 2.0]], [1.0, 0.0], 3.0)
    assert np.allclose(c.Q, c.Q.T) and np.isclose(c.Q[0, 1], 0.5)
    x = np.array([1.0, -1.0])
    assert np.isclose(c.value(x), 0.5 * x @ c.Q @ x + 1.0 + 3.0)
    assert np.allclose(c.grad(x), c.Q @ x + [1.0, 0.0])
    with pytest.raises(ValueError):
        QuadCost(np.eye(2), [1.0, 2.0, 3.0])


def test_convexity_on_a_block():
    c = QuadCost(np.diag([1.0, -1.0]), [0.0, 0.0])
    assert c.is_convex_on([0]) and not c.is_convex_on([1]) and not c.is_convex_on([0, 1])


def test_follower_best_response():
    cost = QuadCost([[0, 0, 0, 0], [0, 0, 0, 0], [0, 0, 1, -1], [0, 0, -1, 1.0]], np.zeros(4))
    C = NncPolyhedron([[0, 0, 0, 1.0]], [0.0])
    r = solve_qp(cost, C, [3], [0, 0, -3, 4])
    assert r.status is QpStatus.OPTIMAL
    assert np.allclose(r.x_star, [0, 0, -3, 0])
    assert np.isclose(r.multipliers[0], 3.0)


def test_unconstrained_scalar():
    r = solve_qp(QuadCost([[1.0]], [0.0]), NncPolyhedron.universe(1), [0], [5.0])
    assert r.status is QpStatus.OPTIMAL and abs(r.x_star[0]) < 1e-12


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_regularized_linear_cost_closed_form(sign):
    delta = 1e-3
    cost = QuadCost([[2 * delta]], [sign])  # sign*x + delta x^2
    r = solve_qp(cost, NncPolyhedron([[1.0]], [0.0]), [0])
    assert np.isclose(r.x_star[0], max(0.0, -sign / (2 * delta)))


def test_infeasible_unbounded_and_nonconvex():
    C = NncPolyhedron([[1.0], [-1.0]], [-1.0, 0.0])
    assert solve_qp(QuadCost([[1.0]], [0.0]), C, [0]).status is QpStatus.INFEASIBLE
    r = solve_qp(QuadCost([[0.0]], [1.0]), NncPolyhedron([[-1.0]], [0.0]), [0])
    assert r.status is QpStatus.UNBOUNDED
    with pytest.raises(NonConvexError):
        solve_qp(QuadCost([[-1.0]], [0.0]), NncPolyhedron.box([-1], [1]), [0])


def test_equality_constrained_projection():
    # min 0.5|x|^2 s.t. x1 + x2 = 2
    r = solve_qp(QuadCost(np.eye(2), [0, 0]), NncPolyhedron([[1.0, 1.0]], [-2.0], [EQ]), [0, 1])
    assert np.allclose(r.x_star, [1.0, 1.0])


def test_nnls_certificate_scalar_cases():
    lam, res = nnls_certificate([[1.0]], [2.0])
    assert np.isclose(lam[0], 2.0) and res < 1e-12
    lam, res = nnls_certificate([[1.0]], [-1.0])
    assert lam[0] == 0.0 and np.isclose(res, 1.0)
    lam, res = nnls_certificate([[1.0]], [-1.0], eq_mask=[True])
    assert np.isclose(lam[0], -1.0) and res < 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_nnls_certificate_cone_membership(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((4, 3))
    mu = rng.uniform(0, 2, 4)
    lam, res = nnls_certificate(A, A.T @ mu)
    assert res <= 1e-8 and np.all(lam >= 0)
    # a vector with negative inner product against a separating direction
    s = rng.standard_normal(3)
    A_sep = A * np.sign(A @ s)[:, None]  # every row now has a.s >= 0
    lam, res = nnls_certificate(A_sep, -s)
    assert res > 1e-3


def test_is_empty_cases():
    assert is_empty(NncPolyhedron([[1.0], [-1.0]], [-1.0, 0.0]))
    assert not is_empty(NncPolyhedron([[1.0], [-1.0]], [0.0, 1.0], [GT, GT]))
    assert is_empty(NncPolyhedron([[1.0], [-1.0], [1.0]], [0.0, 0.0, 0.0], [GE, GE, GT]))
    assert is_empty(NncPolyhedron([[1.0], [1.0]], [0.0, 0.0], [EQ, GT]))
    assert not is_empty(NncPolyhedron.universe(3))
    assert is_empty(NncPolyhedron(np.zeros((1, 2)), [-1.0]))


def test_is_empty_hint_paths_agree_with_lp():
    P = NncPolyhedron([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], [GT, GT])
    assert not is_empty(P, hint=np.zeros(2))
    Q = NncPolyhedron([[1.0, 0.0], [-1.0, 0.0]], [0.0, 0.0], [GT, GE])
    assert is_empty(Q, hint=np.zeros(2))


def test_interior_point_respects_strict_rows():
    P = NncPolyhedron([[1.0], [-1.0]], [0.0, 1.0], [GT, GT])
    x = interior_point(P)
    assert x is not None and 0 < x[0] < 1
    assert interior_point(NncPolyhedron([[1.0], [-1.0]], [0.0, 0.0], [GT, GE])) is None


# --- certificate soundness ---------------------------------------------------------

def random_qp(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    J = sorted(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist())
    B = rng.standard_normal((int(rng.integers(1, n + 2)), n))
    Q = B.T @ B
    q = rng.standard_normal(n)
    x = rng.standard_normal(n)
    m = int(rng.integers(0, 7))
    A = rng.standard_normal((m, n))
    active = rng.random(m) < 0.5
    slack = np.where(active, 0.0, rng.uniform(0.1, 2.0, m))
    b = -A @ x + slack
    kinds = np.where(active & (rng.random(m) < 0.25), EQ, GE)
    if m and rng.random() < 0.15:
        b[0] -= 0.5  # make the point infeasible
    return QuadCost(Q, q), NncPolyhedron(A.reshape(m, n), b, kinds, dim=n), J, x, rng


def feasible_mask(C, tol=0.0):
    def ok(pts):
        r = pts @ C.A.T + C.b
        ge = C.kind != EQ
        return np.all(r[:, ge] >= -1e-12, axis=1) & np.all(np.abs(r[:, ~ge]) <= 1e-9, axis=1)
    return ok


def local_directions(C, J, x, rng, count=2500):
    n = C.dim
    eq = C.kind == EQ
    N = null_space(C.A[eq][:, J]) if eq.any() else np.eye(len(J))
    if N.shape[1] == 0:
        return np.zeros((0, n))
    raw = rng.standard_normal((count, N.shape[1])) @ N.T
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    D = np.zeros((count, n))
    D[:, J] = raw
    return D


def lp_descent_direction(cost, C, J, x):
    """Steepest feasible first-order direction in the box norm (scipy LP)."""
    n = C.dim
    g = cost.grad(x)[J]
    r = C.A @ x + C.b
    act = (C.kind != EQ) & (np.abs(r) <= 1e-9)
    eq = C.kind == EQ
    res = linprog(g, A_ub=-C.A[act][:, J] if act.any() else None,
                  b_ub=np.zeros(act.sum()) if act.any() else None,
                  A_eq=C.A[eq][:, J] if eq.any() else None,
                  b_eq=np.zeros(eq.sum()) if eq.any() else None,
                  bounds=[(-1, 1)] * len(J), method="highs")
    d = np.zeros(n)
    if res.status == 0:
        d[J] = res.x
    return d


@settings(max_examples=500, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 2**32 - 1))
def test_kkt_certificate_soundness(seed):
    cost, C, J, x, rng = random_qp(seed)
    chk = check_qp_solution(cost, C, J, x)
    r = C.A @ x + C.b
    truly_feasible = np.all(r[C.kind != EQ] >= -1e-9) and np.all(np.abs(r[C.kind == EQ]) <= 1e-9)
    if chk.verdict is Verdict.NOT_FEASIBLE:
        assert not truly_feasible
        return
    assert truly_feasible
    D = local_directions(C, J, x, rng)
    D = np.vstack([D, lp_descent_direction(cost, C, J, x)[None]])
    f = lambda P: (0.5 * np.einsum("ij,jk,ik->i", np.atleast_2d(P), cost.Q, np.atleast_2d(P))
                   + np.atleast_2d(P) @ cost.q)
    fx = lambda p: float(f(p)[0])
    drop = sample_descent(lambda P: f(P) if P.ndim == 2 else fx(P), x, D,
                          [1e-2, 1e-3, 1e-4, 1e-5], feasible_mask(C))
    if chk.verdict is Verdict.OPTIMAL:
        assert chk.residual <= 1e-6
        assert drop >= -1e-9
    else:
        assert drop < 0.0


@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 2**32 - 1))
def test_solve_qp_output_is_certified(seed):
    cost, C, J, x, _ = random_qp(seed)
    res = solve_qp(cost, C, J, x)
    if res.status is QpStatus.OPTIMAL:
        chk = check_qp_solution(cost, C, J, res.x_star)
        assert chk.verdict is Verdict.OPTIMAL, chk
        untouched = [k for k in range(C.dim) if k not in J]
        assert np.array_equal(res.x_star[untouched], x[untouched])


def test_certificate_when_nnls_stalls():
    # an instance where scipy's nnls returns a wrong point with a zero reported residual
    cost, C, J, x, _ = random_qp(111399992)
    chk = check_qp_solution(cost, C, J, x)
    assert chk.optimal
    A = C.A[:, J]
    assert np.allclose(chk.multipliers, np.linalg.solve(A.T, cost.grad(x)[J]), atol=1e-8)
