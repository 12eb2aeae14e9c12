"""Shared fixtures: analytic pieces of the two-node example and sampling utilities."""
import numpy as np

from qpnet.polyhedra import NncPolyhedron, closure, contains, intersect, vertex_enumerate


def in_follower_graph(x, tol=1e-6):
    """Analytic follower graph near the origin: {x4 = 0, x3 <= 0} or {x4 = x3, x3 >= 0}."""
    _, _, x3, x4 = x
    return (abs(x4) <= tol and x3 <= tol) or (abs(x4 - x3) <= tol and x3 >= -tol)


def leader_piece_memberships(x, tol=1e-6):
    x1, x2, x3, x4 = x
    return (
        abs(x3 - x1) <= tol and abs(x4) <= tol and x1 < tol,
        abs(x3 - x4) <= tol and abs(x3 - 0.5 * (x1 + x2)) <= tol and x1 + x2 > -tol,
        abs(x3) <= tol and abs(x4) <= tol and x1 >= -tol and x1 + x2 <= tol,
    )


def in_leader_graph(x, tol=1e-6):
    return any(leader_piece_memberships(x, tol))


def follower_samples(rng, k=200, r=1.0):
    a = rng.uniform(-r, 0, k)
    b = rng.uniform(0, r, k)
    z = rng.uniform(-r, r, (k, 2))
    p1 = np.column_stack([z, a, np.zeros(k)])
    p2 = np.column_stack([z, b, b])
    return np.vstack([p1, p2])


def leader_samples(rng, k=200, r=1.0):
    out = []
    x1 = rng.uniform(-r, 0, k)
    x2 = rng.uniform(-r, r, k)
    out.append(np.column_stack([x1, x2, x1, np.zeros(k)]))
    s = rng.uniform(0, r, k)       # s = x1 + x2 > 0
    x1 = rng.uniform(-r, r, k)
    out.append(np.column_stack([x1, s - x1, s / 2, s / 2]))
    x1 = rng.uniform(0, r, k)
    x2 = -x1 - rng.uniform(0, r, k)
    out.append(np.column_stack([x1, x2, np.zeros(k), np.zeros(k)]))
    return np.vstack(out)


def points_in_pieces(pieces, rng, center, radius=1.0, k=200):
    """Random points of each piece intersected with a box around ``center``."""
    pts = []
    n = len(center)
    box = NncPolyhedron.box(np.asarray(center) - radius, np.asarray(center) + radius)
    for P in pieces:
        V = vertex_enumerate(intersect(closure(P), box))
        w = rng.dirichlet(np.ones(V.vertices.shape[0]) * 0.5, size=k)
        cand = w @ V.vertices
        pts.extend(p for p in cand if contains(P, p, 1e-9))
    return np.array(pts).reshape(-1, n)
