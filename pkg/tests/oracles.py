"""Independent brute-force oracles shared by the unit and acceptance tests.

Everything here is deliberately naive (enumeration, dense loops, grids) and
shares no code path with the implementations it checks.
"""

from itertools import combinations

import numpy as np


def projection_active_set(rows, rhs, box_lo, box_hi, point, tol=1e-9):
    """Exact projection onto {rows @ x <= rhs} ∩ [box_lo, box_hi] by
    enumerating candidate active sets (dimensions <= 3 or so).

    Box faces are folded in as additional rows. For every subset of rows of
    size at most the dimension, the equality-constrained least-squares
    candidate is computed from its KKT system; the best feasible candidate
    wins.
    """
    point = np.asarray(point, dtype=float)
    n = point.shape[0]
    A = [np.asarray(r, dtype=float) for r in np.atleast_2d(rows)] if len(rows) else []
    b = list(np.atleast_1d(rhs)) if len(rows) else []
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        A.append(e.copy())
        b.append(box_hi[j])
        A.append(-e)
        b.append(-box_lo[j])
    A = np.asarray(A)
    b = np.asarray(b)

    def feasible(x):
        return (A @ x - b).max() <= tol

    best = None
    if feasible(point):
        return point.copy()
    for size in range(1, n + 1):
        for subset in combinations(range(len(A)), size):
            As = A[list(subset)]
            bs = b[list(subset)]
            gram = As @ As.T
            try:
                lam = np.linalg.lstsq(gram, As @ point - bs, rcond=None)[0]
            except np.linalg.LinAlgError:
                continue
            x = point - As.T @ lam
            if not feasible(x):
                continue
            d = float(np.linalg.norm(x - point))
            if best is None or d < best[0] - 1e-12:
                best = (d, x)
    assert best is not None, "oracle found no feasible candidate"
    return best[1]


def grid_projection(mask_fn, grid_axes, point):
    """Projection by exhaustive search over a dense grid of feasible points."""
    best = None
    mesh = np.meshgrid(*grid_axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    for x in pts:
        if mask_fn(x):
            d = float(np.linalg.norm(x - point))
            if best is None or d < best[0]:
                best = (d, x)
    return best[1]


def matvec_loops(mat, vec):
    """Dense matrix-vector product with explicit loops."""
    out = np.zeros(mat.shape[0])
    for i in range(mat.shape[0]):
        for j in range(mat.shape[1]):
            out[i] += mat[i][j] * vec[j]
    return out


def subgradient_inequality_holds(fn, x, s, probes, tol=1e-8):
    """Check f(y) - f(x) >= s.(y - x) at all probe points."""
    fx = fn(x)
    for y in probes:
        if fn(y) - fx < float(np.asarray(s) @ (np.asarray(y) - np.asarray(x))) - tol:
            return False
    return True


def lp_vertex_solve(c, rows, rhs, box_lo, box_hi, tol=1e-9):
    """Minimize c.x over {rows @ x <= rhs} ∩ box by enumerating basic
    feasible points (all n-subsets of tight constraints)."""
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    A = [np.asarray(r, dtype=float) for r in np.atleast_2d(rows)] if len(rows) else []
    b = list(np.atleast_1d(rhs)) if len(rows) else []
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        A.append(e.copy())
        b.append(box_hi[j])
        A.append(-e)
        b.append(-box_lo[j])
    A = np.asarray(A)
    b = np.asarray(b)
    best = None
    for subset in combinations(range(len(A)), n):
        As = A[list(subset)]
        bs = b[list(subset)]
        if abs(np.linalg.det(As)) < 1e-12:
            continue
        x = np.linalg.solve(As, bs)
        if (A @ x - b).max() > tol:
            continue
        val = float(c @ x)
        if best is None or val < best[0]:
            best = (val, x)
    assert best is not None, "vertex oracle found no feasible vertex"
    return best
