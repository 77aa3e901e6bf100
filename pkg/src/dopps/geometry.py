"""Euclidean projections onto boxes, halfspaces, the nonnegative orthant,
and compact polyhedra.

Boxes, halfspaces and the orthant project in closed form. Polyhedra use
Dykstra's cyclically-corrected alternating projections over their bounding
box and (unit-normalized) constraint rows, which converges to the exact
projection onto the intersection. Antiparallel row pairs are merged into
slabs so both sides of a two-sided constraint are handled in a single
closed-form step per cycle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numba
from numba import njit, prange

from .errors import DimensionMismatch, InfeasibleSet, NonConvergence

# the agent-parallel kernels are coarse-grained; the portable threading
# layer avoids depending on the container's TBB/OMP versions
numba.config.THREADING_LAYER = "workqueue"

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000
_PROBE_TOL = 1e-7


class ConvexSet:
    """Interface: a closed convex set supporting exact-or-certified projection."""

    dim: int

    def project(self, point: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def residual(self, point: np.ndarray) -> float:
        """Worst constraint violation at ``point`` (0 inside the set)."""
        raise NotImplementedError

    def contains(self, point: np.ndarray, tol: float = 1e-9) -> bool:
        return self.residual(point) <= tol

    def _check_dim(self, point: np.ndarray) -> np.ndarray:
        p = np.asarray(point, dtype=float)
        if p.shape != (self.dim,):
            raise DimensionMismatch(f"expected shape ({self.dim},), got {p.shape}")
        return p


@dataclass(frozen=True)
class Box(ConvexSet):
    """Axis-aligned box; lower may equal upper componentwise."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionMismatch("box bounds must be 1-d arrays of equal length")
        if (lo > hi).any():
            raise ValueError("box needs lower <= upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def project(self, point):
        return np.clip(self._check_dim(point), self.lower, self.upper)

    def residual(self, point):
        p = self._check_dim(point)
        return float(max(np.maximum(p - self.upper, 0.0).max(initial=0.0),
                         np.maximum(self.lower - p, 0.0).max(initial=0.0)))


@dataclass(frozen=True)
class NonnegOrthant(ConvexSet):
    dim: int

    def project(self, point):
        return np.maximum(self._check_dim(point), 0.0)

    def residual(self, point):
        return float(np.maximum(-self._check_dim(point), 0.0).max(initial=0.0))


@dataclass(frozen=True)
class Halfspace(ConvexSet):
    """{x : normal . x <= offset}; the normal need not be unit length."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        nv = np.atleast_1d(np.asarray(self.normal, dtype=float))
        if nv.ndim != 1 or not np.linalg.norm(nv) > 0:
            raise ValueError("halfspace needs a nonzero 1-d normal")
        object.__setattr__(self, "normal", nv)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self) -> int:
        return self.normal.shape[0]

    def project(self, point):
        p = self._check_dim(point)
        nrm2 = float(self.normal @ self.normal)
        excess = float(self.normal @ p) - self.offset
        if excess <= 0:
            return p
        return p - (excess / nrm2) * self.normal

    def residual(self, point):
        p = self._check_dim(point)
        return float(max(0.0, (self.normal @ p - self.offset)
                         / np.linalg.norm(self.normal)))


# --------------------------------------------------------------------------
# Dykstra kernels (numba)
#
# Rows are unit-normalized; each row k is the slab row_lo[k] <= u_k . x <=
# row_hi[k] (one-sided rows carry row_lo = -inf). Corrections for a slab
# are a scalar coefficient along its normal; the box correction is a full
# vector. Convergence is certified by per-cycle displacement of the FULL
# Dykstra state (iterate and corrections) below tol/10 together with a
# feasibility residual of at most tol: the iterate alone can stall for a
# cycle at a non-optimal feasible point while the corrections still move,
# so a point-displacement test by itself would accept wrong answers.
# --------------------------------------------------------------------------

@njit(cache=True)
def _dykstra_core(p, rows, row_lo, row_hi, box_lo, box_hi, tol, max_cycles):
    n = p.shape[0]
    K = rows.shape[0]
    x = p.copy()
    x_start = np.empty(n)
    q_box = np.zeros(n)
    q_row = np.zeros(K)
    cycles = 0
    disp = np.inf
    res = np.inf
    for _ in range(max_cycles):
        for j in range(n):
            x_start[j] = x[j]
        dq = 0.0
        # box step
        for j in range(n):
            z = x[j] + q_box[j]
            v = z
            if v < box_lo[j]:
                v = box_lo[j]
            elif v > box_hi[j]:
                v = box_hi[j]
            d = abs((z - v) - q_box[j])
            if d > dq:
                dq = d
            q_box[j] = z - v
            x[j] = v
        # slab steps
        for k in range(K):
            zdot = q_row[k]
            for j in range(n):
                zdot += rows[k, j] * x[j]
            tgt = zdot
            if tgt < row_lo[k]:
                tgt = row_lo[k]
            elif tgt > row_hi[k]:
                tgt = row_hi[k]
            coef = tgt - zdot
            shift = q_row[k] + coef
            if shift != 0.0:
                for j in range(n):
                    x[j] += shift * rows[k, j]
            d = abs(-coef - q_row[k])
            if d > dq:
                dq = d
            q_row[k] = -coef
        cycles += 1
        disp = dq
        for j in range(n):
            d = abs(x[j] - x_start[j])
            if d > disp:
                disp = d
        res = 0.0
        for j in range(n):
            if x[j] - box_hi[j] > res:
                res = x[j] - box_hi[j]
            if box_lo[j] - x[j] > res:
                res = box_lo[j] - x[j]
        for k in range(K):
            dot = 0.0
            for j in range(n):
                dot += rows[k, j] * x[j]
            if dot - row_hi[k] > res:
                res = dot - row_hi[k]
            if row_lo[k] - dot > res:
                res = row_lo[k] - dot
        if disp < tol * 0.1 and res <= tol:
            break
    return x, cycles, disp, res


@njit(cache=True, parallel=True)
def _dykstra_batch(P, rows, row_lo, row_hi, box_lo, box_hi, tol, max_cycles,
                   out, info):
    for a in prange(P.shape[0]):
        x, cycles, disp, res = _dykstra_core(
            P[a], rows[a], row_lo[a], row_hi[a], box_lo[a], box_hi[a],
            tol, max_cycles)
        out[a] = x
        info[a, 0] = cycles
        info[a, 1] = disp
        info[a, 2] = res


def _normalize_rows(rows: np.ndarray, rhs: np.ndarray):
    """Unit-normalize constraint rows; drop vacuous zero rows, reject infeasible ones."""
    norms = np.linalg.norm(rows, axis=1)
    keep = norms > 0
    if (~keep).any() and (rhs[~keep] < 0).any():
        raise InfeasibleSet("zero row with negative right-hand side")
    rows = rows[keep] / norms[keep, None]
    rhs = rhs[keep] / norms[keep]
    return rows, rhs


def _pair_slabs(rows: np.ndarray, rhs: np.ndarray):
    """Merge antiparallel unit-row pairs into two-sided slabs."""
    K = rows.shape[0]
    used = np.zeros(K, dtype=bool)
    out_rows, lo, hi = [], [], []
    keys = [tuple(np.round(r, 12)) for r in rows]
    index = {}
    for k in range(K):
        index.setdefault(keys[k], []).append(k)
    for k in range(K):
        if used[k]:
            continue
        used[k] = True
        anti = tuple(np.round(-rows[k], 12))
        partner = None
        for cand in index.get(anti, ()):
            if not used[cand]:
                partner = cand
                break
        if partner is None:
            out_rows.append(rows[k])
            lo.append(-np.inf)
            hi.append(rhs[k])
        else:
            used[partner] = True
            if -rhs[partner] > rhs[k]:
                raise InfeasibleSet(
                    f"slab rows {k},{partner} are contradictory: "
                    f"[{-rhs[partner]}, {rhs[k]}] is empty")
            out_rows.append(rows[k])
            lo.append(-rhs[partner])
            hi.append(rhs[k])
    n = rows.shape[1] if K else 0
    return (np.asarray(out_rows, dtype=float).reshape(len(out_rows), n),
            np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))


class Polyhedron(ConvexSet):
    """Compact set {x : rows @ x <= rhs} intersected with a bounding box.

    The bounding box is mandatory (it makes the set compact and anchors the
    feasibility probe). Construction projects the box center onto the
    intersection and rejects the set as infeasible when the probe cannot
    reach it.
    """

    def __init__(self, rows: np.ndarray, rhs: np.ndarray, bounding_box: Box,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
        rows = np.asarray(rows, dtype=float).reshape(-1, bounding_box.dim)
        rhs = np.asarray(rhs, dtype=float).reshape(-1)
        if rows.shape[0] != rhs.shape[0]:
            raise DimensionMismatch("rows and rhs disagree in length")
        self.rows = rows
        self.rhs = rhs
        self.box = bounding_box
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        u_rows, u_rhs = _normalize_rows(rows, rhs)
        self._slab_rows, self._slab_lo, self._slab_hi = _pair_slabs(u_rows, u_rhs)
        self._probe()

    @property
    def dim(self) -> int:
        return self.box.dim

    def _probe(self):
        center = self.box.center
        x, cycles, disp, res = _dykstra_core(
            center, self._slab_rows, self._slab_lo, self._slab_hi,
            self.box.lower, self.box.upper, self.tol, self.max_iter)
        if res > _PROBE_TOL:
            raise InfeasibleSet(
                f"feasibility probe from the box center stalled at residual "
                f"{res:.3e} after {cycles} cycles")
        self.interior_probe = x

    def residual(self, point):
        p = self._check_dim(point)
        res = self.box.residual(p)
        if self._slab_rows.shape[0]:
            dots = self._slab_rows @ p
            res = max(res,
                      np.maximum(dots - self._slab_hi, 0.0).max(initial=0.0),
                      np.maximum(self._slab_lo - dots, 0.0).max(initial=0.0))
        return float(res)

    def project(self, point):
        p = self._check_dim(point)
        x, cycles, disp, res = _dykstra_core(
            p, self._slab_rows, self._slab_lo, self._slab_hi,
            self.box.lower, self.box.upper, self.tol, self.max_iter)
        if res > self.tol or disp >= self.tol * 0.1:
            raise NonConvergence(
                f"Dykstra hit the {self.max_iter}-cycle cap "
                f"(residual {res:.3e}, displacement {disp:.3e})",
                iterations=cycles, residual=res, displacement=disp, best=x)
        return x


def project(convex_set: ConvexSet, point: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``point`` onto ``convex_set``.

    Box, orthant and halfspace projections are exact closed forms; the
    polyhedron variant certifies its Dykstra iteration to the set's
    tolerance and raises :class:`NonConvergence` otherwise.
    """
    return convex_set.project(point)


def project_dykstra(rows: np.ndarray, rhs: np.ndarray, box: Box,
                    point: np.ndarray, tol: float = DEFAULT_TOL,
                    max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    """Project onto {rows @ x <= rhs} ∩ box by cyclic Dykstra iterations.

    Convergence is certified by per-cycle displacement below ``tol / 10``
    together with feasibility residual at most ``tol`` (rows are measured
    unit-normalized). Raises :class:`NonConvergence` with diagnostics when
    the cycle cap is reached first.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    rows = np.asarray(rows, dtype=float).reshape(-1, box.dim)
    rhs = np.asarray(rhs, dtype=float).reshape(-1)
    p = np.asarray(point, dtype=float)
    if p.shape != (box.dim,):
        raise DimensionMismatch(f"expected point of shape ({box.dim},), got {p.shape}")
    u_rows, u_rhs = _normalize_rows(rows, rhs)
    s_rows, s_lo, s_hi = _pair_slabs(u_rows, u_rhs)
    x, cycles, disp, res = _dykstra_core(
        p, s_rows, s_lo, s_hi, box.lower, box.upper, float(tol), int(max_iter))
    if res > tol or disp >= tol * 0.1:
        raise NonConvergence(
            f"Dykstra hit the {max_iter}-cycle cap (residual {res:.3e}, "
            f"displacement {disp:.3e})",
            iterations=cycles, residual=res, displacement=disp, best=x)
    return x


class BatchProjector:
    """Projects one point per agent onto per-agent sets, in one call.

    Same-shaped polyhedra are stacked and dispatched to a parallel batched
    Dykstra kernel; anything else falls back to a per-agent loop. Results
    are identical to projecting each agent separately (agents never
    interact inside the kernel).
    """

    def __init__(self, sets, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER):
        self.sets = list(sets)
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self._batched = False
        if self.sets and all(isinstance(s, Polyhedron) for s in self.sets):
            shapes = {s._slab_rows.shape for s in self.sets}
            dims = {s.dim for s in self.sets}
            if len(shapes) == 1 and len(dims) == 1:
                self._rows = np.stack([s._slab_rows for s in self.sets])
                self._lo = np.stack([s._slab_lo for s in self.sets])
                self._hi = np.stack([s._slab_hi for s in self.sets])
                self._box_lo = np.stack([s.box.lower for s in self.sets])
                self._box_hi = np.stack([s.box.upper for s in self.sets])
                self._batched = True

    def __call__(self, points: np.ndarray) -> np.ndarray:
        if not self._batched:
            return np.stack([s.project(p) for s, p in zip(self.sets, points)])
        P = np.ascontiguousarray(points, dtype=float)
        out = np.empty_like(P)
        info = np.empty((P.shape[0], 3))
        _dykstra_batch(P, self._rows, self._lo, self._hi,
                       self._box_lo, self._box_hi, self.tol, self.max_iter,
                       out, info)
        bad = (info[:, 2] > self.tol) | (info[:, 1] >= self.tol * 0.1)
        if bad.any():
            a = int(np.argmax(bad))
            raise NonConvergence(
                f"batched Dykstra failed for agent {a} (residual "
                f"{info[a, 2]:.3e}, displacement {info[a, 1]:.3e})",
                iterations=int(info[a, 0]), residual=float(info[a, 2]),
                displacement=float(info[a, 1]), best=out[a])
        return out
