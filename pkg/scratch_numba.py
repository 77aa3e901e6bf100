"""Scratch: numba Dykstra kernel benchmark."""
import numpy as np
import timeit
from numba import njit, prange

n = 24
r_max = 1.0
gamma = 0.25
rng = np.random.default_rng(0)


@njit(cache=True)
def dykstra_rows(p, C, row_lo, row_hi, lo, hi, tol, max_cycles):
    npt = p.shape[0]
    K = C.shape[0]
    x = p.copy()
    qbox = np.zeros(npt)
    qrow = np.zeros(K)
    norms2 = np.empty(K)
    for k in range(K):
        s = 0.0
        for j in range(npt):
            s += C[k, j] * C[k, j]
        norms2[k] = s
    cycles = 0
    disp = np.inf
    res = np.inf
    xs = np.empty(npt)
    for cycle in range(max_cycles):
        for j in range(npt):
            xs[j] = x[j]
        # box set
        for j in range(npt):
            z = x[j] + qbox[j]
            v = z
            if v < lo[j]:
                v = lo[j]
            elif v > hi[j]:
                v = hi[j]
            qbox[j] = z - v
            x[j] = v
        # slab rows
        for k in range(K):
            zdot = qrow[k] * norms2[k]
            for j in range(npt):
                zdot += C[k, j] * x[j]
            tgt = zdot
            if tgt < row_lo[k]:
                tgt = row_lo[k]
            elif tgt > row_hi[k]:
                tgt = row_hi[k]
            coef = (tgt - zdot) / norms2[k]
            shift = qrow[k] + coef
            if shift != 0.0:
                for j in range(npt):
                    x[j] += shift * C[k, j]
            qrow[k] = -coef
        cycles = cycle + 1
        disp = 0.0
        for j in range(npt):
            d = abs(x[j] - xs[j])
            if d > disp:
                disp = d
        # residual
        res = 0.0
        for j in range(npt):
            if x[j] - hi[j] > res:
                res = x[j] - hi[j]
            if lo[j] - x[j] > res:
                res = lo[j] - x[j]
        for k in range(K):
            dot = 0.0
            for j in range(npt):
                dot += C[k, j] * x[j]
            if dot - row_hi[k] > res:
                res = dot - row_hi[k]
            if row_lo[k] - dot > res:
                res = row_lo[k] - dot
        if disp < tol / 10.0 and res <= tol:
            break
    return x, cycles, disp, res


@njit(cache=True, parallel=True)
def dykstra_batch(P, C, row_lo, row_hi, lo, hi, tol, max_cycles, out, ncyc):
    A = P.shape[0]
    for a in prange(A):
        x, cycles, disp, res = dykstra_rows(
            P[a], C[a], row_lo[a], row_hi[a], lo[a], hi[a], tol, max_cycles
        )
        out[a] = x
        ncyc[a] = cycles


def make_agent():
    e = rng.uniform(0.3, 0.6) * n * r_max
    ebar = e / n
    k = np.arange(1, n + 1)
    return (1 - gamma) * k * ebar, (1 + gamma) * k * ebar


N = 50
C1 = np.tril(np.ones((n, n)))
Cb = np.repeat(C1[None], N, axis=0)
row_lo = np.empty((N, n))
row_hi = np.empty((N, n))
for a in range(N):
    row_lo[a], row_hi[a] = make_agent()
lo = np.zeros((N, n))
hi = np.full((N, n), r_max)

x0 = np.zeros((N, n))
# start from a feasible-ish point per agent
for a in range(N):
    x0[a] = np.diff(np.concatenate([[0.0], np.clip(np.cumsum(rng.uniform(0, 0.6, n)), row_lo[a], row_hi[a])]))

P = x0 - 0.05 * rng.uniform(0, 10, (N, n))
out = np.empty_like(P)
ncyc = np.empty(N, dtype=np.int64)

dykstra_batch(P, Cb, row_lo, row_hi, lo, hi, 1e-9, 10000, out, ncyc)  # compile
t = timeit.timeit(lambda: dykstra_batch(P, Cb, row_lo, row_hi, lo, hi, 1e-9, 10000, out, ncyc), number=50) / 50
print(f"batched 50-agent projection: {t*1e3:.2f} ms   cycles max={ncyc.max()} mean={ncyc.mean():.0f}")

# verify against cvxpy oracle on a few agents
import cvxpy as cp
for a in range(3):
    x = cp.Variable(n)
    cons = [x >= 0, x <= r_max, cp.cumsum(x) <= row_hi[a], cp.cumsum(x) >= row_lo[a]]
    cp.Problem(cp.Minimize(cp.sum_squares(x - P[a])), cons).solve(solver=cp.OSQP, eps_abs=1e-10, eps_rel=1e-10, max_iter=200000)
    print(f"agent {a}: err vs qp = {np.abs(out[a] - x.value).max():.2e}")

# single projection speed
x, cycles, disp, res = dykstra_rows(P[0], Cb[0], row_lo[0], row_hi[0], lo[0], hi[0], 1e-9, 10000)
t = timeit.timeit(lambda: dykstra_rows(P[0], Cb[0], row_lo[0], row_hi[0], lo[0], hi[0], 1e-9, 10000), number=200) / 200
print(f"single projection: {t*1e6:.1f} us, cycles={cycles}")
