"""Scratch: calibrated instance + scaled offline PD vs LP reference on two horizons."""
import numpy as np
import time
from numba import njit, prange
from scratch_numba import dykstra_rows

N, n, m = 50, 24, 48
r_max, gamma, seed = 1.0, 0.25, 1
rng = np.random.default_rng(seed)
e_tot = rng.uniform(0.3, 0.6, N) * n * r_max
kk = np.arange(1, n + 1)
row_lo = (1 - gamma) * np.outer(e_tot / n, kk)
row_hi = (1 + gamma) * np.outer(e_tot / n, kk)
Cpre = np.repeat(np.tril(np.ones((n, n)))[None], N, axis=0)
lo = np.zeros((N, n))
hi = np.full((N, n), r_max)
D = rng.uniform(0, 1, (N, m, n))
D /= D.sum(axis=2, keepdims=True)

# reference strictly-feasible schedule: random monotone cumulative path in corridor
u = rng.uniform(0.15, 0.85, (N, n))
cum = row_lo + u * (row_hi - row_lo)
cum = np.minimum.accumulate(cum[:, ::-1], axis=1)[:, ::-1]  # enforce monotone via backward min? need nondecreasing
# enforce nondecreasing cumulative with rate <= r_max
for a in range(N):
    for j in range(1, n):
        cum[a, j] = max(cum[a, j], cum[a, j - 1])
        cum[a, j] = min(cum[a, j], cum[a, j - 1] + r_max, row_hi[a, j])
        cum[a, j] = max(cum[a, j], row_lo[a, j])
x_f = np.diff(np.concatenate([np.zeros((N, 1)), cum], axis=1), axis=1)
assert (x_f >= -1e-12).all() and (x_f <= r_max + 1e-12).all()
u_f = np.einsum('nmk,nk->m', D, x_f)
delta = 0.005 * np.linalg.norm(u_f) / np.sqrt(m)
b = u_f + delta
print("slater slack:", (b - u_f).min(), " b mean:", b.mean())

xhat = (1 - gamma) * (e_tot / n)[:, None] * np.ones((N, n))
v_unif = np.einsum('nmk,nk->m', D, xhat)
print("rows binding vs uniform-min usage:", (b < v_unif).sum(), "of", m)


@njit(cache=True, parallel=True)
def project_batch(P, C, rlo, rhi, blo, bhi, tol, maxc, out):
    for a in prange(P.shape[0]):
        x, cyc, disp, res = dykstra_rows(P[a], C[a], rlo[a], rhi[a], blo[a], bhi[a], tol, maxc)
        out[a] = x


def cbar_for(T):
    # mean of per-round uniforms, emulating (1/T) sum c_t
    acc = np.zeros((N, n))
    for t in range(1, T + 1):
        g = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, t]))
        acc += g.uniform(0, 10, (N, n))
    return acc / T


import cvxpy as cp


def lp_ref(cbar):
    xv = cp.Variable((N, n))
    cons = [xv >= 0, xv <= r_max]
    for a in range(N):
        cons += [cp.cumsum(xv[a]) <= row_hi[a], cp.cumsum(xv[a]) >= row_lo[a]]
    cons.append(sum(D[a] @ xv[a] for a in range(N)) <= b)
    prob = cp.Problem(cp.Minimize(cp.sum(cp.multiply(cbar, xv))), cons)
    prob.solve(solver=cp.SCS, eps=1e-10, max_iters=400000)
    return prob.value, prob.status


def offline_pd(cbar, iters, tail=0.25, tol=1e-7):
    sc = np.sqrt((cbar ** 2).mean())
    ch = cbar / sc
    X = xhat.copy()
    mu = np.zeros(m)
    Xsum = np.zeros_like(X)
    cnt = 0
    Pbuf = np.empty_like(X)
    Xn = np.empty_like(X)
    for it in range(1, iters + 1):
        a_k = 1.0 / np.sqrt(it)
        S = ch + np.einsum('nmk,m->nk', D, mu)
        Pbuf[:] = X - a_k * S
        project_batch(Pbuf, Cpre, row_lo, row_hi, lo, hi, tol, 20000, Xn)
        g = np.einsum('nmk,nk->m', D, Xn) - b
        mu = np.maximum(mu + a_k * g, 0.0)
        X, Xn = Xn, X
        if it > iters * (1 - tail):
            Xsum += X
            cnt += 1
    Xavg = Xsum / cnt
    g = np.einsum('nmk,nk->m', D, Xavg) - b
    res = float(np.linalg.norm(np.maximum(g, 0)))
    # polish: blend toward x_f (strictly feasible, slack delta per row)
    if res > 0:
        viol = np.maximum(g, 0).max()
        theta = min(1.0, viol / (viol + delta))
        Xpol = (1 - theta) * Xavg + theta * x_f
    else:
        theta = 0.0
        Xpol = Xavg
    gp = np.einsum('nmk,nk->m', D, Xpol) - b
    resp = float(np.linalg.norm(np.maximum(gp, 0)))
    return float((cbar * Xavg).sum()), res, float((cbar * Xpol).sum()), resp, theta


for T in (1000, 10000):
    cb = cbar_for(T)
    t0 = time.time()
    fstar, status = lp_ref(cb)
    print(f"T={T}: LP={fstar:.3f} ({status}, {time.time()-t0:.0f}s)")
    for iters in (5000, 20000):
        t0 = time.time()
        favg, res, fpol, resp, theta = offline_pd(cb, iters)
        print(f"  pd iters={iters}: favg rel={(favg-fstar)/abs(fstar):+.2e} res={res:.2e} | "
              f"polished rel={(fpol-fstar)/abs(fstar):+.2e} res={resp:.2e} theta={theta:.3f} ({time.time()-t0:.0f}s)")
