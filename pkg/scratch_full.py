"""Scratch: full validation - corrected b design, online run, true Reg/T and Regc/T trends."""
import numpy as np
import time
from numba import njit, prange
from scratch_numba import dykstra_rows

N, n, m, Q = 50, 24, 48, 4
r_max, gamma, kappa, seed = 1.0, 0.25, 0.2, 1
T = 10000
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

# reference schedule hugging the E_min envelope with small wiggle
u = rng.uniform(0.0, 0.1, (N, n))
cum = row_lo + u * (row_hi - row_lo)
for a in range(N):
    for j in range(1, n):
        cum[a, j] = min(max(cum[a, j], cum[a, j - 1], row_lo[a, j]), cum[a, j - 1] + r_max, row_hi[a, j])
x_f = np.diff(np.concatenate([np.zeros((N, 1)), cum], axis=1), axis=1)
assert (x_f >= -1e-12).all() and (x_f <= r_max + 1e-12).all()
u_f = np.einsum('nmk,nk->m', D, x_f)
delta = 0.005 * np.linalg.norm(u_f) / np.sqrt(m)
b = u_f + delta
xhat = (1 - gamma) * (e_tot / n)[:, None] * np.ones((N, n))
v_unif = np.einsum('nmk,nk->m', D, xhat)
print("slater slack:", (b - u_f).min(), "| rows with b < uniform-min usage:", (b < v_unif).sum(), "of", m)


@njit(cache=True, parallel=True)
def project_batch(P, C, rlo, rhi, blo, bhi, tol, maxc, out, ncyc):
    for a in prange(P.shape[0]):
        x, cyc, disp, res = dykstra_rows(P[a], C[a], rlo[a], rhi[a], blo[a], bhi[a], tol, maxc)
        out[a] = x
        ncyc[a] = cyc


def unit_costs(t):
    g = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, t]))
    return g.uniform(0, 10, (N, n))


g2 = np.random.default_rng(seed + 1000)
perm = g2.permutation(N)
adj = [np.eye(N, dtype=bool) for _ in range(Q)]
for idx, (uu, w) in enumerate(zip(perm, np.roll(perm, -1))):
    adj[idx % Q][w, uu] = True
for q in range(Q):
    for uu, w in g2.integers(0, N, (2 * N // Q, 2)):
        if uu != w:
            adj[q][w, uu] = True
mats = [a.astype(float) / a.astype(float).sum(axis=0, keepdims=True) for a in adj]

W = np.ones(N)
X = np.zeros((N, n))
ncyc = np.empty(N, dtype=np.int64)
project_batch(X.copy(), Cpre, row_lo, row_hi, lo, hi, 1e-9, 20000, X, ncyc)
MU = np.zeros((N, m))
G = np.einsum('nmk,nk->nm', D, X) - b / N
Y = G.copy()
cum_cost = 0.0
cum_g = np.zeros(m)
csum = np.zeros((N, n))  # running sum of c_t for offline
snap = {}
mu_hist = []
cyc_hist = []
t0 = time.time()
P = np.empty_like(X)
Xn = np.empty_like(X)
for t in range(T + 1):
    c = unit_costs(t)
    if t >= 1:
        cum_cost += np.einsum('nk,nk->', c, X)
        cum_g += G.sum(axis=0)
        csum += c
        if t in (1000, 10000):
            snap[t] = (cum_cost, cum_g.copy(), csum.copy())
    if t == T:
        break
    A = mats[t % Q]
    a_t = 1.0 if t == 0 else t ** -0.5
    b_t = 1.0 if t == 0 else t ** -kappa
    Wn = A @ W
    MUh = A @ MU
    Yh = A @ Y
    mu_tilde = MUh / Wn[:, None]
    S = c + np.einsum('nmk,nm->nk', D, mu_tilde)
    P[:] = X - a_t * S
    project_batch(P, Cpre, row_lo, row_hi, lo, hi, 1e-9, 20000, Xn, ncyc)
    cyc_hist.append(ncyc.max())
    Gn = np.einsum('nmk,nk->nm', D, Xn) - b / N
    MU = np.maximum(MUh + a_t * (Yh / Wn[:, None] ** 2 - b_t * MUh / Wn[:, None]), 0.0)
    Y = Yh + Gn - G
    X, Xn = Xn, X
    G = Gn
    W = Wn
    mu_hist.append(np.linalg.norm(mu_tilde, axis=1).mean())
print(f"run T={T}: {time.time()-t0:.1f}s cycles max={max(cyc_hist)} mean={np.mean(cyc_hist):.0f}")
print("mu norms: first-decade max %.3f, last max %.3f, final %.3f" % (max(mu_hist[:1000]), max(mu_hist[1000:]), mu_hist[-1]))

import cvxpy as cp
for TT, (cc, cg, cs) in snap.items():
    regc = np.linalg.norm(np.maximum(cg, 0))
    cbar = cs / TT
    xv = cp.Variable((N, n))
    cons = [xv >= 0, xv <= r_max]
    for a in range(N):
        cons += [cp.cumsum(xv[a]) <= row_hi[a], cp.cumsum(xv[a]) >= row_lo[a]]
    cons.append(sum(D[a] @ xv[a] for a in range(N)) <= b)
    prob = cp.Problem(cp.Minimize(cp.sum(cp.multiply(cbar, xv))), cons)
    prob.solve(solver=cp.SCS, eps=1e-10, max_iters=400000)
    fstar_per_round = prob.value
    reg_over_T = cc / TT - fstar_per_round
    mu_star = cons[-1].dual_value
    print(f"T={TT}: cost/T={cc/TT:.3f} F*/T={fstar_per_round:.3f} Reg/T={reg_over_T:+.3f} "
          f"Regc/T={regc/TT:.4f} active rows={(mu_star>1e-6).sum()}")
