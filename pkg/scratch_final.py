"""Scratch: final instance design - sparse D, tight rows below baseline, probe via product Dykstra."""
import numpy as np
import time
from numba import njit, prange
from scratch_numba import dykstra_rows

N, n, m, Q = 50, 24, 48, 4
r_max, gamma, kappa, seed = 1.0, 0.25, 0.2, 1
T = 10000
TIGHT, LOOSE, NTIGHT = 0.93, 1.4, 12
rng = np.random.default_rng(seed)
e_tot = rng.uniform(0.3, 0.6, N) * n * r_max
kk = np.arange(1, n + 1)
row_lo = (1 - gamma) * np.outer(e_tot / n, kk)
row_hi = (1 + gamma) * np.outer(e_tot / n, kk)
Cpre = np.repeat(np.tril(np.ones((n, n)))[None], N, axis=0)
lo = np.zeros((N, n))
hi = np.full((N, n), r_max)
D = np.zeros((N, m, n))
for a in range(N):
    for j in range(m):
        cols = rng.choice(n, size=3, replace=False)
        wts = rng.uniform(0.2, 1.0, 3)
        D[a, j, cols] = wts / wts.sum()

x_unif = (1 - gamma) * (e_tot / n)[:, None] * np.ones((N, n))
v = np.einsum('nmk,nk->m', D, x_unif)
scale = np.full(m, LOOSE)
tight_rows = rng.permutation(m)[:NTIGHT]
scale[tight_rows] = TIGHT
b = scale * v
print("v uniform rel std:", v.std() / v.mean())


@njit(cache=True, parallel=True)
def project_batch(P, C, rlo, rhi, blo, bhi, tol, maxc, out, ncyc):
    for a in prange(P.shape[0]):
        x, cyc, disp, res = dykstra_rows(P[a], C[a], rlo[a], rhi[a], blo[a], bhi[a], tol, maxc)
        out[a] = x
        ncyc[a] = cyc


# ---- Slater probe: product-space Dykstra onto {x in prod X_i} cap {sum D_i x_i <= b - margin}
def slater_probe(margin, max_cycles=3000, tol=1e-9):
    Xp = x_unif.copy()
    ncyc = np.empty(N, dtype=np.int64)
    qrow = np.zeros(m)
    bm = b - margin
    norms2 = np.array([(D[:, j, :] ** 2).sum() for j in range(m)])
    Xl = np.empty_like(Xp)
    for cyc in range(max_cycles):
        x_prev = Xp.copy()
        # local sets (each agent block, exact Dykstra sub-projection)
        project_batch(Xp.copy(), Cpre, row_lo, row_hi, lo, hi, 1e-10, 20000, Xl, ncyc)
        Xp = Xl.copy()
        # coupling halfspaces with correction
        for j in range(m):
            zdot = np.einsum('nk,nk->', D[:, j, :], Xp) + qrow[j] * norms2[j]
            tgt = min(zdot, bm[j])
            coef = (tgt - zdot) / norms2[j]
            shift = qrow[j] + coef
            if shift != 0.0:
                Xp += shift * D[:, j, :]
            qrow[j] = -coef
        disp = np.abs(Xp - x_prev).max()
        if disp < tol:
            break
    # verify
    usage = np.einsum('nmk,nk->m', D, Xp)
    res_c = (usage - bm).max()
    # local residual
    cs = np.cumsum(Xp, axis=1)
    res_l = max((cs - row_hi).max(), (row_lo - cs).max(), (Xp - hi).max(), (lo - Xp).max())
    return Xp, res_c, res_l, cyc


margin = 0.03 * np.linalg.norm(b) / np.sqrt(m)
t0 = time.time()
x_probe, res_c, res_l, cycs = slater_probe(margin)
print(f"probe: coupling res={res_c:.2e} local res={res_l:.2e} cycles={cycs} ({time.time()-t0:.1f}s)")
print("probe slack per row min:", (b - np.einsum('nmk,nk->m', D, x_probe)).min(), "margin:", margin)


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
csum = np.zeros((N, n))
snap = {}
marks = sorted(set(int(round(10 ** (i / 8))) for i in range(8, 33)))
mu_hist = []
t0 = time.time()
P = np.empty_like(X)
Xn = np.empty_like(X)
for t in range(T + 1):
    c = unit_costs(t)
    if t >= 1:
        cum_cost += np.einsum('nk,nk->', c, X)
        cum_g += G.sum(axis=0)
        csum += c
        if t in marks:
            regc = np.linalg.norm(np.maximum(cum_g, 0))
            print(f"t={t:6d} Regc/t={regc/t:8.4f} pos_rows={(cum_g>0).sum():2d} mu={mu_hist[-1]:.3f}")
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
    Gn = np.einsum('nmk,nk->nm', D, Xn) - b / N
    MU = np.maximum(MUh + a_t * (Yh / Wn[:, None] ** 2 - b_t * MUh / Wn[:, None]), 0.0)
    Y = Yh + Gn - G
    X, Xn = Xn, X
    G = Gn
    W = Wn
    mu_hist.append(np.linalg.norm(mu_tilde, axis=1).mean())
print(f"run T={T}: {time.time()-t0:.1f}s")
print("mu: first-decade max %.2f, last max %.2f, final %.3f" % (max(mu_hist[:1000]), max(mu_hist[1000:]), mu_hist[-1]))

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
    print(f"T={TT}: cost/T={cc/TT:.3f} F*/T={prob.value:.3f} Reg/T={cc/TT-prob.value:+.3f} "
          f"Regc/T={regc/TT:.4f} active={int((cons[-1].dual_value>1e-6).sum())}")
