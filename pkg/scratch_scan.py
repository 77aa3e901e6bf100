"""Scratch: parameter scan for PEV instance design (support size x tightness x count)."""
import numpy as np
import time
from numba import njit, prange
from scratch_numba import dykstra_rows

N, n, m, Q = 50, 24, 48, 4
r_max, gamma, kappa, seed = 1.0, 0.25, 0.2, 1
T = 10000


@njit(cache=True, parallel=True)
def project_batch(P, C, rlo, rhi, blo, bhi, tol, maxc, out):
    for a in prange(P.shape[0]):
        x, cyc, disp, res = dykstra_rows(P[a], C[a], rlo[a], rhi[a], blo[a], bhi[a], tol, maxc)
        out[a] = x


def build(nnz, tight, ntight):
    rng = np.random.default_rng(seed)
    e_tot = rng.uniform(0.3, 0.6, N) * n * r_max
    kk = np.arange(1, n + 1)
    row_lo = (1 - gamma) * np.outer(e_tot / n, kk)
    row_hi = (1 + gamma) * np.outer(e_tot / n, kk)
    D = np.zeros((N, m, n))
    for a in range(N):
        for j in range(m):
            cols = rng.choice(n, size=nnz, replace=False)
            wts = rng.uniform(0.2, 1.0, nnz)
            D[a, j, cols] = wts / wts.sum()
    x_unif = (1 - gamma) * (e_tot / n)[:, None] * np.ones((N, n))
    v = np.einsum('nmk,nk->m', D, x_unif)
    scale = np.full(m, 1.4)
    scale[rng.permutation(m)[:ntight]] = tight
    b = scale * v
    return e_tot, row_lo, row_hi, D, b, x_unif


def slater_probe(D, b, row_lo, row_hi, x0, margin, max_cycles=2000, tol=1e-9):
    Cp = np.repeat(np.tril(np.ones((n, n)))[None], N, axis=0)
    lo = np.zeros((N, n))
    hi = np.full((N, n), r_max)
    Xp = x0.copy()
    qrow = np.zeros(m)
    bm = b - margin
    norms2 = np.array([(D[:, j, :] ** 2).sum() for j in range(m)])
    Xl = np.empty_like(Xp)
    for cyc in range(max_cycles):
        x_prev = Xp.copy()
        project_batch(Xp.copy(), Cp, row_lo, row_hi, lo, hi, 1e-10, 20000, Xl)
        Xp = Xl.copy()
        for j in range(m):
            zdot = np.einsum('nk,nk->', D[:, j, :], Xp) + qrow[j] * norms2[j]
            coef = (min(zdot, bm[j]) - zdot) / norms2[j]
            shift = qrow[j] + coef
            if shift != 0.0:
                Xp += shift * D[:, j, :]
            qrow[j] = -coef
        if np.abs(Xp - x_prev).max() < tol:
            break
    usage = np.einsum('nmk,nk->m', D, Xp)
    cs = np.cumsum(Xp, axis=1)
    res = max((usage - bm).max(), (cs - row_hi).max(), (row_lo - cs).max(),
              (Xp - hi).max(), (-Xp).max())
    return res <= 1e-7


def run_online(row_lo, row_hi, D, b):
    Cp = np.repeat(np.tril(np.ones((n, n)))[None], N, axis=0)
    lo = np.zeros((N, n))
    hi = np.full((N, n), r_max)
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
    project_batch(X.copy(), Cp, row_lo, row_hi, lo, hi, 1e-9, 20000, X)
    MU = np.zeros((N, m))
    G = np.einsum('nmk,nk->nm', D, X) - b / N
    Y = G.copy()
    cum_cost = 0.0
    cum_g = np.zeros(m)
    out = {}
    mu_last = 0.0
    P = np.empty_like(X)
    Xn = np.empty_like(X)
    for t in range(T + 1):
        g = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, t]))
        c = g.uniform(0, 10, (N, n))
        if t >= 1:
            cum_cost += np.einsum('nk,nk->', c, X)
            cum_g += G.sum(axis=0)
            if t in (1000, 10000):
                out[t] = (np.linalg.norm(np.maximum(cum_g, 0)) / t, cum_cost / t, mu_last)
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
        project_batch(P, Cp, row_lo, row_hi, lo, hi, 1e-9, 20000, Xn)
        Gn = np.einsum('nmk,nk->nm', D, Xn) - b / N
        MU = np.maximum(MUh + a_t * (Yh / Wn[:, None] ** 2 - b_t * MUh / Wn[:, None]), 0.0)
        Y = Yh + Gn - G
        X, Xn = Xn, X
        G = Gn
        W = Wn
        mu_last = np.linalg.norm(mu_tilde, axis=1).mean()
    return out


for nnz, tight, ntight in [(3, 0.85, 12), (3, 0.9, 24), (8, 0.9, 12), (8, 0.85, 12),
                           (12, 0.9, 12), (3, 0.8, 12), (8, 0.8, 16)]:
    e_tot, row_lo, row_hi, D, b, x_unif = build(nnz, tight, ntight)
    margin = 0.01 * np.linalg.norm(b) / np.sqrt(m)
    ok = slater_probe(D, b, row_lo, row_hi, x_unif, margin)
    if not ok:
        print(f"nnz={nnz} tight={tight} ntight={ntight}: INFEASIBLE probe")
        continue
    t0 = time.time()
    out = run_online(row_lo, row_hi, D, b)
    r3, c3, m3 = out[1000]
    r4, c4, m4 = out[10000]
    print(f"nnz={nnz} tight={tight} ntight={ntight}: Regc/t 1e3={r3:.4f} 1e4={r4:.4f} "
          f"cost/t {c3:.1f}->{c4:.1f} mu {m3:.2f}->{m4:.2f} ({time.time()-t0:.0f}s)")
