"""Scratch: end-to-end PEV dynamics probe (instance design de-risk)."""
import numpy as np
import time
from numba import njit, prange
from scratch_numba import dykstra_rows

N = 50
n = 24
m = 48
Q = 4
r_max = 1.0
gamma = 0.25
slack = 0.02
kappa = 0.2
T = 10000
seed = 1

rng = np.random.default_rng(seed)

# local envelopes
e_tot = rng.uniform(0.3, 0.6, N) * n * r_max
k = np.arange(1, n + 1)
row_lo = (1 - gamma) * np.outer(e_tot / n, k)
row_hi = (1 + gamma) * np.outer(e_tot / n, k)
Cpre = np.repeat(np.tril(np.ones((n, n)))[None], N, axis=0)
lo = np.zeros((N, n))
hi = np.full((N, n), r_max)

# coupling: D_i nonneg random, rows normalized; b from probe point with slack
D = rng.uniform(0, 1, (N, m, n))
D /= D.sum(axis=2, keepdims=True)
xhat = (1 - gamma) * (e_tot / n)[:, None] * np.ones((N, n))
v = np.einsum('nmk,nk->m', D, xhat)
tight = rng.permutation(m)[:m // 4]
scale = np.full(m, 1.5); scale[tight] = 0.9
b = scale * v
print("b uniform?", v.std() / v.mean(), "slater slack per row:", (b - v).min())


@njit(cache=True, parallel=True)
def project_batch(P, C, rlo, rhi, blo, bhi, tol, maxc, out, ncyc):
    for a in prange(P.shape[0]):
        x, cyc, disp, res = dykstra_rows(P[a], C[a], rlo[a], rhi[a], blo[a], bhi[a], tol, maxc)
        out[a] = x
        ncyc[a] = cyc


def unit_costs(t):
    g = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, t]))
    return g.uniform(0, 10, (N, n))


# graphs: Q random sparse digraphs with self-loops, union strongly connected
def gen_graphs():
    mats = []
    g = np.random.default_rng(seed + 1000)
    perm = g.permutation(N)
    ring = list(zip(perm, np.roll(perm, -1)))
    adj = [np.eye(N, dtype=bool) for _ in range(Q)]
    for idx, (u, w) in enumerate(ring):
        adj[idx % Q][w, u] = True  # edge u -> w
    for q in range(Q):
        extra = g.integers(0, N, (2 * N // Q, 2))
        for u, w in extra:
            if u != w:
                adj[q][w, u] = True
    for q in range(Q):
        A = adj[q].astype(float)
        A /= A.sum(axis=0, keepdims=True)
        mats.append(A)
    return mats


mats = gen_graphs()
W = np.ones(N)
X = np.zeros((N, n))
ncyc = np.empty(N, dtype=np.int64)
project_batch(X.copy(), Cpre, row_lo, row_hi, lo, hi, 1e-9, 20000, X, ncyc)
MU = np.zeros((N, m))
G = np.einsum('nmk,nk->nm', D, X) - b / N
Y = G.copy()

cum_cost = 0.0
cum_g = np.zeros(m)
snap = {}
mu_norm_hist = []
cycles_hist = []
t0 = time.time()
P = np.empty_like(X)
Xn = np.empty_like(X)
for t in range(T):
    A = mats[t % Q]
    a_t = 1.0 if t == 0 else t ** -0.5
    b_t = 1.0 if t == 0 else t ** -kappa
    Wn = A @ W
    MUh = A @ MU
    Yh = A @ Y
    mu_tilde = MUh / Wn[:, None]
    c = unit_costs(t)
    if t >= 1:
        cum_cost += np.einsum('nk,nk->', c, X)
        cum_g += G.sum(axis=0)
    S = c + np.einsum('nmk,nm->nk', D, mu_tilde)
    P[:] = X - a_t * S
    project_batch(P, Cpre, row_lo, row_hi, lo, hi, 1e-9, 20000, Xn, ncyc)
    cycles_hist.append(ncyc.max())
    Gn = np.einsum('nmk,nk->nm', D, Xn) - b / N
    MU = np.maximum(MUh + a_t * (Yh / Wn[:, None] ** 2 - b_t * MUh / Wn[:, None]), 0.0)
    Y = Yh + Gn - G
    X, Xn = Xn, X
    G = Gn
    W = Wn
    mu_norm_hist.append(np.linalg.norm(mu_tilde, axis=1).mean())
    if t + 1 in (1000, 10000):
        # include the cost of final decision at its round
        cfin = unit_costs(t + 1)
        snap[t + 1] = (cum_cost + np.einsum('nk,nk->', cfin, X),
                       (cum_g + G.sum(axis=0)).copy())
elapsed = time.time() - t0
print(f"run T={T}: {elapsed:.1f}s  cycles max={max(cycles_hist)} mean={np.mean(cycles_hist):.0f}")
for TT, (cc, cg) in snap.items():
    regc = np.linalg.norm(np.maximum(cg, 0))
    print(f"T={TT}: cum_cost/T={cc/TT:.3f}  Regc={regc:.3f} Regc/T={regc/TT:.5f}")
print("mu_tilde mean-norm: first-decade max %.3f, last-decade max %.3f" % (
    max(mu_norm_hist[:1000]), max(mu_norm_hist[-9000:])))
print("w sum err:", abs(W.sum() - N))
ytrack = np.linalg.norm(Y.mean(axis=0) - G.mean(axis=0))
print("y tracking err:", ytrack)
