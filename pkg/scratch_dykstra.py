"""Scratch: feasibility/perf probe for batched Dykstra on envelope polyhedra."""
import numpy as np
import timeit

rng = np.random.default_rng(0)

n = 24
r_max = 1.0
gamma = 0.25


def make_agent():
    e = rng.uniform(0.3, 0.6) * n * r_max
    ebar = e / n
    k = np.arange(1, n + 1)
    L = (1 - gamma) * k * ebar
    U = (1 + gamma) * k * ebar
    return L, U


def dykstra_slabs(p, L, U, lo, hi, tol=1e-9, max_cycles=10000):
    """Cyclic Dykstra: box + prefix slabs L_k <= sum_{s<=k} x_s <= U_k."""
    x = p.copy()
    q_box = np.zeros(n)
    q_slab = np.zeros(n)  # scalar correction per slab (along prefix normal)
    norms2 = np.arange(1, n + 1).astype(float)
    cycles = 0
    while cycles < max_cycles:
        x_prev = x.copy()
        # box
        z = x + q_box
        xn = np.clip(z, lo, hi)
        q_box = z - xn
        x = xn
        # slabs
        for k in range(n):
            a_dot = x[: k + 1].sum() + q_slab[k] * (k + 1) / (k + 1)  # z = x + q_k * a_k/1? store q as coefficient
            # correction stored as coefficient c_k: correction vector = c_k * a_k
            z_dot = x[: k + 1].sum() + q_slab[k] * norms2[k]
            target = np.clip(z_dot, L[k], U[k])
            coef = (target - z_dot) / norms2[k]
            # x_new = z + coef*a ; q_new = z - x_new = -coef*a -> coefficient -coef... careful:
            # z = x + q_old*a  (q_old coefficient)
            # x_new = z + coef*a
            # q_new coefficient = (z - x_new)/a = -coef
            x = x.copy()
            x[: k + 1] += (q_slab[k] + coef)
            q_slab[k] = -coef
        cycles += 1
        disp = np.abs(x - x_prev).max()
        # residual
        cs = np.cumsum(x)
        res = max(
            np.maximum(cs - U, 0).max(),
            np.maximum(L - cs, 0).max(),
            np.maximum(x - hi, 0).max(),
            np.maximum(lo - x, 0).max(),
        )
        if disp < tol / 10 and res <= tol:
            break
    return x, cycles


def oracle_qp(p, L, U, lo, hi):
    import cvxpy as cp

    x = cp.Variable(n)
    cons = [x >= lo, x <= hi, cp.cumsum(x) <= U, cp.cumsum(x) >= L]
    prob = cp.Problem(cp.Minimize(cp.sum_squares(x - p)), cons)
    prob.solve(solver=cp.OSQP, eps_abs=1e-10, eps_rel=1e-10, max_iter=200000)
    return x.value


L, U = make_agent()
lo = np.zeros(n)
hi = np.full(n, r_max)

# typical hot-loop point: feasible-ish x minus a step
x0 = np.diff(np.concatenate([[0.0], np.clip(np.cumsum(rng.uniform(0, 0.6, n)), L, U)]))
cases = []
for alpha, scale in [(1.0, 30.0), (0.1, 30.0), (0.01, 30.0), (0.001, 30.0)]:
    c = rng.uniform(0, 10, n)
    p = x0 - alpha * c * (scale / 30.0)
    cases.append((alpha, p))

for alpha, p in cases:
    x, cycles = dykstra_slabs(p, L, U, lo, hi)
    xo = oracle_qp(p, L, U, lo, hi)
    err = np.abs(x - xo).max()
    print(f"alpha={alpha:7.3f}  cycles={cycles:5d}  err_vs_qp={err:.2e}")

t = timeit.timeit(lambda: dykstra_slabs(cases[1][1], L, U, lo, hi), number=20) / 20
print(f"single-agent dykstra time (alpha=0.1 case): {t*1e3:.2f} ms")
