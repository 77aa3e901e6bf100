"""Regret and constraint-violation measurement, including the offline
comparator.

The comparator solves the hindsight program

    min_{x in X}  sum_{t=1..T} sum_i f_{i,t}(x_i)   s.t.  sum_i g_i(x_i) <= 0

with the centralized saddle-point iteration on the time-summed objective,
averaging the primal iterates (doubling windows, so the reported average
always spans at least half the iterations). Costs are internally rescaled
to per-round magnitude so the diminishing 1/sqrt(k) step is well sized,
and the averaged point is blended toward a known strictly feasible point
just enough to certify exact feasibility.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import RunTrace, _can_vectorize
from .errors import LengthMismatch, MissingColumn, NonConvergence, NonPositiveValues
from .geometry import BatchProjector
from .problem import OnlineProblem


@dataclass
class OfflineOptimum:
    """Certified hindsight comparator for one problem and horizon."""

    x_star: list
    objective: float                 # sum over t=1..T and agents at x_star
    feasibility_residual: float      # ||[sum_i g_i(x*_i)]_+||
    dual_gap_estimate: float         # complementarity + violation certificate
    iterations: int
    horizon: int
    problem: OnlineProblem


def _coupled_residual(problem, xs) -> tuple[np.ndarray, float]:
    g = np.sum([problem.constraint_value(i, xs[i])
                for i in range(problem.n_agents)], axis=0)
    return g, float(np.linalg.norm(np.maximum(g, 0.0)))


def _polish(problem, xs, g_total):
    """Blend toward the strictly feasible point until the coupled residual
    vanishes; convexity of g makes the blended point feasible."""
    slater = problem.slater_point()
    if slater is None or (g_total <= 0).all():
        return xs, 0.0
    g_slater = np.sum([problem.constraint_value(i, slater[i])
                       for i in range(problem.n_agents)], axis=0)
    theta = 0.0
    for gj, sj in zip(g_total, g_slater):
        if gj > 0.0:
            if sj >= 0.0:
                return xs, 0.0  # slater point does not help on this row
            theta = max(theta, gj / (gj - sj))
    theta = min(1.0, theta * (1.0 + 1e-12))
    blended = [(1.0 - theta) * x + theta * s for x, s in zip(xs, slater)]
    return blended, theta


def solve_offline(problem: OnlineProblem, T: int, tol: float = 1e-6,
                  max_iter: int = 1_000_000, check_every: int = 1000) -> OfflineOptimum:
    """Solve the hindsight program and certify the result.

    Stops once the feasibility residual of the (polished) averaged iterate
    is at most ``tol`` and the averaged objective moved by at most
    ``tol * (1 + |objective|)`` over the last ``check_every`` iterations;
    raises :class:`NonConvergence` with the best iterate at the cap.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    value_fn, subgrad_fn = problem.summed_cost_oracle(T)
    N = problem.n_agents
    vectorized = _can_vectorize(problem)
    projector = BatchProjector(problem.sets) if vectorized else None
    if vectorized:
        D_stack = np.stack([np.asarray(d) for d in problem.D])
        b_total = np.sum(problem.b_each, axis=0)

    xs = [problem.sets[i].project(np.zeros(problem.dims[i])) for i in range(N)]
    # per-round cost scale, so the unit-step schedule matches the geometry
    grad0 = [subgrad_fn(i, xs[i]) / T for i in range(N)]
    scale = float(np.sqrt(np.mean([float(g @ g) for g in grad0])))
    scale = max(scale, 1e-12)

    if vectorized:
        X = np.stack(xs)
    mu = np.zeros(problem.m)
    avg_sum = [np.zeros_like(x) for x in xs]
    avg_count = 0
    window_start = 1
    best: Optional[tuple] = None
    obj_prev: Optional[float] = None

    def averaged():
        return [a / avg_count for a in avg_sum]

    k = 0
    while k < max_iter:
        k += 1
        alpha = 1.0 / np.sqrt(k)
        if vectorized:
            S = np.stack([subgrad_fn(i, X[i]) for i in range(N)]) / (T * scale)
            S += np.einsum("nmk,m->nk", D_stack, mu)
            X = projector(X - alpha * S)
            g_total = np.einsum("nmk,nk->m", D_stack, X) - b_total
            xs_view = X
        else:
            g_total = np.zeros(problem.m)
            new_xs = []
            for i in range(N):
                s = subgrad_fn(i, xs[i]) / (T * scale)
                s = s + problem.constraint_subgradient_matrix(i, xs[i]).T @ mu
                new_xs.append(problem.sets[i].project(xs[i] - alpha * s))
                g_total += problem.constraint_value(i, xs[i])
            xs = new_xs
            xs_view = xs
        mu = np.maximum(mu + alpha * g_total, 0.0)

        if k == 2 * window_start:  # doubling restart keeps the tail average fresh
            window_start = k
            avg_sum = [np.zeros_like(np.asarray(x)) for x in xs_view]
            avg_count = 0
        for i in range(N):
            avg_sum[i] += xs_view[i]
        avg_count += 1

        if k % check_every == 0 or k == max_iter:
            cand = averaged()
            g_cand, _ = _coupled_residual(problem, cand)
            cand, _theta = _polish(problem, cand, g_cand)
            _, res = _coupled_residual(problem, cand)
            obj = float(sum(value_fn(i, cand[i]) for i in range(N)))
            if best is None or res <= best[1]:
                best = (cand, res, obj, k)
            if res <= tol and obj_prev is not None \
                    and abs(obj - obj_prev) <= tol * (1.0 + abs(obj)):
                return _certify(problem, cand, obj, res, mu * scale, k, T)
            obj_prev = obj

    cand, res, obj, k_best = best
    if res <= tol:
        return _certify(problem, cand, obj, res, mu * scale, max_iter, T)
    raise NonConvergence(
        f"offline solve reached {max_iter} iterations with residual {res:.3e}",
        iterations=max_iter, residual=res,
        best=OfflineOptimum(x_star=[np.array(x) for x in cand], objective=obj,
                            feasibility_residual=res, dual_gap_estimate=np.nan,
                            iterations=k_best, horizon=T, problem=problem))


def _certify(problem, xs, obj, res, mu, iterations, T) -> OfflineOptimum:
    g_total, _ = _coupled_residual(problem, xs)
    gap = abs(float(mu @ g_total)) + res * float(np.linalg.norm(mu))
    return OfflineOptimum(x_star=[np.array(x) for x in xs], objective=obj,
                          feasibility_residual=res, dual_gap_estimate=gap,
                          iterations=iterations, horizon=T, problem=problem)


# ---------------------------------------------------------------------------
# Regret curves
# ---------------------------------------------------------------------------

def offline_cumulative_costs(problem: OnlineProblem, x_star,
                             rounds: np.ndarray, horizon: int) -> np.ndarray:
    """Comparator cumulative costs sum_{s<=t} sum_i f_{i,s}(x*_i) at the
    recorded rounds, replayed through the cost oracle."""
    per_round = np.empty(horizon + 1)
    per_round[0] = 0.0
    for s in range(1, horizon + 1):
        per_round[s] = problem.round_cost_total(s, x_star)
    cum = np.cumsum(per_round)
    return cum[np.asarray(rounds, dtype=int)]


def regret(trace: RunTrace, offline: OfflineOptimum) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative regret Reg(t) at the trace's recorded rounds.

    Reg(t) compares the run's accumulated cost against the fixed
    comparator's accumulated cost; negative values are legitimate when the
    run pays less by violating the coupled constraint along the way.
    """
    if trace.horizon != offline.horizon:
        raise LengthMismatch(
            f"trace horizon {trace.horizon} != offline horizon {offline.horizon}")
    if trace.problem is not offline.problem:
        raise LengthMismatch("trace and offline comparator use different problems")
    comparator = offline_cumulative_costs(
        trace.problem, offline.x_star, trace.rounds, trace.horizon)
    return trace.rounds.copy(), trace.cum_cost - comparator


def constraint_violation(trace: RunTrace) -> tuple[np.ndarray, np.ndarray]:
    """Reg^c(t): norm of the positive part of the cumulative constraint sum."""
    return trace.rounds.copy(), trace.regc_norm


# ---------------------------------------------------------------------------
# Rate fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    n_used: int
    n_skipped: int


def fit_rate(rounds, values, window: float = 0.5) -> RateFit:
    """Least-squares slope of log(value) against log(t) over the trailing
    ``window`` fraction of the samples.

    Non-positive values inside the window are skipped and counted; fewer
    than two usable points raises :class:`NonPositiveValues`.
    """
    t = np.asarray(rounds, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape or t.ndim != 1:
        raise LengthMismatch("rounds and values must be 1-d of equal length")
    if not 0.0 < window <= 1.0:
        raise ValueError("window must lie in (0, 1]")
    start = len(t) - max(2, int(round(window * len(t))))
    t, v = t[max(0, start):], v[max(0, start):]
    keep = v > 0.0
    n_skipped = int((~keep).sum())
    if keep.sum() < 2:
        raise NonPositiveValues(
            f"only {int(keep.sum())} positive values in the fit window")
    slope, intercept = np.polyfit(np.log(t[keep]), np.log(v[keep]), 1)
    return RateFit(slope=float(slope), intercept=float(intercept),
                   n_used=int(keep.sum()), n_skipped=n_skipped)


def theoretical_exponents(kappa: float) -> dict:
    """Bound exponents for the diminishing-step method at this kappa."""
    return {
        "regret": 0.5 + 2.0 * kappa,
        "violation": 1.0 - 0.5 * kappa,
        "violation_time_invariant": 0.75 + 0.5 * kappa,
    }


# ---------------------------------------------------------------------------
# CSV outputs
# ---------------------------------------------------------------------------

METRICS_COLUMNS = ("t", "reg", "reg_over_t", "regc", "regc_over_t")


def write_metrics_csv(path, rounds, reg, regc) -> None:
    rounds = np.asarray(rounds)
    with open(path, "w") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for k, t in enumerate(rounds):
            fh.write(f"{t},{reg[k]:.17g},{reg[k] / t:.17g},"
                     f"{regc[k]:.17g},{regc[k] / t:.17g}\n")


def read_metrics_csv(path) -> dict:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [ln.strip().split(",") for ln in fh if ln.strip()]
    missing = [c for c in METRICS_COLUMNS if c not in header]
    if missing:
        raise MissingColumn(f"{path} lacks columns {missing}")
    if not rows:
        raise MissingColumn(f"{path} has no data rows")
    data = np.array(rows, dtype=float)
    return {name: data[:, header.index(name)] for name in METRICS_COLUMNS}


def write_rates_txt(path, kappa: float, fits: dict) -> None:
    """Write fitted slopes next to the theoretical bound exponents."""
    bounds = theoretical_exponents(kappa)
    lines = [f"kappa {kappa:g}",
             f"bound_regret_exponent {bounds['regret']:.6f}",
             f"bound_violation_exponent {bounds['violation']:.6f}",
             f"bound_violation_time_invariant_exponent "
             f"{bounds['violation_time_invariant']:.6f}"]
    for name, fit in fits.items():
        if fit is None:
            lines.append(f"fit_{name} skipped")
        else:
            lines.append(f"fit_{name} slope {fit.slope:.6f} "
                         f"n_used {fit.n_used} n_skipped {fit.n_skipped}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
