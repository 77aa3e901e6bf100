import numpy as np
import pytest

from dopps.algorithm import StepSchedule
from dopps.engine import RunConfig, RunTrace, run
from dopps.errors import (LengthMismatch, MissingColumn, NonConvergence,
                          NonPositiveValues)
from dopps.geometry import Box
from dopps.graph import generate_switching_cycle
from dopps.metrics import (OfflineOptimum, constraint_violation, fit_rate, read_metrics_csv,
                           regret, solve_offline, theoretical_exponents,
                           write_metrics_csv, write_rates_txt)
from dopps.problem import (ConstantLinearProblem, QuadraticTracking, make_pev)
from dopps.rng import substream

from oracles import lp_vertex_solve


def one_d_lp():
    # min sum_t x over [0,1] with 0.5 - x <= 0: optimum x* = 0.5
    return ConstantLinearProblem(
        costs=[np.array([1.0])],
        D=[np.array([[-1.0]])], b_each=[np.array([-0.5])],
        sets=[Box(np.array([0.0]), np.array([1.0]))])


def test_solve_offline_one_d_lp():
    off = solve_offline(one_d_lp(), T=10, tol=1e-6, max_iter=100_000)
    assert off.x_star[0][0] == pytest.approx(0.5, abs=1e-3)
    assert off.feasibility_residual <= 1e-6
    assert off.objective == pytest.approx(10 * 0.5, abs=0.02)


def test_solve_offline_matches_vertex_enumeration():
    # two agents with separable boxes and one coupling row
    rng = substream(61, 1)
    c1, c2 = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
    D1 = np.array([[0.6, 0.4]])
    D2 = np.array([[0.5, 0.5]])
    b_each = [np.array([0.25]), np.array([0.25])]
    p = ConstantLinearProblem(
        costs=[c1, c2], D=[D1, D2], b_each=b_each,
        sets=[Box(np.zeros(2), np.ones(2))] * 2)
    T = 5
    off = solve_offline(p, T=T, tol=1e-6, max_iter=200_000)
    # oracle: enumerate vertices of the 4-d product polytope with the
    # coupling row, via the stacked system
    rows = np.hstack([D1, D2])
    rhs = np.array([0.5])
    c_full = np.concatenate([c1, c2])
    val, x_vertex = lp_vertex_solve(c_full, rows, rhs,
                                    np.zeros(4), np.ones(4))
    assert off.objective / T == pytest.approx(val, abs=5e-3)


def test_solve_offline_unconstrained_quadratic_closed_form():
    # cap far away: per-agent optimum is the time-averaged target
    q = QuadraticTracking(2, 2, seed=3, bias=0.2, cap_fraction=50.0)
    T = 8
    off = solve_offline(q, T=T, tol=1e-7, max_iter=150_000)
    # averaged target over t=1..8: bias (alternating part cancels)
    for i in range(2):
        assert np.allclose(off.x_star[i], q.bias, atol=2e-3)


def test_solve_offline_nonconvergence_reports_best():
    with pytest.raises(NonConvergence) as exc:
        solve_offline(one_d_lp(), T=5, tol=1e-12, max_iter=500)
    assert exc.value.best is not None


def _toy_trace(problem, rounds, cum_cost, cum_g, horizon):
    rounds = np.asarray(rounds)
    r = len(rounds)
    return RunTrace(rounds=rounds, cum_cost=np.asarray(cum_cost, dtype=float),
                    cum_g=np.asarray(cum_g, dtype=float).reshape(r, -1),
                    w_sum_err=np.zeros(r), mu_consensus_gap=np.zeros(r),
                    y_track_err=np.zeros(r), mu_tilde_norm_mean=np.zeros(r),
                    horizon=horizon, algorithm="pushsum", problem=problem,
                    config=None)


def test_regret_zero_when_decisions_equal_comparator():
    p = one_d_lp()
    off = solve_offline(p, T=4, tol=1e-6, max_iter=100_000)
    per_round = p.round_cost_total(1, off.x_star)
    cum = np.cumsum([per_round] * 4)
    trace = _toy_trace(p, [1, 2, 3, 4], cum, np.zeros((4, 1)), horizon=4)
    _, reg = regret(trace, off)
    assert np.abs(reg).max() <= 1e-9


def test_regret_zero_for_zero_costs():
    p = ConstantLinearProblem(
        costs=[np.zeros(1)], D=[np.array([[-1.0]])],
        b_each=[np.array([-0.5])],
        sets=[Box(np.array([0.0]), np.array([1.0]))])
    off = solve_offline(p, T=4, tol=1e-6, max_iter=50_000)
    trace = _toy_trace(p, [1, 2, 3, 4], np.zeros(4), np.zeros((4, 1)), 4)
    _, reg = regret(trace, off)
    assert np.abs(reg).max() == 0.0


def test_regret_two_round_golden_value():
    # costs c=2 per round; exact comparator x*=0.5 costs 1 per round.
    # decisions x_1=1, x_2=0.75 cost 2 then 1.5: Reg = (2-1, 3.5-2) = (1, 1.5)
    base = one_d_lp()
    p = ConstantLinearProblem(costs=[np.array([2.0])], D=base.D,
                              b_each=base.b_each, sets=base.sets)
    exact = OfflineOptimum(x_star=[np.array([0.5])], objective=2.0,
                           feasibility_residual=0.0, dual_gap_estimate=0.0,
                           iterations=0, horizon=2, problem=p)
    trace = _toy_trace(p, [1, 2], [2.0, 3.5], np.zeros((2, 1)), horizon=2)
    _, reg = regret(trace, exact)
    assert np.allclose(reg, [1.0, 1.5], atol=1e-12)
    # the iterative oracle lands near the same comparator
    off = solve_offline(p, T=2, tol=1e-7, max_iter=150_000)
    assert off.x_star[0][0] == pytest.approx(0.5, abs=2e-3)


def test_regret_rejects_mismatched_horizon_or_problem():
    p = one_d_lp()
    off = solve_offline(p, T=4, tol=1e-6, max_iter=50_000)
    trace = _toy_trace(p, [1, 2], [0., 0.], np.zeros((2, 1)), horizon=2)
    with pytest.raises(LengthMismatch):
        regret(trace, off)
    other = one_d_lp()
    trace4 = _toy_trace(other, [1, 2, 3, 4], np.zeros(4), np.zeros((4, 1)), 4)
    with pytest.raises(LengthMismatch):
        regret(trace4, off)


def test_comparator_is_no_worse_than_any_feasible_point():
    # regret against x* is <= regret against any feasible x_hat (up to the
    # oracle's certified tolerance)
    rng = substream(61, 2)
    p = ConstantLinearProblem(
        costs=[rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)],
        D=[np.array([[0.5, 0.5]]), np.array([[0.5, 0.5]])],
        b_each=[np.array([0.3]), np.array([0.3])],
        sets=[Box(np.zeros(2), np.ones(2))] * 2)
    T = 6
    off = solve_offline(p, T=T, tol=1e-6, max_iter=200_000)
    x_hat = [np.zeros(2), np.zeros(2)]  # feasible: 0.5*0 sums to 0 <= 0.6
    obj_hat = T * sum(p.cost(i, 1, x_hat[i]) for i in range(2))
    tol_term = 2 * 1e-3 * (1 + abs(off.objective))
    assert off.objective <= obj_hat + tol_term


def test_constraint_violation_cumulative_positive_part():
    p = one_d_lp()
    # per-round sums +1, -1, +1 -> cumulative 1, 0, 1
    trace = _toy_trace(p, [1, 2, 3], [0., 0., 0.],
                       np.array([[1.0], [0.0], [1.0]]), horizon=3)
    _, regc = constraint_violation(trace)
    assert np.allclose(regc, [1.0, 0.0, 1.0])


def test_constraint_violation_zero_when_feasible():
    p = one_d_lp()
    trace = _toy_trace(p, [1, 2], [0., 0.], np.array([[-1.0], [-2.0]]), 2)
    _, regc = constraint_violation(trace)
    assert np.array_equal(regc, [0.0, 0.0])


def test_constraint_violation_matches_bruteforce_on_run():
    pev = make_pev(3, seed=31)
    cfg = RunConfig(problem=pev, graphs=generate_switching_cycle(3, 2, seed=2),
                    schedule=StepSchedule(0.2), horizon=50, store_x=True)
    trace = run(cfg)
    _, regc = constraint_violation(trace)
    cum = np.zeros(pev.m)
    for k, t in enumerate(trace.rounds):
        xs = trace.x_history[k]
        cum += np.sum([pev.constraint_value(i, xs[i]) for i in range(3)], axis=0)
        want = np.linalg.norm(np.maximum(cum, 0.0))
        assert regc[k] == pytest.approx(want, abs=1e-9)


def test_fit_rate_exact_power_laws():
    t = np.arange(1, 2001)
    assert fit_rate(t, t ** 0.9).slope == pytest.approx(0.9, abs=1e-6)
    assert fit_rate(t, 3.7 * np.sqrt(t)).slope == pytest.approx(0.5, abs=1e-6)
    assert fit_rate(t, np.full_like(t, 2.5, dtype=float)).slope == \
        pytest.approx(0.0, abs=1e-6)


def test_fit_rate_window_and_skipping():
    t = np.arange(1, 101)
    v = t ** 0.7
    v[:50] = -1.0  # garbage outside the fitted suffix
    fit = fit_rate(t, v, window=0.5)
    assert fit.slope == pytest.approx(0.7, abs=1e-6)
    assert fit.n_skipped == 0
    v2 = np.full(100, -1.0)
    with pytest.raises(NonPositiveValues):
        fit_rate(t, v2, window=0.5)
    v3 = v.copy()
    v3[60] = 0.0
    fit3 = fit_rate(t, v3, window=0.5)
    assert fit3.n_skipped == 1


def test_theoretical_exponents():
    b = theoretical_exponents(0.2)
    assert b["regret"] == pytest.approx(0.9)
    assert b["violation"] == pytest.approx(0.9)
    assert b["violation_time_invariant"] == pytest.approx(0.85)


def test_metrics_csv_round_trip(tmp_path):
    path = tmp_path / "m.csv"
    t = np.array([1, 2, 4])
    write_metrics_csv(path, t, np.array([1.0, 2.0, 3.0]),
                      np.array([0.5, 0.25, 0.125]))
    back = read_metrics_csv(path)
    assert np.allclose(back["t"], t)
    assert np.allclose(back["reg_over_t"], [1.0, 1.0, 0.75])
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(MissingColumn):
        read_metrics_csv(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text(",".join(("t", "reg", "reg_over_t", "regc", "regc_over_t")) + "\n")
    with pytest.raises(MissingColumn):
        read_metrics_csv(empty)


def test_rates_txt_output(tmp_path):
    path = tmp_path / "r.txt"
    fit = fit_rate(np.arange(1, 101), np.arange(1, 101) ** 0.5)
    write_rates_txt(path, 0.2, {"regret": fit, "violation": None})
    text = path.read_text()
    assert "bound_regret_exponent 0.900000" in text
    assert "fit_violation skipped" in text
    assert "fit_regret slope 0.5" in text
