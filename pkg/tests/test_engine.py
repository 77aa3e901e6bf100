from types import SimpleNamespace

import numpy as np
import pytest

from dopps.algorithm import StepSchedule
from dopps.engine import (RunConfig, config_from_specs, run, run_sweep,
                          trace_filename, write_trace_csv)
from dopps.errors import ConfigError, WeightUnderflow
from dopps.geometry import Box
from dopps.graph import generate_switching_cycle
from dopps.problem import (AffineCouplingProblem, ConstantLinearProblem,
                           make_pev)
from dopps.rng import substream


def zero_problem(n_agents=1, dim=2):
    return ConstantLinearProblem(
        costs=[np.zeros(dim)] * n_agents,
        D=[np.full((1, dim), 0.1)] * n_agents,
        b_each=[np.full(1, 0.05)] * n_agents,
        sets=[Box(-np.ones(dim), np.ones(dim))] * n_agents)


def small_config(**kw):
    problem = kw.pop("problem", None) or make_pev(3, seed=1)
    graphs = kw.pop("graphs", None) or generate_switching_cycle(
        problem.n_agents, 2, seed=2)
    defaults = dict(problem=problem, graphs=graphs,
                    schedule=StepSchedule(0.2), horizon=30)
    defaults.update(kw)
    return RunConfig(**defaults)


def identity_sequence(n=1):
    from dopps.graph import GraphSequence, WeightMatrix
    return GraphSequence((WeightMatrix(np.eye(n)),), period_Q=1)


def test_zero_cost_run_keeps_decisions_constant():
    problem = zero_problem()
    cfg = RunConfig(problem=problem, graphs=identity_sequence(1),
                    schedule=StepSchedule(0.2), horizon=4, store_x=True)
    trace = run(cfg)
    x0 = problem.sets[0].project(np.zeros(2))
    for xs in trace.x_history:
        assert np.array_equal(xs[0], x0)
    assert np.array_equal(trace.rounds, [1, 2, 3, 4])
    g0 = problem.constraint_value(0, x0)
    for k, t in enumerate(trace.rounds):
        assert np.allclose(trace.cum_g[k], t * g0, atol=1e-12)
    assert np.allclose(trace.cum_cost, 0.0)


def test_trace_is_deterministic_and_csv_byte_identical(tmp_path):
    cfgs = [small_config() for _ in range(2)]
    traces = [run(c) for c in cfgs]
    assert np.array_equal(traces[0].cum_cost, traces[1].cum_cost)
    assert np.array_equal(traces[0].cum_g, traces[1].cum_g)
    paths = []
    for k, tr in enumerate(traces):
        p = tmp_path / f"t{k}.csv"
        write_trace_csv(tr, p)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_fast_and_reference_paths_agree():
    pev = make_pev(3, seed=4)

    class Hidden(AffineCouplingProblem):
        """Same oracles, no batch hooks: forces the reference path."""

        def __init__(self, inner):
            super().__init__(inner.D, inner.b_each, inner.sets)
            self._inner = inner

        def cost(self, i, t, x):
            return self._inner.cost(i, t, x)

        def cost_subgradient(self, i, t, x):
            return self._inner.cost_subgradient(i, t, x)

    hidden = Hidden(pev)
    graphs = generate_switching_cycle(3, 2, seed=5)
    t_fast = run(RunConfig(problem=pev, graphs=graphs,
                           schedule=StepSchedule(0.2), horizon=25, store_x=True))
    t_ref = run(RunConfig(problem=hidden, graphs=graphs,
                          schedule=StepSchedule(0.2), horizon=25, store_x=True))
    assert np.allclose(t_fast.cum_cost, t_ref.cum_cost, rtol=1e-10, atol=1e-8)
    assert np.allclose(t_fast.cum_g, t_ref.cum_g, atol=1e-9)
    for xs_f, xs_r in zip(t_fast.x_history, t_ref.x_history):
        for a, b in zip(xs_f, xs_r):
            assert np.abs(a - b).max() <= 1e-9


def test_cumulative_sums_match_recomputation_from_history():
    cfg = small_config(store_x=True, horizon=20)
    trace = run(cfg)
    problem = cfg.problem
    cum_c = 0.0
    cum_g = np.zeros(problem.m)
    for k, t in enumerate(trace.rounds):
        xs = trace.x_history[k]
        cum_c += problem.round_cost_total(int(t), xs)
        cum_g += np.sum([problem.constraint_value(i, xs[i])
                         for i in range(problem.n_agents)], axis=0)
        assert abs(trace.cum_cost[k] - cum_c) <= 1e-7 * max(1.0, abs(cum_c))
        assert np.abs(trace.cum_g[k] - cum_g).max() <= 1e-7


def test_record_every_keeps_final_round():
    cfg = small_config(horizon=25, record_every=10)
    trace = run(cfg)
    assert list(trace.rounds) == [10, 20, 25]


def test_push_sum_diagnostics_are_small_on_valid_graphs():
    cfg = small_config(horizon=40)
    trace = run(cfg)
    assert trace.w_sum_err.max() <= 1e-9
    assert trace.y_track_err.max() <= 1e-9
    assert np.isfinite(trace.mu_consensus_gap).all()


def test_balanced_algorithm_runs_and_rejects_unbalanced_graphs():
    pev = make_pev(3, seed=6)
    balanced = generate_switching_cycle(3, 2, seed=7, balanced=True)
    trace = run(RunConfig(problem=pev, graphs=balanced,
                          schedule=StepSchedule(0.2), horizon=10,
                          algorithm="balanced"))
    assert trace.rounds[-1] == 10
    unbalanced = generate_switching_cycle(6, 2, seed=8)
    pev6 = make_pev(6, seed=6)
    with pytest.raises(Exception):
        run(RunConfig(problem=pev6, graphs=unbalanced,
                      schedule=StepSchedule(0.2), horizon=10,
                      algorithm="balanced"))


def test_centralized_algorithm_runs_without_graphs():
    pev = make_pev(2, seed=9)
    trace = run(RunConfig(problem=pev, graphs=None,
                          schedule=StepSchedule(0.2), horizon=15,
                          algorithm="centralized"))
    assert trace.rounds[-1] == 15
    assert np.all(trace.w_sum_err == 0.0)


def test_config_validation():
    pev = make_pev(2, seed=9)
    graphs = generate_switching_cycle(2, 1, seed=1)
    with pytest.raises(ConfigError):
        RunConfig(problem=pev, graphs=graphs, schedule=StepSchedule(0.2),
                  horizon=3)  # T >= 4
    with pytest.raises(ConfigError):
        RunConfig(problem=pev, graphs=None, schedule=StepSchedule(0.2),
                  horizon=10)  # pushsum needs graphs
    with pytest.raises(ConfigError):
        RunConfig(problem=pev, graphs=graphs, schedule=StepSchedule(0.2),
                  horizon=10, algorithm="gradient")
    with pytest.raises(ConfigError):
        RunConfig(problem=pev,
                  graphs=generate_switching_cycle(3, 1, seed=1),
                  schedule=StepSchedule(0.2), horizon=10)  # size mismatch


def test_weight_underflow_propagates():
    problem = zero_problem()
    bad = np.array([[1e-14, 0.0], [1.0 - 1e-14, 1.0]])
    graphs = SimpleNamespace(n=2, period_Q=1, at=lambda t: bad)
    cfg = RunConfig(problem=zero_problem(2), graphs=graphs,
                    schedule=StepSchedule(0.2), horizon=10)
    with pytest.raises(WeightUnderflow):
        run(cfg)


def test_config_from_specs_and_filename():
    cfg = config_from_specs({"kind": "pev", "n_agents": 3, "seed": 1},
                            {"Q": 2, "seed": 2}, kappa=0.2, horizon=50,
                            seed=5)
    assert trace_filename(cfg) == "run_pushsum_3_2_0.2_5.csv"
    assert cfg.provenance["problem"]["n_agents"] == 3


def test_run_sweep_orders_and_isolates_errors():
    base = config_from_specs({"kind": "pev", "n_agents": 3, "seed": 1},
                             {"Q": 2, "seed": 2}, kappa=0.2, horizon=10)
    results = run_sweep(base, [{"Q": 1}, {"kappa": 0.9}, {"kappa": 0.21}])
    assert [r.overrides for r in results] == [{"Q": 1}, {"kappa": 0.9},
                                              {"kappa": 0.21}]
    assert results[0].trace is not None
    assert results[1].trace is None and "kappa" in results[1].error
    assert results[2].trace is not None
    assert run_sweep(base, []) == []


def test_run_sweep_rebuilds_problem_for_n_override():
    base = config_from_specs({"kind": "pev", "n_agents": 2, "seed": 1},
                             {"Q": 1, "seed": 2}, kappa=0.2, horizon=8)
    results = run_sweep(base, [{"N": 3}])
    assert results[0].error is None
    assert results[0].trace.problem.n_agents == 3


def test_trace_regc_norm_matches_direct_formula():
    cfg = small_config(horizon=15)
    trace = run(cfg)
    want = np.linalg.norm(np.maximum(trace.cum_g, 0.0), axis=1)
    assert np.array_equal(trace.regc_norm, want)
