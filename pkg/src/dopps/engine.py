"""Round engine: drive a full run of a chosen algorithm and record a trace.

One round is a synchronous barrier step: every agent reads the previous
round's snapshot, mixes, and updates. Decisions are indexed so that x_{t}
for t = 1..T is the decision evaluated against the round-t cost; the trace
accumulates exactly those rounds. The vectorized fast path and the
per-agent reference path perform the same floating-point operations per
agent, so traces do not depend on evaluation layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import algorithm as alg
from .algorithm import StepSchedule
from .errors import ConfigError, WeightUnderflow
from .geometry import BatchProjector
from .graph import GraphSequence, generate_switching_cycle, load_graph_sequence
from .problem import (AffineCouplingProblem, OnlineProblem, QuadraticTracking,
                      load_problem, make_pev)

X_HISTORY_BUDGET = 10_000_000  # store decision history only below this entry count


@dataclass
class RunConfig:
    problem: OnlineProblem
    graphs: Optional[GraphSequence]
    schedule: StepSchedule
    horizon: int
    algorithm: str = "pushsum"
    record_every: int = 1
    seed: int = 0
    store_x: Optional[bool] = None
    provenance: Optional[dict] = None

    def __post_init__(self):
        if self.horizon < 4:
            raise ConfigError(f"horizon must be >= 4, got {self.horizon}")
        if self.algorithm not in ("pushsum", "balanced", "centralized"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm != "centralized" and self.graphs is None:
            raise ConfigError(f"{self.algorithm} needs a graph sequence")
        if self.record_every < 1:
            raise ConfigError("record_every must be >= 1")
        if (self.graphs is not None
                and self.graphs.n != self.problem.n_agents):
            raise ConfigError(
                f"graphs have {self.graphs.n} nodes, problem has "
                f"{self.problem.n_agents} agents")


@dataclass
class RunTrace:
    """Per-recorded-round cumulative sums and diagnostics of one run."""

    rounds: np.ndarray                 # recorded t values, subset of 1..T
    cum_cost: np.ndarray               # sum_{s<=t} sum_i f_{i,s}(x_{i,s})
    cum_g: np.ndarray                  # (R, m) cumulative constraint sums
    w_sum_err: np.ndarray              # |sum_i w_{i,t} - N|
    mu_consensus_gap: np.ndarray       # max_i ||mu_tilde_{i,t} - mean mu_{t-1}||
    y_track_err: np.ndarray            # ||mean y_t - mean g_i(x_{i,t})||
    mu_tilde_norm_mean: np.ndarray     # (1/N) sum_i ||mu_tilde_{i,t}||
    horizon: int
    algorithm: str
    problem: OnlineProblem
    config: RunConfig
    x_history: Optional[list] = field(default=None, repr=False)
    x_final: Optional[list] = field(default=None, repr=False)

    @property
    def regc_norm(self) -> np.ndarray:
        """||[cumulative constraint sum]_+|| at each recorded round."""
        return np.linalg.norm(np.maximum(self.cum_g, 0.0), axis=1)


def _recorded_rounds(horizon: int, every: int) -> list[int]:
    rounds = [t for t in range(1, horizon + 1) if t % every == 0]
    if not rounds or rounds[-1] != horizon:
        rounds.append(horizon)
    return rounds


class _Recorder:
    def __init__(self, config: RunConfig):
        problem = config.problem
        self.rounds = _recorded_rounds(config.horizon, config.record_every)
        self._want = set(self.rounds)
        r = len(self.rounds)
        self.cum_cost = np.zeros(r)
        self.cum_g = np.zeros((r, problem.m))
        self.w_sum_err = np.zeros(r)
        self.mu_gap = np.zeros(r)
        self.y_err = np.zeros(r)
        self.mu_norm = np.zeros(r)
        store = config.store_x
        if store is None:
            entries = sum(problem.dims) * len(self.rounds)
            store = entries <= X_HISTORY_BUDGET
        self.x_history = [] if store else None
        self._k = 0

    def record(self, t, cum_cost, cum_g, w_err, mu_gap, y_err, mu_norm, xs):
        if t not in self._want:
            return
        k = self._k
        self.cum_cost[k] = cum_cost
        self.cum_g[k] = cum_g
        self.w_sum_err[k] = w_err
        self.mu_gap[k] = mu_gap
        self.y_err[k] = y_err
        self.mu_norm[k] = mu_norm
        if self.x_history is not None:
            self.x_history.append([np.array(x) for x in xs])
        self._k += 1

    def finish(self, config, xs_final) -> RunTrace:
        return RunTrace(
            rounds=np.array(self.rounds, dtype=int),
            cum_cost=self.cum_cost, cum_g=self.cum_g,
            w_sum_err=self.w_sum_err, mu_consensus_gap=self.mu_gap,
            y_track_err=self.y_err, mu_tilde_norm_mean=self.mu_norm,
            horizon=config.horizon, algorithm=config.algorithm,
            problem=config.problem, config=config,
            x_history=self.x_history,
            x_final=[np.array(x) for x in xs_final])


def _can_vectorize(problem: OnlineProblem) -> bool:
    return (isinstance(problem, AffineCouplingProblem)
            and len(set(problem.dims)) == 1
            and hasattr(problem, "batch_cost_subgradients")
            and hasattr(problem, "batch_constraint_values"))


def run(config: RunConfig) -> RunTrace:
    """Execute the configured run and return its trace.

    Deterministic: identical configs produce identical traces. Numerical
    failures (weight underflow, projection non-convergence) propagate as
    their module exceptions.
    """
    if config.algorithm == "pushsum":
        if _can_vectorize(config.problem):
            return _run_pushsum_fast(config)
        return _run_pushsum_reference(config)
    if config.algorithm == "balanced":
        return _run_balanced(config)
    return _run_centralized(config)


def _run_pushsum_fast(config: RunConfig) -> RunTrace:
    problem, schedule, T = config.problem, config.schedule, config.horizon
    N, m = problem.n_agents, problem.m
    D_stack = np.stack([np.asarray(d) for d in problem.D])
    projector = BatchProjector(problem.sets)
    rec = _Recorder(config)

    X = projector(np.zeros((N, problem.dims[0])))
    W = np.ones(N)
    MU = np.zeros((N, m))
    G = problem.batch_constraint_values(X)
    Y = G.copy()
    cum_cost = 0.0
    cum_g = np.zeros(m)
    mu_gap_row = 0.0   # computed in round t-1 for row t
    mu_norm_row = 0.0

    for t in range(T + 1):
        if t >= 1:
            cum_cost += problem.round_cost_total(t, X)
            cum_g += G.sum(axis=0)
            w_err = abs(W.sum() - N)
            y_err = float(np.linalg.norm(Y.mean(axis=0) - G.mean(axis=0)))
            rec.record(t, cum_cost, cum_g, w_err, mu_gap_row, y_err,
                       mu_norm_row, X)
        if t == T:
            break
        A = config.graphs.at(t)
        alpha, beta = schedule.alpha(t), schedule.beta(t)
        W_next = A @ W
        if (W_next <= alg.WEIGHT_FLOOR).any():
            raise WeightUnderflow(
                f"push-sum weight underflow at round {t}")
        MU_hat = A @ MU
        Y_hat = A @ Y
        mu_tilde = MU_hat / W_next[:, None]
        mu_bar = MU.mean(axis=0)
        S = problem.batch_cost_subgradients(t, X) \
            + np.einsum("nmk,nm->nk", D_stack, mu_tilde)
        X_next = projector(X - alpha * S)
        G_next = problem.batch_constraint_values(X_next)
        MU = np.maximum(
            MU_hat + alpha * (Y_hat / W_next[:, None] ** 2
                              - beta * MU_hat / W_next[:, None]), 0.0)
        Y = Y_hat + G_next - G
        # diagnostics for row t+1: rescaled mixed dual vs pre-mix average
        mu_gap_row = float(np.linalg.norm(mu_tilde - mu_bar, axis=1).max())
        mu_norm_row = float(np.linalg.norm(mu_tilde, axis=1).mean())
        X = X_next
        G = G_next
        W = W_next

    return rec.finish(config, list(X))


def _run_pushsum_reference(config: RunConfig) -> RunTrace:
    problem, schedule, T = config.problem, config.schedule, config.horizon
    N = problem.n_agents
    states = alg.init_states(problem)
    rec = _Recorder(config)
    cum_cost = 0.0
    cum_g = np.zeros(problem.m)
    g_now = [problem.constraint_value(i, s.x) for i, s in enumerate(states)]
    mu_gap_row = 0.0
    mu_norm_row = 0.0

    for t in range(T + 1):
        if t >= 1:
            cum_cost += problem.round_cost_total(t, [s.x for s in states])
            cum_g += np.sum(g_now, axis=0)
            w_err = abs(sum(s.w for s in states) - N)
            y_mean = np.mean([s.y for s in states], axis=0)
            y_err = float(np.linalg.norm(y_mean - np.mean(g_now, axis=0)))
            rec.record(t, cum_cost, cum_g, w_err, mu_gap_row, y_err,
                       mu_norm_row, [s.x for s in states])
        if t == T:
            break
        A = config.graphs.at(t)
        mu_bar = np.mean([s.mu for s in states], axis=0)
        alg.mix(states, A)
        mu_tildes = [s.mu_tilde for s in states]
        xs_next = [alg.primal_step(states[i], problem, i, t, schedule)
                   for i in range(N)]
        mus_next = [alg.dual_step(states[i], schedule, t) for i in range(N)]
        ys_next = [alg.tracking_step(states[i], problem, i, xs_next[i])
                   for i in range(N)]
        mu_gap_row = max(float(np.linalg.norm(mt - mu_bar)) for mt in mu_tildes)
        mu_norm_row = float(np.mean([np.linalg.norm(mt) for mt in mu_tildes]))
        for i, s in enumerate(states):
            s.x, s.mu, s.y, s.w = xs_next[i], mus_next[i], ys_next[i], s.w_next
            s.w_next = s.mu_hat = s.y_hat = None
        g_now = [problem.constraint_value(i, s.x) for i, s in enumerate(states)]

    return rec.finish(config, [s.x for s in states])


def _run_balanced(config: RunConfig) -> RunTrace:
    problem, schedule, T = config.problem, config.schedule, config.horizon
    N = problem.n_agents
    states = alg.init_states(problem)
    rec = _Recorder(config)
    cum_cost = 0.0
    cum_g = np.zeros(problem.m)
    g_now = [problem.constraint_value(i, s.x) for i, s in enumerate(states)]
    mu_gap_row = 0.0
    mu_norm_row = 0.0

    for t in range(T + 1):
        if t >= 1:
            cum_cost += problem.round_cost_total(t, [s.x for s in states])
            cum_g += np.sum(g_now, axis=0)
            y_mean = np.mean([s.y for s in states], axis=0)
            y_err = float(np.linalg.norm(y_mean - np.mean(g_now, axis=0)))
            rec.record(t, cum_cost, cum_g, 0.0, mu_gap_row, y_err,
                       mu_norm_row, [s.x for s in states])
        if t == T:
            break
        A = config.graphs.at(t)
        mu_bar = np.mean([s.mu for s in states], axis=0)
        mixed = np.asarray(A) @ np.stack([s.mu for s in states])
        mu_gap_row = float(np.linalg.norm(mixed - mu_bar, axis=1).max())
        mu_norm_row = float(np.linalg.norm(mixed, axis=1).mean())
        xs_next, mus_next, ys_next = alg.balanced_baseline_step(
            states, A, problem, t, schedule.alpha(t))
        for i, s in enumerate(states):
            s.x, s.mu, s.y = xs_next[i], mus_next[i], ys_next[i]
        g_now = [problem.constraint_value(i, s.x) for i, s in enumerate(states)]

    return rec.finish(config, [s.x for s in states])


def _run_centralized(config: RunConfig) -> RunTrace:
    problem, schedule, T = config.problem, config.schedule, config.horizon
    rec = _Recorder(config)
    xs = [problem.sets[i].project(np.zeros(problem.dims[i]))
          for i in range(problem.n_agents)]
    mu = np.zeros(problem.m)
    cum_cost = 0.0
    cum_g = np.zeros(problem.m)
    g_now = [problem.constraint_value(i, xs[i]) for i in range(problem.n_agents)]

    for t in range(T + 1):
        if t >= 1:
            cum_cost += problem.round_cost_total(t, xs)
            cum_g += np.sum(g_now, axis=0)
            rec.record(t, cum_cost, cum_g, 0.0, 0.0, 0.0,
                       float(np.linalg.norm(mu)), xs)
        if t == T:
            break
        xs, mu = alg.centralized_step(xs, mu, problem, t, schedule.alpha(t))
        g_now = [problem.constraint_value(i, xs[i]) for i in range(problem.n_agents)]

    return rec.finish(config, xs)


# ---------------------------------------------------------------------------
# Sweeps and experiment building
# ---------------------------------------------------------------------------

@dataclass
class SweepResult:
    overrides: dict
    trace: Optional[RunTrace]
    error: Optional[str] = None


def config_from_specs(problem_spec: dict, graph_spec: Optional[dict],
                      kappa: float = 0.2, horizon: int = 10_000,
                      algorithm: str = "pushsum", seed: int = 0,
                      record_every: int = 1,
                      allow_any_kappa: bool = False) -> RunConfig:
    """Build a RunConfig from declarative problem/graph specifications.

    ``problem_spec`` kinds: ``pev`` (keys n_agents, seed, plus generator
    overrides), ``synthetic`` (keys n_agents, dim, seed, amplitude, bias,
    cap_fraction, time_varying) or ``file`` (key path). ``graph_spec``
    holds Q/seed/balanced or a file path; it may be None for the
    centralized algorithm. The specs are kept on the config as provenance
    so sweeps can rebuild variants.
    """
    problem = _build_problem(problem_spec)
    graphs = None
    if graph_spec is not None:
        graphs = _build_graphs(graph_spec, problem.n_agents)
    schedule = StepSchedule(kappa=kappa, allow_any_kappa=allow_any_kappa)
    return RunConfig(problem=problem, graphs=graphs, schedule=schedule,
                     horizon=horizon, algorithm=algorithm, seed=seed,
                     record_every=record_every,
                     provenance={"problem": dict(problem_spec),
                                 "graph": dict(graph_spec) if graph_spec else None,
                                 "kappa": kappa,
                                 "allow_any_kappa": allow_any_kappa})


def _build_problem(spec: dict) -> OnlineProblem:
    kind = spec.get("kind")
    if kind == "pev":
        keys = ("r_max", "gamma", "row_nnz", "tight_scale", "loose_scale",
                "n_tight", "margin_frac")
        extra = {k: spec[k] for k in keys if k in spec}
        return make_pev(N=int(spec["n_agents"]), seed=int(spec["seed"]), **extra)
    if kind == "synthetic":
        keys = ("amplitude", "bias", "cap_fraction", "time_varying")
        extra = {k: spec[k] for k in keys if k in spec}
        return QuadraticTracking(n_agents=int(spec["n_agents"]),
                                 dim=int(spec.get("dim", 3)),
                                 seed=int(spec["seed"]), **extra)
    if kind == "file":
        return load_problem(spec["path"])
    raise ConfigError(f"unknown problem kind {kind!r}")


def _build_graphs(spec: dict, n_agents: int) -> GraphSequence:
    if "path" in spec:
        return load_graph_sequence(spec["path"])
    return generate_switching_cycle(
        n=n_agents, Q=int(spec.get("Q", 1)), seed=int(spec.get("seed", 0)),
        balanced=bool(spec.get("balanced", False)))


def run_sweep(base_config: RunConfig, values: list[dict]) -> list[SweepResult]:
    """Run one variant per override dict ({'N': ...}, {'Q': ...} or
    {'kappa': ...}); results keep the input order and capture per-entry
    errors instead of aborting the sweep."""
    results = []
    for overrides in values:
        try:
            cfg = _apply_overrides(base_config, overrides)
            results.append(SweepResult(overrides=dict(overrides), trace=run(cfg)))
        except Exception as exc:  # per-entry reporting is the contract
            results.append(SweepResult(overrides=dict(overrides), trace=None,
                                       error=f"{type(exc).__name__}: {exc}"))
    return results


def _apply_overrides(base: RunConfig, overrides: dict) -> RunConfig:
    unknown = set(overrides) - {"N", "Q", "kappa"}
    if unknown:
        raise ConfigError(f"unsupported sweep keys {sorted(unknown)}")
    needs_rebuild = {"N", "Q"} & set(overrides)
    if needs_rebuild and not base.provenance:
        raise ConfigError("sweeping N or Q needs a config built from specs")
    if not needs_rebuild:
        schedule = StepSchedule(kappa=float(overrides["kappa"]),
                                allow_any_kappa=base.schedule.allow_any_kappa) \
            if "kappa" in overrides else base.schedule
        return RunConfig(problem=base.problem, graphs=base.graphs,
                         schedule=schedule, horizon=base.horizon,
                         algorithm=base.algorithm, seed=base.seed,
                         record_every=base.record_every,
                         store_x=base.store_x, provenance=base.provenance)
    prob_spec = dict(base.provenance["problem"])
    graph_spec = dict(base.provenance["graph"]) if base.provenance["graph"] else None
    if "N" in overrides:
        prob_spec["n_agents"] = int(overrides["N"])
    if "Q" in overrides:
        if graph_spec is None:
            raise ConfigError("cannot sweep Q without a graph spec")
        graph_spec["Q"] = int(overrides["Q"])
    kappa = float(overrides.get("kappa", base.provenance["kappa"]))
    return config_from_specs(
        prob_spec, graph_spec, kappa=kappa, horizon=base.horizon,
        algorithm=base.algorithm, seed=base.seed,
        record_every=base.record_every,
        allow_any_kappa=base.provenance.get("allow_any_kappa", False))


# ---------------------------------------------------------------------------
# Trace serialization
# ---------------------------------------------------------------------------

TRACE_COLUMNS = ("t", "reg_cum", "regc_norm", "w_sum_err",
                 "mu_consensus_gap", "y_track_err")


def trace_filename(config: RunConfig) -> str:
    n = config.problem.n_agents
    q = config.graphs.period_Q if config.graphs is not None else 0
    kappa = f"{config.schedule.kappa:g}"
    return f"run_{config.algorithm}_{n}_{q}_{kappa}_{config.seed}.csv"


def write_trace_csv(trace: RunTrace, path) -> None:
    """Write the per-round trace; ``reg_cum`` is the cumulative incurred
    cost (the regret comparator is subtracted downstream by the metrics
    layer) and ``regc_norm`` the cumulative-violation norm."""
    regc = trace.regc_norm
    with open(path, "w") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for k, t in enumerate(trace.rounds):
            fh.write(f"{t},{trace.cum_cost[k]:.17g},{regc[k]:.17g},"
                     f"{trace.w_sum_err[k]:.17g},"
                     f"{trace.mu_consensus_gap[k]:.17g},"
                     f"{trace.y_track_err[k]:.17g}\n")
