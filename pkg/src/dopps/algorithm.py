"""Per-agent update rules: the push-sum primal-dual method and two baselines.

One synchronous round applies, in order: weight/dual/tracker mixing with
the current column-stochastic matrix, a projected primal subgradient step,
a penalized dual ascent step, and a constraint-tracking update. All
right-hand sides read the pre-round snapshot, so agents may be evaluated
in any order between mixing barriers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NotDoublyStochastic, WeightUnderflow

WEIGHT_FLOOR = 1e-12  # below this the graph sequence is considered broken


@dataclass
class StepSchedule:
    """Diminishing steps alpha_t = t^(-1/2), beta_t = t^(-kappa), both 1 at t=0.

    The exponent must lie in (0, 1/4) for the method's guarantees;
    ``allow_any_kappa`` lifts that check for experiments.
    """

    kappa: float = 0.2
    allow_any_kappa: bool = False

    def __post_init__(self):
        if not self.allow_any_kappa and not 0.0 < self.kappa < 0.25:
            raise ValueError(f"kappa={self.kappa} outside (0, 1/4)")

    def alpha(self, t: int) -> float:
        return 1.0 if t == 0 else float(t) ** -0.5

    def beta(self, t: int) -> float:
        return 1.0 if t == 0 else float(t) ** -self.kappa


def schedule_values(schedule: StepSchedule, t: int) -> tuple[float, float]:
    """(alpha_t, beta_t) for round t >= 0."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return schedule.alpha(t), schedule.beta(t)


@dataclass
class AgentState:
    """One agent's primal/dual/tracking state plus the cached mixed values.

    ``mu`` is kept exactly nonnegative (it is produced by an orthant
    projection) and ``w`` strictly positive. ``mu_hat``, ``y_hat`` and
    ``w_next`` are populated by :func:`mix` each round; ``mu_tilde`` and
    ``y_tilde`` are the push-sum rescaled versions used by the updates.
    """

    x: np.ndarray
    mu: np.ndarray
    y: np.ndarray
    w: float = 1.0
    mu_hat: np.ndarray | None = field(default=None, repr=False)
    y_hat: np.ndarray | None = field(default=None, repr=False)
    w_next: float | None = field(default=None, repr=False)

    @property
    def mu_tilde(self) -> np.ndarray:
        self._require_mixed()
        return self.mu_hat / self.w_next

    @property
    def y_tilde(self) -> np.ndarray:
        self._require_mixed()
        return self.y_hat / self.w_next

    def _require_mixed(self):
        if self.w_next is None:
            raise RuntimeError("mix() has not been applied this round")
        if self.w_next <= WEIGHT_FLOOR:
            raise WeightUnderflow(
                f"push-sum weight {self.w_next:.3e} underflowed; the mixing "
                f"sequence violates its connectivity assumptions")


def init_states(problem) -> list[AgentState]:
    """Initial states: w = 1, x = projection of 0 onto X_i, mu = 0, y = g_i(x)."""
    states = []
    for i in range(problem.n_agents):
        x0 = problem.sets[i].project(np.zeros(problem.dims[i]))
        states.append(AgentState(
            x=x0,
            mu=np.zeros(problem.m),
            y=problem.constraint_value(i, x0),
            w=1.0,
        ))
    return states


def mix(states: list[AgentState], A: np.ndarray):
    """Mix weights, duals and trackers with the round's matrix.

    Entry ``A[i, j]`` weighs what agent j pushed to agent i. Computes, for
    every agent, ``w_next = sum_j a_ij w_j``, ``mu_hat = sum_j a_ij mu_j``
    and ``y_hat = sum_j a_ij y_j``, stores them on the states, and returns
    the stacked ``(w_next, mu_hat, y_hat)`` arrays. Column stochasticity
    makes each stacked sum conserve its network total.
    """
    A = np.asarray(A, dtype=float)
    n = len(states)
    if A.shape != (n, n):
        raise DimensionMismatch(f"matrix {A.shape} does not fit {n} agents")
    w = np.array([s.w for s in states])
    mu_stack = np.stack([s.mu for s in states])
    y_stack = np.stack([s.y for s in states])
    w_next = A @ w
    mu_hat = A @ mu_stack
    y_hat = A @ y_stack
    for i, s in enumerate(states):
        s.w_next = float(w_next[i])
        s.mu_hat = mu_hat[i]
        s.y_hat = y_hat[i]
    return w_next, mu_hat, y_hat


def primal_step(state: AgentState, problem, i: int, t: int,
                schedule: StepSchedule) -> np.ndarray:
    """Projected subgradient step on the local Lagrangian.

    The search direction is the cost subgradient at the current point plus
    the constraint subgradient matrix (transposed) applied to the rescaled
    mixed dual ``mu_hat / w_next``.
    """
    alpha = schedule.alpha(t)
    s = problem.cost_subgradient(i, t, state.x)
    s = s + problem.constraint_subgradient_matrix(i, state.x).T @ state.mu_tilde
    return problem.sets[i].project(state.x - alpha * s)


def dual_step(state: AgentState, schedule: StepSchedule, t: int) -> np.ndarray:
    """Penalized dual ascent, projected onto the nonnegative orthant:

    mu_next = [ mu_hat + alpha_t (y_hat / w_next^2 - beta_t mu_hat / w_next) ]_+

    The beta term is a decaying pull toward zero that keeps the multipliers
    bounded without any projection onto a precomputed dual ball.
    """
    alpha, beta = schedule.alpha(t), schedule.beta(t)
    state._require_mixed()
    w_next = state.w_next
    drift = state.y_hat / w_next ** 2 - beta * state.mu_hat / w_next
    return np.maximum(state.mu_hat + alpha * drift, 0.0)


def tracking_step(state: AgentState, problem, i: int,
                  x_next: np.ndarray) -> np.ndarray:
    """y_next = y_hat + g_i(x_next) - g_i(x): keeps the network average of
    the trackers equal to the average constraint value at all rounds."""
    state._require_mixed()
    return state.y_hat + problem.constraint_value(i, x_next) \
        - problem.constraint_value(i, state.x)


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

def centralized_step(xs, mu, problem, t: int, alpha: float):
    """One saddle-point step with full information.

    Every agent block descends along its cost subgradient plus the
    constraint subgradient weighted by the single shared multiplier; the
    multiplier ascends along the summed constraint value and is clipped to
    the orthant.
    """
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (problem.m,):
        raise DimensionMismatch(f"mu must have shape ({problem.m},)")
    g_total = np.zeros(problem.m)
    xs_next = []
    for i in range(problem.n_agents):
        x = problem.check_vector(i, xs[i])
        s = problem.cost_subgradient(i, t, x)
        s = s + problem.constraint_subgradient_matrix(i, x).T @ mu
        xs_next.append(problem.sets[i].project(x - alpha * s))
        g_total += problem.constraint_value(i, x)
    mu_next = np.maximum(mu + alpha * g_total, 0.0)
    return xs_next, mu_next


DOUBLY_STOCHASTIC_TOL = 1e-10


def balanced_baseline_step(states: list[AgentState], A: np.ndarray, problem,
                           t: int, alpha: float):
    """One round of the consensus primal-dual baseline for balanced graphs.

    Requires ``A`` doubly stochastic. Mixes duals and trackers, steps the
    primal along the cost subgradient plus the constraint subgradient
    weighted by the mixed dual, ascends the dual along the mixed tracker,
    and updates the tracker with the constraint increment. Returns the
    per-agent ``(x_next, mu_next, y_next)`` lists.
    """
    A = np.asarray(A, dtype=float)
    n = len(states)
    if A.shape != (n, n):
        raise DimensionMismatch(f"matrix {A.shape} does not fit {n} agents")
    if (np.abs(A.sum(axis=0) - 1.0).max() > DOUBLY_STOCHASTIC_TOL
            or np.abs(A.sum(axis=1) - 1.0).max() > DOUBLY_STOCHASTIC_TOL):
        raise NotDoublyStochastic(
            "balanced baseline needs a doubly stochastic mixing matrix")
    mu_stack = np.stack([s.mu for s in states])
    y_stack = np.stack([s.y for s in states])
    mu_mixed = A @ mu_stack
    y_mixed = A @ y_stack
    xs_next, mus_next, ys_next = [], [], []
    for i, s in enumerate(states):
        grad = problem.cost_subgradient(i, t, s.x)
        grad = grad + problem.constraint_subgradient_matrix(i, s.x).T @ mu_mixed[i]
        x_next = problem.sets[i].project(s.x - alpha * grad)
        mu_next = np.maximum(mu_mixed[i] + alpha * y_mixed[i], 0.0)
        y_next = y_mixed[i] + problem.constraint_value(i, x_next) \
            - problem.constraint_value(i, s.x)
        xs_next.append(x_next)
        mus_next.append(mu_next)
        ys_next.append(y_next)
    return xs_next, mus_next, ys_next
