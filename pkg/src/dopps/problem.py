"""Online problem instances: time-varying local costs, a time-invariant
coupled constraint map per agent, and compact local feasible sets.

Two concrete families ship with the package: the vehicle-charging benchmark
(linear slot costs, sparse nonnegative coupling, cumulative-energy local
polyhedra) and a quadratic tracking instance used for rate experiments.
Both draw every random quantity from counter-based substreams of a single
seed, so any value can be regenerated at any time in any query order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, GenerationFailed
from .geometry import BatchProjector, Box, Polyhedron
from .rng import STREAM_BOUNDS, STREAM_COST, STREAM_PROBLEM, substream


class OnlineProblem:
    """Oracle bundle for one problem instance.

    Subclasses populate ``n_agents``, ``dims`` (per-agent decision sizes),
    ``m`` (coupled-constraint dimension) and ``sets`` (one ConvexSet per
    agent), then implement the four oracles below. Cost oracles must be
    deterministic in ``(i, t, x)``; constraint maps never depend on ``t``.
    """

    n_agents: int
    dims: tuple[int, ...]
    m: int
    sets: tuple

    # -- core oracles -------------------------------------------------------
    def cost(self, i: int, t: int, x: np.ndarray) -> float:
        raise NotImplementedError

    def cost_subgradient(self, i: int, t: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def constraint_value(self, i: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def constraint_subgradient_matrix(self, i: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # -- helpers ------------------------------------------------------------
    def check_vector(self, i: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dims[i],):
            raise DimensionMismatch(
                f"agent {i} expects shape ({self.dims[i]},), got {x.shape}")
        return x

    def round_cost_total(self, t: int, xs) -> float:
        """Sum of all agents' costs at round ``t``."""
        return float(sum(self.cost(i, t, xs[i]) for i in range(self.n_agents)))

    def summed_cost_oracle(self, T: int):
        """Value/subgradient oracles for F_i(x) = sum_{t=1..T} f_{i,t}(x).

        The default accumulates round by round; structured subclasses
        override with closed forms.
        """

        def value(i, x):
            return float(sum(self.cost(i, t, x) for t in range(1, T + 1)))

        def subgrad(i, x):
            g = np.zeros(self.dims[i])
            for t in range(1, T + 1):
                g += self.cost_subgradient(i, t, x)
            return g

        return value, subgrad

    def slater_point(self):
        """A point of X with strict coupled-constraint slack, if one is known."""
        return None


# ---------------------------------------------------------------------------
# Affine coupling
# ---------------------------------------------------------------------------

class AffineCouplingProblem(OnlineProblem):
    """Coupling maps of the form g_i(x) = D_i x - b_i (exact, time-invariant)."""

    def __init__(self, D, b_each, sets):
        self.D = tuple(np.asarray(d, dtype=float) for d in D)
        self.b_each = tuple(np.asarray(b, dtype=float) for b in b_each)
        self.sets = tuple(sets)
        self.n_agents = len(self.sets)
        self.dims = tuple(d.shape[1] for d in self.D)
        self.m = self.D[0].shape[0]
        for i, (d, b) in enumerate(zip(self.D, self.b_each)):
            if d.shape != (self.m, self.dims[i]) or b.shape != (self.m,):
                raise DimensionMismatch(f"agent {i} coupling shapes are inconsistent")

    def constraint_value(self, i, x):
        return self.D[i] @ self.check_vector(i, x) - self.b_each[i]

    def constraint_subgradient_matrix(self, i, x):
        self.check_vector(i, x)
        return self.D[i]


class ConstantLinearProblem(AffineCouplingProblem):
    """f_{i,t}(x) = c_i . x with round-independent cost vectors (test workhorse)."""

    def __init__(self, costs, D, b_each, sets):
        super().__init__(D, b_each, sets)
        self.costs = tuple(np.asarray(c, dtype=float) for c in costs)

    def cost(self, i, t, x):
        return float(self.costs[i] @ self.check_vector(i, x))

    def cost_subgradient(self, i, t, x):
        self.check_vector(i, x)
        return self.costs[i].copy()

    def summed_cost_oracle(self, T):
        def value(i, x):
            return T * float(self.costs[i] @ x)

        def subgrad(i, x):
            return T * self.costs[i]

        return value, subgrad


# ---------------------------------------------------------------------------
# Vehicle-charging benchmark
# ---------------------------------------------------------------------------

PEV_SLOTS = 24
PEV_ROWS = 48


class PevInstance(AffineCouplingProblem):
    """Overnight charging benchmark: linear slot costs, shared network caps.

    Each of N vehicles schedules charging rates over 24 slots inside a
    cumulative-energy corridor (48 local rows) with per-slot rate bounds.
    Unit costs are i.i.d. uniform on [0, 10] per slot and round, sampled
    lazily from a substream keyed by round so queries reproduce in any
    order. The coupled rows model shared network capacity: each row draws
    on a sparse subset of slots, a subset of rows is deliberately scarce,
    and ``b`` is calibrated against a designated strictly feasible schedule.
    """

    def __init__(self, seed, e_totals, D, b, r_max, gamma, slater, sets=None):
        e_totals = np.asarray(e_totals, dtype=float)
        N = e_totals.shape[0]
        D = np.asarray(D, dtype=float)
        b = np.asarray(b, dtype=float)
        if sets is None:
            sets = [_pev_local_set(e_totals[i], r_max, gamma) for i in range(N)]
        super().__init__(
            D=[D[i] for i in range(N)],
            b_each=[b / N] * N,
            sets=sets,
        )
        self.seed = int(seed)
        self.e_totals = e_totals
        self.D_stack = D
        self.b = b
        self.r_max = float(r_max)
        self.gamma = float(gamma)
        self._slater = np.asarray(slater, dtype=float)
        self._cost_cache: dict[int, np.ndarray] = {}
        self._mean_cost_cache: dict[int, np.ndarray] = {}

    # -- cost process -------------------------------------------------------
    def unit_costs(self, t: int) -> np.ndarray:
        """(N, 24) unit-cost block for round ``t`` (uniform on [0, 10])."""
        block = self._cost_cache.get(t)
        if block is None:
            gen = substream(self.seed, STREAM_COST, t)
            block = gen.uniform(0.0, 10.0, (self.n_agents, PEV_SLOTS))
            block.setflags(write=False)
            if len(self._cost_cache) > 8:
                self._cost_cache.clear()
            self._cost_cache[t] = block
        return block

    def cost(self, i, t, x):
        return float(self.unit_costs(t)[i] @ self.check_vector(i, x))

    def cost_subgradient(self, i, t, x):
        self.check_vector(i, x)
        return self.unit_costs(t)[i].copy()

    # -- vectorized fast paths ---------------------------------------------
    def batch_cost_subgradients(self, t, X):
        return self.unit_costs(t)

    def batch_constraint_values(self, X):
        return np.einsum("nmk,nk->nm", self.D_stack, X) - self.b / self.n_agents

    def round_cost_total(self, t, xs):
        return float(np.einsum("nk,nk->", self.unit_costs(t), np.asarray(xs)))

    def mean_cost_vectors(self, T: int) -> np.ndarray:
        """(N, 24) per-round average of the unit costs over rounds 1..T."""
        cached = self._mean_cost_cache.get(T)
        if cached is None:
            acc = np.zeros((self.n_agents, PEV_SLOTS))
            for t in range(1, T + 1):
                acc += self.unit_costs(t)
            cached = acc / T
            self._mean_cost_cache[T] = cached
        return cached

    def summed_cost_oracle(self, T):
        cbar = self.mean_cost_vectors(T)

        def value(i, x):
            return T * float(cbar[i] @ x)

        def subgrad(i, x):
            return T * cbar[i]

        return value, subgrad

    def slater_point(self):
        return [self._slater[i].copy() for i in range(self.n_agents)]


def _pev_local_set(e_total: float, r_max: float, gamma: float) -> Polyhedron:
    """Cumulative-energy corridor: (1±gamma) of the proportional delivery path."""
    k = np.arange(1, PEV_SLOTS + 1)
    e_bar = e_total / PEV_SLOTS
    upper = (1.0 + gamma) * k * e_bar
    lower = (1.0 - gamma) * k * e_bar
    cum = np.tril(np.ones((PEV_SLOTS, PEV_SLOTS)))
    rows = np.vstack([cum, -cum])
    rhs = np.concatenate([upper, -lower])
    box = Box(np.zeros(PEV_SLOTS), np.full(PEV_SLOTS, r_max))
    return Polyhedron(rows, rhs, box)


def _coupled_feasibility_probe(sets, D, target, x0, max_cycles=3000, tol=1e-10):
    """Dykstra on the product space: {x_i in X_i for all i} ∩ {Σ D_i x_i <= target}.

    Returns the projected point and its worst coupled/local residual. The
    coupling halfspaces act on the concatenated variable; local sets are
    handled by the batched per-agent projector.
    """
    project_local = BatchProjector(sets, tol=1e-10)
    X = np.array(x0, dtype=float)
    m = target.shape[0]
    norms2 = np.einsum("nmk,nmk->m", D, D)
    q_row = np.zeros(m)
    for _ in range(max_cycles):
        x_prev = X.copy()
        X = project_local(X)
        for j in range(m):
            zdot = float(np.einsum("nk,nk->", D[:, j, :], X)) + q_row[j] * norms2[j]
            coef = (min(zdot, target[j]) - zdot) / norms2[j]
            shift = q_row[j] + coef
            if shift != 0.0:
                X += shift * D[:, j, :]
            q_row[j] = -coef
        if np.abs(X - x_prev).max() < tol:
            break
    usage = np.einsum("nmk,nk->m", D, X)
    res_coupled = float((usage - target).max())
    res_local = max(s.residual(X[i]) for i, s in enumerate(sets))
    return X, max(res_coupled, res_local)


def make_pev(N: int, seed: int, r_max: float = 1.0, gamma: float = 0.25,
             row_nnz: int = 8, tight_scale: float = 0.85,
             loose_scale: float = 1.4, n_tight: int = PEV_ROWS // 4,
             margin_frac: float = 0.01) -> PevInstance:
    """Generate the N-vehicle charging benchmark, deterministic in ``seed``.

    Capacity rows are sized from the usage of the uniform minimum-delivery
    schedule: ``n_tight`` rows get ``tight_scale`` of it (scarce), the rest
    ``loose_scale`` (generous). A strictly feasible schedule is certified at
    construction by projecting onto the margin-tightened coupled system;
    generation retries with fresh draws and raises
    :class:`GenerationFailed` if no attempt passes.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    attempts = 8
    for attempt in range(attempts):
        rng = substream(seed, STREAM_PROBLEM, attempt)
        e_totals = rng.uniform(0.3, 0.6, N) * PEV_SLOTS * r_max
        D = np.zeros((N, PEV_ROWS, PEV_SLOTS))
        for a in range(N):
            for j in range(PEV_ROWS):
                cols = rng.choice(PEV_SLOTS, size=row_nnz, replace=False)
                wts = rng.uniform(0.2, 1.0, row_nnz)
                D[a, j, cols] = wts / wts.sum()
        x_unif = (1.0 - gamma) * (e_totals / PEV_SLOTS)[:, None] * np.ones((N, PEV_SLOTS))
        v = np.einsum("nmk,nk->m", D, x_unif)
        scale = np.full(PEV_ROWS, loose_scale)
        scale[rng.permutation(PEV_ROWS)[:n_tight]] = tight_scale
        b = scale * v
        sets = [_pev_local_set(e_totals[i], r_max, gamma) for i in range(N)]
        margin = margin_frac * np.linalg.norm(b) / np.sqrt(PEV_ROWS)
        slater, res = _coupled_feasibility_probe(sets, D, b - margin, x_unif)
        if res <= 1e-8:
            return PevInstance(seed=seed, e_totals=e_totals, D=D, b=b,
                               r_max=r_max, gamma=gamma, slater=slater,
                               sets=sets)
    raise GenerationFailed(
        f"Slater probe failed for N={N}, seed={seed} after {attempts} attempts")


# ---------------------------------------------------------------------------
# Quadratic tracking instance (rate experiments)
# ---------------------------------------------------------------------------

class QuadraticTracking(AffineCouplingProblem):
    """f_{i,t}(x) = ||x - theta_{i,t}||^2 over a box, with a mean-usage cap.

    Targets are theta_{i,t} = bias + s_t * theta_i with s_t alternating in
    {+1, -1} (or frozen at +1 when ``time_varying`` is False). The single
    coupled row caps the average of all agents' mean coordinates below the
    bias point, so the cap is active at the offline optimum.
    """

    def __init__(self, n_agents: int, dim: int, seed: int, amplitude: float = 0.8,
                 bias: float = 0.3, cap_fraction: float = 0.25,
                 time_varying: bool = True):
        rng = substream(seed, STREAM_PROBLEM)
        theta = rng.normal(size=(n_agents, dim))
        theta *= amplitude / np.linalg.norm(theta, axis=1, keepdims=True)
        cap = cap_fraction * bias * n_agents
        D = [np.full((1, dim), 1.0 / dim) for _ in range(n_agents)]
        b_each = [np.array([cap / n_agents]) for _ in range(n_agents)]
        sets = [Box(-np.ones(dim), np.ones(dim)) for _ in range(n_agents)]
        super().__init__(D, b_each, sets)
        self.seed = int(seed)
        self.theta = theta
        self.bias = float(bias)
        self.cap = float(cap)
        self.time_varying = bool(time_varying)

    def _sign(self, t: int) -> float:
        return -1.0 if (self.time_varying and t % 2) else 1.0

    def target(self, i: int, t: int) -> np.ndarray:
        return self.bias + self._sign(t) * self.theta[i]

    def cost(self, i, t, x):
        d = self.check_vector(i, x) - self.target(i, t)
        return float(d @ d)

    def cost_subgradient(self, i, t, x):
        return 2.0 * (self.check_vector(i, x) - self.target(i, t))

    def batch_cost_subgradients(self, t, X):
        return 2.0 * (X - (self.bias + self._sign(t) * self.theta))

    def batch_constraint_values(self, X):
        return X.mean(axis=1, keepdims=True) - self.cap / self.n_agents

    def round_cost_total(self, t, xs):
        d = np.asarray(xs) - (self.bias + self._sign(t) * self.theta)
        return float((d * d).sum())

    def summed_cost_oracle(self, T):
        # sum_{t=1..T} ||x - theta_t||^2 = T||x||^2 - 2 (sum theta_t).x + sum||theta_t||^2
        if self.time_varying:
            sign_sum = -1.0 if T % 2 else 0.0  # s_1..s_T with s_t = (-1)^t
        else:
            sign_sum = float(T)
        theta_sum = T * self.bias + sign_sum * self.theta  # (N, dim)
        d = self.dims[0]
        theta_sq = (T * (self.bias ** 2 * d + (self.theta ** 2).sum(axis=1))
                    + 2.0 * sign_sum * self.bias * self.theta.sum(axis=1))

        def value(i, x):
            return float(T * (x @ x) - 2.0 * (theta_sum[i] @ x) + theta_sq[i])

        def subgrad(i, x):
            return 2.0 * (T * x - theta_sum[i])

        return value, subgrad

    def slater_point(self):
        return [np.zeros(self.dims[i]) for i in range(self.n_agents)]


# ---------------------------------------------------------------------------
# Empirical bound estimates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundEstimates:
    """Empirical maxima over sampled feasible points (diagnostics only)."""

    B_x: float
    B_f: float
    B_g: float
    C_f: float
    C_g: float
    samples: int


def _sampling_box(convex_set) -> Box:
    if isinstance(convex_set, Box):
        return convex_set
    if isinstance(convex_set, Polyhedron):
        return convex_set.box
    dim = convex_set.dim
    return Box(-np.ones(dim), np.ones(dim))


def estimate_bounds(problem: OnlineProblem, samples: int, seed: int,
                    horizon: int = 100) -> BoundEstimates:
    """Sample feasible points and report the observed constants.

    Each sample index uses its own substream, so estimates are monotone
    nondecreasing in ``samples`` for a fixed seed.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    B_x = B_f = B_g = C_f = C_g = 0.0
    for s in range(samples):
        rng = substream(seed, STREAM_BOUNDS, s)
        t = int(rng.integers(0, horizon))
        sq_norm = 0.0
        for i, cset in enumerate(problem.sets):
            box = _sampling_box(cset)
            raw = rng.uniform(box.lower, box.upper)
            x = cset.project(raw)
            sq_norm += float(x @ x)
            B_f = max(B_f, abs(problem.cost(i, t, x)))
            B_g = max(B_g, float(np.linalg.norm(problem.constraint_value(i, x))))
            C_f = max(C_f, float(np.linalg.norm(problem.cost_subgradient(i, t, x))))
            C_g = max(C_g, float(np.linalg.norm(
                problem.constraint_subgradient_matrix(i, x), 2)))
        B_x = max(B_x, np.sqrt(sq_norm))
    return BoundEstimates(B_x=B_x, B_f=B_f, B_g=B_g, C_f=C_f, C_g=C_g,
                          samples=samples)


# ---------------------------------------------------------------------------
# Plain-text serialization (vehicle-charging family)
# ---------------------------------------------------------------------------

def _write_matrix(fh, name, mat):
    mat = np.atleast_2d(mat)
    fh.write(f"{name} {mat.shape[0]} {mat.shape[1]}\n")
    for row in mat:
        fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def _read_matrix(lines, idx, name):
    head = lines[idx].split()
    if head[0] != name:
        raise ValueError(f"expected section {name!r}, found {lines[idx]!r}")
    r, c = int(head[-2]), int(head[-1])
    block = np.array([[float(v) for v in lines[idx + 1 + k].split()]
                      for k in range(r)])
    return block.reshape(r, c), idx + 1 + r


def save_problem(problem: PevInstance, path) -> None:
    """Serialize a charging instance: header and seed, then b, per-agent
    coupling rows, local polyhedron rows, and the certified feasible point."""
    if not isinstance(problem, PevInstance):
        raise TypeError("only the charging benchmark serializes to this format")
    with open(path, "w") as fh:
        fh.write("dopps-pev 1\n")
        fh.write(f"n_agents {problem.n_agents}\n")
        fh.write(f"m {problem.m}\n")
        fh.write(f"seed {problem.seed}\n")
        fh.write(f"r_max {problem.r_max:.17g}\n")
        fh.write(f"gamma {problem.gamma:.17g}\n")
        fh.write("e_totals " + " ".join(f"{v:.17g}" for v in problem.e_totals) + "\n")
        fh.write("b " + " ".join(f"{v:.17g}" for v in problem.b) + "\n")
        for i in range(problem.n_agents):
            _write_matrix(fh, f"D {i}", problem.D_stack[i])
        for i in range(problem.n_agents):
            cset = problem.sets[i]
            _write_matrix(fh, f"rows {i}", cset.rows)
            fh.write(f"rhs {i} " + " ".join(f"{v:.17g}" for v in cset.rhs) + "\n")
        _write_matrix(fh, "slater", problem._slater)


def load_problem(path) -> PevInstance:
    """Rebuild a charging instance from :func:`save_problem` output."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines[0].startswith("dopps-pev"):
        raise ValueError(f"{path} is not a charging-instance file")
    header = {}
    idx = 1
    while idx < len(lines) and lines[idx].split()[0] in (
            "n_agents", "m", "seed", "r_max", "gamma", "e_totals", "b"):
        key, *vals = lines[idx].split()
        header[key] = vals
        idx += 1
    N = int(header["n_agents"][0])
    seed = int(header["seed"][0])
    r_max = float(header["r_max"][0])
    gamma = float(header["gamma"][0])
    e_totals = np.array([float(v) for v in header["e_totals"]])
    b = np.array([float(v) for v in header["b"]])
    D = np.zeros((N, int(header["m"][0]), PEV_SLOTS))
    for i in range(N):
        D[i], idx = _read_matrix(lines, idx, "D")
    sets = []
    for i in range(N):
        rows, idx = _read_matrix(lines, idx, "rows")
        head = lines[idx].split()
        rhs = np.array([float(v) for v in head[2:]])
        idx += 1
        box = Box(np.zeros(PEV_SLOTS), np.full(PEV_SLOTS, r_max))
        sets.append(Polyhedron(rows, rhs, box))
    slater, idx = _read_matrix(lines, idx, "slater")
    return PevInstance(seed=seed, e_totals=e_totals, D=D, b=b, r_max=r_max,
                       gamma=gamma, slater=slater, sets=sets)
