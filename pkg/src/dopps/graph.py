"""Time-varying directed communication graphs with column-stochastic weights.

A weight matrix ``A`` stores, in entry ``(i, j)``, the weight node ``i``
applies to the value pushed by node ``j`` (edge ``j -> i``). Columns sum to
one, so mixing preserves the network-wide total of any pushed quantity;
row sums are free, which is exactly the imbalance the push-sum weights
correct for (a row-sum cap of one would force the matrix to be doubly
stochastic, since both row and column totals must add up to n). Sequences
of such matrices, jointly strongly connected over a window ``Q``, are the
communication model of the simulator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyColumn, GenerationFailed, MinWeightInfeasible
from .rng import STREAM_GRAPH, substream

COLUMN_TOL = 1e-12


@dataclass(frozen=True)
class WeightMatrix:
    """A validated column-stochastic mixing matrix with self-loops.

    Row sums are deliberately unconstrained: demanding them at or below
    one alongside exact column stochasticity forces every row to equal one
    (the totals both sum to n), i.e. a doubly stochastic matrix, which
    would rule out the unbalanced graphs this machinery exists for.
    """

    matrix: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"weight matrix must be square, got {a.shape}")
        if (a < 0).any():
            raise ValueError("weight matrix entries must be nonnegative")
        col = a.sum(axis=0)
        if np.abs(col - 1.0).max() > COLUMN_TOL:
            raise ValueError(
                f"columns must sum to 1 within {COLUMN_TOL}; worst error "
                f"{np.abs(col - 1.0).max():.3e}")
        if (np.diag(a) <= 0).any():
            raise ValueError("diagonal entries must be positive (self-loops)")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "matrix", a)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def a_min(self) -> float:
        """Smallest nonzero weight."""
        nz = self.matrix[self.matrix > 0]
        return float(nz.min())

    def edges(self):
        """Directed edges (j, i) for each nonzero entry (i, j), self-loops included."""
        ii, jj = np.nonzero(self.matrix)
        return [(int(j), int(i)) for i, j in zip(ii, jj)]


@dataclass(frozen=True)
class GraphSequence:
    """Periodic sequence of mixing matrices, indexed by round via ``at(t)``."""

    matrices: tuple[WeightMatrix, ...]
    period_Q: int
    seed: int | None = None
    balanced: bool = field(default=False)

    def __post_init__(self):
        if not self.matrices:
            raise ValueError("graph sequence needs at least one matrix")
        if self.period_Q < 1:
            raise ValueError("period_Q must be >= 1")
        n = self.matrices[0].n
        if any(m.n != n for m in self.matrices):
            raise ValueError("all matrices must share the same node count")

    @property
    def n(self) -> int:
        return self.matrices[0].n

    def at(self, t: int) -> np.ndarray:
        return self.matrices[t % len(self.matrices)].matrix


def make_column_stochastic(topology: np.ndarray, a_min: float = 0.0) -> WeightMatrix:
    """Turn a boolean adjacency pattern into equal-split column-stochastic weights.

    Column ``j`` of ``topology`` marks the out-neighbors of node ``j``
    (entry ``(i, j)`` true means edge ``j -> i``). Each sender splits its
    push equally over its out-neighbors, which only requires local
    out-degree knowledge.

    Raises
    ------
    EmptyColumn
        if some node has no out-edge (a zero column).
    MinWeightInfeasible
        if the equal split would drop below ``a_min``.
    """
    top = np.asarray(topology, dtype=bool)
    if top.ndim != 2 or top.shape[0] != top.shape[1]:
        raise ValueError(f"topology must be square, got {top.shape}")
    if not np.diag(top).all():
        raise ValueError("topology must include all self-loops")
    out_deg = top.sum(axis=0)
    if (out_deg == 0).any():
        raise EmptyColumn(f"nodes without out-edges: {np.nonzero(out_deg == 0)[0].tolist()}")
    if a_min * out_deg.max() > 1.0:
        raise MinWeightInfeasible(
            f"equal split 1/{int(out_deg.max())} is below a_min={a_min}")
    weights = top.astype(float) / out_deg[None, :]
    return WeightMatrix(weights)


def _reachable_from_zero(adj: np.ndarray) -> bool:
    """Depth-first search: does node 0 reach every node along directed edges?"""
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        u = stack.pop()
        for v in np.nonzero(adj[:, u])[0]:
            if not seen[v]:
                seen[v] = True
                stack.append(int(v))
    return bool(seen.all())


def is_strongly_connected(adj: np.ndarray) -> bool:
    """Strong connectivity via DFS from node 0 on the graph and its transpose."""
    return _reachable_from_zero(adj) and _reachable_from_zero(adj.T)


@dataclass(frozen=True)
class Assumption1Report:
    """First offending round per violated clause; empty means all clauses hold."""

    violations: tuple[tuple[int, int, str], ...]  # (clause, round, detail)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return "all clauses hold"
        return "\n".join(f"clause {c} violated at t={t}: {msg}"
                         for c, t, msg in self.violations)


def _matrices_of(seq) -> list[np.ndarray]:
    if isinstance(seq, GraphSequence):
        return [m.matrix for m in seq.matrices]
    out = []
    for m in seq:
        out.append(m.matrix if isinstance(m, WeightMatrix) else np.asarray(m, dtype=float))
    return out


def check_assumption1(seq, horizon_T: int, a_min: float, Q: int) -> Assumption1Report:
    """Validate the three communication-graph clauses over rounds 0..horizon_T.

    Clause 1: every nonzero weight is at least ``a_min``.
    Clause 2: every matrix is nonnegative and column-stochastic (row sums
    are not capped; a cap of one would force doubly stochastic weights and
    exclude every genuinely unbalanced matrix).
    Clause 3: the union graph over any ``Q`` consecutive rounds is strongly
    connected.

    ``seq`` may be a GraphSequence (treated as periodic) or a plain list of
    matrices (treated as periodic as well). Violations are reported, not
    raised; only the first offending round per clause is listed.
    """
    if horizon_T < Q:
        raise ValueError(f"horizon_T={horizon_T} must be >= Q={Q}")
    mats = _matrices_of(seq)
    period = len(mats)
    found: dict[int, tuple[int, str]] = {}

    for t in range(horizon_T + 1):
        a = mats[t % period]
        if 1 not in found:
            nz = a[a > 0]
            if nz.size and nz.min() < a_min:
                found[1] = (t, f"nonzero weight {nz.min():.3e} below a={a_min}")
        if 2 not in found:
            col_err = np.abs(a.sum(axis=0) - 1.0).max()
            if (a < 0).any():
                found[2] = (t, "negative weight")
            elif col_err > COLUMN_TOL:
                found[2] = (t, f"column sum off by {col_err:.3e}")
        if 1 in found and 2 in found:
            break

    n = mats[0].shape[0]
    for t in range(horizon_T - Q + 2):
        union = np.zeros((n, n), dtype=bool)
        for l in range(Q):
            union |= mats[(t + l) % period] > 0
        if not is_strongly_connected(union):
            found[3] = (t, f"union over rounds [{t}, {t + Q - 1}] not strongly connected")
            break
        if period <= Q and t >= period:
            break  # unions repeat from here on

    violations = tuple((c, found[c][0], found[c][1]) for c in sorted(found))
    return Assumption1Report(violations)


def _sparse_cycle_topologies(n: int, Q: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Q sparse digraph patterns whose union contains a directed Hamiltonian cycle.

    Each graph keeps all self-loops, owns every Q-th edge of a covering
    cycle, and adds a few random extra edges; out- and in-degrees end up
    uneven, so the resulting equal-split weights are genuinely unbalanced.
    For n <= 3 the complete digraph is returned instead.
    """
    if n <= 3:
        return [np.ones((n, n), dtype=bool) for _ in range(Q)]
    order = rng.permutation(n)
    cycle_edges = [(int(order[k]), int(order[(k + 1) % n])) for k in range(n)]
    tops = []
    for q in range(Q):
        top = np.eye(n, dtype=bool)
        for k in range(q, n, Q):  # this graph's share of the covering cycle
            u, w = cycle_edges[k]
            top[w, u] = True
        extra = max(1, n // 2)
        pairs = rng.integers(0, n, size=(extra, 2))
        for u, w in pairs:
            if u != w:
                top[w, u] = True
        tops.append(top)
    return tops


def _balanced_cycle_topologies(n: int, Q: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Q symmetric patterns whose union contains an undirected ring."""
    tops = [np.eye(n, dtype=bool) for _ in range(Q)]
    order = rng.permutation(n)
    for idx in range(n):
        u, w = order[idx], order[(idx + 1) % n]
        q = idx % Q
        tops[q][w, u] = True
        tops[q][u, w] = True
    extra = max(1, n // Q)
    for q in range(Q):
        pairs = rng.integers(0, n, size=(extra, 2))
        for u, w in pairs:
            if u != w:
                tops[q][w, u] = True
                tops[q][u, w] = True
    return tops


def _metropolis_weights(top: np.ndarray) -> WeightMatrix:
    """Doubly stochastic weights for a symmetric pattern with self-loops."""
    n = top.shape[0]
    deg = top.sum(axis=1) - 1  # neighbor count, self excluded
    w = np.zeros((n, n))
    for i in range(n):
        for j in np.nonzero(top[i])[0]:
            if j == i:
                continue
            w[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
        w[i, i] = 1.0 - w[i].sum()
    return WeightMatrix(w)


def generate_switching_cycle(n: int, Q: int, seed: int,
                             balanced: bool = False) -> GraphSequence:
    """Generate Q sparse digraphs cycling with period Q.

    Individual graphs may be disconnected, but the union over one period is
    strongly connected (verified with :func:`check_assumption1` before
    returning). With ``balanced=True`` the topologies are symmetric and the
    weights doubly stochastic (Metropolis rule) instead of the push-sum
    equal split. Deterministic in ``(n, Q, seed, balanced)``.
    """
    if n < 2:
        raise ValueError("need at least 2 nodes")
    if Q < 1:
        raise ValueError("Q must be >= 1")
    attempts = 50
    for attempt in range(attempts):
        rng = substream(seed, STREAM_GRAPH, attempt)
        if balanced:
            tops = _balanced_cycle_topologies(n, Q, rng)
            mats = [_metropolis_weights(t) for t in tops]
        else:
            tops = _sparse_cycle_topologies(n, Q, rng)
            mats = [make_column_stochastic(t, a_min=1.0 / n) for t in tops]
        seq = GraphSequence(tuple(mats), period_Q=Q, seed=seed, balanced=balanced)
        report = check_assumption1(seq, horizon_T=2 * Q, a_min=1.0 / n, Q=Q)
        if report.ok:
            return seq
    raise GenerationFailed(
        f"no valid switching cycle for n={n}, Q={Q}, seed={seed} "
        f"after {attempts} attempts")


def save_graph_sequence(seq: GraphSequence, path) -> None:
    """Write a sequence as plain text: header ``n Q``, then per-graph edge
    lists ``i j weight`` (entry ``(i, j)``, i.e. the weight on edge j->i),
    graphs separated by ``---`` lines."""
    lines = [f"{seq.n} {seq.period_Q}"]
    for k, wm in enumerate(seq.matrices):
        if k:
            lines.append("---")
        ii, jj = np.nonzero(wm.matrix)
        for i, j in zip(ii, jj):
            lines.append(f"{i} {j} {wm.matrix[i, j]:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_graph_matrices(path) -> tuple[list[np.ndarray], int]:
    """Read the plain-text format back as raw matrices (no validation)."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"empty graph file {path}")
    n_str, q_str = lines[0].split()
    n, q = int(n_str), int(q_str)
    mats: list[np.ndarray] = []
    cur = np.zeros((n, n))
    for ln in lines[1:]:
        if ln == "---":
            mats.append(cur)
            cur = np.zeros((n, n))
            continue
        i_s, j_s, w_s = ln.split()
        cur[int(i_s), int(j_s)] = float(w_s)
    mats.append(cur)
    return mats, q


def load_graph_sequence(path) -> GraphSequence:
    """Read and validate a sequence written by :func:`save_graph_sequence`."""
    mats, q = load_graph_matrices(path)
    return GraphSequence(tuple(WeightMatrix(m) for m in mats), period_Q=q)
