import numpy as np
import pytest

from dopps.errors import DimensionMismatch
from dopps.geometry import Box
from dopps.problem import (ConstantLinearProblem, OnlineProblem, PevInstance,
                           QuadraticTracking, estimate_bounds, load_problem,
                           make_pev, save_problem)
from dopps.rng import substream

from oracles import matvec_loops, subgradient_inequality_holds


def one_d_lp(c=1.0, d=-1.0, b=-0.5, lo=0.0, hi=1.0):
    """min c*x over [lo, hi] subject to d*x - b <= 0."""
    return ConstantLinearProblem(
        costs=[np.array([c])],
        D=[np.array([[d]])],
        b_each=[np.array([b])],
        sets=[Box(np.array([lo]), np.array([hi]))],
    )


class PiecewiseMax(OnlineProblem):
    """f(x) = max(x1, x2) with smallest-active-index subgradient ties."""

    def __init__(self):
        self.n_agents = 1
        self.dims = (2,)
        self.m = 1
        self.sets = (Box(-np.ones(2), np.ones(2)),)

    def cost(self, i, t, x):
        return float(np.max(self.check_vector(i, x)))

    def cost_subgradient(self, i, t, x):
        x = self.check_vector(i, x)
        k = int(np.argmax(x))  # argmax returns the smallest maximizing index
        s = np.zeros(2)
        s[k] = 1.0
        return s

    def constraint_value(self, i, x):
        # single hinge row max(0, x1), inactive-preferred at the kink
        return np.array([max(0.0, float(x[0]))])

    def constraint_subgradient_matrix(self, i, x):
        row = np.zeros((1, 2))
        if x[0] > 0.0:
            row[0, 0] = 1.0
        return row


def test_linear_cost_values():
    p = ConstantLinearProblem(
        costs=[np.array([2.0, 3.0])],
        D=[np.zeros((1, 2))], b_each=[np.zeros(1)],
        sets=[Box(np.zeros(2), np.ones(2))])
    assert p.cost(0, 0, np.array([1.0, 1.0])) == 5.0
    assert p.cost(0, 7, np.zeros(2)) == 0.0
    assert np.array_equal(p.cost_subgradient(0, 3, np.zeros(2)), [2.0, 3.0])


def test_pev_cost_is_exact_dot_product():
    pev = make_pev(2, seed=3)
    x = substream(0, 1).uniform(0, 1, 24)
    c = pev.unit_costs(5)
    assert pev.cost(0, 5, x) == pytest.approx(float(c[0] @ x), abs=0)
    assert pev.cost(1, 5, np.zeros(24)) == 0.0
    assert (c >= 0).all() and (c <= 10).all()


def test_pev_costs_reproducible_any_order():
    pev = make_pev(2, seed=3)
    later = pev.unit_costs(100).copy()
    pev._cost_cache.clear()
    early = pev.unit_costs(1).copy()
    pev._cost_cache.clear()
    assert np.array_equal(pev.unit_costs(100), later)
    assert np.array_equal(pev.unit_costs(1), early)


def test_quadratic_cost_zero_at_target():
    q = QuadraticTracking(3, 2, seed=4)
    theta = q.target(1, 6)
    assert q.cost(1, 6, theta) == 0.0
    assert np.allclose(q.cost_subgradient(1, 6, theta), 0.0)


def test_quadratic_subgradient_formula():
    q = QuadraticTracking(2, 3, seed=4)
    x = np.array([0.2, -0.1, 0.5])
    want = 2.0 * (x - q.target(0, 3))
    assert np.allclose(q.cost_subgradient(0, 3, x), want)


def test_subgradient_inequality_at_probes():
    rng = substream(21, 1)
    pev = make_pev(2, seed=5)
    probes = [rng.uniform(0, 1, 24) for _ in range(60)]
    for t in (0, 3):
        x = rng.uniform(0, 1, 24)
        s = pev.cost_subgradient(0, t, x)
        assert subgradient_inequality_holds(
            lambda z: pev.cost(0, t, z), x, s, probes)

    pm = PiecewiseMax()
    probes2 = [rng.uniform(-1, 1, 2) for _ in range(100)]
    s = pm.cost_subgradient(0, 0, np.array([1.0, 1.0]))
    assert np.array_equal(s, [1.0, 0.0])  # smallest active index wins
    assert subgradient_inequality_holds(
        lambda z: pm.cost(0, 0, z), np.array([1.0, 1.0]), s, probes2)


def test_hinge_constraint_tie_rule_and_inequality():
    pm = PiecewiseMax()
    assert np.array_equal(pm.constraint_subgradient_matrix(0, np.array([-1.0, 0.0])),
                          [[0.0, 0.0]])
    # at the kink the inactive branch is preferred
    row0 = pm.constraint_subgradient_matrix(0, np.array([0.0, 0.0]))[0]
    assert np.array_equal(row0, [0.0, 0.0])
    rng = substream(21, 2)
    probes = [rng.uniform(-1, 1, 2) for _ in range(100)]
    assert subgradient_inequality_holds(
        lambda z: float(pm.constraint_value(0, z)[0]),
        np.array([0.0, 0.0]), row0, probes)


def test_constraint_identity_map():
    p = ConstantLinearProblem(
        costs=[np.zeros(2)],
        D=[np.eye(2)], b_each=[np.zeros(2)],
        sets=[Box(-np.ones(2), np.ones(2))])
    assert np.array_equal(p.constraint_value(0, np.array([1.0, -1.0])), [1.0, -1.0])


def test_pev_constraint_at_zero_is_minus_share():
    pev = make_pev(4, seed=6)
    for i in range(4):
        assert np.allclose(pev.constraint_value(i, np.zeros(24)), -pev.b / 4)


def test_affine_constraint_matches_loop_oracle():
    rng = substream(23, 3)
    D = rng.normal(size=(3, 5))
    b = rng.normal(size=3)
    p = ConstantLinearProblem(
        costs=[np.zeros(5)], D=[D], b_each=[b],
        sets=[Box(-np.ones(5), np.ones(5))])
    for _ in range(20):
        x = rng.uniform(-1, 1, 5)
        want = np.array(matvec_loops(D, x)) - b
        assert np.allclose(p.constraint_value(0, x), want, atol=1e-12)
    assert np.array_equal(p.constraint_subgradient_matrix(0, x), D)


def test_affine_linearity_property():
    pev = make_pev(2, seed=7)
    rng = substream(23, 4)
    for _ in range(20):
        x, y = rng.uniform(0, 1, 24), rng.uniform(0, 1, 24)
        a = float(rng.uniform())
        lhs = pev.constraint_value(0, a * x + (1 - a) * y)
        rhs = a * pev.constraint_value(0, x) + (1 - a) * pev.constraint_value(0, y)
        assert np.abs(lhs - rhs).max() <= 1e-10


def test_make_pev_deterministic():
    a = make_pev(3, seed=11)
    b = make_pev(3, seed=11)
    assert np.array_equal(a.D_stack, b.D_stack)
    assert np.array_equal(a.b, b.b)
    assert np.array_equal(a.e_totals, b.e_totals)
    assert np.array_equal(a.unit_costs(9), b.unit_costs(9))
    c = make_pev(3, seed=12)
    assert not np.array_equal(a.b, c.b)


def test_make_pev_structure_and_slater():
    pev = make_pev(2, seed=1)
    assert pev.dims == (24, 24)
    assert pev.m == 48
    slater = pev.slater_point()
    total = sum(pev.constraint_value(i, slater[i]) for i in range(2))
    assert (total < 0).all()  # strict feasibility
    # sum matches an independent recomputation
    rng = substream(29, 5)
    xs = [rng.uniform(0, 1, 24) for _ in range(2)]
    want = sum(np.array(matvec_loops(pev.D_stack[i], xs[i])) for i in range(2)) - pev.b
    got = sum(pev.constraint_value(i, xs[i]) for i in range(2))
    assert np.allclose(got, want, atol=1e-9)


def test_make_pev_single_agent():
    pev = make_pev(1, seed=2)
    assert (pev.b >= 0).all()
    assert (pev.constraint_value(0, np.zeros(24)) <= 0).all()


def test_dimension_checks():
    pev = make_pev(1, seed=2)
    with pytest.raises(DimensionMismatch):
        pev.cost(0, 0, np.zeros(23))
    with pytest.raises(DimensionMismatch):
        pev.constraint_value(0, np.zeros(25))


def test_batch_oracles_agree_with_scalar_ones():
    pev = make_pev(3, seed=8)
    rng = substream(31, 6)
    X = rng.uniform(0, 1, (3, 24))
    g_batch = pev.batch_constraint_values(X)
    for i in range(3):
        assert np.allclose(g_batch[i], pev.constraint_value(i, X[i]), atol=1e-12)
    assert pev.round_cost_total(4, list(X)) == pytest.approx(
        sum(pev.cost(i, 4, X[i]) for i in range(3)), rel=1e-12)

    q = QuadraticTracking(3, 2, seed=9)
    X2 = rng.uniform(-1, 1, (3, 2))
    for t in (0, 1):
        sb = q.batch_cost_subgradients(t, X2)
        for i in range(3):
            assert np.allclose(sb[i], q.cost_subgradient(i, t, X2[i]))


def test_summed_cost_oracles_match_loops():
    T = 13
    q = QuadraticTracking(2, 3, seed=10)
    value, subgrad = q.summed_cost_oracle(T)
    rng = substream(37, 7)
    x = rng.uniform(-1, 1, 3)
    want_v = sum(q.cost(0, t, x) for t in range(1, T + 1))
    want_s = sum(q.cost_subgradient(0, t, x) for t in range(1, T + 1))
    assert value(0, x) == pytest.approx(want_v, rel=1e-12)
    assert np.allclose(subgrad(0, x), want_s, atol=1e-10)

    pev = make_pev(2, seed=13)
    value_p, subgrad_p = pev.summed_cost_oracle(T)
    xp = rng.uniform(0, 1, 24)
    want_vp = sum(pev.cost(1, t, xp) for t in range(1, T + 1))
    assert value_p(1, xp) == pytest.approx(want_vp, rel=1e-12)


def test_estimate_bounds_simple_cases():
    one_d = ConstantLinearProblem(
        costs=[np.array([1.0])],
        D=[np.zeros((1, 1))], b_each=[np.zeros(1)],
        sets=[Box(np.zeros(1), np.ones(1))])
    est = estimate_bounds(one_d, samples=200, seed=0)
    assert est.B_x == pytest.approx(1.0, abs=0.02)
    assert est.C_f == 1.0
    assert est.B_f <= 1.0 + 1e-12

    zero = ConstantLinearProblem(
        costs=[np.zeros(1)],
        D=[np.zeros((1, 1))], b_each=[np.zeros(1)],
        sets=[Box(np.zeros(1), np.ones(1))])
    est0 = estimate_bounds(zero, samples=50, seed=0)
    assert est0.B_f == 0.0 and est0.C_f == 0.0

    pev = make_pev(2, seed=1)
    estp = estimate_bounds(pev, samples=10, seed=0)
    for v in (estp.B_x, estp.B_f, estp.B_g, estp.C_f, estp.C_g):
        assert np.isfinite(v) and v > 0


def test_estimate_bounds_monotone_in_samples():
    pev = make_pev(2, seed=1)
    small = estimate_bounds(pev, samples=5, seed=3)
    big = estimate_bounds(pev, samples=20, seed=3)
    assert big.B_x >= small.B_x
    assert big.B_f >= small.B_f
    assert big.B_g >= small.B_g


def test_save_load_round_trip(tmp_path):
    pev = make_pev(2, seed=14)
    path = tmp_path / "pev.txt"
    save_problem(pev, path)
    back = load_problem(path)
    assert isinstance(back, PevInstance)
    assert np.array_equal(back.b, pev.b)
    assert np.array_equal(back.D_stack, pev.D_stack)
    assert np.array_equal(back.unit_costs(17), pev.unit_costs(17))
    x = substream(41, 8).uniform(0, 1, 24)
    assert np.array_equal(back.sets[0].project(x), pev.sets[0].project(x))
