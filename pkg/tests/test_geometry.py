import numpy as np
import pytest

from dopps.errors import DimensionMismatch, InfeasibleSet, NonConvergence
from dopps.geometry import (BatchProjector, Box, Halfspace, NonnegOrthant,
                            Polyhedron, project, project_dykstra)
from dopps.rng import substream

from oracles import grid_projection, projection_active_set


def unit_box(n):
    return Box(np.zeros(n), np.ones(n))


def test_orthant_clamps_negative_parts():
    assert np.array_equal(project(NonnegOrthant(2), np.array([-1.0, 2.0])),
                          np.array([0.0, 2.0]))


def test_box_clamp():
    assert np.array_equal(project(unit_box(2), np.array([2.0, 0.5])),
                          np.array([1.0, 0.5]))


def test_degenerate_box_is_constant():
    b = Box(np.array([0.3, -1.0]), np.array([0.3, -1.0]))
    assert np.array_equal(b.project(np.array([9.0, 9.0])), np.array([0.3, -1.0]))


def test_halfspace_orthogonal_drop():
    h = Halfspace(np.array([1.0, 0.0]), 0.0)
    assert np.allclose(h.project(np.array([0.4, 0.2])), [0.0, 0.2])
    assert np.array_equal(h.project(np.array([-0.4, 0.2])), [-0.4, 0.2])


def test_triangle_projection_matches_grid_oracle():
    poly = Polyhedron(np.array([[1.0, 1.0]]), np.array([1.0]), unit_box(2))
    got = poly.project(np.array([1.0, 1.0]))
    assert np.allclose(got, [0.5, 0.5], atol=1e-8)
    axes = [np.linspace(0, 1, 401)] * 2
    oracle = grid_projection(lambda x: x.sum() <= 1.0, axes, np.array([1.0, 1.0]))
    assert np.linalg.norm(got - oracle) < 5e-3  # grid resolution


def test_dykstra_box_only_reduces_to_clamp():
    got = project_dykstra(np.zeros((0, 2)), np.zeros(0), unit_box(2),
                          np.array([1.7, -0.3]))
    assert np.allclose(got, [1.0, 0.0], atol=1e-12)


def test_dykstra_single_halfspace():
    box = Box(-np.ones(2), np.ones(2))
    got = project_dykstra(np.array([[1.0, 0.0]]), np.array([0.0]), box,
                          np.array([0.4, 0.2]))
    assert np.allclose(got, [0.0, 0.2], atol=1e-9)


def test_wedge_matches_active_set_oracle():
    rng = substream(5, 1)
    rows = np.array([[1.0, 1.0], [1.0, -1.0]])
    rhs = np.array([0.5, 0.3])
    box = Box(-np.ones(2), np.ones(2))
    poly = Polyhedron(rows, rhs, box)
    for _ in range(50):
        p = rng.uniform(-2, 2, 2)
        got = poly.project(p)
        want = projection_active_set(rows, rhs, box.lower, box.upper, p)
        assert np.linalg.norm(got - want) < 1e-6


def test_random_polyhedra_match_oracle_dim3():
    rng = substream(7, 2)
    for trial in range(25):
        n = int(rng.integers(1, 4))
        k = int(rng.integers(1, 4))
        rows = rng.normal(size=(k, n))
        box = Box(-np.ones(n), np.ones(n))
        center = rng.uniform(-0.4, 0.4, n)
        rhs = rows @ center + rng.uniform(0.1, 1.0, k)  # keeps center feasible
        poly = Polyhedron(rows, rhs, box)
        p = rng.uniform(-3, 3, n)
        got = poly.project(p)
        want = projection_active_set(rows, rhs, box.lower, box.upper, p)
        assert np.linalg.norm(got - want) < 1e-6, f"trial {trial}"


def test_antiparallel_rows_become_slabs():
    rows = np.array([[1.0, 0.0], [-2.0, 0.0]])
    rhs = np.array([0.5, 0.6])  # 1-d slab -0.3 <= x0 <= 0.5
    poly = Polyhedron(rows, rhs, Box(-np.ones(2), np.ones(2)))
    assert poly._slab_rows.shape[0] == 1
    assert np.allclose(poly.project(np.array([0.9, 0.0])), [0.5, 0.0], atol=1e-9)
    assert np.allclose(poly.project(np.array([-0.9, 0.2])), [-0.3, 0.2], atol=1e-9)


def test_contradictory_slab_rejected():
    rows = np.array([[1.0, 0.0], [-1.0, 0.0]])
    rhs = np.array([-0.5, -0.5])  # x0 <= -0.5 and x0 >= 0.5
    with pytest.raises(InfeasibleSet):
        Polyhedron(rows, rhs, Box(-np.ones(2), np.ones(2)))


def test_infeasible_polyhedron_detected_by_probe():
    # two parallel planes outside the box
    rows = np.array([[1.0, 0.0]])
    rhs = np.array([-5.0])
    with pytest.raises(InfeasibleSet):
        Polyhedron(rows, rhs, unit_box(2))


def test_nonconvergence_reports_diagnostics():
    rows = np.array([[1.0, 1.0]])
    rhs = np.array([1.0])
    poly = Polyhedron(rows, rhs, unit_box(2))
    with pytest.raises(NonConvergence) as exc:
        project_dykstra(rows, rhs, unit_box(2), np.array([5.0, 5.0]),
                        tol=1e-12, max_iter=1)
    assert exc.value.residual is not None


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        unit_box(2).project(np.array([1.0, 2.0, 3.0]))
    with pytest.raises(DimensionMismatch):
        NonnegOrthant(3).project(np.zeros(2))


def test_nonexpansiveness_and_idempotence():
    rng = substream(11, 3)
    rows = np.array([[1.0, 1.0, 0.0], [0.5, -1.0, 1.0]])
    rhs = np.array([0.8, 0.5])
    box = Box(-np.ones(3), np.ones(3))
    sets = [unit_box(3), NonnegOrthant(3), Halfspace(np.array([1.0, 2.0, -1.0]), 0.7),
            Polyhedron(rows, rhs, box)]
    for cset in sets:
        for _ in range(200):
            z1 = rng.uniform(-2, 2, 3)
            z2 = rng.uniform(-2, 2, 3)
            p1, p2 = cset.project(z1), cset.project(z2)
            assert np.linalg.norm(p1 - p2) <= np.linalg.norm(z1 - z2) + 1e-9
            assert np.linalg.norm(cset.project(p1) - p1) <= 1e-9


def test_points_inside_are_fixed():
    rng = substream(13, 4)
    poly = Polyhedron(np.array([[1.0, 1.0]]), np.array([1.0]), unit_box(2))
    for _ in range(100):
        p = rng.uniform(0, 0.5, 2)  # interior of the triangle
        assert np.linalg.norm(poly.project(p) - p) <= 1e-12


def test_variational_inequality_on_samples():
    # (x - Px) . (y - Px) <= tol for feasible y
    rng = substream(17, 5)
    rows = np.array([[1.0, 1.0], [-1.0, 0.5]])
    rhs = np.array([1.0, 0.6])
    box = Box(-np.ones(2), np.ones(2))
    poly = Polyhedron(rows, rhs, box)
    feas = []
    while len(feas) < 40:
        y = rng.uniform(-1, 1, 2)
        if poly.residual(y) <= 0:
            feas.append(y)
    for _ in range(40):
        x = rng.uniform(-3, 3, 2)
        px = poly.project(x)
        for y in feas:
            assert float((x - px) @ (y - px)) <= 1e-6


def test_batch_projector_matches_individual_projection():
    rng = substream(19, 6)
    sets = []
    for _ in range(5):
        rows = np.vstack([np.tril(np.ones((3, 3))), -np.tril(np.ones((3, 3)))])
        hi = np.array([1.0, 1.8, 2.4]) * rng.uniform(0.8, 1.2)
        lo = hi * 0.5
        rhs = np.concatenate([hi, -lo])
        sets.append(Polyhedron(rows, rhs, Box(np.zeros(3), np.ones(3))))
    batch = BatchProjector(sets)
    assert batch._batched
    pts = rng.uniform(-1, 2, (5, 3))
    got = batch(pts)
    for i, s in enumerate(sets):
        assert np.array_equal(got[i], s.project(pts[i]))


def test_batch_projector_generic_fallback():
    sets = [unit_box(2), unit_box(2)]
    batch = BatchProjector(sets)
    assert not batch._batched
    pts = np.array([[2.0, -1.0], [0.5, 0.5]])
    assert np.array_equal(batch(pts), np.array([[1.0, 0.0], [0.5, 0.5]]))
