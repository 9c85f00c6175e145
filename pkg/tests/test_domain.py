import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blab import (BoundaryFunction, Potential, build_grid, boundary_inner, interior_inner,
                  interior_norm, sample_potential)
from blab.domain import EDGES, Grid
from blab.errors import BoundViolation, GridMismatch, ValidationError

dims = st.integers(min_value=2, max_value=24)
lengths = st.floats(min_value=0.3, max_value=3.0)


@given(lengths, lengths, dims, dims)
@settings(max_examples=40, deadline=None)
def test_boundary_weights_sum_to_perimeter(Lx, Ly, nx, ny):
    g = build_grid(Lx, Ly, nx, ny)
    assert g.n_boundary == 2 * (nx + ny)
    assert np.isclose(g.weights.sum(), g.perimeter, rtol=1e-12)


@given(lengths, lengths, dims, dims)
@settings(max_examples=40, deadline=None)
def test_boundary_ordering_is_counterclockwise(Lx, Ly, nx, ny):
    g = build_grid(Lx, Ly, nx, ny)
    assert np.all(np.diff(g.arclength) > 0)
    assert list(dict.fromkeys(g.edge.tolist())) == [0, 1, 2, 3]
    # no corner samples
    corners = {(0, 0), (Lx, 0), (Lx, Ly), (0, Ly)}
    pts = {(round(x, 12), round(y, 12)) for x, y in zip(g.bx, g.by)}
    assert not pts & {(round(a, 12), round(b, 12)) for a, b in corners}


def test_inward_neighbours_are_adjacent(grid16):
    g = grid16
    X, Y = g.mesh()
    d1 = np.hypot(X[g.first] - g.bx, Y[g.first] - g.by)
    d2 = np.hypot(X[g.second] - g.bx, Y[g.second] - g.by)
    assert np.allclose(d1, g.hnormal) and np.allclose(d2, 2 * g.hnormal)


def test_edge_slices_match_edge_labels(grid16):
    for k, name in enumerate(EDGES):
        assert np.all(grid16.edge[grid16.edge_slice(name)] == k)


def test_index_roundtrip(grid16):
    for k in (0, 5, 17, grid16.size - 1):
        assert grid16.index(*grid16.unindex(k)) == k
    with pytest.raises(IndexError):
        grid16.index(16, 0)


def test_grid_validation():
    with pytest.raises(ValidationError):
        build_grid(-1, 1, 4, 4)
    with pytest.raises(ValidationError):
        build_grid(1, 1, 1, 4)
    g = build_grid(2, 1, 5, 3)
    assert Grid.from_dict(g.to_dict()) == g


def test_potential_bound_enforced(grid16):
    with pytest.raises(BoundViolation):
        sample_potential(lambda x, y: 2 + 0 * x, grid16, 1.0)
    q = sample_potential(lambda x, y: x, grid16, 1.0)
    assert q.max_abs <= 1.0
    assert q.boundary_values is not None and q.boundary_values.size == grid16.n_boundary


def test_potential_shift_and_json(grid16):
    q = sample_potential(lambda x, y: np.sin(np.pi * x), grid16, 1.0)
    r = q + 0.5
    assert r.sup_bound == 1.5 and np.allclose(r.values - q.values, 0.5)
    back = Potential.from_json(q.to_json())
    assert back.grid == q.grid and back.sup_bound == q.sup_bound
    assert np.array_equal(back.values, q.values)
    assert np.array_equal(back.boundary_values, q.boundary_values)
    with pytest.raises(GridMismatch):
        q - sample_potential(lambda x, y: 0 * x, build_grid(1, 1, 8, 8), 1.0)


def test_potential_values_are_read_only(grid16):
    q = sample_potential(lambda x, y: 0 * x, grid16, 1.0)
    with pytest.raises(ValueError):
        q.values[0] = 1.0


def test_boundary_function_csv_roundtrip(grid16):
    f = BoundaryFunction.from_callable(lambda x, y: np.exp(1j * x) + y, grid16)
    back = BoundaryFunction.from_csv(f.to_csv(), grid16)
    assert np.allclose(back.values, f.values, rtol=0, atol=1e-15)
    with pytest.raises(GridMismatch):
        BoundaryFunction.from_csv(f.to_csv().replace("bottom", "top", 1), grid16)
    with pytest.raises(ValidationError):
        BoundaryFunction.from_csv(f.to_csv(), build_grid(1, 1, 16, 15))


def test_on_edges_vanishes_elsewhere(grid16):
    f = BoundaryFunction.on_edges(lambda x, y: 1 + 0 * x, grid16, "bottom", "left")
    mask = grid16.edge_mask("bottom", "left")
    assert np.all(f.values[mask] == 1) and np.all(f.values[~mask] == 0)


def test_inner_products(grid16):
    one = BoundaryFunction(grid16, np.ones(grid16.n_boundary))
    assert np.isclose(boundary_inner(one, one, grid16), grid16.perimeter)
    assert np.isclose(one.norm() ** 2, grid16.perimeter)
    u = np.ones(grid16.size)
    assert np.isclose(interior_inner(u, u, grid16), grid16.size * grid16.cell_area)
    assert np.isclose(interior_norm(2 * u, grid16) ** 2, 4 * grid16.size * grid16.cell_area)


def test_boundary_inner_is_sesquilinear(grid16, rng):
    n = grid16.n_boundary
    a = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    assert np.isclose(boundary_inner(a, b, grid16), np.conj(boundary_inner(b, a, grid16)))
    assert np.isclose(boundary_inner(1j * a, b, grid16), 1j * boundary_inner(a, b, grid16))
