import numpy as np
import pytest

from blab import BoundaryFunction, ShiftedProblem, solve_direct, solve_series
from blab.bvp import (ShiftedSolver, boundary_rhs, check_resonance, decay_profile,
                      neumann_difference, potential_dimming, series_coefficients)
from blab.errors import GridMismatch, ResonanceError, ValidationError
from blab.spectral import assemble


def test_linear_data_reproduced_exactly(grid32, q0_32):
    X, Y = grid32.mesh()
    f = BoundaryFunction.from_callable(lambda x, y: 1 + 2 * x - y, grid32)
    u = solve_direct(ShiftedProblem(grid32, q0_32, 0.0, f))
    assert np.allclose(u.values, 1 + 2 * X - Y, atol=1e-12)


def test_discrete_exponential_is_exact(grid32, q0_32):
    a, h = 3.0, grid32.hx
    lam = -2.0 / h ** 2 * (np.cosh(a * h) - 1.0)
    f = BoundaryFunction.from_callable(lambda x, y: np.exp(a * x) + 0 * y, grid32)
    u = solve_direct(ShiftedProblem(grid32, q0_32, lam, f))
    X, _ = grid32.mesh()
    assert np.allclose(u.values, np.exp(a * X), rtol=1e-11)


def test_complex_shift_solution_is_complex(grid32, q1_32):
    f = BoundaryFunction.from_callable(lambda x, y: x + 0 * y, grid32)
    u = solve_direct(ShiftedProblem(grid32, q1_32, 10 + 5j, f))
    assert np.iscomplexobj(u.values) and np.abs(u.values.imag).max() > 0
    # residual of the discrete equation
    A = assemble(grid32, q1_32).matrix
    r = A @ u.values - (10 + 5j) * u.values - boundary_rhs(grid32, f)
    assert np.abs(r).max() < 1e-9 * np.abs(boundary_rhs(grid32, f)).max()


def test_resonance_detected(grid32, q0_32, bsd0_32):
    f = BoundaryFunction.from_callable(lambda x, y: x + 0 * y, grid32)
    with pytest.raises(ResonanceError):
        solve_direct(ShiftedProblem(grid32, q0_32, bsd0_32.lambdas[0], f), bsd0_32.lambdas)
    with pytest.raises(ResonanceError):
        check_resonance(bsd0_32.lambdas[3] * (1 + 1e-12), bsd0_32.lambdas)
    check_resonance(bsd0_32.lambdas[3] + 1.0, bsd0_32.lambdas)


def test_resonance_without_spectrum_uses_conditioning(grid32, q0_32, bsd0_32):
    with pytest.raises(ResonanceError):
        ShiftedSolver(assemble(grid32, q0_32), bsd0_32.lambdas[0])


def test_grid_mismatch(grid32, grid16, q0_32):
    f = BoundaryFunction.from_callable(lambda x, y: x + 0 * y, grid16)
    with pytest.raises(GridMismatch):
        ShiftedProblem(grid32, q0_32, -1.0, f)


def test_series_error_monotone_in_K(grid32, q0_32, bsd0_32):
    f = BoundaryFunction.from_callable(lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y) + x,
                                       grid32)
    ud = solve_direct(ShiftedProblem(grid32, q0_32, -50.0, f))
    errs = [(solve_series(bsd0_32, f, -50.0, K) - ud).norm() / ud.norm()
            for K in (25, 50, 100, 200)]
    assert all(a > b for a, b in zip(errs, errs[1:]))


def test_series_coefficients_formula(grid32, bsd0_32):
    f = BoundaryFunction.from_callable(lambda x, y: x + 0 * y, grid32)
    c = series_coefficients(bsd0_32, f, -50.0, 5)
    w = grid32.weights
    expected = [(w * f.values) @ bsd0_32.psis[:, n] / (-50.0 - bsd0_32.lambdas[n])
                for n in range(5)]
    assert np.allclose(c, expected, rtol=1e-14)


def test_series_needs_interior_vectors(grid32, bsd0_32):
    f = BoundaryFunction.from_callable(lambda x, y: x + 0 * y, grid32)
    with pytest.raises(ValidationError):
        solve_series(bsd0_32.boundary_only(), f, -50.0)


def test_neumann_difference_symmetry(grid32, bsd0_32):
    f = BoundaryFunction.from_callable(lambda x, y: x + 0 * y, grid32)
    a = neumann_difference(bsd0_32, f, -30.0, -80.0)
    b = neumann_difference(bsd0_32, f, -80.0, -30.0)
    assert np.allclose(a.values, -b.values, rtol=1e-13)
    assert np.all(neumann_difference(bsd0_32, f, -30.0, -30.0).values == 0)


def test_decay_and_dimming_decrease(grid32, q0_32, q1_32):
    f = BoundaryFunction.from_callable(lambda x, y: 1 + 0 * x, grid32)
    d = decay_profile(grid32, q1_32, f, [-1e2, -1e3, -1e4])
    m = potential_dimming(grid32, q1_32, q0_32, f, [-1e2, -1e3, -1e4])
    assert d[0] > d[1] > d[2] and m[0] > m[1] > m[2]
    with pytest.raises(ValidationError):
        decay_profile(grid32, q1_32, f, [-1.5])
