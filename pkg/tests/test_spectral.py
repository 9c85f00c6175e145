import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blab import build_grid, sample_potential
from blab.errors import ValidationError
from blab.spectral import (BoundarySpectralData, assemble, boundary_spectral_data, clusters,
                           eigenpairs, normal_trace, orthonormality_defect, relative_residuals,
                           weyl_fit)
from oracles import LAMBDA1_NX32_FROZEN, discrete_eigenvalues


def test_dense_matches_exact_discrete_spectrum(grid32, bsd0_32):
    exact = discrete_eigenvalues(grid32, 200)
    assert np.allclose(bsd0_32.lambdas, exact, rtol=1e-11)
    assert bsd0_32.lambdas[0] == pytest.approx(LAMBDA1_NX32_FROZEN, rel=1e-13)


def test_lanczos_agrees_with_dense(grid16):
    q = sample_potential(lambda x, y: np.sin(3 * x) * y, grid16, 1.0)
    op = assemble(grid16, q)
    a = eigenpairs(op, 20, method="dense")
    b = eigenpairs(op, 20, method="lanczos")
    assert np.allclose(a.lambdas, b.lambdas, rtol=1e-10)
    # traces agree up to rotations inside clusters: compare projectors
    for c in a.clusters():
        Pa = a.psis[:, c.start:c.stop]
        Pb = b.psis[:, c.start:c.stop]
        assert np.allclose(Pa @ Pa.T, Pb @ Pb.T, atol=1e-7 * np.abs(Pa).max() ** 2)


def test_eigenvectors_orthonormal_and_accurate(grid32, q0_32, bsd0_32):
    assert orthonormality_defect(bsd0_32) < 1e-10
    assert relative_residuals(assemble(grid32, q0_32), bsd0_32).max() < 1e-10


def test_sign_gauge(bsd0_32):
    for n in range(len(bsd0_32)):
        phi = bsd0_32.phis[:, n]
        first = phi[np.abs(phi) > 1e-8 * np.abs(phi).max()][0]
        assert first > 0


def test_clusters_group_degenerate_levels(bsd0_32):
    sizes = [len(c) for c in bsd0_32.clusters()[:4]]
    assert sizes == [1, 2, 1, 2]


@given(st.lists(st.floats(min_value=0, max_value=1e3), min_size=1, max_size=40))
@settings(max_examples=60, deadline=None)
def test_clusters_partition_sorted_values(vals):
    lam = np.sort(np.array(vals))
    groups = clusters(lam)
    assert groups[0].start == 0 and groups[-1].stop == lam.size
    assert all(a.stop == b.start for a, b in zip(groups, groups[1:]))
    for a, b in zip(groups, groups[1:]):
        assert lam[b.start] - lam[a.stop - 1] > 1e-6 * (1 + abs(lam[a.stop - 1]))


def test_shift_moves_spectrum_exactly(grid16):
    q = sample_potential(lambda x, y: x * y, grid16, 1.0)
    a = boundary_spectral_data(grid16, q, 30)
    b = boundary_spectral_data(grid16, q + 2.5, 30)
    assert np.allclose(b.lambdas - a.lambdas, 2.5, rtol=0, atol=1e-11)


def test_normal_trace_orders(grid16):
    """d_nu of sin(pi x) sin(pi y) on the bottom edge is -pi sin(pi x)."""
    errs = {}
    for n in (16, 32, 64):
        g = build_grid(1, 1, n, n)
        X, Y = g.mesh()
        u = np.sin(np.pi * X) * np.sin(np.pi * Y)
        exact = np.zeros(g.n_boundary)
        for e, coord in ((0, g.bx), (2, g.bx), (1, g.by), (3, g.by)):
            exact[g.edge == e] = -np.pi * np.sin(np.pi * coord[g.edge == e])
        for order in (2, 4):
            errs[(n, order)] = np.abs(normal_trace(u, g, order=order).values - exact).max()
    assert errs[(32, 2)] / errs[(64, 2)] == pytest.approx(4, rel=0.1)
    assert errs[(32, 4)] / errs[(64, 4)] > 12


def test_normal_trace_uses_boundary_values(grid16):
    g = grid16
    X, Y = g.mesh()
    u = 1 + 0 * X
    flux = normal_trace(u, g, np.ones(g.n_boundary))
    assert np.allclose(flux.values, 0, atol=1e-12)


def test_save_load_roundtrip(tmp_path, grid16):
    q = sample_potential(lambda x, y: 0 * x, grid16, 1.0)
    b = boundary_spectral_data(grid16, q, 12)
    b.save(tmp_path / "bsd")
    back = BoundarySpectralData.load(tmp_path / "bsd")
    assert np.array_equal(back.lambdas, b.lambdas)
    assert np.array_equal(back.psis, b.psis)
    assert sorted(p.name for p in (tmp_path / "bsd").iterdir())[:3] == \
        ["lambdas.csv", "meta.json", "psi_1.csv"]


def test_truncate_replace(bsd0_32):
    t = bsd0_32.truncate(10)
    assert len(t) == 10 and t.phis.shape[1] == 10
    r = t.replace(0, 1000.0, t.psis[:, 0])
    assert r.lambdas[-1] == 1000.0 and np.all(np.diff(r.lambdas) >= 0)
    with pytest.raises(ValidationError):
        t.truncate(11)


def test_bsd_rejects_unsorted(grid16):
    with pytest.raises(ValidationError):
        BoundarySpectralData(grid16, np.array([2.0, 1.0]), np.zeros((grid16.n_boundary, 2)), 0)


def test_weyl_constants_bracket(bsd0_32):
    lo, hi = weyl_fit(bsd0_32)
    n = np.arange(6, 201)
    assert np.all(lo * n <= bsd0_32.lambdas[5:] + 1e-9)
    assert np.all(bsd0_32.lambdas[5:] <= hi * n + 1e-9)
    # Weyl: lambda_n ~ 4 pi n / area
    assert lo < 4 * np.pi < hi * 1.2


def test_K_range(grid16):
    q = sample_potential(lambda x, y: 0 * x, grid16, 1.0)
    with pytest.raises(ValidationError):
        boundary_spectral_data(grid16, q, 0)
    with pytest.raises(ValidationError):
        boundary_spectral_data(grid16, q, grid16.size + 1)
