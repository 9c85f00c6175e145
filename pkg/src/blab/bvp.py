"""The shifted Dirichlet problem (-Lap + q - lam) u = 0, u = f on the boundary.

Two independent routes: a sparse LU solve with the boundary data moved into
the right-hand side through the 5-point stencil, and the eigenfunction series
built from boundary spectral data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, onenormest, splu

from .domain import BoundaryFunction, Grid, Potential, interior_norm
from .errors import GridMismatch, ResonanceError, ValidationError
from .spectral import BoundarySpectralData, DiscreteOperator, assemble, normal_trace

RESONANCE_RTOL = 1e-9
DEFAULT_K = 200


@dataclass(frozen=True)
class ComplexField:
    """Interior values plus (optionally) the Dirichlet data they were solved with."""

    grid: Grid
    values: np.ndarray = field(repr=False)
    boundary: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values).ravel()
        if v.size != self.grid.size:
            raise ValidationError("field size does not match grid")
        if not np.all(np.isfinite(v)):
            raise ValidationError("field has non-finite entries")
        object.__setattr__(self, "values", v)
        if self.boundary is not None:
            b = np.asarray(self.boundary).ravel()
            if b.size != self.grid.n_boundary:
                raise ValidationError("boundary data size does not match grid")
            object.__setattr__(self, "boundary", b)

    def norm(self) -> float:
        return interior_norm(self.values, self.grid)

    def normal_trace(self, order: int = 2) -> BoundaryFunction:
        return normal_trace(self.values, self.grid, self.boundary, order)

    def __sub__(self, other):
        if self.boundary is None and other.boundary is None:
            b = None
        else:
            zero = np.zeros(self.grid.n_boundary)
            b = (zero if self.boundary is None else self.boundary) - \
                (zero if other.boundary is None else other.boundary)
        return ComplexField(self.grid, self.values - other.values, b)


@dataclass(frozen=True)
class ShiftedProblem:
    grid: Grid
    q: Potential
    lam: complex
    f: BoundaryFunction

    def __post_init__(self):
        if self.q.grid != self.grid or self.f.grid != self.grid:
            raise GridMismatch("problem data live on different grids")


def boundary_rhs(grid: Grid, f) -> np.ndarray:
    """Stencil coupling of Dirichlet data into the interior equations.

    Accepts a BoundaryFunction, a boundary vector or an ``(n_boundary, m)``
    stack of boundary vectors.
    """
    fv = f.values if isinstance(f, BoundaryFunction) else np.asarray(f)
    coef = 1.0 / grid.hnormal ** 2
    shape = (grid.size,) + fv.shape[1:]
    rhs = np.zeros(shape, dtype=np.result_type(fv, float))
    contrib = fv * (coef if fv.ndim == 1 else coef[:, None])
    np.add.at(rhs, grid.first, contrib)
    return rhs


def _resonance_band(lam_n) -> float:
    return RESONANCE_RTOL * (1.0 + abs(lam_n))


def check_resonance(lam: complex, eigenvalues) -> None:
    """Raise if ``lam`` lies within the resonance band of a computed eigenvalue."""
    ev = np.asarray(eigenvalues, dtype=float)
    if ev.size == 0:
        return
    d = np.abs(lam - ev)
    k = int(np.argmin(d))
    if d[k] <= _resonance_band(ev[k]):
        raise ResonanceError(lam, float(ev[k]), float(d[k]))


class ShiftedSolver:
    """Sparse LU of ``A_q - lam`` reusable across boundary data.

    Not thread-safe: one instance per worker.
    """

    def __init__(self, op: DiscreteOperator, lam: complex, eigenvalues=None):
        self.op = op
        self.lam = complex(lam)
        if eigenvalues is not None:
            check_resonance(self.lam, eigenvalues)
        real_shift = self.lam.imag == 0.0
        N = op.grid.size
        shift = self.lam.real if real_shift else self.lam
        M = sp.csc_matrix(op.matrix - shift * sp.identity(N, format="csr"))
        try:
            self._lu = splu(M)
        except RuntimeError as exc:  # exactly singular factor
            raise ResonanceError(self.lam) from exc
        # a real shift below -M cannot touch the spectrum (min-max)
        near_real = abs(self.lam.imag) <= _resonance_band(self.lam)
        if near_real and eigenvalues is None and self.lam.real >= -op.sup_bound:
            self._check_conditioning()

    def _check_conditioning(self):
        N = self.op.grid.size
        dtype = self._lu.L.dtype
        inv = LinearOperator((N, N), matvec=self._lu.solve,
                             rmatvec=lambda x: self._lu.solve(x, trans="H"), dtype=dtype)
        est = onenormest(inv)
        if not np.isfinite(est) or 1.0 / est <= _resonance_band(self.lam):
            raise ResonanceError(self.lam, None, None)

    def solve_rhs(self, rhs: np.ndarray) -> np.ndarray:
        if np.iscomplexobj(rhs) and self._lu.L.dtype.kind != "c":
            return self._lu.solve(np.ascontiguousarray(rhs.real)) + \
                1j * self._lu.solve(np.ascontiguousarray(rhs.imag))
        return self._lu.solve(rhs)

    def solve(self, f) -> np.ndarray:
        """Interior solution for Dirichlet data ``f`` (vector or stack)."""
        return self.solve_rhs(boundary_rhs(self.op.grid, f))


def solve_direct(p: ShiftedProblem, eigenvalues=None) -> ComplexField:
    op = assemble(p.grid, p.q)
    u = ShiftedSolver(op, p.lam, eigenvalues).solve(p.f)
    return ComplexField(p.grid, u, p.f.values)


def _coefficients(bsd: BoundarySpectralData, f, K: int):
    fv = f.values if isinstance(f, BoundaryFunction) else np.asarray(f)
    w = bsd.grid.weights
    return (w * fv) @ np.conj(bsd.psis[:, :K])


def _check_K(bsd: BoundarySpectralData, K):
    K = len(bsd) if K is None else K
    if not 1 <= K <= len(bsd):
        raise ValidationError(f"truncation K={K} exceeds the {len(bsd)} available pairs")
    return K


def series_coefficients(bsd: BoundarySpectralData, f: BoundaryFunction, lam: complex,
                        K: int | None = None) -> np.ndarray:
    """``<f, psi_n> / (lam - lam_n)`` for n < K."""
    K = _check_K(bsd, K)
    check_resonance(lam, bsd.lambdas[:K])
    return _coefficients(bsd, f, K) / (lam - bsd.lambdas[:K])


def solve_series(bsd: BoundarySpectralData, f: BoundaryFunction, lam: complex,
                 K: int | None = DEFAULT_K) -> ComplexField:
    if bsd.phis is None:
        raise ValidationError("series route needs the interior eigenvectors")
    if f.grid != bsd.grid:
        raise GridMismatch("boundary data and spectral data live on different grids")
    K = min(K, len(bsd)) if K is not None else len(bsd)
    c = series_coefficients(bsd, f, lam, K)
    return ComplexField(bsd.grid, bsd.phis[:, :K] @ c)


def decay_profile(grid: Grid, q: Potential, f: BoundaryFunction, lambdas) -> list[float]:
    """``||u_lam||_{L2}`` along real shifts below ``-(1+M)``."""
    lambdas = [float(l) for l in lambdas]
    if any(l >= -(1.0 + q.sup_bound) for l in lambdas):
        raise ValidationError("decay sweep needs every lambda < -(1+M)")
    op = assemble(grid, q)
    return [interior_norm(ShiftedSolver(op, l).solve(f), grid) for l in lambdas]


def neumann_difference(bsd: BoundarySpectralData, f: BoundaryFunction, lam: complex,
                       mu: complex, K: int | None = None) -> BoundaryFunction:
    """Series for the Neumann trace of ``u_lam - u_mu`` truncated at K."""
    K = _check_K(bsd, K)
    check_resonance(lam, bsd.lambdas[:K])
    check_resonance(mu, bsd.lambdas[:K])
    if lam == mu:
        return BoundaryFunction(bsd.grid, np.zeros(bsd.grid.n_boundary, complex))
    ln = bsd.lambdas[:K]
    c = (mu - lam) * _coefficients(bsd, f, K) / ((lam - ln) * (mu - ln))
    return BoundaryFunction(bsd.grid, bsd.psis[:, :K] @ c)


def potential_dimming(grid: Grid, q1: Potential, q2: Potential, f: BoundaryFunction,
                      lambdas) -> list[float]:
    """``||d_nu u_{1,lam} - d_nu u_{2,lam}||`` on the boundary, per shift."""
    bound = 1.0 + max(q1.sup_bound, q2.sup_bound)
    lambdas = [float(l) for l in lambdas]
    if any(l >= -bound for l in lambdas):
        raise ValidationError("dimming sweep needs every lambda < -(1 + max(M1, M2))")
    op1, op2 = assemble(grid, q1), assemble(grid, q2)
    out = []
    for l in lambdas:
        w = ShiftedSolver(op1, l).solve(f) - ShiftedSolver(op2, l).solve(f)
        out.append(normal_trace(w, grid).norm())
    return out
