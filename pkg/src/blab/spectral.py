"""Discrete Dirichlet Schrodinger operator and its boundary spectral data."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh, ArpackNoConvergence

from .domain import BoundaryFunction, Grid, Potential, interior_norm
from .errors import EigensolverError, GridMismatch, ValidationError

log = logging.getLogger(__name__)

DENSE_LIMIT = 4096
CLUSTER_RTOL = 1e-6
RESIDUAL_RTOL = 1e-8


def neg_laplacian(grid: Grid) -> sp.csr_matrix:
    """5-point -Laplacian with homogeneous Dirichlet data eliminated."""
    def second_diff(n, h):
        e = np.ones(n)
        return sp.diags([-e[:-1], 2 * e, -e[:-1]], [-1, 0, 1]) / h ** 2

    Tx = second_diff(grid.nx, grid.hx)
    Ty = second_diff(grid.ny, grid.hy)
    L = sp.kron(sp.identity(grid.ny), Tx) + sp.kron(Ty, sp.identity(grid.nx))
    return sp.csr_matrix(L)


@dataclass(frozen=True)
class DiscreteOperator:
    matrix: sp.csr_matrix = field(repr=False)
    grid: Grid
    potential: Potential = field(repr=False)

    @property
    def sup_bound(self) -> float:
        return self.potential.sup_bound

    def rayleigh(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(v @ (self.matrix @ v) / (v @ v))


def assemble(grid: Grid, q: Potential) -> DiscreteOperator:
    if q.grid != grid:
        raise GridMismatch("potential sampled on a different grid")
    A = neg_laplacian(grid) + sp.diags(q.values)
    return DiscreteOperator(sp.csr_matrix(A), grid, q)


_ONE_SIDED = {
    2: np.array([-3.0, 4.0, -1.0]) / 2.0,
    4: np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0,
}


def normal_trace(phi, grid: Grid, boundary=None, order: int = 2):
    """Outward normal derivative of interior field(s) at the boundary samples.

    One-sided difference along the inward normal.  With the default
    ``order=2`` and zero boundary values this is
    ``d_nu phi ~ -(4 phi_1 - phi_2) / (2h)``.  ``boundary`` supplies the
    Dirichlet values when they are not zero; ``order=4`` uses five points and
    needs four interior nodes per axis.  ``phi`` may be a flat vector
    (returns a :class:`BoundaryFunction`) or an ``(N, K)`` stack of columns
    (returns an ``(n_boundary, K)`` array).
    """
    if order not in _ONE_SIDED:
        raise ValidationError(f"unsupported stencil order {order}")
    need = len(_ONE_SIDED[order]) - 1
    if grid.nx < need or grid.ny < need:
        raise ValidationError(f"order-{order} normal trace needs at least {need} "
                              "interior nodes per axis")
    phi = np.asarray(phi)
    if phi.shape[0] != grid.size:
        raise GridMismatch(f"field has {phi.shape[0]} nodes, grid has {grid.size}")
    coef = _ONE_SIDED[order]
    step = grid.second - grid.first
    h = grid.hnormal if phi.ndim == 1 else grid.hnormal[:, None]
    acc = 0.0
    for m in range(1, need + 1):
        acc = acc + coef[m] * phi[grid.first + (m - 1) * step]
    if boundary is not None:
        b = boundary.values if isinstance(boundary, BoundaryFunction) else np.asarray(boundary)
        acc = acc + coef[0] * b
    psi = -acc / h
    if phi.ndim == 1:
        return BoundaryFunction(grid, psi)
    return psi


@dataclass(frozen=True)
class EigenPair:
    lam: float
    phi: np.ndarray | None = field(repr=False)
    psi: BoundaryFunction = field(repr=False)


@dataclass(frozen=True)
class BoundarySpectralData:
    """Lowest K eigenpairs of A_q in nondecreasing order.

    ``psis`` holds the Neumann traces column-wise, shape ``(n_boundary, K)``;
    ``phis`` (interior eigenvectors, unit discrete L2 norm) may be dropped
    once only boundary data is needed.  ``next_lambda`` is the first
    eigenvalue past the window when the solver computed it; it tells whether
    the top cluster is cut by the truncation.
    """

    grid: Grid
    lambdas: np.ndarray
    psis: np.ndarray = field(repr=False)
    sup_bound: float
    phis: np.ndarray | None = field(default=None, repr=False)
    q_min: float | None = None
    next_lambda: float | None = None

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        psis = np.asarray(self.psis)
        if psis.shape != (self.grid.n_boundary, lam.size):
            raise ValidationError(f"psis has shape {psis.shape}, expected "
                                  f"{(self.grid.n_boundary, lam.size)}")
        if np.any(np.diff(lam) < 0):
            raise ValidationError("eigenvalues must be nondecreasing")
        if self.phis is not None and np.shape(self.phis) != (self.grid.size, lam.size):
            raise ValidationError("phis shape does not match")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "psis", psis)

    def __len__(self):
        return self.lambdas.size

    @property
    def K(self) -> int:
        return self.lambdas.size

    def __getitem__(self, n: int) -> EigenPair:
        phi = None if self.phis is None else self.phis[:, n]
        return EigenPair(float(self.lambdas[n]), phi, BoundaryFunction(self.grid, self.psis[:, n]))

    def __iter__(self):
        return (self[n] for n in range(len(self)))

    def truncate(self, K: int) -> "BoundarySpectralData":
        if not 1 <= K <= len(self):
            raise ValidationError(f"cannot truncate {len(self)} pairs to {K}")
        phis = None if self.phis is None else self.phis[:, :K]
        nxt = self.lambdas[K] if K < len(self) else self.next_lambda
        return BoundarySpectralData(self.grid, self.lambdas[:K], self.psis[:, :K],
                                    self.sup_bound, phis, self.q_min, nxt)

    def boundary_only(self) -> "BoundarySpectralData":
        return BoundarySpectralData(self.grid, self.lambdas, self.psis, self.sup_bound,
                                    None, self.q_min, self.next_lambda)

    def top_cluster_truncated(self, rtol: float = CLUSTER_RTOL) -> bool:
        """True when the top cluster continues past the window (unknown counts as False)."""
        if self.next_lambda is None:
            return False
        top = self.lambdas[-1]
        return bool(abs(self.next_lambda - top) <= rtol * max(abs(top), 1.0))

    def replace(self, index: int, lam: float, psi) -> "BoundarySpectralData":
        """Copy with pair ``index`` swapped out; the list is re-sorted by lambda."""
        lams = self.lambdas.copy()
        psis = self.psis.astype(np.result_type(self.psis, np.asarray(psi))).copy()
        lams[index] = lam
        psis[:, index] = psi.values if isinstance(psi, BoundaryFunction) else psi
        order = np.argsort(lams, kind="stable")
        return BoundarySpectralData(self.grid, lams[order], psis[:, order], self.sup_bound,
                                    None, self.q_min)

    def psi_norms(self) -> np.ndarray:
        return np.sqrt(np.einsum("k,kn->n", self.grid.weights, np.abs(self.psis) ** 2))

    def clusters(self, rtol: float = CLUSTER_RTOL) -> list[range]:
        return clusters(self.lambdas, rtol)

    # -- directory serialisation --------------------------------------------
    def save(self, out: Path | str):
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        meta = {"grid": self.grid.to_dict(), "M": self.sup_bound, "K": self.K,
                "next_lambda": self.next_lambda,
                "boundary_order": ["bottom", "right", "top", "left"]}
        (out / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
        lines = ["n,lambda"] + [f"{n + 1},{lam:.17g}" for n, lam in enumerate(self.lambdas)]
        (out / "lambdas.csv").write_text("\n".join(lines) + "\n")
        for n in range(self.K):
            (out / f"psi_{n + 1}.csv").write_text(self[n].psi.to_csv())

    @classmethod
    def load(cls, src: Path | str) -> "BoundarySpectralData":
        src = Path(src)
        meta = json.loads((src / "meta.json").read_text())
        grid = Grid.from_dict(meta["grid"])
        rows = (src / "lambdas.csv").read_text().split("\n")[1:]
        lams = np.array([float(r.split(",")[1]) for r in rows if r.strip()])
        psis = np.column_stack([
            BoundaryFunction.from_csv((src / f"psi_{n + 1}.csv").read_text(), grid).values
            for n in range(lams.size)])
        nxt = meta.get("next_lambda")
        return cls(grid, lams, psis, float(meta["M"]),
                   next_lambda=None if nxt is None else float(nxt))


def clusters(lambdas, rtol: float = CLUSTER_RTOL) -> list[range]:
    """Group consecutive eigenvalues with |l_i - l_j| <= rtol (1 + |l_i|)."""
    lambdas = np.asarray(lambdas)
    groups, start = [], 0
    for n in range(1, lambdas.size + 1):
        if n == lambdas.size or lambdas[n] - lambdas[n - 1] > rtol * (1 + abs(lambdas[n - 1])):
            groups.append(range(start, n))
            start = n
    return groups


def _fix_sign(vecs: np.ndarray) -> np.ndarray:
    """First component exceeding 1e-8 of the column max is made positive."""
    out = vecs.copy()
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        big = np.flatnonzero(np.abs(col) > 1e-8 * np.max(np.abs(col)))
        if big.size and col[big[0]] < 0:
            out[:, k] = -col
    return out


def _solve_dense(A: sp.spmatrix, K: int):
    w, v = scipy.linalg.eigh(A.toarray(), subset_by_index=[0, K - 1])
    return w, v


def _solve_lanczos(A: sp.spmatrix, K: int, shift: float):
    try:
        w, v = eigsh(sp.csc_matrix(A), k=K, sigma=shift, which="LM", tol=1e-12)
    except ArpackNoConvergence as exc:
        raise EigensolverError(f"ARPACK did not converge: {exc}") from exc
    order = np.argsort(w)
    w, v = w[order], v[:, order]
    # ARPACK can hand back a non-orthonormal basis inside tight clusters
    for c in clusters(w):
        if len(c) > 1:
            v[:, c.start:c.stop], _ = np.linalg.qr(v[:, c.start:c.stop])
    return w, v


def eigenpairs(op: DiscreteOperator, K: int, method: str = "auto",
               keep_interior: bool = True) -> BoundarySpectralData:
    """K lowest eigenpairs of ``op`` as boundary spectral data.

    ``method`` is ``"dense"``, ``"lanczos"`` or ``"auto"`` (dense up to
    4096 unknowns).  Eigenvectors are scaled to unit cell-area weighted norm
    and sign-fixed so their first significant component is positive.
    """
    grid = op.grid
    N = grid.size
    if not 1 <= K <= N:
        raise ValidationError(f"K must lie in [1, {N}], got {K}")
    if method == "auto":
        method = "dense" if N <= DENSE_LIMIT or K > N // 3 else "lanczos"
    # one extra pair, when it exists, shows whether the top cluster is cut
    Kx = min(K + 1, N)
    if method == "dense":
        w, v = _solve_dense(op.matrix, Kx)
    elif method == "lanczos":
        w, v = _solve_lanczos(op.matrix, Kx, shift=-(op.sup_bound + 1.0))
    else:
        raise ValidationError(f"unknown eigensolver method {method!r}")
    next_lambda = float(w[K]) if Kx > K else None
    w, v = w[:K], v[:, :K]

    v = _fix_sign(v)
    phis = v / np.sqrt(grid.cell_area)
    resid = np.linalg.norm(op.matrix @ v - v * w, axis=0)
    scale = np.maximum(np.abs(w), 1.0)
    if np.any(resid > RESIDUAL_RTOL * scale):
        raise EigensolverError("eigenpair residuals exceed tolerance", residuals=resid / scale)
    psis = normal_trace(phis, grid)
    return BoundarySpectralData(grid, w, psis, op.sup_bound,
                                phis if keep_interior else None,
                                q_min=float(np.min(op.potential.values)),
                                next_lambda=next_lambda)


def boundary_spectral_data(grid: Grid, q: Potential, K: int, **kw) -> BoundarySpectralData:
    return eigenpairs(assemble(grid, q), K, **kw)


def weyl_fit(bsd: BoundarySpectralData, skip: int = 5, d: int = 2):
    """Tightest ``(c_low, c_high)`` with c_low n^(2/d) <= lambda_n <= c_high n^(2/d), n > skip."""
    if len(bsd) < 20:
        raise ValidationError("weyl_fit needs at least 20 eigenpairs")
    n = np.arange(1, len(bsd) + 1)
    lam = bsd.lambdas[skip:]
    if bsd.q_min is not None and bsd.q_min >= 0 and np.any(lam <= 0):
        raise ValidationError("non-positive eigenvalue past the fit window with q >= 0")
    ratio = lam / n[skip:] ** (2.0 / d)
    return float(ratio.min()), float(ratio.max())


def orthonormality_defect(bsd: BoundarySpectralData) -> float:
    """max |Gram - I| of the retained interior eigenvectors."""
    G = bsd.grid.cell_area * bsd.phis.T @ bsd.phis
    return float(np.max(np.abs(G - np.eye(G.shape[0]))))


def relative_residuals(op: DiscreteOperator, bsd: BoundarySpectralData) -> np.ndarray:
    R = op.matrix @ bsd.phis - bsd.phis * bsd.lambdas
    return np.linalg.norm(R, axis=0) / (np.maximum(np.abs(bsd.lambdas), 1.0)
                                        * np.linalg.norm(bsd.phis, axis=0))


def phi_norm(phi, grid: Grid) -> float:
    return interior_norm(phi, grid)
