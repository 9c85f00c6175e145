"""Diffusion with boundary heating, its partial DN map at one time, and spectral recovery.

Time-stepped route: Crank-Nicolson march of du/dt = Lap u - q u with
Dirichlet data g(sigma) h(t), flux read on Gamma_out at T0.  Spectral route:
the eigenfunction series of the same trace.  Inversion: samples of the
kernel F(sigma', s) = sum_n exp(-lam_n s) <g, psi_n> psi_n(sigma') are a
generalized Dirichlet series in s; a matrix pencil recovers the decay rates
and least squares the amplitude kernels theta_n.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.integrate import quad
from scipy.optimize import least_squares
from scipy.sparse.linalg import splu

from .bvp import boundary_rhs
from .domain import BoundaryFunction, Grid, Potential
from .errors import (AlignmentError, InstabilityError, KernelVanishes, SpectraDiffer,
                     ValidationError)
from .spectral import CLUSTER_RTOL, BoundarySpectralData, assemble, clusters, normal_trace

QUIET_FRACTION = 0.25
MIN_STEPS = 16
PENCIL_RTOL = 1e-13
REFINE_RESIDUAL = 1e-8
RATE_MERGE_RTOL = 1e-6
MATCH_COND_MAX = 1e8
ORTHO_TOL = 1e-8
ALIGN_RTOL = 1e-6
THETA_RTOL = 1e-10
TAIL_RTOL = 1e-3


# -- observation patches -----------------------------------------------------

def edge_gamma(grid: Grid, *edges: str) -> np.ndarray:
    """Boolean mask of the boundary samples on the named edges."""
    return grid.edge_mask(*edges)


def arc_gamma(grid: Grid, start: float, stop: float) -> np.ndarray:
    """Samples with arclength in [start, stop], wrapping past the perimeter."""
    P = grid.perimeter
    s = np.asarray(grid.arclength)
    a, b = start % P, stop % P
    if stop - start >= P:
        return np.ones(s.size, bool)
    return (s >= a) & (s <= b) if a <= b else (s >= a) | (s <= b)


def default_gammas(grid: Grid):
    """Bottom edge plus the lower quarter of the right edge, and the right edge
    plus the right quarter of the bottom edge; they share a corner patch."""
    Lx, Ly = grid.Lx, grid.Ly
    return arc_gamma(grid, 0.0, Lx + Ly / 4), arc_gamma(grid, 0.75 * Lx, Lx + Ly)


@dataclass(frozen=True)
class GammaReport:
    n_in: int
    n_out: int
    n_overlap: int
    covers_boundary: bool

    @property
    def messages(self) -> list[str]:
        out = []
        if self.n_overlap == 0:
            out.append("Gamma_in and Gamma_out share no sample")
        if not self.covers_boundary:
            out.append("Gamma_in and Gamma_out do not cover the whole boundary")
        return out


def gamma_report(gin, gout) -> GammaReport:
    gin, gout = np.asarray(gin, bool), np.asarray(gout, bool)
    return GammaReport(int(gin.sum()), int(gout.sum()), int((gin & gout).sum()),
                       bool(np.all(gin | gout)))


# -- inputs ------------------------------------------------------------------

def sampled_signal(times, values) -> Callable:
    """Piecewise-linear time signal through samples (zero outside)."""
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    if t.ndim != 1 or t.shape != v.shape or np.any(np.diff(t) <= 0):
        raise ValidationError("signal samples need increasing times and matching values")

    def h(s):
        return np.interp(s, t, v, left=0.0, right=0.0)
    nz = np.flatnonzero(v)
    if nz.size:
        h.support = (float(t[max(nz[0] - 1, 0)]), float(t[min(nz[-1] + 1, t.size - 1)]))
    return h


def smooth_bump(start: float, stop: float) -> Callable:
    """sin^2 pulse supported on [start, stop]; continuously differentiable."""
    if not stop > start:
        raise ValidationError("bump needs stop > start")
    w = stop - start

    def h(t):
        t = np.asarray(t, float)
        inside = (t > start) & (t < stop)
        return np.where(inside, np.sin(np.pi * (t - start) / w) ** 2, 0.0)
    h.support = (start, stop)
    return h


@dataclass(frozen=True)
class BoundaryInput:
    """Separable boundary heating g(sigma) h(t) with a quiet window before T0."""

    g: BoundaryFunction
    h: Callable = field(repr=False)
    T0: float
    T: float
    eps: float | None = None
    gamma_in: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 < self.T0 < self.T:
            raise ValidationError(f"need 0 < T0 < T, got T0={self.T0}, T={self.T}")
        eps = QUIET_FRACTION * self.T0 if self.eps is None else float(self.eps)
        if not 0 < eps < self.T0:
            raise ValidationError(f"quiet window eps={eps} must lie in (0, T0)")
        object.__setattr__(self, "eps", eps)
        if self.gamma_in is not None:
            mask = np.asarray(self.gamma_in, bool)
            if np.any(np.abs(self.g.values[~mask]) > 0):
                raise ValidationError("g is not supported in Gamma_in")
        if abs(float(self.h(0.0))) > 0:
            raise ValidationError("compatibility violated: h(0) != 0")
        quiet = np.linspace(self.T0 - eps, self.T0, 257)
        if np.any(np.asarray(self.h(quiet)) != 0):
            raise ValidationError("h does not vanish on the quiet window [T0-eps, T0]")

    @property
    def grid(self) -> Grid:
        return self.g.grid


@dataclass(frozen=True)
class ParabolicTrace:
    """Flux at T0 on the Gamma_out samples (``values`` is restricted, ``mask`` locates it)."""

    grid: Grid
    values: np.ndarray
    mask: np.ndarray = field(repr=False)

    def full(self) -> np.ndarray:
        out = np.zeros(self.grid.n_boundary, dtype=np.asarray(self.values).dtype)
        out[self.mask] = self.values
        return out

    def norm(self) -> float:
        w = self.grid.weights[self.mask]
        return float(np.sqrt(np.sum(w * np.abs(self.values) ** 2)))


def relative_trace_error(a: ParabolicTrace, b: ParabolicTrace) -> float:
    d = ParabolicTrace(a.grid, np.asarray(a.values) - np.asarray(b.values), a.mask)
    return d.norm() / b.norm()


# -- time-stepped route ------------------------------------------------------

@dataclass(frozen=True)
class HeatTrajectory:
    times: np.ndarray
    fields: np.ndarray = field(repr=False)

    def at(self, k: int) -> np.ndarray:
        return self.fields[k]


class HeatStepper:
    """Crank-Nicolson factorization of ``I + dt/2 A_q`` reusable across inputs."""

    def __init__(self, grid: Grid, q: Potential, dt: float):
        if dt <= 0:
            raise ValidationError("time step must be positive")
        self.grid, self.q, self.dt = grid, q, float(dt)
        A = assemble(grid, q).matrix
        I = sp.identity(grid.size, format="csr")
        self._lu = splu(sp.csc_matrix(I + 0.5 * dt * A))
        self._explicit = (I - 0.5 * dt * A).tocsr()

    def march(self, G: np.ndarray, h: Callable, nt: int, record=None):
        """Advance from zero with data ``G * h(t)``; ``G`` is a boundary vector or stack.

        ``h(t)`` may return one value per column of ``G`` to drive each
        column with its own signal.

        Returns the states at the step indices in ``record`` (all steps when
        ``None``) together with their times.
        """
        dt = self.dt
        G = np.asarray(G, float)
        B = boundary_rhs(self.grid, G)
        u = np.zeros_like(B)
        keep = set(range(nt + 1)) if record is None else {int(k) for k in record}
        if any(k < 0 or k > nt for k in keep):
            raise ValidationError("record indices must lie in [0, nt]")
        out, times = [], []
        if 0 in keep:
            out.append(u.copy())
            times.append(0.0)
        hp = np.asarray(h(0.0), float)
        hseen = float(np.max(np.abs(hp)))
        amp = float(np.max(np.abs(G))) if G.size else 0.0
        growth = np.exp(max(0.0, -float(np.min(self.q.values))) * dt * nt)
        for k in range(1, nt + 1):
            hn = np.asarray(h(k * dt), float)
            hseen = max(hseen, float(np.max(np.abs(hn))))
            u = self._lu.solve(self._explicit @ u + 0.5 * dt * (hp + hn) * B)
            hp = hn
            if k in keep:
                out.append(u.copy())
                times.append(k * dt)
            # discrete maximum principle bound max|data| e^{max(-q) t}, with wide slack
            if k % 32 == 0 or k == nt:
                peak = float(np.max(np.abs(u))) if u.size else 0.0
                if not np.isfinite(peak) or peak > 1e3 * (1.0 + amp * hseen) * growth:
                    raise InstabilityError(f"heat march blew up at step {k} (max |u| = {peak:.3e})")
        return np.array(times), np.array(out)


def heat_solve(grid: Grid, q: Potential, inp: BoundaryInput, nt: int,
               t_end: float | None = None, record=None) -> HeatTrajectory:
    """Crank-Nicolson trajectory on [0, t_end] (default T) with nt uniform steps."""
    if nt < MIN_STEPS:
        raise ValidationError(f"need nt >= {MIN_STEPS}, got {nt}")
    if inp.grid != grid or q.grid != grid:
        raise ValidationError("input, potential and grid disagree")
    t_end = inp.T if t_end is None else float(t_end)
    stepper = HeatStepper(grid, q, t_end / nt)
    times, fields = stepper.march(inp.g.values, inp.h, nt, record)
    return HeatTrajectory(times, fields)


def _check_gamma(grid: Grid, gamma_out):
    if gamma_out is None:
        return default_gammas(grid)[1]
    mask = np.asarray(gamma_out, bool)
    if mask.shape != (grid.n_boundary,):
        raise ValidationError("Gamma_out mask has the wrong length")
    return mask


def parabolic_dn(grid: Grid, q: Potential, inp: BoundaryInput, nt: int,
                 gamma_out=None) -> ParabolicTrace:
    """Normal flux of u(., T0) on Gamma_out; nt steps on [0, T0]."""
    mask = _check_gamma(grid, gamma_out)
    traj = heat_solve(grid, q, inp, nt, t_end=inp.T0, record=[nt])
    bvals = inp.g.values * float(inp.h(inp.T0))
    psi = normal_trace(traj.fields[-1], grid, bvals).values
    return ParabolicTrace(grid, psi[mask], mask)


# -- spectral route ----------------------------------------------------------

def _time_weights(lambdas, h, T0: float, eps: float) -> np.ndarray:
    """int_eps^T0 exp(-lam s) h(T0 - s) ds for each lam, by adaptive quadrature."""
    out = np.empty(len(lambdas))
    support = getattr(h, "support", None)
    points = None
    if support is not None:
        points = [p for p in (T0 - support[1], T0 - support[0]) if eps < p < T0]
    for n, lam in enumerate(lambdas):
        val, _ = quad(lambda s: np.exp(-lam * s) * float(h(T0 - s)), eps, T0,
                      points=points, limit=200, epsabs=0.0, epsrel=1e-12)
        out[n] = val
    return out


def weyl_tail_ratio(lambdas, eps: float) -> float:
    """Weyl-law estimate of the neglected share of sum lam_n^2 exp(-eps lam_n)."""
    lam = np.asarray(lambdas, float)
    K = lam.size
    n = np.arange(1, K + 1)
    tail_window = slice(min(5, K - 1), K)
    c = float(np.min(lam[tail_window] / n[tail_window]))
    if c <= 0:
        return np.inf
    m = np.arange(K + 1, 50 * K + 1)
    tail = np.sum((c * m) ** 2 * np.exp(-eps * c * m))
    kept = np.sum(np.abs(lam) ** 2 * np.exp(-eps * lam))
    return float(tail / kept)


def spectral_parabolic_dn(bsd: BoundarySpectralData, inp: BoundaryInput,
                          gamma_out=None) -> ParabolicTrace:
    """Series route: -sum_n [int_eps^T0 e^{-lam_n s} h(T0-s) ds] <g, psi_n> psi_n on Gamma_out."""
    grid = bsd.grid
    if inp.grid != grid:
        raise ValidationError("input and spectral data live on different grids")
    mask = _check_gamma(grid, gamma_out)
    ratio = weyl_tail_ratio(bsd.lambdas, inp.eps)
    if ratio > TAIL_RTOL:
        warnings.warn(f"truncation K={len(bsd)} leaves an estimated tail share {ratio:.2e}")
    I = _time_weights(bsd.lambdas, inp.h, inp.T0, inp.eps)
    coef = (grid.weights * inp.g.values) @ bsd.psis
    vals = -(bsd.psis[mask] @ (I * coef))
    return ParabolicTrace(grid, vals, mask)


def dn_kernel_samples(bsd: BoundarySpectralData, g, s_values, gamma_in=None,
                      gamma_out=None) -> np.ndarray:
    """F(sigma', s) = sum_n exp(-lam_n s) <g, psi_n>_{Gamma_in} psi_n(sigma').

    ``g`` is a boundary vector or a stack ``(n_boundary, m)``; the result has
    shape ``(len(s), n_out)`` or ``(len(s), n_out, m)``.
    """
    grid = bsd.grid
    s = np.asarray(s_values, float)
    if s.ndim != 1 or np.any(s <= 0) or np.any(np.diff(s) <= 0):
        raise ValidationError("s values must be positive and increasing")
    gin_default, gout_default = default_gammas(grid)
    gin = gin_default if gamma_in is None else np.asarray(gamma_in, bool)
    gout = gout_default if gamma_out is None else np.asarray(gamma_out, bool)
    gv = g.values if isinstance(g, BoundaryFunction) else np.asarray(g)
    single = gv.ndim == 1
    G = gv[:, None] if single else gv
    if np.any(np.abs(G[~gin]) > 0):
        raise ValidationError("g is not supported in Gamma_in")
    coef = (grid.weights[gin, None] * G[gin]).T @ bsd.psis[gin]     # (m, K)
    decay = np.exp(-np.outer(s, bsd.lambdas))                        # (S, K)
    F = np.einsum("sk,ok,mk->som", decay, bsd.psis[gout], coef)
    return F[..., 0] if single else F


# -- exponential-sum extraction ------------------------------------------------

@dataclass(frozen=True)
class ExpSumModel:
    """Decay rates (ascending) and amplitudes per channel, ``amplitudes[k, ...]``."""

    rates: np.ndarray
    amplitudes: np.ndarray = field(repr=False)
    residual: float
    multiplicity: np.ndarray = field(default=None, repr=False)
    rank_collapse: bool = False
    refined: bool = False

    def __len__(self):
        return self.rates.size

    def evaluate(self, s_values) -> np.ndarray:
        V = np.exp(-np.outer(np.asarray(s_values, float), self.rates))
        return np.tensordot(V, self.amplitudes, axes=(1, 0))


def _pencil_roots(Y: np.ndarray, rtol: float):
    """Roots z_k of the multichannel Hankel pencil of the sample matrix ``Y (S, C)``."""
    S = Y.shape[0]
    L = S // 2
    blocks = [scipy.linalg.hankel(Y[:S - L, c], Y[S - L - 1:, c]) for c in range(Y.shape[1])]
    H = np.vstack(blocks)                                   # (C (S-L), L+1)
    _, sv, Vh = np.linalg.svd(H, full_matrices=False)
    if sv[0] == 0:
        return np.array([]), sv
    r = int(np.sum(sv > rtol * sv[0]))
    V = Vh[:r].conj().T                                      # (L+1, r)
    z = np.linalg.eigvals(np.linalg.pinv(V[:-1]) @ V[1:])
    return z, sv


def _amplitudes(s, rates, Y):
    V = np.exp(-np.outer(s, rates))
    A, *_ = np.linalg.lstsq(V, Y, rcond=None)
    R = V @ A - Y
    return A, float(np.linalg.norm(R) / max(np.linalg.norm(Y), 1e-300))


def _refine(s, rates, Y):
    """Variable projection: rates by nonlinear least squares, amplitudes eliminated.

    With more channels than samples, Y is replaced by U S from its thin SVD;
    the residual norm is unchanged because V^H is an isometry on the rows.
    """
    if Y.shape[1] > Y.shape[0]:
        U, sv, _ = np.linalg.svd(Y, full_matrices=False)
        Y = U * sv
    scale = max(np.linalg.norm(Y), 1e-300)

    def resid(logr):
        V = np.exp(-np.outer(s, np.exp(logr)))
        A, *_ = np.linalg.lstsq(V, Y, rcond=None)
        return ((V @ A - Y) / scale).ravel()

    sol = least_squares(resid, np.log(rates), method="lm", xtol=1e-15, ftol=1e-15)
    return np.sort(np.exp(sol.x))


def exp_sum_extract(samples, s_values, K_target: int, rtol: float = PENCIL_RTOL,
                    merge_rtol: float = RATE_MERGE_RTOL, imag_tol: float = 1e-6) -> ExpSumModel:
    """Matrix-pencil fit of ``samples[k, ...] = sum_j a_j[...] exp(-rate_j s_k)``.

    The s-grid must be uniform.  Singular values of the stacked Hankel matrix
    below ``rtol`` of the largest are treated as noise.  Roots that are not
    real and in (0, 1) are discarded.  When the linear amplitude fit leaves a
    relative residual above 1e-8 the rates are refined by variable projection.
    Rates closer than ``merge_rtol`` are merged and their amplitudes summed.
    The model holds the slowest ``K_target`` rates; if fewer are recoverable
    ``rank_collapse`` is set and the recoverable subset is returned.
    """
    s = np.asarray(s_values, float)
    Y = np.asarray(samples)
    if Y.shape[0] != s.size:
        raise ValidationError("samples and s values differ in length")
    if K_target < 1:
        raise ValidationError("K_target must be >= 1")
    if s.size < 2 * K_target + 4:
        raise ValidationError(f"need at least {2 * K_target + 4} samples, got {s.size}")
    ds = np.diff(s)
    if np.any(np.abs(ds - ds[0]) > 1e-9 * abs(ds[0])) or ds[0] <= 0:
        raise ValidationError("s grid must be uniform and increasing")
    dt = ds[0]
    chan_shape = Y.shape[1:]
    Y2 = Y.reshape(s.size, -1)

    z, _ = _pencil_roots(Y2, rtol)
    ok = (np.abs(z.imag) <= imag_tol * np.maximum(np.abs(z), 1e-300)) & (z.real > 0) & (z.real < 1)
    rates = np.sort(-np.log(z.real[ok]) / dt)
    if rates.size == 0:
        return ExpSumModel(np.array([]), np.zeros((0,) + chan_shape), 1.0,
                           np.array([], int), True, False)
    A, res = _amplitudes(s, rates, Y2)
    refined = False
    if res > REFINE_RESIDUAL:
        new = _refine(s, rates, Y2)
        A2, res2 = _amplitudes(s, new, Y2)
        if res2 < res:
            rates, A, res, refined = new, A2, res2, True

    # merge numerically coincident rates
    groups = clusters(rates, merge_rtol)
    mult = np.array([len(c) for c in groups])
    merged = np.array([np.mean(rates[c.start:c.stop]) for c in groups])
    if len(groups) < rates.size:
        A, res = _amplitudes(s, merged, Y2)
    rates = merged
    collapse = rates.size < K_target
    k = min(K_target, rates.size)
    return ExpSumModel(rates[:k], A[:k].reshape((k,) + chan_shape), res, mult[:k],
                       collapse, refined)


# -- theta kernels and alignment ----------------------------------------------

def theta_kernel(psis_cluster, gamma_in, gamma_out, check: bool = True) -> np.ndarray:
    """theta(sigma, sigma') = sum_i psi_i(sigma) psi_i(sigma') on Gamma_in x Gamma_out."""
    P = np.asarray(psis_cluster)
    if P.ndim == 1:
        P = P[:, None]
    gin, gout = np.asarray(gamma_in, bool), np.asarray(gamma_out, bool)
    theta = P[gin] @ P[gout].T
    if check:
        scale = float(np.sum(P ** 2))
        if theta.size == 0 or np.max(np.abs(theta)) <= THETA_RTOL * scale:
            raise KernelVanishes("theta kernel vanishes on Gamma_in x Gamma_out; "
                                 "check the discretization or the clustering")
    return theta


def cluster_thetas(bsd: BoundarySpectralData, gamma_in, gamma_out, count: int | None = None):
    """(eigenvalue, multiplicity, theta) for the leading clusters."""
    out = []
    for c in clusters(bsd.lambdas)[:count]:
        theta = theta_kernel(bsd.psis[:, c.start:c.stop], gamma_in, gamma_out)
        out.append((float(np.mean(bsd.lambdas[c.start:c.stop])), len(c), theta))
    return out


@dataclass(frozen=True)
class ClusterAlignment:
    """``Psi_1 = M Psi_2`` on Gamma_in u Gamma_out, with Psi the column of cluster traces.

    ``aligned`` holds the realigned traces of the second data set in the
    column layout of ``BoundarySpectralData.psis``: ``psis2[:, c] @ M.T``.
    """

    cluster: range
    M: np.ndarray
    aligned: np.ndarray = field(repr=False)
    points: np.ndarray = field(repr=False)
    condition: float
    orthogonality_defect: float


def _select_points(P: np.ndarray, candidates: np.ndarray):
    """Greedy determinant-maximizing rows of P (column-pivoted QR on P^T)."""
    m = P.shape[1]
    _, _, piv = scipy.linalg.qr(P[candidates].T, pivoting=True, mode="economic")
    return candidates[np.sort(piv[:m])]


def match_eigenbases(bsd1: BoundarySpectralData, bsd2: BoundarySpectralData,
                     gamma_in=None, gamma_out=None, rtol: float = CLUSTER_RTOL):
    """Per-cluster orthogonal matrices mapping the second eigenbasis onto the first."""
    if bsd1.grid != bsd2.grid:
        raise ValidationError("spectral data live on different grids")
    grid = bsd1.grid
    gin_d, gout_d = default_gammas(grid)
    gin = gin_d if gamma_in is None else np.asarray(gamma_in, bool)
    gout = gout_d if gamma_out is None else np.asarray(gamma_out, bool)
    overlap = np.flatnonzero(gin & gout)
    union = gin | gout
    if overlap.size == 0:
        raise ValidationError("Gamma_in and Gamma_out share no sample")
    if len(bsd1) != len(bsd2):
        raise SpectraDiffer("spectral data differ in length")
    c1, c2 = clusters(bsd1.lambdas, rtol), clusters(bsd2.lambdas, rtol)
    if c1 != c2:
        bad = next(a for a, b in zip(c1 + [None], c2 + [None]) if a != b)
        raise SpectraDiffer(f"cluster multiplicities differ near indices {bad}", cluster=bad)
    out = []
    for c in c1:
        l1, l2 = bsd1.lambdas[c.start:c.stop], bsd2.lambdas[c.start:c.stop]
        if np.max(np.abs(l1 - l2)) > rtol * (1 + np.max(np.abs(l1))):
            raise SpectraDiffer(f"eigenvalues differ on cluster {c.start + 1}..{c.stop}", cluster=c)
        P1 = bsd1.psis[:, c.start:c.stop]
        P2 = bsd2.psis[:, c.start:c.stop]
        m = len(c)
        if overlap.size < m:
            raise AlignmentError(f"overlap has fewer than {m} samples for cluster "
                                 f"{c.start + 1}..{c.stop}", cluster=c)
        pts = _select_points(P1, overlap)
        A1, A2 = P1[pts], P2[pts]
        cond = float(np.linalg.cond(A1))
        if not np.isfinite(cond) or cond > MATCH_COND_MAX:
            raise AlignmentError(f"no well-conditioned point set for cluster "
                                 f"{c.start + 1}..{c.stop} (cond {cond:.2e})", cluster=c)
        M = np.linalg.solve(A1, A2)
        ortho = float(np.max(np.abs(M.T @ M - np.eye(m))))
        if ortho > ORTHO_TOL:
            raise AlignmentError(f"cluster {c.start + 1}..{c.stop}: M is not orthogonal "
                                 f"(defect {ortho:.2e})", cluster=c)
        aligned = P2 @ M.T
        gap = np.linalg.norm((aligned - P1)[union]) / max(np.linalg.norm(P1[union]), 1e-300)
        if gap > ALIGN_RTOL:
            raise AlignmentError(f"cluster {c.start + 1}..{c.stop}: traces disagree after "
                                 f"alignment (relative gap {gap:.2e})", cluster=c)
        out.append(ClusterAlignment(c, M, aligned, pts, cond, ortho))
    return out


def apply_alignment(bsd2: BoundarySpectralData, alignments) -> BoundarySpectralData:
    psis = np.array(bsd2.psis, copy=True)
    for a in alignments:
        psis[:, a.cluster.start:a.cluster.stop] = a.aligned
    return BoundarySpectralData(bsd2.grid, bsd2.lambdas, psis, bsd2.sup_bound, None, bsd2.q_min,
                                bsd2.next_lambda)


# -- end-to-end recovery from simulated traces ----------------------------------

def cn_rate(z_rate: np.ndarray, dt: float) -> np.ndarray:
    """Invert the Crank-Nicolson amplification: per-step factor r = exp(-z_rate dt)
    solves r = (1 - lam dt/2)/(1 + lam dt/2), so lam = (2/dt)(1 - r)/(1 + r)."""
    r = np.exp(-np.asarray(z_rate) * dt)
    return (2.0 / dt) * (1.0 - r) / (1.0 + r)


@dataclass(frozen=True)
class TraceExperiment:
    """Traces of shifted pulse inputs, one column of g per Gamma_in sample.

    ``traces[j, o, i]`` is the flux at T0 on the o-th Gamma_out sample for
    the input ``e_i / h_edge`` times the pulse ending ``s_values[j]`` before T0.
    """

    grid: Grid
    s_values: np.ndarray
    traces: np.ndarray = field(repr=False)
    gamma_in: np.ndarray = field(repr=False)
    gamma_out: np.ndarray = field(repr=False)
    dt: float
    width: float
    T0: float


def simulate_traces(grid: Grid, q: Potential, T0: float, nt: int, n_s: int, stride: int,
                    width_steps: int, eps: float | None = None, gamma_in=None, gamma_out=None,
                    T: float | None = None) -> TraceExperiment:
    """Record Lambda_q for inputs (e_i / h) x pulse_j over the Gamma_in samples.

    Pulse j is a sin^2 bump of ``width_steps`` steps whose support ends
    ``s_j = eps + j * stride * dt`` before T0 (all shifts are whole steps, so
    the discrete responses form an exact exponential sum in j).  Each input
    satisfies the quiet-window and compatibility conditions.
    """
    if nt < MIN_STEPS:
        raise ValidationError(f"need nt >= {MIN_STEPS}")
    dt = T0 / nt
    eps = QUIET_FRACTION * T0 if eps is None else eps
    gin_d, gout_d = default_gammas(grid)
    gin = gin_d if gamma_in is None else np.asarray(gamma_in, bool)
    gout = gout_d if gamma_out is None else np.asarray(gamma_out, bool)
    first = int(np.ceil(eps / dt - 1e-9))
    last = first + (n_s - 1) * stride + width_steps
    if last >= nt:
        raise ValidationError(f"pulse train needs {last + 1} steps before T0, have {nt}")
    T = 2 * T0 if T is None else T
    idx = np.flatnonzero(gin)
    G = np.zeros((grid.n_boundary, idx.size))
    G[idx, np.arange(idx.size)] = 1.0 / grid.hnormal[idx]
    for j in range(n_s):
        end = T0 - (first + j * stride) * dt           # pulse support [end - width, end]
        BoundaryInput(BoundaryFunction(grid, G[:, 0]),
                      smooth_bump(end - width_steps * dt, end), T0, T, eps, gin)
    # The scheme is autonomous and starts from rest, so the state at T0 for a
    # pulse ending s before T0 equals the state s after the end of one fixed
    # pulse.  A single march recording at those steps yields every trace.
    base = smooth_bump(0.0, width_steps * dt)
    steps = width_steps + first + stride * np.arange(n_s)
    _, U = HeatStepper(grid, q, dt).march(G, base, int(steps[-1]), record=steps)
    traces = np.stack([normal_trace(u, grid)[gout] for u in U])
    s_vals = (first + stride * np.arange(n_s)) * dt
    return TraceExperiment(grid, s_vals, traces, gin, gout, dt, width_steps * dt, T0)


def _pulse_transfer(lam: np.ndarray, width: float) -> np.ndarray:
    """B(lam) = int_0^w exp(-lam u) sin^2(pi (w - u)/w) du for the pulse ending at u=0."""
    out = np.empty(lam.size)
    for k, l in enumerate(lam):
        out[k], _ = quad(lambda u: np.exp(-l * u) * np.sin(np.pi * (width - u) / width) ** 2,
                         0.0, width, epsabs=0.0, epsrel=1e-12)
    return out


@dataclass(frozen=True)
class RecoveredSpectrum:
    lambdas: np.ndarray
    thetas: list
    model: ExpSumModel = field(repr=False)


def recover_from_traces(exp: TraceExperiment, K_target: int, rtol: float = PENCIL_RTOL,
                        cn_correct: bool = True) -> RecoveredSpectrum:
    """Distinct eigenvalues and theta kernels from a pulse-train experiment.

    Trace j equals -sum_n B(lam_n) exp(-lam_n s_j) theta_n(., .) applied to
    the input, so the pencil on -traces gives exp(-lam_n s) and dividing the
    amplitudes by B(lam_n) returns theta_n on Gamma_in x Gamma_out.
    """
    model = exp_sum_extract(-exp.traces, exp.s_values, K_target, rtol=rtol)
    lam = cn_rate(model.rates, exp.dt) if cn_correct else model.rates
    B = _pulse_transfer(lam, exp.width)
    # amplitudes[k, o, i] -> theta_k(sigma_i, sigma'_o)
    thetas = [np.asarray(model.amplitudes[k]).T / B[k] for k in range(len(model))]
    return RecoveredSpectrum(lam, thetas, model)
