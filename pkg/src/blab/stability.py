"""Spectral discrepancies between two potentials and the Hoelder-type stability relation.

The eigenvalue discrepancy delta controls the Fourier transform of q1 - q2
uniformly; splitting Fourier space at a radius R and using the H^1 bound on the
high band gives ||q1 - q2|| <= C delta^(2/(d+2)).  This module measures the
discrepancies, checks the Plancherel and band-split identities on the grid,
and tabulates the Hoelder ratio over a family of potentials.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import orthogonal_procrustes

from .domain import Grid, Potential
from .errors import AlignmentError, GridMismatch, ValidationError
from .spectral import BoundarySpectralData, boundary_spectral_data, clusters

TRUNCATION_NOTE = ("psi differences are summed over the computed window only; "
                   "the summability hypothesis is a partial sum here")
BOUNDARY_ATOL = 1e-12


@dataclass(frozen=True)
class DiscrepancyReport:
    """``delta_N[N-1] = max_{n>=N} |lam1_n - lam2_n|`` and the matching psi tail sums."""

    delta_N: np.ndarray
    eps_N: np.ndarray
    l2_diff: float
    linf_diff: float
    K: int
    note: str = TRUNCATION_NOTE
    truncated_cluster: range | None = None

    @property
    def minmax_holds(self) -> bool:
        return bool(self.delta_N[0] <= self.linf_diff + 1e-8)


def _weighted(psis: np.ndarray, grid: Grid) -> np.ndarray:
    return np.sqrt(grid.weights)[:, None] * psis


def _blocks(c1: list[range], c2: list[range]) -> list[tuple[range, range | None, range | None]]:
    """Smallest index ranges containing whole clusters of both lists.

    Each block comes with the cluster of each side that spans it alone
    (``None`` when that side splits the block further).
    """
    starts1 = {c.start: c for c in c1}
    starts2 = {c.start: c for c in c2}
    out, start, stop = [], 0, 0
    ends1 = {c.stop for c in c1}
    ends2 = {c.stop for c in c2}
    for n in range(1, max(c1[-1].stop, c2[-1].stop) + 1):
        stop = n
        if n in ends1 and n in ends2:
            block = range(start, stop)
            whole1 = starts1.get(start) if starts1.get(start) == block else None
            whole2 = starts2.get(start) if starts2.get(start) == block else None
            out.append((block, whole1, whole2))
            start = n
    return out


def align_psis(bsd1: BoundarySpectralData, bsd2: BoundarySpectralData):
    """Rotate degenerate clusters so paired Neumann traces are as close as possible.

    Within a block where one side has a single multiplicity cluster, that
    side's basis is free; it is replaced by the orthogonal rotation closest to
    the other side in the weighted boundary L2 norm (orthogonal Procrustes).
    Simple modes reduce to a sign choice.  Returns the two aligned ``psis``
    arrays.  Raises ``AlignmentError`` naming the block when both sides split
    it differently, since no gauge rotation can then pair the modes.
    """
    if bsd1.grid != bsd2.grid:
        raise GridMismatch("spectral data live on different grids")
    if len(bsd1) != len(bsd2):
        raise ValidationError("spectral data must share the truncation K")
    grid = bsd1.grid
    dtype = np.result_type(bsd1.psis, bsd2.psis, float)
    p1 = np.array(bsd1.psis, dtype=dtype, copy=True)
    p2 = np.array(bsd2.psis, dtype=dtype, copy=True)
    w1, w2 = _weighted(p1, grid), _weighted(p2, grid)
    for block, whole1, whole2 in _blocks(clusters(bsd1.lambdas), clusters(bsd2.lambdas)):
        s = slice(block.start, block.stop)
        if whole2 is not None:
            R, _ = orthogonal_procrustes(w2[:, s], w1[:, s])
            p2[:, s] = p2[:, s] @ R
        elif whole1 is not None:
            R, _ = orthogonal_procrustes(w1[:, s], w2[:, s])
            p1[:, s] = p1[:, s] @ R
        else:
            raise AlignmentError(
                f"clusters of the two spectra cross over indices "
                f"{block.start + 1}..{block.stop}; no gauge rotation pairs them",
                cluster=block)
    return p1, p2


def _tail_max(a: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(a[::-1])[::-1]


def _tail_sum(a: np.ndarray) -> np.ndarray:
    return np.cumsum(a[::-1])[::-1]


def discrepancy(bsd1: BoundarySpectralData, bsd2: BoundarySpectralData,
                q1: Potential, q2: Potential) -> DiscrepancyReport:
    """Eigenvalue and Neumann-trace discrepancies, indexed by the 1-based tail start N."""
    if q1.grid != bsd1.grid or q2.grid != bsd2.grid:
        raise GridMismatch("potentials and spectral data live on different grids")
    p1, p2 = align_psis(bsd1, bsd2)
    grid = bsd1.grid
    dl = np.abs(bsd1.lambdas - bsd2.lambdas)
    dpsi2 = grid.weights @ np.abs(p1 - p2) ** 2
    diff = q1.values - q2.values
    last = clusters(bsd1.lambdas)[-1]
    if bsd1.next_lambda is None or bsd2.next_lambda is None:
        cut = len(last) > 1
    else:
        cut = bsd1.top_cluster_truncated() or bsd2.top_cluster_truncated()
    return DiscrepancyReport(
        delta_N=_tail_max(dl),
        eps_N=np.sqrt(np.maximum(_tail_sum(dpsi2), 0.0)),
        l2_diff=float(np.sqrt(grid.cell_area * np.sum(diff ** 2))),
        linf_diff=float(np.max(np.abs(diff))),
        K=len(bsd1),
        # the top cluster may continue past K; its alignment is then partial
        truncated_cluster=last if cut else None,
    )


# -- Fourier-side identities --------------------------------------------------

def zero_extended_spectrum(grid: Grid, values, pad: int = 2):
    """Unitary DFT of the zero-extended grid function and its angular frequencies.

    The interior samples are embedded in a ``pad``-times larger periodic box,
    which is the discrete counterpart of extending q by zero outside the
    domain.  Returns ``(F, KX, KY)``; with the unitary normalisation and the
    cell-area factor, ``sum |F|^2`` equals the discrete L2(Omega) norm squared.
    """
    if pad < 1:
        raise ValidationError("pad must be >= 1")
    f = grid.as_field(values)
    my, mx = pad * (grid.ny + 1), pad * (grid.nx + 1)
    box = np.zeros((my, mx), dtype=f.dtype)
    box[1:grid.ny + 1, 1:grid.nx + 1] = f
    F = np.fft.fft2(box, norm="ortho") * np.sqrt(grid.cell_area)
    kx = 2 * np.pi * np.fft.fftfreq(mx, d=grid.hx)
    ky = 2 * np.pi * np.fft.fftfreq(my, d=grid.hy)
    KX, KY = np.meshgrid(kx, ky)
    return F, KX, KY


def plancherel_defect(grid: Grid, values, pad: int = 2) -> float:
    """Relative gap between the grid L2 energy and the Fourier energy."""
    v = np.asarray(values)
    energy = grid.cell_area * float(np.sum(np.abs(v) ** 2))
    F, _, _ = zero_extended_spectrum(grid, v, pad)
    fourier = float(np.sum(np.abs(F) ** 2))
    return abs(energy - fourier) / energy if energy > 0 else abs(fourier)


@dataclass(frozen=True)
class BandSplit:
    R: float
    low: float
    high: float
    total: float

    @property
    def defect(self) -> float:
        return abs(self.low + self.high - self.total) / self.total if self.total else 0.0


def band_split(grid: Grid, values, radii, pad: int = 2) -> list[BandSplit]:
    """Fourier energy inside and outside |xi| <= R for each radius."""
    F, KX, KY = zero_extended_spectrum(grid, values, pad)
    e = np.abs(F) ** 2
    r = np.hypot(KX, KY)
    total = float(np.sum(e))
    out = []
    for R in radii:
        inside = r <= R
        out.append(BandSplit(float(R), float(np.sum(e[inside])), float(np.sum(e[~inside])), total))
    return out


# -- Hoelder experiment --------------------------------------------------------

def _padded(q: Potential) -> np.ndarray:
    grid = q.grid
    if q.boundary_values is None:
        raise ValidationError("potential carries no boundary samples")
    P = np.zeros((grid.ny + 2, grid.nx + 2))
    P[1:-1, 1:-1] = grid.as_field(q.values)
    i = np.rint(grid.bx / grid.hx).astype(int)
    j = np.rint(grid.by / grid.hy).astype(int)
    P[j, i] = q.boundary_values
    return P


def h1_proxy(q: Potential) -> float:
    """``||q||_inf + ||q||_H1`` with forward differences over interior and edge nodes.

    Differences touching the boundary use the stored boundary samples; corner
    nodes take part in no difference.
    """
    grid = q.grid
    P = _padded(q)
    dx = np.diff(P[1:-1, :], axis=1) / grid.hx
    dy = np.diff(P[:, 1:-1], axis=0) / grid.hy
    grad2 = grid.cell_area * (np.sum(dx ** 2) + np.sum(dy ** 2))
    l22 = grid.cell_area * np.sum(q.values ** 2)
    return float(max(q.max_abs, np.max(np.abs(q.boundary_values)))
                 + np.sqrt(l22 + grad2))


def check_boundary_equality(q1: Potential, q2: Potential, atol: float = BOUNDARY_ATOL):
    if q1.boundary_values is None or q2.boundary_values is None:
        raise ValidationError("boundary equality cannot be checked: "
                              "potential carries no boundary samples")
    gap = float(np.max(np.abs(q1.boundary_values - q2.boundary_values)))
    scale = 1.0 + max(q1.sup_bound, q2.sup_bound)
    if gap > atol * scale:
        raise ValidationError(f"potentials differ on the boundary by {gap:.3e}")


@dataclass(frozen=True)
class HoelderRow:
    label: str
    delta: float
    l2_diff: float
    ratio: float
    h1: float


@dataclass(frozen=True)
class HoelderTable:
    rows: list[HoelderRow]
    skipped: list[str]
    slope: float
    exponent: float
    K: int
    note: str = TRUNCATION_NOTE

    @property
    def ratio_spread(self) -> float:
        r = [row.ratio for row in self.rows]
        return max(r) / min(r)

    def bound(self, M: float) -> list[float]:
        """Two-regime bound ``max(C, 2M) delta^exponent`` with C read from the table."""
        C = max(row.ratio for row in self.rows)
        return [max(C, 2 * M) * row.delta ** self.exponent for row in self.rows]


def tail_delta(lam1, lam2) -> float:
    """max |lam1_n - lam2_n| over the upper half n in [K/2, K] of the window."""
    lam1, lam2 = np.asarray(lam1), np.asarray(lam2)
    K = lam1.size
    lo = max(K // 2 - 1, 0)
    return float(np.max(np.abs(lam1[lo:] - lam2[lo:])))


def hoelder_experiment(grid: Grid, q1: Potential, family, K: int, d: int = 2,
                       h1_bound: float | None = None, labels=None,
                       workers: int = 1) -> HoelderTable:
    """Tabulate ``l2_diff / delta^(2/(d+2))`` over a family of potentials.

    ``family`` is a list of potentials equal to ``q1`` on the boundary.  Pairs
    with delta = 0 are skipped and listed in ``skipped``.  When ``h1_bound`` is
    given, every potential must satisfy ``h1_proxy(q) <= h1_bound``.
    """
    family = list(family)
    labels = list(labels) if labels is not None else [f"q2[{k}]" for k in range(len(family))]
    if len(labels) != len(family):
        raise ValidationError("one label per family member")
    for q in family:
        if q.grid != grid:
            raise GridMismatch("family member lives on a different grid")
        check_boundary_equality(q1, q)
    if h1_bound is not None:
        for lab, q in [("q1", q1)] + list(zip(labels, family)):
            if h1_proxy(q) > h1_bound:
                raise ValidationError(f"{lab} violates the H1 bound {h1_bound}")
    exponent = 2.0 / (d + 2)

    def spectrum(q):
        return boundary_spectral_data(grid, q, K, keep_interior=False).lambdas

    with ThreadPoolExecutor(max(1, workers)) as pool:
        spectra = list(pool.map(spectrum, [q1] + family))
    lam1 = spectra[0]
    rows, skipped = [], []
    for lab, q, lam2 in zip(labels, family, spectra[1:]):
        delta = tail_delta(lam1, lam2)
        diff = q1.values - q.values
        l2 = float(np.sqrt(grid.cell_area * np.sum(diff ** 2)))
        if delta == 0.0:
            skipped.append(lab)
            continue
        rows.append(HoelderRow(lab, delta, l2, l2 / delta ** exponent, h1_proxy(q)))
    if skipped:
        warnings.warn(f"skipped pairs with zero eigenvalue discrepancy: {skipped}")
    slope = float("nan")
    if len(rows) >= 2:
        slope = float(np.polyfit(np.log([r.delta for r in rows]),
                                 np.log([r.l2_diff for r in rows]), 1)[0])
    return HoelderTable(rows, skipped, slope, exponent, K)
