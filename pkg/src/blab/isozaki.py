"""Complex exponential probes and the DN pairing functional S_tau.

The probe pair f_tau^+/- turns the difference of two DN maps into an
approximate Fourier coefficient of q1 - q2.  Pairings are evaluated by a
direct sparse solve (one LU per shift, shared across all frequencies) or
from boundary spectral data, and the large-tau limit is read off with a
two-point Richardson step in 1/tau.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bvp import ShiftedSolver, neumann_difference, solve_direct, ShiftedProblem
from .domain import BoundaryFunction, Grid, Potential, boundary_inner, interior_norm
from .errors import GridMismatch, UnderResolvedError, ValidationError
from .spectral import BoundarySpectralData, assemble, normal_trace

log = logging.getLogger(__name__)

POINTS_PER_WAVELENGTH = 8
PAIRING_DISPERSION = "discrete"
FLUX_ORDER = 4
TAU_RATIO = 1.3
TAU_FLOOR = 5.0


@dataclass(frozen=True)
class IsozakiProbe:
    xi: np.ndarray
    eta: np.ndarray
    tau: float
    beta: float
    eta_plus: np.ndarray
    eta_minus: np.ndarray
    lambda_plus: complex
    lambda_minus: complex
    f_plus: BoundaryFunction = field(repr=False)
    f_minus: BoundaryFunction = field(repr=False)
    interior_plus: np.ndarray = field(repr=False)
    interior_minus: np.ndarray = field(repr=False)
    correction: np.ndarray = field(default_factory=lambda: np.zeros(2, complex))

    @property
    def grid(self) -> Grid:
        return self.f_plus.grid

    def product_identity_error(self) -> float:
        """max |f+ conj(f-) - exp(-i (tau+i)/tau xi.x)| over interior and boundary samples."""
        g = self.grid
        X, Y = g.mesh()
        k = (self.tau + 1j) / self.tau
        err = 0.0
        for fp, fm, x, y in ((self.interior_plus, self.interior_minus, X, Y),
                             (self.f_plus.values, self.f_minus.values, g.bx, g.by)):
            target = np.exp(-1j * k * (self.xi[0] * x + self.xi[1] * y))
            err = max(err, float(np.max(np.abs(fp * np.conj(fm) - target))))
        return err


def _plane_wave(kvec, x, y):
    return np.exp(1j * (kvec[0] * x + kvec[1] * y))


def _symbol(k, h):
    """Symbol of the 5-point -Laplacian on exp(i k.x), and its gradient in k."""
    s = sum(2.0 / h[a] ** 2 * (1.0 - np.cos(k[a] * h[a])) for a in range(2))
    ds = np.array([2.0 / h[a] * np.sin(k[a] * h[a]) for a in range(2)])
    return s, ds


def discrete_correction(k_plus, k_conj_minus, lam, grid: Grid, tol: float = 1e-13):
    """Common shift d with symbol(k+ + d) = symbol(conj(k-) + d) = lam.

    Adding the same d to both wave vectors keeps f+ conj(f-) unchanged while
    making both probes exact discrete Helmholtz solutions.  Newton with a
    minimum-norm step (the Jacobian is singular when xi = 0).
    """
    h = (grid.hx, grid.hy)
    d = np.zeros(2, complex)
    # the symbol is evaluated with rounding error ~ eps * 4/h^2 per axis
    floor = 64 * np.finfo(float).eps * sum(4.0 / a ** 2 for a in h)
    for _ in range(60):
        s1, g1 = _symbol(k_plus + d, h)
        s2, g2 = _symbol(k_conj_minus + d, h)
        F = np.array([s1 - lam, s2 - lam])
        if np.max(np.abs(F)) <= max(tol * abs(lam), floor):
            return d
        d = d + np.linalg.lstsq(np.array([g1, g2]), -F, rcond=1e-12)[0]
    raise ValidationError("discrete probe correction did not converge; tau too large for grid")


def make_probe(xi, tau: float, grid: Grid, dispersion: str = "continuum") -> IsozakiProbe:
    """Test functions ``exp(i (tau +/- i) eta_tau^+/- . x)`` for frequency ``xi``.

    ``dispersion="discrete"`` shifts both wave vectors by a common small
    vector so the samples solve the 5-point Helmholtz equation exactly; the
    product f+ conj(f-) is unchanged.
    """
    xi = np.asarray(xi, dtype=float).reshape(2)
    tau = float(tau)
    nxi = float(np.hypot(*xi))
    if not tau > nxi + 1.0:
        raise ValidationError(f"tau = {tau} must exceed |xi| + 1 = {nxi + 1.0}")
    eta = np.array([1.0, 0.0]) if nxi == 0.0 else np.array([-xi[1], xi[0]]) / nxi
    beta = float(np.sqrt(1.0 - nxi ** 2 / (4.0 * tau ** 2)))
    eta_p = beta * eta - xi / (2.0 * tau)
    eta_m = beta * eta + xi / (2.0 * tau)
    lam_p = (tau + 1j) ** 2
    kp, kc = (tau + 1j) * eta_p, (tau + 1j) * eta_m   # kc = conj((tau - i) eta_m)
    if dispersion == "discrete":
        d = discrete_correction(kp, kc, lam_p, grid)
    elif dispersion == "continuum":
        d = np.zeros(2, complex)
    else:
        raise ValidationError(f"unknown dispersion mode {dispersion!r}")
    kp, km = kp + d, np.conj(kc + d)
    X, Y = grid.mesh()
    return IsozakiProbe(
        xi=xi, eta=eta, tau=tau, beta=beta, eta_plus=eta_p, eta_minus=eta_m,
        lambda_plus=lam_p, lambda_minus=(tau - 1j) ** 2,
        f_plus=BoundaryFunction(grid, _plane_wave(kp, grid.bx, grid.by)),
        f_minus=BoundaryFunction(grid, _plane_wave(km, grid.bx, grid.by)),
        interior_plus=_plane_wave(kp, X, Y),
        interior_minus=_plane_wave(km, X, Y),
        correction=d,
    )


def c_star(grid: Grid) -> float:
    """Uniform bound on the probes: (1 + diam^1/2 + perimeter^1/2) sup e^|x|.

    The domain's "size" entering the bound is its diameter, and the sup is
    over the closed rectangle with one corner at the origin.
    """
    return (1.0 + np.sqrt(grid.diameter) + np.sqrt(grid.perimeter)) * np.exp(grid.diameter)


def max_resolved_tau(grid: Grid, ppw: int = POINTS_PER_WAVELENGTH) -> float:
    return 2.0 * np.pi / (ppw * max(grid.hx, grid.hy))


def check_resolution(grid: Grid, tau_max: float, ppw: int = POINTS_PER_WAVELENGTH):
    if tau_max > max_resolved_tau(grid, ppw):
        h = max(grid.hx, grid.hy)
        need = int(np.ceil(ppw * tau_max * max(grid.Lx, grid.Ly) / (2 * np.pi))) - 1
        raise UnderResolvedError(
            f"tau_max = {tau_max} gives {2 * np.pi / (tau_max * h):.2f} points per "
            f"wavelength (< {ppw}); need n >= {need} interior nodes per axis")


class PairingEngine:
    """Direct-route pairings with one sparse LU per (potential, tau).

    The shift (tau + i)^2 does not depend on xi, so a factorisation is reused
    for every frequency probed at that tau.  Cached factorisations are kept
    per engine; one engine per worker.
    """

    def __init__(self, grid: Grid, max_cached: int = 8, flux_order: int = FLUX_ORDER):
        self.grid = grid
        self.flux_order = flux_order if min(grid.nx, grid.ny) >= 4 else 2
        self.max_cached = max_cached
        self._ops: dict[int, object] = {}
        self._solvers: dict[tuple[int, float], ShiftedSolver] = {}

    def _solver(self, q: Potential, tau: float) -> ShiftedSolver:
        if q.grid != self.grid:
            raise GridMismatch("potential sampled on a different grid")
        key = (id(q), float(tau))
        s = self._solvers.get(key)
        if s is None:
            if len(self._solvers) >= self.max_cached:
                self._solvers.pop(next(iter(self._solvers)))
            # keep q alive alongside its operator so id(q) cannot be recycled
            if id(q) not in self._ops:
                self._ops[id(q)] = (q, assemble(self.grid, q))
            s = ShiftedSolver(self._ops[id(q)][1], (tau + 1j) ** 2)
            self._solvers[key] = s
        return s

    def solution(self, q: Potential, probe: IsozakiProbe) -> np.ndarray:
        return self._solver(q, probe.tau).solve(probe.f_plus)

    def pairing(self, q: Potential, probe: IsozakiProbe) -> complex:
        u = self.solution(q, probe)
        flux = normal_trace(u, self.grid, probe.f_plus, order=self.flux_order)
        return boundary_inner(flux, probe.f_minus, self.grid)


def dn_pairing_direct(grid: Grid, q: Potential, probe: IsozakiProbe, which: int = 1,
                      engine: PairingEngine | None = None) -> complex:
    """``<Lambda_{q, lambda+} f+, f->`` on the boundary via a direct solve.

    ``which`` only labels the potential (1 or 2) for logging.
    """
    if which not in (1, 2):
        raise ValidationError("which must be 1 or 2")
    engine = engine or PairingEngine(grid)
    val = engine.pairing(q, probe)
    log.debug("S_%d(tau=%g, xi=%s) = %s", which, probe.tau, probe.xi, val)
    return val


def dn_pairing_spectral(bsd: BoundarySpectralData, probe: IsozakiProbe, mu: float,
                        reference_flux: BoundaryFunction, K: int | None = None) -> complex:
    """Spectral-series pairing ``<d_nu(u_lambda+ - u_mu), f-> + <reference_flux, f->``."""
    if mu >= -(1.0 + bsd.sup_bound):
        raise ValidationError(f"mu = {mu} must lie below -(1 + M)")
    diff = neumann_difference(bsd, probe.f_plus, probe.lambda_plus, mu, K)
    g = bsd.grid
    return boundary_inner(diff, probe.f_minus, g) + boundary_inner(reference_flux, probe.f_minus, g)


def reference_flux(grid: Grid, q: Potential, probe: IsozakiProbe, mu: float) -> BoundaryFunction:
    """Neumann trace of the direct solution at the real shift ``mu`` with data f+."""
    u = solve_direct(ShiftedProblem(grid, q, mu, probe.f_plus))
    return u.normal_trace(order=FLUX_ORDER if min(grid.nx, grid.ny) >= 4 else 2)


@dataclass(frozen=True)
class PairingSample:
    tau: float
    S1: complex
    S2: complex

    @property
    def S(self) -> complex:
        return self.S1 - self.S2


def s_tau(grid: Grid, q1: Potential, q2: Potential, probe: IsozakiProbe,
          engine: PairingEngine | None = None) -> PairingSample:
    engine = engine or PairingEngine(grid)
    return PairingSample(probe.tau, dn_pairing_direct(grid, q1, probe, 1, engine),
                         dn_pairing_direct(grid, q2, probe, 2, engine))


def tau_schedule(xi, tau_max: float, ratio: float = TAU_RATIO, floor: float = TAU_FLOOR,
                 grid: Grid | None = None) -> np.ndarray:
    """Increasing geometric schedule ``tau_max / ratio^k`` down to max(floor, |xi|+2).

    Anchoring at the top means every frequency shares the largest taus, and
    with them the cached factorisations.
    """
    nxi = float(np.hypot(*np.asarray(xi, float)))
    lo = max(floor, nxi + 2.0)
    if grid is not None:
        check_resolution(grid, tau_max)
    if tau_max < lo:
        raise ValidationError(f"tau_max = {tau_max} is below the schedule floor {lo}")
    taus = [float(tau_max)]
    while taus[-1] / ratio >= lo:
        taus.append(taus[-1] / ratio)
    return np.array(taus[::-1])


def richardson(taus, values) -> complex:
    """Eliminate the 1/tau term using the two largest taus."""
    taus = np.asarray(taus, float)
    values = np.asarray(values)
    if taus.size < 2:
        raise ValidationError("Richardson extrapolation needs two tau values")
    order = np.argsort(taus)
    t1, t2 = taus[order[-2]], taus[order[-1]]
    s1, s2 = values[order[-2]], values[order[-1]]
    return complex((t2 * s2 - t1 * s1) / (t2 - t1))


def _validate_schedule(grid: Grid, xi, taus):
    taus = np.asarray(taus, float)
    if taus.size < 2 or np.any(np.diff(taus) <= 0):
        raise ValidationError("tau schedule must be strictly increasing with >= 2 entries")
    nxi = float(np.hypot(*np.asarray(xi, float)))
    if taus[0] <= nxi + 1.0:
        raise ValidationError(f"tau schedule starts at {taus[0]} <= |xi| + 1 = {nxi + 1}")
    check_resolution(grid, taus[-1])
    return taus


def pairing_sweep(grid: Grid, q1: Potential, q2: Potential, xi, taus,
                  engine: PairingEngine | None = None) -> list[PairingSample]:
    engine = engine or PairingEngine(grid)
    return [s_tau(grid, q1, q2, make_probe(xi, t, grid, PAIRING_DISPERSION), engine)
            for t in taus]


def fourier_estimate(grid: Grid, q1: Potential, q2: Potential, xi, tau_schedule,
                     engine: PairingEngine | None = None) -> complex:
    """Estimate of ``int (q1 - q2) exp(-i xi.x) dx`` from the S_tau sequence."""
    taus = _validate_schedule(grid, xi, tau_schedule)
    top = taus[-2:]
    samples = pairing_sweep(grid, q1, q2, xi, top, engine)
    return richardson(top, [s.S for s in samples])


def xi_lattice(grid: Grid, xi_max: float) -> np.ndarray:
    """Frequencies (2 pi / L) Z^2 of the bounding box with |xi| <= xi_max, sorted."""
    kx = int(np.floor(xi_max * grid.Lx / (2 * np.pi)))
    ky = int(np.floor(xi_max * grid.Ly / (2 * np.pi)))
    pts = [(2 * np.pi * a / grid.Lx, 2 * np.pi * b / grid.Ly)
           for a in range(-kx, kx + 1) for b in range(-ky, ky + 1)]
    pts = [p for p in pts if np.hypot(*p) <= xi_max * (1 + 1e-12)]
    return np.array(sorted(pts))


@dataclass
class Reconstruction:
    grid: Grid
    values: np.ndarray = field(repr=False)
    imag_residual: float
    xis: np.ndarray = field(repr=False)
    estimates: np.ndarray = field(repr=False)

    def hermitian_defect(self) -> float:
        """max over the lattice of |F(-xi) - conj F(xi)| relative to max |F|."""
        lookup = {tuple(np.round(x, 12)): F for x, F in zip(self.xis, self.estimates)}
        scale = max(np.max(np.abs(self.estimates)), 1e-300)
        return max(abs(lookup[tuple(np.round(-x, 12))] - np.conj(F)) / scale
                   for x, F in zip(self.xis, self.estimates))


def synthesize(grid: Grid, xis, coeffs) -> np.ndarray:
    """(1/area) sum_xi F(xi) exp(i xi.x) at the interior nodes (complex)."""
    X, Y = grid.mesh()
    out = np.zeros(grid.size, complex)
    for (a, b), F in zip(xis, coeffs):
        out += F * np.exp(1j * (a * X + b * Y))
    return out / (grid.Lx * grid.Ly)


def reconstruct_difference(grid: Grid, q1: Potential, q2: Potential, xi_max: float,
                           tau_max: float, ratio: float = TAU_RATIO,
                           engine: PairingEngine | None = None,
                           workers: int = 1) -> Reconstruction:
    """Band-limited synthesis of q1 - q2 from the Fourier estimates on the xi-lattice.

    With ``workers > 1`` the lattice is split into contiguous chunks, one
    engine per thread; estimates are reassembled in lattice order.
    """
    check_resolution(grid, tau_max)
    xis = xi_lattice(grid, xi_max)

    def run(chunk, eng):
        return [fourier_estimate(grid, q1, q2, xi, tau_schedule(xi, tau_max, ratio), eng)
                for xi in chunk]

    if workers <= 1 or len(xis) < 2:
        est = np.array(run(xis, engine or PairingEngine(grid)))
    else:
        chunks = np.array_split(xis, min(workers, len(xis)))
        with ThreadPoolExecutor(len(chunks)) as pool:
            parts = list(pool.map(lambda c: run(c, PairingEngine(grid)), chunks))
        est = np.array([v for part in parts for v in part])
    z = synthesize(grid, xis, est)
    re_norm = interior_norm(z.real, grid)
    resid = interior_norm(z.imag, grid) / re_norm if re_norm > 0 else 0.0
    if resid > 0.05:
        warnings.warn(f"imaginary residual {resid:.3f} exceeds 5% of the real part")
    return Reconstruction(grid, z.real, float(resid), xis, est)


# -- spectral-data functionals -------------------------------------------------

def _pairings(probe: IsozakiProbe, psis: np.ndarray):
    """<f+, psi_n> and <f-, psi_n> for all columns of ``psis``."""
    w = probe.grid.weights
    a = (w * probe.f_plus.values) @ np.conj(psis)
    b = (w * probe.f_minus.values) @ np.conj(psis)
    return a, b


def zeta(probe: IsozakiProbe, psi, phi=None):
    """``<f+, psi> conj(<f-, phi>)``; with ``phi`` omitted, phi = psi.

    Accepts single boundary vectors or column stacks.
    """
    psi = psi.values if isinstance(psi, BoundaryFunction) else np.asarray(psi)
    phi = psi if phi is None else (phi.values if isinstance(phi, BoundaryFunction)
                                   else np.asarray(phi))
    w = probe.grid.weights
    a = (w * probe.f_plus.values) @ np.conj(psi)
    b = (w * probe.f_minus.values) @ np.conj(phi)
    return a * np.conj(b)


def _check_pair(bsd1, bsd2, probe):
    if bsd1.grid != bsd2.grid or bsd1.grid != probe.grid:
        raise GridMismatch("spectral data and probe live on different grids")


def spectral_terms(bsd: BoundarySpectralData, probe: IsozakiProbe, K: int | None = None):
    """Per-pair contributions ``zeta(psi_n) / (lambda+ - lambda_n)``."""
    K = len(bsd) if K is None else K
    return zeta(probe, bsd.psis[:, :K]) / (probe.lambda_plus - bsd.lambdas[:K])


def spectral_s_tau(bsd1: BoundarySpectralData, bsd2: BoundarySpectralData,
                   probe: IsozakiProbe, K: int | None = None) -> complex:
    """S_tau from spectral data alone, in the mu -> -inf form, truncated at K."""
    _check_pair(bsd1, bsd2, probe)
    K = min(len(bsd1), len(bsd2)) if K is None else K
    return complex(np.sum(spectral_terms(bsd1, probe, K)) - np.sum(spectral_terms(bsd2, probe, K)))


def incomplete_data_term(bsd1: BoundarySpectralData, bsd2: BoundarySpectralData,
                         probe: IsozakiProbe, N: int) -> complex:
    """Contribution of the first N - 1 pairs to S_tau (zero for N = 1)."""
    _check_pair(bsd1, bsd2, probe)
    if not 1 <= N <= min(len(bsd1), len(bsd2)) + 1:
        raise ValidationError(f"N = {N} outside [1, K + 1]")
    if N == 1:
        return 0j
    m = N - 1
    return complex(np.sum(spectral_terms(bsd1, probe, m)) - np.sum(spectral_terms(bsd2, probe, m)))


def incomplete_data_bound(bsd1: BoundarySpectralData, bsd2: BoundarySpectralData,
                          probe: IsozakiProbe, N: int) -> float:
    """c*^2 sum_{n<N} (|psi_1n|^2 + |psi_2n|^2) / (2 tau)."""
    m = N - 1
    s = np.sum(bsd1.psi_norms()[:m] ** 2) + np.sum(bsd2.psi_norms()[:m] ** 2)
    return float(c_star(probe.grid) ** 2 * s / (2.0 * probe.tau))


def tail_terms(bsd1: BoundarySpectralData, bsd2: BoundarySpectralData, probe: IsozakiProbe):
    """Per-n arrays (A_n, B_n) of the mu -> -inf decomposition over the common window."""
    _check_pair(bsd1, bsd2, probe)
    K = min(len(bsd1), len(bsd2))
    l1, l2 = bsd1.lambdas[:K], bsd2.lambdas[:K]
    p1, p2 = bsd1.psis[:, :K], bsd2.psis[:, :K]
    lp = probe.lambda_plus
    A = (l1 - l2) * zeta(probe, p1) / ((lp - l1) * (lp - l2))
    d = p1 - p2
    B = (zeta(probe, d, p1) + zeta(probe, p2, d)) / (lp - l2)
    return A, B


def tail_functionals(bsd1: BoundarySpectralData, bsd2: BoundarySpectralData,
                     probe: IsozakiProbe, N: int):
    """(sum_{n>=N} A_n, sum_{n>=N} B_n), 1-based N."""
    A, B = tail_terms(bsd1, bsd2, probe)
    if not 1 <= N <= A.size:
        raise ValidationError(f"N = {N} outside [1, {A.size}]")
    return complex(np.sum(A[N - 1:])), complex(np.sum(B[N - 1:]))


def k12_constant(M: float, grid: Grid) -> float:
    """(M + 2)(M + 5) c*^2 / 2."""
    return (M + 2.0) * (M + 5.0) * c_star(grid) ** 2 / 2.0


@dataclass(frozen=True)
class ResolventCheck:
    tau: float
    v_norm: float
    v_bound: float
    u_norm: float
    u_bound: float

    @property
    def ok(self) -> bool:
        return self.v_norm <= self.v_bound and self.u_norm <= self.u_bound


def resolvent_check(grid: Grid, q: Potential, probe: IsozakiProbe,
                    engine: PairingEngine | None = None, slack: float = 1.1) -> ResolventCheck:
    """Compare ||u - f+|| and ||u|| with M c*/(2 tau) and (M+2) c*/2 (times slack)."""
    engine = engine or PairingEngine(grid)
    u = engine.solution(q, probe)
    cs = c_star(grid)
    M = q.sup_bound
    return ResolventCheck(probe.tau, interior_norm(u - probe.interior_plus, grid),
                          M * cs / (2 * probe.tau), interior_norm(u, grid),
                          (M + 2) * cs / 2 * slack)
