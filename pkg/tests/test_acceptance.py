"""One test per acceptance criterion; each prints a single PASS/FAIL line.

Criteria that the method cannot meet at the stated settings fail here on
purpose; the measured shortfall and its cause are recorded in the notes.
"""

import time

import numpy as np
import pytest

from blab import build_grid, sample_potential
from blab.bvp import (ShiftedProblem, decay_profile, neumann_difference, potential_dimming,
                      solve_direct, solve_series)
from blab.cli import run
from blab.config import ExperimentConfig
from blab.domain import BoundaryFunction, interior_norm
from blab.isozaki import (PairingEngine, fourier_estimate, incomplete_data_bound,
                          k12_constant, make_probe, pairing_sweep, reconstruct_difference,
                          resolvent_check, richardson, spectral_s_tau, tail_functionals,
                          tail_terms, tau_schedule)
from blab.parabolic import (BoundaryInput, cluster_thetas, default_gammas, dn_kernel_samples,
                            exp_sum_extract, match_eigenbases, parabolic_dn, recover_from_traces,
                            relative_trace_error, simulate_traces, smooth_bump,
                            spectral_parabolic_dn, theta_kernel)
from blab.spectral import BoundarySpectralData, boundary_spectral_data
from blab.stability import band_split, hoelder_experiment, plancherel_defect
from oracles import (FOURIER_SINSIN, TWO_TERM_AMPS, TWO_TERM_RATES, analytic_bsd,
                     continuum_eigenvalues, distinct)


@pytest.fixture
def verdict(capsys):
    """Print ``criterion N: PASS|FAIL detail`` past pytest's capture, then assert."""
    t0 = time.perf_counter()

    def report(n, ok, detail):
        with capsys.disabled():
            secs = time.perf_counter() - t0
            print(f"\ncriterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}  [{secs:.1f} s]")
        assert ok, f"criterion {n}: {detail}"
    return report


def _zero(grid):
    return sample_potential(lambda x, y: 0 * x, grid, 1.0)


def _bump(grid, a=1.0):
    return sample_potential(lambda x, y: a * np.sin(np.pi * x) * np.sin(np.pi * y), grid, 1.0)


def _smooth_f(grid):
    return BoundaryFunction.from_callable(lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y) + x,
                                          grid)


def test_c01_spectrum_oracle(verdict):
    g = build_grid(1, 1, 64, 64)
    bsd = boundary_spectral_data(g, _zero(g), 10, keep_interior=False)
    exact = continuum_eigenvalues(1, 1, 10)
    err = np.max(np.abs(bsd.lambdas / exact - 1))
    sizes = {round(float(np.mean(bsd.lambdas[c.start:c.stop])) / np.pi ** 2): len(c)
             for c in bsd.clusters()}
    ok = err <= 0.01 and sizes.get(5) == 2
    verdict(1, ok, f"max rel err {err:.2e} (<= 1e-2), cluster at 5 pi^2 of size {sizes.get(5)}")


def test_c02_shift_exactness(verdict):
    g = build_grid(1, 1, 32, 32)
    q = _bump(g, 0.8)
    c = 0.7
    qc = sample_potential(lambda x, y: 0.8 * np.sin(np.pi * x) * np.sin(np.pi * y) + c, g, 2.0)
    a = boundary_spectral_data(g, q, 50)
    b = boundary_spectral_data(g, qc, 50)
    shift = np.max(np.abs(b.lambdas - a.lambdas - c)) / np.max(a.lambdas)
    proj = 0.0
    for cl in a.clusters():
        Pa, Pb = a.phis[:, cl.start:cl.stop], b.phis[:, cl.start:cl.stop]
        proj = max(proj, g.cell_area * np.max(np.abs(Pa @ Pa.T - Pb @ Pb.T)))
    ok = shift < 1e-13 and proj < 1e-10 and b.clusters() == a.clusters()
    verdict(2, ok, f"max |dlam - c| / lam_K {shift:.1e}, projector gap {proj:.1e}")


def test_c03_series_representation(verdict):
    g = build_grid(1, 1, 32, 32)
    q, f = _zero(g), _smooth_f(g)
    bsd = boundary_spectral_data(g, q, 200)
    ud = solve_direct(ShiftedProblem(g, q, -50.0, f))
    errs = [(solve_series(bsd, f, -50.0, K) - ud).norm() / ud.norm() for K in (50, 100, 150, 200)]
    mono = all(b <= a for a, b in zip(errs, errs[1:]))
    verdict(3, errs[-1] <= 1e-2 and mono,
            f"rel L2 err at K=200 {errs[-1]:.3f} (<= 1e-2), monotone in K: {mono}; "
            f"K=50..200: {', '.join(f'{e:.3f}' for e in errs)}")


def test_c04_decay_and_dimming(verdict):
    g = build_grid(1, 1, 32, 32)
    q1 = sample_potential(lambda x, y: 1 + 0 * x, g, 1.0)
    f = _smooth_f(g)
    lams = [-1e2, -1e4]
    d = decay_profile(g, q1, f, lams)
    m = potential_dimming(g, q1, _zero(g), f, lams)
    rd, rm = d[0] / d[1], m[0] / m[1]
    verdict(4, rd >= 10 and rm >= 10,
            f"decay x{rd:.2f}, dimming x{rm:.1f} (each >= 10) at nx=32; the boundary layer "
            f"is under-resolved at -1e4, finer grids give a smaller decay ratio")


def test_c05_neumann_difference(verdict):
    g = build_grid(1, 1, 64, 64)
    q, f = _zero(g), _smooth_f(g)
    bsd = boundary_spectral_data(g, q, 200, keep_interior=False)
    dd = (solve_direct(ShiftedProblem(g, q, -30.0, f)).normal_trace()
          - solve_direct(ShiftedProblem(g, q, -80.0, f)).normal_trace())
    err = (neumann_difference(bsd, f, -30.0, -80.0) - dd).norm() / dd.norm()
    verdict(5, err <= 0.05, f"rel L2(bdry) err {err:.3f} (<= 0.05) at K=200, nx=64")


def test_c06_probe_invariants(verdict):
    g = build_grid(1, 1, 64, 64)
    X, Y = g.mesh()
    worst = dict(eta=0.0, im=0.0, growth=0.0, product=0.0)
    count = 0
    for xi in [(0.0, 0.0), (2 * np.pi, 0.0), (3.0, -4.0), (4 * np.pi, 4 * np.pi)]:
        for tau in tau_schedule(xi, 40.0):
            p = make_probe(xi, tau, g)
            count += 1
            worst["eta"] = max(worst["eta"], abs(np.linalg.norm(p.eta_plus) - 1),
                               abs(np.linalg.norm(p.eta_minus) - 1))
            worst["im"] = max(worst["im"], abs(p.lambda_plus.imag - 2 * tau))
            for vals, x, y in ((p.interior_plus, X, Y), (p.interior_minus, X, Y),
                               (p.f_plus.values, g.bx, g.by), (p.f_minus.values, g.bx, g.by)):
                worst["growth"] = max(worst["growth"],
                                      float(np.max(np.abs(vals) / np.exp(np.hypot(x, y)))))
            worst["product"] = max(worst["product"], p.product_identity_error())
    # the growth bound is attained (|f| = e^|x| along the decay direction); allow rounding
    excess = worst["growth"] - 1.0
    ok = (worst["eta"] <= 1e-12 and worst["im"] == 0.0 and excess <= 1e-12
          and worst["product"] <= 1e-10)
    verdict(6, ok, f"{count} probes: ||eta|-1| {worst['eta']:.1e}, Im gap {worst['im']:.1e}, "
                   f"max |f| e^-|x| - 1 = {excess:.1e}, product {worst['product']:.1e}")


def test_c07_resolvent_bounds(verdict):
    g = build_grid(1, 1, 64, 64)
    q = sample_potential(lambda x, y: 1 + 0 * x, g, 1.0)
    eng = PairingEngine(g)
    checks = [resolvent_check(g, q, make_probe((0.0, 0.0), t, g, "discrete"), eng)
              for t in tau_schedule((0.0, 0.0), 40.0)]
    rv = max(c.v_norm / c.v_bound for c in checks)
    ru = max(c.u_norm / c.u_bound for c in checks)
    verdict(7, all(c.ok for c in checks),
            f"{len(checks)} tau values, max ||u-f+|| / (M c*/2tau) {rv:.3f}, "
            f"max ||u|| / (1.1 (M+2) c*/2) {ru:.3f} (each <= 1)")


@pytest.mark.slow
def test_c08_isozaki_formula(verdict):
    g = build_grid(1, 1, 256, 256)
    q1, q2 = _bump(g), _zero(g)
    eng = PairingEngine(g)
    xi = (0.0, 0.0)
    same = max(abs(s.S) for s in pairing_sweep(g, q1, q1, xi, tau_schedule(xi, 40.0), eng))
    F = fourier_estimate(g, q1, q2, xi, tau_schedule(xi, 40.0), eng)
    rel = abs(F - FOURIER_SINSIN) / FOURIER_SINSIN
    taus = np.geomspace(5.0, 40.0, 8)
    S = np.array([s.S for s in pairing_sweep(g, q1, q2, xi, taus, eng)])
    slope = float(np.polyfit(np.log(taus), np.log(np.abs(S - FOURIER_SINSIN)), 1)[0])
    ok = same <= 1e-8 and rel <= 0.02 and -1.3 <= slope <= -0.7
    verdict(8, ok, f"(a) max|S| for q1=q2 {same:.1e}; (b) estimate {F.real:.5f} vs "
                   f"{FOURIER_SINSIN:.5f}, rel {rel:.2%}; (c) slope {slope:.3f} at nx=256")


def test_c09_incomplete_data(verdict):
    g = build_grid(1, 1, 64, 64)
    b1 = boundary_spectral_data(g, _bump(g), 200, keep_interior=False)
    b2 = boundary_spectral_data(g, _zero(g), 200, keep_interior=False)
    rng = np.random.default_rng(7)
    lam, P = b2.lambdas.copy(), b2.psis.copy()
    lam[:3] += 5.0 * rng.uniform(0.5, 1.0, 3)
    P[:, :3] *= 1 + 0.3 * rng.standard_normal((g.n_boundary, 3))
    order = np.argsort(lam, kind="stable")
    bp = BoundarySpectralData(g, lam[order], P[:, order], b2.sup_bound)
    taus = tau_schedule((0.0, 0.0), 40.0)
    probes = [make_probe((0.0, 0.0), t, g, "discrete") for t in taus]
    ratio = max(abs(spectral_s_tau(b1, bp, p) - spectral_s_tau(b1, b2, p))
                / incomplete_data_bound(b1, bp, p, 4) for p in probes)
    top = probes[-2:]
    e0 = richardson(taus[-2:], [spectral_s_tau(b1, b2, p) for p in top])
    e1 = richardson(taus[-2:], [spectral_s_tau(b1, bp, p) for p in top])
    change = abs(e1 - e0) / abs(e0)
    verdict(9, ratio <= 1 and change <= 0.03,
            f"max change / bound {ratio:.1e} (<= 1); estimate change {change:.2%} (<= 3%) "
            f"for lam + 5 U(0.5,1), psi (1 + 0.3 N(0,1)) on pairs 1-3")


def test_c10_tail_functionals(verdict):
    g = build_grid(1, 1, 64, 64)
    b1 = boundary_spectral_data(g, _zero(g), 200, keep_interior=False)
    rng = np.random.default_rng(0)
    K = len(b1)
    n = np.arange(1, K + 1)
    lam2 = b1.lambdas + 0.5 * (1 + 1 / n) * rng.uniform(0.5, 1.0, K)
    ps2 = b1.psis * (1 + 0.05 * rng.uniform(-1, 1, K) / np.sqrt(n))
    order = np.argsort(lam2)
    b2 = BoundarySpectralData(g, lam2[order], ps2[:, order], b1.sup_bound)
    taus = np.geomspace(5.0, 40.0, 9)
    probes = [make_probe((0.0, 0.0), t, g) for t in taus]
    terms = [tail_terms(b1, b2, p) for p in probes]
    A = np.abs([t[0][0] for t in terms])
    B = np.abs([t[1][0] for t in terms])
    sa = float(np.polyfit(np.log(taus), np.log(A), 1)[0])
    sb = float(np.polyfit(np.log(taus), np.log(B), 1)[0])
    slopes_ok = abs(sa + 2) <= 0.3 and abs(sb + 1) <= 0.15
    dl = np.abs(b1.lambdas - b2.lambdas)
    dpsi2 = g.weights @ np.abs(b1.psis - b2.psis) ** 2
    C = k12_constant(b1.sup_bound, g)
    margins = []
    for N in (1, 5, 20):
        bound = C * (np.sqrt(np.sum(dpsi2[N - 1:])) + np.max(dl[N - 1:]))
        worst = max(abs(sum(tail_functionals(b1, b2, p, N)))
                    for p, t in zip(probes, taus) if 20.0 <= t <= 40.0)
        margins.append(worst / bound)
    k12_ok = max(margins) <= 1
    verdict(10, slopes_ok and k12_ok,
            f"n=1 slopes A {sa:.2f} (-2 +/- 15%), B {sb:.2f} (-1 +/- 15%); "
            f"k12 |S| / bound for N=1,5,20: {', '.join(f'{m:.1e}' for m in margins)}")


@pytest.mark.slow
def test_c11_reconstruction(verdict):
    g = build_grid(1, 1, 256, 256)
    q1, q2 = _bump(g, 0.5), _zero(g)
    rec = reconstruct_difference(g, q1, q2, 8 * np.pi, 40.0, workers=4)
    d = q1.values - q2.values
    err = interior_norm(rec.values - d, g) / interior_norm(d, g)
    verdict(11, err <= 0.2 and rec.imag_residual <= 0.05,
            f"rel L2 err {err:.2%} (<= 20%), imaginary residual {rec.imag_residual:.2%} "
            f"(<= 5%), {len(rec.xis)} frequencies at nx=256")


def test_c12_stability(verdict):
    g = build_grid(1, 1, 32, 32)
    q1 = _zero(g)
    eps = (0.02, 0.05, 0.1, 0.2)
    fam = [sample_potential(lambda x, y, e=e: e * np.sin(np.pi * x) * np.sin(np.pi * y), g, 1.0)
           for e in eps]
    table = hoelder_experiment(g, q1, fam, 100, h1_bound=10.0, labels=[f"eps={e}" for e in eps])
    planch = max(plancherel_defect(g, q.values - q1.values) for q in fam)
    split = max(b.defect for q in fam for b in band_split(g, q.values - q1.values, [1, 5, 20]))
    ok = table.ratio_spread <= 5 and planch <= 1e-8 and split <= 1e-8
    verdict(12, ok, f"ratio spread {table.ratio_spread:.3f} (<= 5), Plancherel defect "
                    f"{planch:.1e}, band split defect {split:.1e}, log-log slope {table.slope:.3f}")


def test_c13_parabolic_routes(verdict):
    g = build_grid(1, 1, 32, 32)
    gin, gout = default_gammas(g)
    gv = np.where(gin, np.sin(np.pi * np.clip(g.bx, 0, 1)), 0.0)
    T0, eps = 0.2, 0.05
    inp = BoundaryInput(BoundaryFunction(g, gv), smooth_bump(0.0, T0 - eps), T0, 0.25, eps, gin)
    errs = []
    for c in (0.0, 1.0):
        q = sample_potential(lambda x, y, c=c: c + 0 * x, g, 1.0)
        bsd = boundary_spectral_data(g, q, 200, keep_interior=False)
        errs.append(relative_trace_error(spectral_parabolic_dn(bsd, inp, gout),
                                         parabolic_dn(g, q, inp, 512, gout)))
    verdict(13, max(errs) <= 0.02,
            f"rel err q=0 {errs[0]:.3%}, q=1 {errs[1]:.3%} (<= 2%) at K=200, nt=512, nx=32")


def test_c14_exp_sum_extraction(verdict):
    s = 0.05 + 0.004 * np.arange(100)
    Y = sum(a * np.exp(-r * s) for a, r in zip(TWO_TERM_AMPS, TWO_TERM_RATES))
    m = exp_sum_extract(Y, s, 2)
    synth = max(np.max(np.abs(m.rates / TWO_TERM_RATES - 1)),
                np.max(np.abs(m.amplitudes / TWO_TERM_AMPS - 1)))

    g = build_grid(1, 1, 32, 32)
    gin, gout = default_gammas(g)
    idx = np.flatnonzero(gin)
    G = np.zeros((g.n_boundary, idx.size))
    G[idx, np.arange(idx.size)] = 1.0
    exact5 = distinct(continuum_eigenvalues(1, 1, 100))[:5]
    kern = exp_sum_extract(dn_kernel_samples(analytic_bsd(g, 100), G, s), s, 5)
    kern_err = float(np.max(np.abs(kern.rates / exact5 - 1)))

    exp = simulate_traces(g, _zero(g), T0=0.5, nt=500, n_s=100, stride=4, width_steps=10,
                          eps=0.05)
    rec = recover_from_traces(exp, 5)
    e2e = float(np.max(np.abs(rec.lambdas / exact5 - 1)))
    ref = cluster_thetas(boundary_spectral_data(g, _zero(g), 40, keep_interior=False),
                         exp.gamma_in, exp.gamma_out, 5)
    theta = max(np.linalg.norm(rec.thetas[k] - T) / np.linalg.norm(T)
                for k, (_, mult, T) in enumerate(ref) if mult == 1)
    ok = synth <= 1e-8 and kern_err <= 1e-3 and e2e <= 0.01 and theta <= 0.05
    verdict(14, ok, f"two-term {synth:.1e} (<= 1e-8); kernel rates {kern_err:.1e} (<= 1e-3); "
                    f"end-to-end eigenvalues {e2e:.2%} (<= 1%), rank-1 theta {theta:.2%} (<= 5%)")


def test_c15_eigenbasis_alignment(verdict):
    g = build_grid(1, 1, 32, 32)
    b = boundary_spectral_data(g, _zero(g), 30, keep_interior=False)
    rng = np.random.default_rng(1)
    P = b.psis.copy()
    rots = {}
    for c in b.clusters():
        Q, _ = np.linalg.qr(rng.standard_normal((len(c), len(c))))
        if c.start == 0:
            Q = -Q
        P[:, c.start:c.stop] = P[:, c.start:c.stop] @ Q
        rots[c.start] = Q
    b2 = BoundarySpectralData(g, b.lambdas, P, b.sup_bound)
    al = match_eigenbases(b, b2)
    m_err = max(np.max(np.abs(a.M - rots[a.cluster.start])) for a in al)
    ortho = max(a.orthogonality_defect for a in al)
    gin, gout = default_gammas(g)
    gauge = max(np.max(np.abs(theta_kernel(P[:, c.start:c.stop], gin, gout)
                              - theta_kernel(b.psis[:, c.start:c.stop], gin, gout)))
                for c in b.clusters())
    nonzero = len(cluster_thetas(b, gin, gout)) == len(b.clusters())
    ok = m_err <= 1e-8 and ortho <= 1e-8 and gauge <= 1e-10 and nonzero
    verdict(15, ok, f"{len(al)} clusters: M err {m_err:.1e}, M^T M - I {ortho:.1e}, "
                    f"theta gauge {gauge:.1e}, theta nonvanishing on every cluster: {nonzero}")


def test_c16_determinism(verdict, tmp_path):
    from pathlib import Path
    cfg = ExperimentConfig.load(Path(__file__).resolve().parent.parent / "configs"
                                / "all_stages.yaml")
    outs = [tmp_path / "a", tmp_path / "b"]
    mans = [run(cfg, o) for o in outs]

    def payload(root):
        return {p.relative_to(root).as_posix(): p.read_bytes()
                for p in sorted(root.rglob("*")) if p.is_file() and p.name != "manifest.json"}

    same = payload(outs[0]) == payload(outs[1]) and mans[0]["files"] == mans[1]["files"]
    verdict(16, same, f"{len(mans[0]['files'])} files byte-identical across two runs of "
                      f"all_stages.yaml; manifest checksums equal")
