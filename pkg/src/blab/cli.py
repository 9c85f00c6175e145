"""Command line entry point: single-purpose subcommands and config-driven runs.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
Every writing command needs ``--out``; directories are assembled in a
temporary sibling and renamed into place, single files are replaced
atomically.  ``BLAB_WORKERS`` (or ``--workers``) sets the thread count for
stages that parallelize.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from . import io as bio
from .bvp import ShiftedProblem, solve_direct, solve_series
from .config import STAGES, ExperimentConfig, validate
from .domain import BoundaryFunction, Grid, Potential, EDGES
from .errors import BlabError, ValidationError
from .isozaki import (PairingEngine, fourier_estimate, pairing_sweep, reconstruct_difference,
                      tau_schedule)
from .parabolic import (BoundaryInput, ExpSumModel, TraceExperiment, default_gammas,
                        match_eigenbases, parabolic_dn, recover_from_traces, relative_trace_error,
                        sampled_signal, simulate_traces, smooth_bump, spectral_parabolic_dn)
from .spectral import BoundarySpectralData, boundary_spectral_data
from .stability import band_split, hoelder_experiment, plancherel_defect

WORKERS_ENV = "BLAB_WORKERS"
MANIFEST = "manifest.json"
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def env_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"{WORKERS_ENV}={raw!r} is not an integer") from None
    if n < 1:
        raise ValidationError(f"{WORKERS_ENV} must be >= 1")
    return n


# -- atomic output -------------------------------------------------------------

def _publish(tmp: Path, out: Path):
    if out.exists() and not out.is_dir():
        raise ValidationError(f"{out} exists and is not a directory")
    if out.exists():
        old = Path(tempfile.mkdtemp(dir=out.parent, prefix=f".{out.name}.old-"))
        os.rename(out, old / "x")
        os.rename(tmp, out)
        shutil.rmtree(old)
    else:
        os.rename(tmp, out)


def inventory(root: Path) -> dict:
    """sha256 of every file below ``root`` except the manifest, keyed by relative path."""
    files = sorted(p for p in root.rglob("*") if p.is_file() and p.name != MANIFEST)
    return {p.relative_to(root).as_posix(): bio.sha256(p) for p in files}


class Run:
    """Staging directory plus the manifest bookkeeping of one invocation."""

    def __init__(self, out, config_sha: str, seed: int | None = None):
        self.out = Path(out)
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(dir=self.out.parent, prefix=f".{self.out.name}.tmp-"))
        self.config_sha = config_sha
        self.seed = seed
        self.stages: list[dict] = []

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        entry = {"name": name, "status": "running"}
        self.stages.append(entry)
        try:
            yield self.tmp
        except BaseException as exc:
            entry["status"] = "failed"
            entry["error"] = f"{type(exc).__name__}: {exc}"
            raise
        else:
            entry["status"] = "ok"
        finally:
            entry["seconds"] = round(time.perf_counter() - t0, 6)

    def manifest(self, status: str) -> dict:
        return {"tool": "blab", "version": __version__, "config_sha256": self.config_sha,
                "seed": self.seed, "status": status, "stages": self.stages,
                "files": inventory(self.tmp)}

    def finish(self, status: str) -> dict:
        """Write the manifest last, then move the directory into place."""
        man = self.manifest(status)
        bio.write_json(self.tmp / MANIFEST, man)
        _publish(self.tmp, self.out)
        return man


def run_stages(out, config_sha: str, stages, seed=None) -> dict:
    """Execute ``[(name, fn(dir))]`` in order; a failing stage publishes a partial manifest."""
    r = Run(out, config_sha, seed)
    try:
        for name, fn in stages:
            with r.stage(name) as d:
                fn(d)
    except BaseException:
        r.finish("failed")
        raise
    return r.finish("ok")


def _atomic_file(path, write):
    """``write(tmp_path)`` then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.tmp-")
    os.close(fd)
    try:
        write(Path(tmp))
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def _args_sha(args: argparse.Namespace) -> str:
    doc = {k: str(v) for k, v in sorted(vars(args).items()) if k not in ("func", "out")}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


# -- file helpers ----------------------------------------------------------------

def _field_rows(grid: Grid, values):
    X, Y = grid.mesh()
    return [(x, y, v) for x, y, v in zip(X, Y, np.asarray(values, float))]


def write_field(d: Path, stem: str, grid: Grid, values, title: str):
    bio.write_csv(d / f"{stem}.csv", ["x", "y", "value"], _field_rows(grid, values))
    bio.svg_field(d / f"{stem}.svg", grid, values, title)
    bio.gnuplot_field_script(d / f"{stem}.gp", f"{stem}.csv", title)


def boundary_rows(grid: Grid, mask, *columns):
    idx = np.flatnonzero(mask)
    cols = [np.asarray(c) for c in columns]
    return [(int(k), EDGES[grid.edge[k]], grid.arclength[k], *(c[n] for c in cols))
            for n, k in enumerate(idx)]


def load_potential(path) -> Potential:
    try:
        return Potential.from_json(Path(path).read_text())
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ValidationError(f"cannot read potential {path}: {exc}") from exc


def load_boundary(path, grid: Grid) -> BoundaryFunction:
    try:
        return BoundaryFunction.from_csv(Path(path).read_text(), grid)
    except (OSError, KeyError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"cannot read boundary data {path}: {exc}") from exc


def load_signal(path):
    """Two-column ``t,h`` CSV (header optional) as a piecewise-linear signal."""
    try:
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2,
                          skiprows=1 if not _is_number(Path(path).read_text().split(",")[0])
                          else 0)
    except (OSError, ValueError) as exc:
        raise ValidationError(f"cannot read signal {path}: {exc}") from exc
    if data.shape[1] != 2:
        raise ValidationError("signal CSV needs two columns t,h")
    return sampled_signal(data[:, 0], data[:, 1])


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def _pair(text: str, kind=float):
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
    try:
        return tuple(kind(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def save_traces(d: Path, exp: TraceExperiment):
    d.mkdir(parents=True, exist_ok=True)
    meta = {"grid": exp.grid.to_dict(), "dt": exp.dt, "width": exp.width, "T0": exp.T0,
            "s_values": exp.s_values, "gamma_in": np.flatnonzero(exp.gamma_in),
            "gamma_out": np.flatnonzero(exp.gamma_out)}
    bio.write_json(d / "meta.json", meta)
    S, O, I = exp.traces.shape
    j, o, i = np.meshgrid(np.arange(S), np.arange(O), np.arange(I), indexing="ij")
    rows = zip(j.ravel(), o.ravel(), i.ravel(), exp.traces.ravel())
    bio.write_csv(d / "traces.csv", ["j", "out", "in", "value"], rows)


def load_traces(d) -> TraceExperiment:
    d = Path(d)
    try:
        meta = json.loads((d / "meta.json").read_text())
        data = np.loadtxt(d / "traces.csv", delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read traces from {d}: {exc}") from exc
    grid = Grid.from_dict(meta["grid"])
    gin = np.zeros(grid.n_boundary, bool)
    gin[meta["gamma_in"]] = True
    gout = np.zeros(grid.n_boundary, bool)
    gout[meta["gamma_out"]] = True
    shape = (len(meta["s_values"]), int(gout.sum()), int(gin.sum()))
    if data.shape[0] != np.prod(shape):
        raise ValidationError(f"traces.csv has {data.shape[0]} rows, expected {np.prod(shape)}")
    traces = np.zeros(shape)
    traces[data[:, 0].astype(int), data[:, 1].astype(int), data[:, 2].astype(int)] = data[:, 3]
    return TraceExperiment(grid, np.array(meta["s_values"]), traces, gin, gout,
                           meta["dt"], meta["width"], meta["T0"])


def model_doc(model: ExpSumModel, lambdas=None) -> dict:
    doc = {"rates": model.rates, "amplitudes": model.amplitudes, "residual": model.residual,
           "multiplicity": model.multiplicity, "rank_collapse": model.rank_collapse,
           "refined": model.refined}
    if lambdas is not None:
        doc["lambdas"] = lambdas
    return doc


def write_recovery(d: Path, exp: TraceExperiment, K: int):
    rec = recover_from_traces(exp, K)
    ranks = [int(np.linalg.matrix_rank(t, tol=1e-3 * max(np.max(np.abs(t)), 1e-300)))
             for t in rec.thetas]
    bio.write_json(d / "model.json", model_doc(rec.model, rec.lambdas))
    bio.write_csv(d / "lambdas.csv", ["k", "lambda", "rate", "theta_rank"],
                  [(k + 1, l, r, m) for k, (l, r, m)
                   in enumerate(zip(rec.lambdas, rec.model.rates, ranks))])
    for k, th in enumerate(rec.thetas):
        rows = [(a, b, th[a, b]) for a in range(th.shape[0]) for b in range(th.shape[1])]
        bio.write_csv(d / f"theta_{k + 1}.csv", ["in", "out", "value"], rows)
    return rec


# -- config-driven stages --------------------------------------------------------

def _bump_family(cfg: ExperimentConfig, grid: Grid, q1: Potential):
    """q1 + eps sin(pi x / Lx) sin(pi y / Ly): equal to q1 on the boundary."""
    X, Y = grid.mesh()
    shape = np.sin(np.pi * X / grid.Lx) * np.sin(np.pi * Y / grid.Ly)
    bshape = np.sin(np.pi * grid.bx / grid.Lx) * np.sin(np.pi * grid.by / grid.Ly)
    fam = []
    for e in cfg.solver.family:
        bv = None if q1.boundary_values is None else q1.boundary_values + e * bshape
        fam.append(Potential(grid, q1.values + e * shape, q1.sup_bound + abs(e), bv))
    return fam


def stability_outputs(d: Path, grid: Grid, q1: Potential, family, labels, K: int, workers: int):
    table = hoelder_experiment(grid, q1, family, K, labels=labels, workers=workers)
    by_label = dict(zip(labels, family))
    rows = []
    for r in table.rows:
        diff = q1.values - by_label[r.label].values
        rows.append((r.label, r.delta, r.l2_diff, r.ratio, r.h1,
                     plancherel_defect(grid, diff)))
    bio.write_csv(d / "table.csv", ["label", "delta", "l2_diff", "ratio", "h1", "plancherel"],
                  rows)
    split = []
    for r in table.rows:
        diff = q1.values - by_label[r.label].values
        for b in band_split(grid, diff, [2 * np.pi, 4 * np.pi, 8 * np.pi]):
            split.append((r.label, b.R, b.low, b.high, b.total, b.defect))
    bio.write_csv(d / "band_split.csv", ["label", "R", "low", "high", "total", "defect"], split)
    bio.write_json(d / "summary.json", {
        "K": table.K, "exponent": table.exponent, "slope": table.slope,
        "ratio_spread": table.ratio_spread if table.rows else None,
        "skipped": table.skipped, "bound": table.bound(q1.sup_bound) if table.rows else [],
        "note": table.note})
    deltas = [r.delta for r in table.rows]
    bio.svg_lines(d / "table.svg",
                  {"||q1-q2||": (deltas, [r.l2_diff for r in table.rows]),
                   "ratio": (deltas, [r.ratio for r in table.rows])},
                  "delta", "value", "stability table", logx=True, logy=True)
    bio.gnuplot_script(d / "table.gp", "table.csv", 2, {"||q1-q2||": 3, "ratio": 4},
                       "delta", "value", logx=True, logy=True)
    return table


def stage_functions(cfg: ExperimentConfig, workers: int):
    grid = cfg.grid()
    s = cfg.solver
    q1, q2 = cfg.q1.sample(grid), cfg.q2.sample(grid)

    def bsd(d):
        b1 = boundary_spectral_data(grid, q1, s.K, keep_interior=False)
        b1.save(d / "bsd1")
        b2 = boundary_spectral_data(grid, q2, s.K, keep_interior=False)
        b2.save(d / "bsd2")
        n = np.arange(1, s.K + 1)
        bio.svg_lines(d / "bsd1" / "lambdas.svg", {"q1": (n, b1.lambdas), "q2": (n, b2.lambdas)},
                      "n", "lambda_n", "Dirichlet eigenvalues")
        bio.gnuplot_script(d / "bsd1" / "lambdas.gp", "lambdas.csv", 1, {"q1": 2},
                           "n", "lambda_n")

    def solve(d):
        sub = d / "solve"
        sub.mkdir()
        f = cfg.boundary.sample(grid)
        u = solve_direct(ShiftedProblem(grid, q1, complex(s.lam), f))
        write_field(sub, "field", grid, u.values.real, f"u at lambda = {s.lam}")
        tr = u.normal_trace()
        mask = np.ones(grid.n_boundary, bool)
        bio.write_csv(sub / "trace.csv", ["index", "edge", "s", "re", "im"],
                      boundary_rows(grid, mask, tr.values.real, tr.values.imag))

    def isozaki(d):
        sub = d / "isozaki"
        sub.mkdir()
        engine = PairingEngine(grid)
        est_rows = []
        for k, xi in enumerate(s.xi):
            taus = tau_schedule(xi, s.tau.max, s.tau.ratio, s.tau.floor, grid)
            samples = pairing_sweep(grid, q1, q2, xi, taus, engine)
            bio.write_csv(sub / f"xi_{k + 1}.csv", ["tau", "re_S", "im_S"],
                          [(p.tau, p.S.real, p.S.imag) for p in samples])
            F = fourier_estimate(grid, q1, q2, xi, taus, engine)
            est_rows.append((k + 1, xi[0], xi[1], F.real, F.imag))
            bio.svg_lines(sub / f"xi_{k + 1}.svg",
                          {"|S_tau|": (taus, [abs(p.S) for p in samples])},
                          "tau", "|S_tau|", f"xi = ({xi[0]:.4g}, {xi[1]:.4g})",
                          logx=True, logy=True)
            bio.gnuplot_script(sub / f"xi_{k + 1}.gp", f"xi_{k + 1}.csv", 1, {"Re S": 2},
                               "tau", "Re S_tau", logx=True)
        bio.write_csv(sub / "estimates.csv", ["k", "xi_x", "xi_y", "re", "im"], est_rows)

    def reconstruct(d):
        sub = d / "reconstruct"
        sub.mkdir()
        rec = reconstruct_difference(grid, q1, q2, s.xi_max, s.tau.max, s.tau.ratio,
                                     workers=workers)
        write_field(sub, "field", grid, rec.values, "reconstructed q1 - q2")
        truth = q1.values - q2.values
        err = np.linalg.norm(rec.values - truth) / max(np.linalg.norm(truth), 1e-300)
        bio.write_csv(sub / "coefficients.csv", ["xi_x", "xi_y", "re", "im"],
                      [(x[0], x[1], F.real, F.imag) for x, F in zip(rec.xis, rec.estimates)])
        bio.write_json(sub / "summary.json", {"imag_residual": rec.imag_residual,
                                              "relative_l2_error": err,
                                              "hermitian_defect": rec.hermitian_defect()})

    def stability(d):
        sub = d / "stability"
        sub.mkdir()
        fam = _bump_family(cfg, grid, q1)
        labels = [f"eps={e:g}" for e in s.family]
        stability_outputs(sub, grid, q1, fam, labels, s.K, workers)

    def parabolic(d):
        sub = d / "parabolic"
        sub.mkdir()
        gin, gout = default_gammas(grid)
        g = cfg.boundary.sample(grid, gin)
        eps = 0.25 * s.T0 if s.eps is None else s.eps
        inp = BoundaryInput(g, smooth_bump(0.0, s.T0 - eps), s.T0, s.T, eps, gin)
        direct = parabolic_dn(grid, q1, inp, s.nt, gout)
        b = boundary_spectral_data(grid, q1, s.K, keep_interior=False)
        spec = spectral_parabolic_dn(b, inp, gout)
        bio.write_csv(sub / "trace.csv", ["index", "edge", "s", "time_route", "spectral_route"],
                      boundary_rows(grid, gout, direct.values, spec.values))
        bio.write_json(sub / "summary.json",
                       {"relative_error": relative_trace_error(direct, spec), "K": s.K,
                        "nt": s.nt, "T0": s.T0, "T": s.T, "eps": eps})
        arc = grid.arclength[gout]
        bio.svg_lines(sub / "trace.svg", {"time-stepped": (arc, direct.values),
                                          "spectral": (arc, spec.values)},
                      "arclength", "flux", "parabolic DN trace on Gamma_out")
        bio.gnuplot_script(sub / "trace.gp", "trace.csv", 3,
                           {"time-stepped": 4, "spectral": 5}, "arclength", "flux")

    def extract(d):
        sub = d / "extract"
        sub.mkdir()
        e = cfg.extract
        exp = simulate_traces(grid, q1, e.T0, e.nt, e.n_s, e.stride, e.pulse_steps, e.eps)
        if e.noise > 0:
            rng = np.random.default_rng(cfg.seed)
            scale = e.noise * float(np.max(np.abs(exp.traces)))
            exp = TraceExperiment(exp.grid, exp.s_values,
                                  exp.traces + scale * rng.standard_normal(exp.traces.shape),
                                  exp.gamma_in, exp.gamma_out, exp.dt, exp.width, exp.T0)
        save_traces(sub / "traces", exp)
        rec = write_recovery(sub, exp, e.K)
        k = np.arange(1, len(rec.lambdas) + 1)
        bio.svg_lines(sub / "lambdas.svg", {"recovered": (k, rec.lambdas)},
                      "k", "lambda_k", "distinct eigenvalues from traces")
        bio.gnuplot_script(sub / "lambdas.gp", "lambdas.csv", 1, {"recovered": 2},
                           "k", "lambda_k")

    return {"bsd": bsd, "solve": solve, "isozaki": isozaki, "reconstruct": reconstruct,
            "stability": stability, "parabolic": parabolic, "extract": extract}


def run(cfg: ExperimentConfig, out=None, workers: int = 1) -> dict:
    """Validate, then execute the configured stages in dependency order."""
    diags = validate(cfg)
    if diags:
        raise ValidationError("; ".join(str(x) for x in diags))
    out = out or cfg.out
    if not out:
        raise ValidationError("no output directory: pass --out or set 'out' in the config")
    fns = stage_functions(cfg, workers)
    order = [name for name in STAGES if name in set(cfg.stages)]
    return run_stages(out, cfg.digest(), [(n, fns[n]) for n in order], cfg.seed)


# -- subcommands ---------------------------------------------------------------

def cmd_validate(args):
    diags = validate(ExperimentConfig.load(args.config))
    for d in diags:
        print(d)
    if diags:
        return EXIT_VALIDATION
    print("config is valid")
    return EXIT_OK


def cmd_run(args):
    cfg = ExperimentConfig.load(args.config)
    man = run(cfg, args.out, args.workers)
    print(f"wrote {len(man['files'])} files to {args.out or cfg.out}")
    return EXIT_OK


def cmd_bsd(args):
    cfg = ExperimentConfig.load(args.config)
    diags = [d for d in validate(cfg) if d.code in ("domain", "bound", "potential", "K")]
    if diags:
        raise ValidationError("; ".join(str(x) for x in diags))
    grid = cfg.grid()
    q = cfg.q1.sample(grid)
    K = args.K or cfg.solver.K

    def stage(d):
        boundary_spectral_data(grid, q, K, keep_interior=False).save(d)

    run_stages(args.out, cfg.digest(), [("bsd", stage)], cfg.seed)
    print(f"wrote K={K} boundary spectral data to {args.out}")
    return EXIT_OK


def cmd_solve(args):
    q = load_potential(args.q)
    f = load_boundary(args.f, q.grid)
    lam = complex(*args.lam)
    if args.route == "direct":
        u = solve_direct(ShiftedProblem(q.grid, q, lam, f))
    else:
        b = boundary_spectral_data(q.grid, q, args.K)
        u = solve_series(b, f, lam, args.K)
        u = type(u)(u.grid, u.values, f.values)
    grid = q.grid

    def stage(d):
        X, Y = grid.mesh()
        bio.write_csv(d / "field.csv", ["x", "y", "re", "im"],
                      zip(X, Y, u.values.real, np.imag(u.values)))
        bio.svg_field(d / "field.svg", grid, np.real(u.values), f"Re u, lambda = {lam}")
        tr = u.normal_trace()
        bio.write_csv(d / "trace.csv", ["index", "edge", "s", "re", "im"],
                      boundary_rows(grid, np.ones(grid.n_boundary, bool),
                                    tr.values.real, np.imag(tr.values)))

    run_stages(args.out, _args_sha(args), [("solve", stage)])
    print(f"wrote field and Neumann trace to {args.out}")
    return EXIT_OK


def cmd_isozaki(args):
    q1, q2 = load_potential(args.q1), load_potential(args.q2)
    grid = q1.grid
    taus = tau_schedule(args.xi, args.tau_max, args.ratio, grid=grid)
    engine = PairingEngine(grid)
    samples = pairing_sweep(grid, q1, q2, args.xi, taus, engine)
    F = fourier_estimate(grid, q1, q2, args.xi, taus, engine)
    _atomic_file(args.out, lambda p: bio.write_csv(
        p, ["tau", "re_S", "im_S"], [(s.tau, s.S.real, s.S.imag) for s in samples]))
    print(f"fourier estimate {F.real:.17g} {F.imag:+.17g}i")
    return EXIT_OK


def cmd_reconstruct(args):
    q1, q2 = load_potential(args.q1), load_potential(args.q2)
    grid = q1.grid

    def stage(d):
        rec = reconstruct_difference(grid, q1, q2, args.xi_max, args.tau_max, args.ratio,
                                     workers=args.workers)
        write_field(d, "field", grid, rec.values, "reconstructed q1 - q2")
        bio.write_csv(d / "coefficients.csv", ["xi_x", "xi_y", "re", "im"],
                      [(x[0], x[1], F.real, F.imag) for x, F in zip(rec.xis, rec.estimates)])
        bio.write_json(d / "summary.json", {"imag_residual": rec.imag_residual})

    run_stages(args.out, _args_sha(args), [("reconstruct", stage)])
    print(f"wrote reconstruction to {args.out}")
    return EXIT_OK


def cmd_stability(args):
    q1 = load_potential(args.q1)
    paths = sorted(Path(args.family).glob("*.json"))
    if not paths:
        raise ValidationError(f"no potential JSON files in {args.family}")
    family = [load_potential(p) for p in paths]

    def stage(d):
        t = stability_outputs(d, q1.grid, q1, family, [p.stem for p in paths], args.K,
                              args.workers)
        print(f"ratio spread {t.ratio_spread:.4g}, slope {t.slope:.4g}")

    run_stages(args.out, _args_sha(args), [("stability", stage)])
    return EXIT_OK


def cmd_parabolic_dn(args):
    q = load_potential(args.q)
    grid = q.grid
    gin, gout = default_gammas(grid)
    g = load_boundary(args.g, grid)
    T = args.T if args.T is not None else 1.25 * args.T0
    inp = BoundaryInput(g, load_signal(args.h), args.T0, T, args.eps, gin)
    if args.route == "time":
        tr = parabolic_dn(grid, q, inp, args.nt, gout)
    else:
        tr = spectral_parabolic_dn(boundary_spectral_data(grid, q, args.K, keep_interior=False),
                                   inp, gout)
    _atomic_file(args.out, lambda p: bio.write_csv(
        p, ["index", "edge", "s", "flux"], boundary_rows(grid, gout, tr.values)))
    print(f"wrote flux on {int(gout.sum())} Gamma_out samples to {args.out}")
    return EXIT_OK


def cmd_extract_bsd(args):
    exp = load_traces(args.traces)
    run_stages(args.out, _args_sha(args), [("extract", lambda d: write_recovery(d, exp, args.K))])
    print(f"wrote exponential-sum model to {args.out}")
    return EXIT_OK


def cmd_match(args):
    b1, b2 = BoundarySpectralData.load(args.bsd1), BoundarySpectralData.load(args.bsd2)
    al = match_eigenbases(b1, b2)
    doc = [{"cluster": [a.cluster.start + 1, a.cluster.stop], "M": a.M,
            "condition": a.condition, "orthogonality_defect": a.orthogonality_defect}
           for a in al]
    _atomic_file(args.out, lambda p: bio.write_json(p, {"convention": "Psi1 = M Psi2",
                                                        "clusters": doc}))
    print(f"matched {len(al)} clusters")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--workers", type=int, default=None,
                   help=f"thread count (default: ${WORKERS_ENV} or 1)")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("validate", cmd_validate, "check a config without computing")
    sp.add_argument("--config", required=True)

    sp = add("run", cmd_run, "execute the stages of a config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", help="output directory (overrides 'out' in the config)")

    sp = add("bsd", cmd_bsd, "boundary spectral data of q1 from a config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--K", type=int)
    sp.add_argument("--out", required=True)

    sp = add("solve", cmd_solve, "shifted Dirichlet problem")
    sp.add_argument("--q", required=True)
    sp.add_argument("--lambda", dest="lam", required=True, type=_pair, metavar="RE,IM")
    sp.add_argument("--f", required=True)
    sp.add_argument("--route", choices=("direct", "series"), default="direct")
    sp.add_argument("--K", type=int, default=200)
    sp.add_argument("--out", required=True)

    sp = add("isozaki", cmd_isozaki, "S_tau sweep at one frequency")
    sp.add_argument("--q1", required=True)
    sp.add_argument("--q2", required=True)
    sp.add_argument("--xi", required=True, type=_pair, metavar="FX,FY")
    sp.add_argument("--tau-max", type=float, required=True)
    sp.add_argument("--ratio", type=float, default=1.3)
    sp.add_argument("--out", required=True)

    sp = add("reconstruct", cmd_reconstruct, "band-limited synthesis of q1 - q2")
    sp.add_argument("--q1", required=True)
    sp.add_argument("--q2", required=True)
    sp.add_argument("--xi-max", type=float, required=True)
    sp.add_argument("--tau-max", type=float, required=True)
    sp.add_argument("--ratio", type=float, default=1.3)
    sp.add_argument("--out", required=True)

    sp = add("stability", cmd_stability, "stability table over a potential family")
    sp.add_argument("--q1", required=True)
    sp.add_argument("--family", required=True, help="directory of potential JSON files")
    sp.add_argument("--K", type=int, required=True)
    sp.add_argument("--out", required=True, help="output directory (CSV, SVG, script)")

    sp = add("parabolic-dn", cmd_parabolic_dn, "parabolic DN trace at T0")
    sp.add_argument("--q", required=True)
    sp.add_argument("--g", required=True)
    sp.add_argument("--h", required=True, help="CSV t,h")
    sp.add_argument("--T0", type=float, required=True)
    sp.add_argument("--T", type=float)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--nt", type=int, default=512)
    sp.add_argument("--route", choices=("time", "spectral"), default="time")
    sp.add_argument("--K", type=int, default=200)
    sp.add_argument("--out", required=True)

    sp = add("extract-bsd", cmd_extract_bsd, "eigenvalues and theta kernels from traces")
    sp.add_argument("--traces", required=True)
    sp.add_argument("--K", type=int, required=True)
    sp.add_argument("--out", required=True)

    sp = add("match", cmd_match, "per-cluster orthogonal matrices between two BSDs")
    sp.add_argument("--bsd1", required=True)
    sp.add_argument("--bsd2", required=True)
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.workers = args.workers if args.workers is not None else env_workers()
        if args.workers < 1:
            raise ValidationError("--workers must be >= 1")
        return args.func(args)
    except (ValidationError, OSError) as exc:
        print(f"blab: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (BlabError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"blab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
