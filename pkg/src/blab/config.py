"""Experiment configuration (YAML) and static validation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .domain import BoundaryFunction, Grid, Potential, build_grid, sample_potential
from .errors import BoundViolation, ValidationError
from .isozaki import POINTS_PER_WAVELENGTH, max_resolved_tau

STAGES = ("bsd", "solve", "isozaki", "reconstruct", "stability", "parabolic", "extract")


@dataclass
class DomainSpec:
    Lx: float = 1.0
    Ly: float = 1.0
    nx: int = 32
    ny: int = 32


@dataclass
class PotentialSpec:
    """Named analytic form.

    ``constant``: value.  ``bump``: amplitude * sin(m pi x/Lx) sin(k pi y/Ly).
    ``sum``: list of bump/constant terms.  ``M`` defaults to the analytic
    sup bound of the form.
    """

    form: str = "constant"
    value: float = 0.0
    amplitude: float = 1.0
    m: int = 1
    k: int = 1
    terms: list = field(default_factory=list)
    M: float | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialSpec":
        d = dict(d)
        terms = [cls.from_dict(t) for t in d.pop("terms", [])]
        unknown = set(d) - {"form", "value", "amplitude", "m", "k", "M"}
        if unknown:
            raise ValidationError(f"unknown potential keys {sorted(unknown)}")
        return cls(terms=terms, **d)

    def func(self, Lx: float, Ly: float):
        if self.form == "constant":
            c = float(self.value)
            return lambda x, y: c + 0.0 * x
        if self.form == "bump":
            a, m, k = float(self.amplitude), int(self.m), int(self.k)
            return lambda x, y: a * np.sin(m * np.pi * x / Lx) * np.sin(k * np.pi * y / Ly)
        if self.form == "sum":
            fs = [t.func(Lx, Ly) for t in self.terms]
            return lambda x, y: sum(f(x, y) for f in fs) + 0.0 * x
        raise ValidationError(f"unknown potential form {self.form!r}")

    def analytic_bound(self) -> float:
        if self.form == "constant":
            return abs(float(self.value))
        if self.form == "bump":
            return abs(float(self.amplitude))
        if self.form == "sum":
            return float(sum(t.analytic_bound() for t in self.terms))
        raise ValidationError(f"unknown potential form {self.form!r}")

    def bound(self) -> float:
        return self.analytic_bound() if self.M is None else float(self.M)

    def sample(self, grid: Grid) -> Potential:
        return sample_potential(self.func(grid.Lx, grid.Ly), grid, self.bound())


@dataclass
class BoundaryDataSpec:
    """``sin(m pi s)`` on the listed edges (s = normalized position along the edge)."""

    edges: list = field(default_factory=lambda: ["bottom"])
    m: int = 1

    def sample(self, grid: Grid, mask=None) -> BoundaryFunction:
        m = int(self.m)
        onx = np.isin(grid.edge, [0, 2])
        s = np.where(onx, grid.bx / grid.Lx, grid.by / grid.Ly)
        vals = np.sin(m * np.pi * s) * grid.edge_mask(*self.edges)
        if mask is not None:
            vals = vals * np.asarray(mask, bool)
        return BoundaryFunction(grid, vals)


@dataclass
class TauSpec:
    max: float = 40.0
    ratio: float = 1.3
    floor: float = 5.0


@dataclass
class SolverSpec:
    K: int = 50
    lam: float = -50.0
    mu: float = -1.0e4
    tau: TauSpec = field(default_factory=TauSpec)
    xi: list = field(default_factory=lambda: [[0.0, 0.0]])
    xi_max: float = 8 * np.pi
    nt: int = 512
    T: float = 0.25
    T0: float = 0.2
    eps: float | None = None
    family: list = field(default_factory=lambda: [0.02, 0.05, 0.1, 0.2])


@dataclass
class ExtractSpec:
    """Pulse-train experiment: shifts and pulse widths are whole time steps."""

    K: int = 5
    T0: float = 0.5
    nt: int = 500
    eps: float = 0.05
    n_s: int = 100
    stride: int = 4
    pulse_steps: int = 10
    noise: float = 0.0


@dataclass
class ExperimentConfig:
    domain: DomainSpec = field(default_factory=DomainSpec)
    q1: PotentialSpec = field(default_factory=PotentialSpec)
    q2: PotentialSpec = field(default_factory=PotentialSpec)
    boundary: BoundaryDataSpec = field(default_factory=BoundaryDataSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    extract: ExtractSpec = field(default_factory=ExtractSpec)
    stages: list = field(default_factory=lambda: ["bsd"])
    out: str | None = None
    seed: int = 0

    # -- construction --------------------------------------------------------
    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d or {})
        known = {"domain", "q1", "q2", "boundary", "solver", "extract", "stages", "out", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        solver = dict(d.get("solver", {}))
        tau = TauSpec(**solver.pop("tau", {}))
        try:
            return cls(domain=DomainSpec(**d.get("domain", {})),
                       q1=PotentialSpec.from_dict(d.get("q1", {})),
                       q2=PotentialSpec.from_dict(d.get("q2", {})),
                       boundary=BoundaryDataSpec(**d.get("boundary", {})),
                       solver=SolverSpec(tau=tau, **solver),
                       extract=ExtractSpec(**d.get("extract", {})),
                       stages=list(d.get("stages", ["bsd"])),
                       out=d.get("out"), seed=int(d.get("seed", 0)))
        except TypeError as exc:
            raise ValidationError(f"malformed config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as exc:
            raise ValidationError(f"cannot parse {path}: {exc}") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        doc = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(doc.encode()).hexdigest()

    def grid(self) -> Grid:
        d = self.domain
        return build_grid(float(d.Lx), float(d.Ly), int(d.nx), int(d.ny))


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str

    def __str__(self):
        return f"[{self.code}] {self.message}"


def validate(cfg: ExperimentConfig) -> list[Diagnostic]:
    """Check every precondition of the configured stages before any compute."""
    out: list[Diagnostic] = []

    def add(code, msg):
        out.append(Diagnostic(code, msg))

    d, s = cfg.domain, cfg.solver
    for name in cfg.stages:
        if name not in STAGES:
            add("stage", f"unknown stage {name!r}; known: {', '.join(STAGES)}")
    if not (d.Lx > 0 and d.Ly > 0):
        add("domain", "domain lengths must be positive")
    if d.nx < 2 or d.ny < 2:
        add("domain", "nx and ny must be >= 2")
    if out:
        return out
    grid = cfg.grid()

    for label, spec in (("q1", cfg.q1), ("q2", cfg.q2)):
        try:
            spec.sample(grid)
        except BoundViolation as exc:
            add("bound", f"{label}: {exc}")
        except ValidationError as exc:
            add("potential", f"{label}: {exc}")

    if not 1 <= s.K <= grid.size:
        add("K", f"K={s.K} must lie in [1, {grid.size}]")
    stages = set(cfg.stages)
    if stages & {"isozaki", "reconstruct"}:
        t = s.tau
        if t.ratio <= 1:
            add("tau", "tau ratio must exceed 1")
        xis = [np.asarray(x, float) for x in s.xi] if "isozaki" in stages else []
        if "reconstruct" in stages:
            xis.append(np.array([s.xi_max, 0.0]))
        for xi in xis:
            nxi = float(np.hypot(*xi))
            lo = max(t.floor, nxi + 2.0)
            if t.max <= nxi + 1.0:
                add("tau", f"tau_0 = {t.max} <= |xi|+1 = {nxi + 1:.4g}")
            elif t.max < lo:
                add("tau", f"tau_max = {t.max} is below the schedule floor {lo:.4g} "
                           f"for |xi| = {nxi:.4g}")
        if t.max > max_resolved_tau(grid):
            need = int(np.ceil(POINTS_PER_WAVELENGTH * t.max * max(d.Lx, d.Ly) / (2 * np.pi))) - 1
            add("resolution", f"tau_max = {t.max} is under-resolved at "
                              f"{POINTS_PER_WAVELENGTH} points per wavelength; "
                              f"need nx, ny >= {need}")
    if "stability" in stages:
        if not s.family or any(e <= 0 for e in s.family):
            add("family", "stability family needs positive amplitudes")
        if s.K < 4:
            add("K", "stability needs K >= 4 for a tail window")
    if "parabolic" in stages:
        eps = 0.25 * s.T0 if s.eps is None else s.eps
        if not 0 < s.T0 < s.T:
            add("time", f"need 0 < T0 < T, got T0={s.T0}, T={s.T}")
        if not 0 < eps < s.T0:
            add("time", f"quiet window eps={eps} must lie in (0, T0)")
        if s.nt < 16:
            add("time", "nt must be >= 16")
    if "extract" in stages:
        e = cfg.extract
        if e.n_s < 2 * e.K + 4:
            add("extract", f"n_s={e.n_s} below 2 K + 4 = {2 * e.K + 4}")
        if e.nt < 16 or e.T0 <= 0:
            add("extract", "need T0 > 0 and nt >= 16")
        elif not 0 < e.eps < e.T0:
            add("extract", f"quiet window eps={e.eps} must lie in (0, T0)")
        elif e.stride < 1 or e.pulse_steps < 2:
            add("extract", "stride must be >= 1 and the pulse >= 2 steps")
        else:
            dt = e.T0 / e.nt
            last = int(np.ceil(e.eps / dt - 1e-9)) + (e.n_s - 1) * e.stride + e.pulse_steps
            if last >= e.nt:
                add("extract", f"pulse train needs {last + 1} steps before T0, nt={e.nt}")
        if e.noise < 0:
            add("extract", "noise level must be >= 0")
    return out
