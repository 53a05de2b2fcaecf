"""Sweeps and benchmarks over the test problems.

Every sweep compares final-time states against one reference computed per
problem. Results are plain :class:`~heatnet.metrics.ErrorReport` lists and
serialize to CSV with ``#``-prefixed metadata lines. Output is a function
of the configuration only: rows come out in configuration order whatever
the number of worker threads, and no timestamps are written.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import metrics
from .metrics import ErrorReport, error_report
from .network import (LATTICE_PRESETS, CellNetwork, build_random_lattice, build_sine_line,
                      load_network, sine_line_positions)
from .reference import ExactSolver, analytic_sine, ode_oracle, spectrum
from .schemes import (CN, EULER, LN, NumericalBlowup, SchemeSpec, euler_max_step, integrate,
                      integrate_powered, stage_evaluations)


class ConfigError(ValueError):
    pass


class ReferenceMismatch(RuntimeError):
    pass


@dataclass(frozen=True)
class SineProblem:
    n: int = 101
    pin_ends: bool = True

    def build(self) -> CellNetwork:
        return build_sine_line(self.n, self.pin_ends)

    def describe(self) -> str:
        return f"sine-line n={self.n} pin_ends={self.pin_ends}"


@dataclass(frozen=True)
class LatticeProblem:
    nx: int
    ny: int
    exponent_range: tuple = (-1.0, 1.0)
    u0_spec: Union[float, tuple] = (0.0, 1000.0)
    q_spec: Union[float, tuple] = (-500.0, 500.0)
    seed: int = 0

    @classmethod
    def preset(cls, name: str, seed: int = 0) -> "LatticeProblem":
        return cls(**LATTICE_PRESETS[name], seed=seed)

    def with_seed(self, seed: int) -> "LatticeProblem":
        return LatticeProblem(self.nx, self.ny, self.exponent_range, self.u0_spec,
                              self.q_spec, seed)

    def build(self) -> CellNetwork:
        return build_random_lattice(self.nx, self.ny, tuple(self.exponent_range),
                                    self.u0_spec, self.q_spec, self.seed)

    def describe(self) -> str:
        return (f"lattice {self.nx}x{self.ny} exponents={tuple(self.exponent_range)} "
                f"u0={self.u0_spec} q={self.q_spec} seed={self.seed}")


@dataclass(frozen=True)
class FileProblem:
    path: str

    def build(self) -> CellNetwork:
        return load_network(self.path)

    def describe(self) -> str:
        return f"file {self.path}"


Problem = Union[SineProblem, LatticeProblem, FileProblem]


@dataclass
class SweepConfig:
    """One study: a problem, the schemes and stepsizes to run, and a reference.

    ``reference`` is ``"exact"`` (matrix-exponential solution of the ODE
    system), ``"oracle"`` (adaptive implicit integrator at ``oracle_tol``) or
    ``"pde"`` (closed-form PDE solution; sine problem only). With
    ``cross_check`` the exact and oracle solutions must agree to
    ``cross_check_tol * (1 + |u|_inf)`` before anything is reported.
    """

    problem: Problem
    schemes: Sequence[SchemeSpec] = ()
    h_list: Sequence[float] = ()
    gitc: Optional[int] = None
    t_final: float = 1.0
    reference: str = "exact"
    oracle_tol: float = 1e-10
    cross_check: bool = True
    cross_check_tol: float = 1e-8
    output: Optional[str] = None
    workers: int = 1
    powered: bool = False

    def __post_init__(self):
        if self.reference not in ("exact", "oracle", "pde"):
            raise ConfigError(f"unknown reference {self.reference!r}")
        if self.reference == "pde" and not isinstance(self.problem, SineProblem):
            raise ConfigError("the pde reference exists only for the sine problem")
        if not (self.t_final > 0):
            raise ConfigError("t_final must be positive")
        if any(not (h > 0) for h in self.h_list):
            raise ConfigError("stepsizes must be positive")

    def metadata(self) -> dict:
        meta = {
            "problem": self.problem.describe(),
            "t_final": repr(self.t_final),
            "reference": self.reference,
        }
        if self.reference == "oracle" or self.cross_check:
            meta["oracle_tol"] = repr(self.oracle_tol)
        if self.gitc is not None:
            meta["gitc"] = str(self.gitc)
        return meta


@dataclass
class Reference:
    network: CellNetwork
    u: np.ndarray
    spatial_error: Optional[float] = None


def compute_reference(config: SweepConfig, network: Optional[CellNetwork] = None) -> Reference:
    network = network or config.problem.build()
    t = config.t_final
    exact = oracle = None
    if config.reference in ("exact", "pde") or config.cross_check:
        exact = ExactSolver(network).solve(t).u
    if config.reference == "oracle" or config.cross_check:
        oracle = ode_oracle(network, t, config.oracle_tol).u
    if config.cross_check:
        gap = float(np.max(np.abs(exact - oracle)))
        bound = config.cross_check_tol * (1.0 + float(np.max(np.abs(exact))))
        if not gap <= bound:
            raise ReferenceMismatch(
                f"exact and oracle references disagree by {gap:.3e} (bound {bound:.3e}) "
                f"for {config.problem.describe()}")
    if config.reference == "pde":
        u = analytic_sine(sine_line_positions(network), t)
        return Reference(network, u, spatial_error=metrics.max_d(u, exact))
    return Reference(network, exact if config.reference == "exact" else oracle)


def _run_cell(network, ref_u, scheme: SchemeSpec, h: float, t_final: float,
              powered: bool) -> ErrorReport:
    try:
        if powered:
            u = integrate_powered(network, scheme, h, t_final).u
        else:
            u = integrate(network, scheme, h, t_final).u
    except NumericalBlowup:
        n = network.n_cells
        return ErrorReport(scheme.name, scheme.stages, h, n, math.inf, math.inf, math.inf,
                           math.inf, math.inf)
    return error_report(ref_u, u, network.capacity, scheme.name, scheme.stages, h)


def _map_cells(config: SweepConfig, ref: Reference, cells) -> list[ErrorReport]:
    def run(cell):
        scheme, h = cell
        return _run_cell(ref.network, ref.u, scheme, h, config.t_final, config.powered)

    if config.workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(run, cells))
    return [run(c) for c in cells]


def run_h_sweep(config: SweepConfig, ref: Optional[Reference] = None) -> list[ErrorReport]:
    """Error at ``t_final`` for every (scheme, h) pair, in config order."""
    cells = [(s, h) for s in config.schemes for h in config.h_list]
    if not cells:
        return []
    ref = ref or compute_reference(config)
    return _map_cells(config, ref, cells)


def run_iteration_sweep(config: SweepConfig, k_max: int = 7, families=("cn", "ln"),
                        ref: Optional[Reference] = None) -> list[ErrorReport]:
    """Errors of CNk/LNk for k = 1..k_max at each fixed stepsize."""
    cells = [(SchemeSpec(f, k), h) for f in families for k in range(1, k_max + 1)
             for h in config.h_list]
    if not cells:
        return []
    ref = ref or compute_reference(config)
    return _map_cells(config, ref, cells)


def gitc_stepsizes(gitc: int, stages: Sequence[int], t_final: float) -> list[float]:
    for k in stages:
        if gitc % k:
            raise ConfigError(f"GITC={gitc} is not divisible by stage count {k}")
    return [t_final * k / gitc for k in stages]


def run_gitc_sweep(config: SweepConfig, stages: Sequence[int] = range(1, 8),
                   ref: Optional[Reference] = None) -> list[ErrorReport]:
    """LNk at a fixed total stage budget: h = t_final * k / GITC."""
    if config.gitc is None:
        raise ConfigError("GITC sweep needs config.gitc")
    hs = gitc_stepsizes(config.gitc, stages, config.t_final)
    ref = ref or compute_reference(config)
    cells = [(LN(k), h) for k, h in zip(stages, hs)]
    return _map_cells(config, ref, cells)


def order_fits(reports: Sequence[ErrorReport], plateau: Optional[float] = None,
               factor: float = 10.0) -> dict[str, float]:
    """Fitted order per scheme from max_d, dropping points near ``plateau``."""
    by_scheme: dict[str, list] = {}
    for r in reports:
        by_scheme.setdefault(r.scheme, []).append((r.h, r.max_d))
    fits = {}
    for name, pts in by_scheme.items():
        pts = sorted(pts, key=lambda p: -p[0])
        if plateau is not None:
            pts = metrics.trim_plateau(pts, plateau, factor)
        if len(pts) >= 3:
            fits[name] = metrics.fit_order(pts)
        else:
            fits[name] = math.nan
    return fits


# ---------------------------------------------------------------------------
# benchmark tables


@dataclass(frozen=True)
class BenchmarkPreset:
    name: str
    problem: LatticeProblem
    runs: tuple  # (SchemeSpec, h) pairs
    euler_fractions: tuple = (0.9, 1.1)
    oracle_tol: float = 1e-6
    t_final: float = 1.0


PRESETS = {
    "paper-table-1": BenchmarkPreset(
        "paper-table-1", LatticeProblem.preset("moderate"),
        runs=((CN(2), 0.02), (LN(3), 0.05), (LN(3), 0.01)),
    ),
    "paper-table-2": BenchmarkPreset(
        "paper-table-2", LatticeProblem.preset("stiff"),
        runs=((CN(2), 0.002), (CN(1), 0.0002), (CN(2), 0.0001), (LN(4), 0.0001),
              (LN(3), 0.00002), (LN(3), 0.00001)),
    ),
}

# Stepsizes of the sine verification study: 0.1 halved seven times.
SINE_STEPSIZES = tuple(0.1 / 2**k for k in range(8))
SINE_SCHEMES = (CN(1), CN(2), CN(3), LN(2), LN(3), LN(4), LN(5))

BENCH_COLUMNS = ("seed", "solver", "h", "cost", "max_d", "sum_d", "s_en_d", "status")


@dataclass(frozen=True)
class BenchmarkRow:
    seed: Union[int, str]
    solver: str
    h: float
    cost: float
    max_d: float
    sum_d: float
    s_en_d: float
    status: str = "ok"
    wall_s: float = field(default=math.nan, compare=False)

    def row(self, timing: bool = False) -> list:
        vals = [self.seed, self.solver, self.h, self.cost, self.max_d, self.sum_d,
                self.s_en_d, self.status]
        return vals + [self.wall_s] if timing else vals


def run_benchmark(preset: BenchmarkPreset, seed: int = 0, workers: int = 1) -> list[BenchmarkRow]:
    """One table: CN/LN runs, explicit Euler around its limit, a loose-tolerance oracle.

    ``cost`` is stage evaluations times N for the explicit schemes and
    right-hand-side evaluations times N for the oracle. Wall-clock seconds
    are kept in ``wall_s`` for information only.
    """
    problem = preset.problem.with_seed(seed)
    network = problem.build()
    n = network.n_cells
    t = preset.t_final
    ref_u = ExactSolver(network).solve(t).u
    h_max = euler_max_step(spectrum(network))

    jobs = [(s, h) for s, h in preset.runs] + [(EULER, f * h_max) for f in preset.euler_fractions]

    def run(job):
        scheme, h = job
        start = time.perf_counter()
        label = scheme.name if scheme.family != "euler" else f"euler({h / h_max:.2f}*hmax)"
        status = "ok"
        if scheme.family == "euler" and h > h_max:
            status = "unstable"
        try:
            u = integrate(network, scheme, h, t).u
            rep = error_report(ref_u, u, network.capacity, scheme.name, scheme.stages, h)
            errs = (rep.max_d, rep.sum_d, rep.s_en_d)
        except NumericalBlowup:
            errs = (math.inf, math.inf, math.inf)
            status = "unstable"
        if scheme.over_iterated:
            status += ";over-iterated"
        cost = stage_evaluations(scheme, h, t) * n
        return BenchmarkRow(seed, label, h, float(cost), *errs, status,
                            wall_s=time.perf_counter() - start)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]

    start = time.perf_counter()
    info: dict = {}
    u = ode_oracle(network, t, preset.oracle_tol, info=info).u
    rep = error_report(ref_u, u, network.capacity, "oracle", 0, math.nan)
    rows.append(BenchmarkRow(seed, f"oracle(tol={preset.oracle_tol:g})", math.nan,
                             float(info["nfev"] * n), rep.max_d, rep.sum_d, rep.s_en_d, "ok",
                             wall_s=time.perf_counter() - start))
    return rows


def summarize_benchmark(rows: Sequence[BenchmarkRow]) -> list[BenchmarkRow]:
    """Median of every numeric column per table row across seeds.

    Rows of the fixed-stepsize schemes are matched by (solver, h); Euler and
    oracle rows by label alone, since their stepsize depends on the seed.
    """
    groups: dict[tuple, list[BenchmarkRow]] = {}
    for r in rows:
        fixed = not r.solver.startswith(("euler", "oracle"))
        groups.setdefault((r.solver, r.h if fixed else None), []).append(r)
    out = []
    for (solver, _), g in groups.items():
        med = lambda attr: float(statistics.median(getattr(r, attr) for r in g))  # noqa: E731
        unstable = sum("unstable" in r.status for r in g)
        status = "ok" if unstable == 0 else f"unstable({unstable}/{len(g)})"
        out.append(BenchmarkRow("median", solver, med("h"), med("cost"), med("max_d"),
                                med("sum_d"), med("s_en_d"), status,
                                wall_s=med("wall_s")))
    return out


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write(path, header: dict, columns, rows) -> str:
    buf = io.StringIO()
    for key, val in header.items():
        buf.write(f"# {key}: {val}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def write_reports_csv(reports: Sequence[ErrorReport], path=None, metadata: Optional[dict] = None) -> str:
    return _write(path, metadata or {}, metrics.CSV_COLUMNS, (r.row() for r in reports))


def _parse(text: str):
    header, body = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition(":")
            header[key.strip()] = val.strip()
        elif line:
            body.append(line)
    return header, list(csv.reader(body))


def parse_reports_csv(text: str) -> tuple[dict, list[ErrorReport]]:
    header, rows = _parse(text)
    if not rows or tuple(rows[0]) != metrics.CSV_COLUMNS:
        raise ValueError("not an error-report CSV")
    reports = [ErrorReport(r[0], int(r[1]), float(r[2]), int(r[3]), *map(float, r[4:]))
               for r in rows[1:]]
    return header, reports


def read_reports_csv(path) -> tuple[dict, list[ErrorReport]]:
    return parse_reports_csv(Path(path).read_text())


def write_benchmark_csv(rows: Sequence[BenchmarkRow], path=None, metadata=None,
                        timing: bool = False) -> str:
    columns = BENCH_COLUMNS + (("wall_s",) if timing else ())
    return _write(path, metadata or {}, columns, (r.row(timing) for r in rows))


PROFILE_COLUMNS = ("family", "k", "h", "max_d", "sum_dn", "s_en_dn")


def plot_profile(reports: Sequence[ErrorReport], path=None) -> str:
    """Tidy per-(scheme, k, h) table of the plotted error curves."""
    def family(r):
        return "euler" if r.scheme == "euler" else r.scheme.rstrip("0123456789")

    rows = sorted(((family(r), r.k, r.h, r.max_d, r.sum_dn, r.s_en_dn) for r in reports),
                  key=lambda row: (row[0], row[1], -row[2]))
    return _write(path, {}, PROFILE_COLUMNS, rows)


def read_profile(path) -> list[tuple]:
    _, rows = _parse(Path(path).read_text())
    if not rows or tuple(rows[0]) != PROFILE_COLUMNS:
        raise ValueError("not a profile CSV")
    return [(r[0], int(r[1]), *map(float, r[2:])) for r in rows[1:]]
