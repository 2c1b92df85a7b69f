"""Monte Carlo strong-error studies in time and space.

Every sample draws one Brownian path on the finest time grid.  Reference
and coarse solutions of that sample are driven by the same modal
increments (coarse increments are sums of fine ones), so their difference
isolates the discretization error.  The reported statistic is the root
mean square over samples of the discrete L2 error at the final time.

Samples may be spread over worker processes; per-sample results are
collected and reduced in ascending sample index, so the output does not
depend on the number of workers.
"""

from __future__ import annotations

import csv
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, FitError, StepFailure
from .fem import l2_norm, interpolate
from .noise import NodalNoise, NoiseSpec, sample_path
from .problem import Discretization, ProblemSpec, discretize
from .stepper import Scheme, StepperConfig, TimeStepper, coarse_steps

__all__ = [
    "StudyConfig",
    "SchemeReport",
    "ConvergenceReport",
    "StudyError",
    "fit_order",
    "run_temporal_study",
    "run_spatial_study",
    "emit_report",
    "read_errors_csv",
    "format_float",
]


class StudyError(StepFailure):
    """A sample path failed; carries the sample index and scheme."""

    def __init__(self, message: str, sample: int, scheme: str, step: int | None = None):
        super().__init__(message, step=step)
        self.sample = sample
        self.scheme = scheme


def _as_mesh(m) -> tuple[int, int]:
    if isinstance(m, (tuple, list)):
        return int(m[0]), int(m[1])
    return int(m), int(m)


@dataclass(frozen=True)
class StudyConfig:
    """Inputs of a temporal or spatial convergence study.

    Temporal studies run on ``mesh`` with the steps in ``dt_list`` against a
    reference at ``reference_dt``.  Spatial studies use the meshes in
    ``mesh_list`` against ``reference_mesh`` at the fixed step
    ``spatial_dt`` (default ``1e-3 * T``); when ``exact`` is given it
    replaces the reference solution.
    """

    problem: ProblemSpec
    noise: NoiseSpec | None
    samples: int = 50
    schemes: tuple[Scheme, ...] = (Scheme.IMPLICIT, Scheme.SEMI_IMPLICIT)
    master_seed: int = 0
    mesh: tuple[int, int] = (32, 32)
    dt_list: tuple[float, ...] = (1 / 16, 1 / 32, 1 / 64, 1 / 128, 1 / 256)
    reference_dt: float = 1 / 1024
    mesh_list: tuple = (4, 8, 16, 32)
    reference_mesh: tuple | int = 64
    spatial_dt: float | None = None
    exact: Callable | None = None
    stepper: StepperConfig = field(default_factory=StepperConfig)

    def __post_init__(self):
        object.__setattr__(self, "schemes", tuple(Scheme(s) for s in self.schemes))
        object.__setattr__(self, "mesh", _as_mesh(self.mesh))
        object.__setattr__(self, "mesh_list", tuple(_as_mesh(m) for m in self.mesh_list))
        object.__setattr__(self, "reference_mesh", _as_mesh(self.reference_mesh))
        object.__setattr__(self, "dt_list", tuple(float(d) for d in self.dt_list))
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if not self.schemes:
            raise ConfigError("at least one scheme is required")

    @property
    def effective_samples(self) -> int:
        return 1 if self.noise is None else self.samples

    def aggregation(self, dt: float) -> int:
        k = round(dt / self.reference_dt)
        if k < 1 or abs(k * self.reference_dt - dt) > 1e-9 * dt:
            raise ConfigError(f"dt = {dt:g} is not an integer multiple of reference_dt = {self.reference_dt:g}")
        return k

    def check_temporal(self) -> None:
        if not self.dt_list:
            raise ConfigError("dt_list is empty")
        coarse_steps(self.problem.T, self.reference_dt)
        for dt in self.dt_list:
            self.aggregation(dt)
            coarse_steps(self.problem.T, dt)

    def check_spatial(self) -> None:
        if not self.mesh_list:
            raise ConfigError("mesh_list is empty")
        rx, ry = self.reference_mesh
        for nx, ny in self.mesh_list:
            if rx % nx or ry % ny:
                raise ConfigError(f"mesh {nx}x{ny} is not a nested coarsening of {rx}x{ry}")
        coarse_steps(self.problem.T, self.dt_spatial)

    @property
    def dt_spatial(self) -> float:
        return self.spatial_dt if self.spatial_dt is not None else 1e-3 * self.problem.T


@dataclass
class SchemeReport:
    scheme: str
    points: list[tuple[float, float]]
    per_sample_errors: np.ndarray  # (samples, resolutions), resolutions ascending
    fitted_order: float
    fitted_constant: float
    max_newton_iterations: int = 0
    max_norm: float = 0.0

    @property
    def sample_std(self) -> np.ndarray:
        if self.per_sample_errors.shape[0] < 2:
            return np.zeros(self.per_sample_errors.shape[1])
        return self.per_sample_errors.std(axis=0, ddof=1)


@dataclass
class ConvergenceReport:
    kind: str
    schemes: dict[str, SchemeReport]
    n_samples: int
    master_seed: int
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)

    def __getitem__(self, scheme) -> SchemeReport:
        return self.schemes[Scheme(scheme).value]

    @property
    def points(self) -> list[tuple[str, float, float]]:
        return [(name, r, e) for name, rep in self.schemes.items() for r, e in rep.points]


def fit_order(points: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Least-squares fit ``log e = order * log r + log C``; returns ``(order, C)``."""
    pts = list(points)
    if len(pts) < 2:
        raise FitError("at least two points are needed to fit an order")
    r = np.array([p[0] for p in pts], dtype=float)
    e = np.array([p[1] for p in pts], dtype=float)
    if np.any(r <= 0) or np.any(e <= 0) or not np.all(np.isfinite(e)):
        raise FitError("resolutions and errors must be positive and finite")
    if np.unique(r).size < 2:
        raise FitError("resolutions must not all coincide")
    x, y = np.log(r), np.log(e)
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(math.exp(intercept))


def _fit_or_nan(points) -> tuple[float, float]:
    if len(points) < 2:
        return float("nan"), float("nan")
    return fit_order(points)


# ---------------------------------------------------------------------------
# per-process context; workers build their own matrices from the config

_CTX: dict = {}


def _init_worker(kind: str, cfg: StudyConfig) -> None:
    _CTX.clear()
    _CTX["kind"] = kind
    _CTX["cfg"] = cfg
    _CTX["steppers"] = {}
    if kind == "temporal":
        disc = discretize(cfg.problem, *cfg.mesh)
        _CTX["disc"] = disc
        _CTX["table"] = NodalNoise(cfg.noise, disc.mesh) if cfg.noise is not None else None
    else:
        discs = {m: discretize(cfg.problem, *m) for m in (*cfg.mesh_list, cfg.reference_mesh)}
        _CTX["discs"] = discs
        _CTX["tables"] = (
            {m: NodalNoise(cfg.noise, d.mesh) for m, d in discs.items()} if cfg.noise is not None else None
        )


def _stepper(key, disc: Discretization, cfg: StudyConfig, scheme: Scheme, dt: float) -> TimeStepper:
    cache = _CTX["steppers"]
    if key not in cache:
        sc = StepperConfig(scheme=scheme, dt=dt, newton_tol=cfg.stepper.newton_tol,
                           newton_max_iter=cfg.stepper.newton_max_iter, solve=cfg.stepper.solve,
                           jacobian=cfg.stepper.jacobian)
        cache[key] = TimeStepper(disc.system, disc.drift, sc)
    return cache[key]


def _run(stepper: TimeStepper, x0, increments, n_steps, table, sample, scheme):
    try:
        return stepper.run(x0, increments, n_steps=n_steps, noise=table)
    except StepFailure as exc:
        raise StudyError(f"sample {sample}, scheme {scheme.value}: {exc}", sample, scheme.value,
                         step=exc.step) from exc


def _temporal_sample(s: int):
    cfg: StudyConfig = _CTX["cfg"]
    disc: Discretization = _CTX["disc"]
    table = _CTX["table"]
    T = cfg.problem.T
    n_fine = coarse_steps(T, cfg.reference_dt)
    path = sample_path(cfg.noise, n_fine, cfg.reference_dt, cfg.master_seed, s) if cfg.noise is not None else None
    M = disc.system.M
    out = {}
    for scheme in cfg.schemes:
        ref_st = _stepper((scheme, cfg.reference_dt), disc, cfg, scheme, cfg.reference_dt)
        inc = path.increments if path is not None else None
        ref = _run(ref_st, disc.x0, inc, n_fine, table, s, scheme)
        errs, newton, norm = [], ref.max_newton_iterations, ref.max_norm
        for dt in cfg.dt_list:
            k = cfg.aggregation(dt)
            st = _stepper((scheme, dt), disc, cfg, scheme, dt)
            inc = path.aggregated(k) if path is not None else None
            sol = _run(st, disc.x0, inc, n_fine // k, table, s, scheme)
            errs.append(l2_norm(M, ref.terminal - sol.terminal))
            newton = max(newton, sol.max_newton_iterations)
            norm = max(norm, sol.max_norm)
        out[scheme.value] = (errs, newton, norm)
    return out


def _spatial_sample(s: int):
    cfg: StudyConfig = _CTX["cfg"]
    discs = _CTX["discs"]
    tables = _CTX["tables"]
    dt = cfg.dt_spatial
    n = coarse_steps(cfg.problem.T, dt)
    path = sample_path(cfg.noise, n, dt, cfg.master_seed, s) if cfg.noise is not None else None
    inc = path.increments if path is not None else None
    out = {}
    for scheme in cfg.schemes:
        newton, norm = 0, 0.0
        ref = None
        if cfg.exact is None:
            rd = discs[cfg.reference_mesh]
            st = _stepper((scheme, cfg.reference_mesh), rd, cfg, scheme, dt)
            sol = _run(st, rd.x0, inc, n, tables and tables[cfg.reference_mesh], s, scheme)
            ref = (rd.mesh, sol.terminal)
            newton, norm = sol.max_newton_iterations, sol.max_norm
        errs = []
        for m in cfg.mesh_list:
            d = discs[m]
            st = _stepper((scheme, m), d, cfg, scheme, dt)
            sol = _run(st, d.x0, inc, n, tables and tables[m], s, scheme)
            if ref is None:
                target = interpolate(d.mesh, cfg.exact)
            else:
                target = ref[1][ref[0].coarsening_map(d.mesh)]
            errs.append(l2_norm(d.system.M, target - sol.terminal))
            newton = max(newton, sol.max_newton_iterations)
            norm = max(norm, sol.max_norm)
        out[scheme.value] = (errs, newton, norm)
    return out


def _map_samples(kind: str, cfg: StudyConfig, fn, n: int, workers: int) -> list:
    if workers <= 1 or n <= 1:
        _init_worker(kind, cfg)
        return [fn(s) for s in range(n)]
    methods = multiprocessing.get_all_start_methods()
    ctx = multiprocessing.get_context("fork" if "fork" in methods else "spawn")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx, initializer=_init_worker,
                             initargs=(kind, cfg)) as pool:
        # map yields in submission order, i.e. ascending sample index
        return list(pool.map(fn, range(n)))


def _reduce(kind, cfg, results, resolutions, t0, config) -> ConvergenceReport:
    order = np.argsort(resolutions, kind="stable")
    res_sorted = [resolutions[i] for i in order]
    schemes = {}
    for scheme in cfg.schemes:
        name = scheme.value
        E = np.array([results[s][name][0] for s in range(len(results))], dtype=float)[:, order]
        # reduction in ascending sample index
        rms = np.sqrt(np.mean(E**2, axis=0))
        points = [(float(r), float(e)) for r, e in zip(res_sorted, rms)]
        try:
            p, c = _fit_or_nan(points)
        except FitError:
            p, c = float("nan"), float("nan")
        schemes[name] = SchemeReport(
            scheme=name,
            points=points,
            per_sample_errors=E,
            fitted_order=p,
            fitted_constant=c,
            max_newton_iterations=max(results[s][name][1] for s in range(len(results))),
            max_norm=max(results[s][name][2] for s in range(len(results))),
        )
    return ConvergenceReport(kind, schemes, len(results), cfg.master_seed, time.perf_counter() - t0,
                             dict(config or {}))


def run_temporal_study(cfg: StudyConfig, workers: int = 1, config: dict | None = None) -> ConvergenceReport:
    """Strong error in time against a fine-step reference on the same mesh."""
    cfg.check_temporal()
    t0 = time.perf_counter()
    results = _map_samples("temporal", cfg, _temporal_sample, cfg.effective_samples, workers)
    return _reduce("temporal", cfg, results, list(cfg.dt_list), t0, config)


def run_spatial_study(cfg: StudyConfig, workers: int = 1, config: dict | None = None) -> ConvergenceReport:
    """Strong error in space against a nested fine-mesh reference (or ``cfg.exact``)."""
    cfg.check_spatial()
    t0 = time.perf_counter()
    results = _map_samples("spatial", cfg, _spatial_sample, cfg.effective_samples, workers)
    hs = [math.hypot(cfg.problem.L1 / nx, cfg.problem.L2 / ny) for nx, ny in cfg.mesh_list]
    return _reduce("spatial", cfg, results, hs, t0, config)


# ---------------------------------------------------------------------------
# output

def format_float(x: float) -> str:
    """Shortest decimal that round-trips to the same double."""
    return repr(float(x))


CSV_HEADER = ("scheme", "resolution", "rms_error", "n_samples", "seed")


def emit_report(report: ConvergenceReport, out_dir) -> list[Path]:
    """Write ``errors.csv``, ``report.txt`` and ``convergence.svg`` to ``out_dir``."""
    if not report.points:
        raise FitError("report has no points; nothing written")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    p_csv = out / "errors.csv"
    with p_csv.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for name, r, e in report.points:
            w.writerow([name, format_float(r), format_float(e), report.n_samples, report.master_seed])

    p_txt = out / "report.txt"
    p_txt.write_text(_report_text(report))
    p_svg = out / "convergence.svg"
    p_svg.write_text(_svg(report))
    return [p_csv, p_txt, p_svg]


def read_errors_csv(path) -> dict[str, list[tuple[float, float]]]:
    """Parse an ``errors.csv`` back into ``{scheme: [(resolution, rms_error), ...]}``."""
    out: dict[str, list[tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        for row in reader:
            out.setdefault(row["scheme"], []).append((float(row["resolution"]), float(row["rms_error"])))
    return out


def _report_text(report: ConvergenceReport) -> str:
    res_name = "dt" if report.kind == "temporal" else "h"
    lines = [
        f"{report.kind} convergence study",
        f"samples: {report.n_samples}",
        f"master seed: {report.master_seed}",
        f"wall time: {report.wall_time:.1f} s",
        "",
    ]
    for name, rep in report.schemes.items():
        lines.append(f"[{name}]")
        lines.append(f"fitted order: {rep.fitted_order:.4f}")
        lines.append(f"fitted constant: {rep.fitted_constant:.6g}")
        lines.append(f"max Newton iterations per step: {rep.max_newton_iterations}")
        lines.append(f"max discrete L2 norm over steps: {rep.max_norm:.6g}")
        lines.append(f"{res_name:>14} {'rms_error':>14} {'sample_std':>14}")
        for (r, e), sd in zip(rep.points, rep.sample_std):
            lines.append(f"{r:14.6g} {e:14.6g} {sd:14.6g}")
        lines.append("")
    if report.config:
        lines.append("[config]")
        for k, v in report.config.items():
            lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _svg(report: ConvergenceReport, width: int = 560, height: int = 420) -> str:
    pts = [(r, e) for _, r, e in report.points if r > 0 and e > 0]
    lx = [math.log10(r) for r, _ in pts]
    ly = [math.log10(e) for _, e in pts]
    x0, x1 = math.floor(min(lx)), math.ceil(max(lx))
    y0, y1 = math.floor(min(ly)), math.ceil(max(ly))
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1
    ml, mr, mt, mb = 70, 20, 30, 50
    pw, ph = width - ml - mr, height - mt - mb

    def X(v):
        return ml + (math.log10(v) - x0) / (x1 - x0) * pw

    def Y(v):
        return mt + ph - (math.log10(v) - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for k in range(x0, x1 + 1):
        x = ml + (k - x0) / (x1 - x0) * pw
        out.append(f'<line x1="{x:.1f}" y1="{mt + ph}" x2="{x:.1f}" y2="{mt + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.1f}" y="{mt + ph + 18}" text-anchor="middle">1e{k}</text>')
    for k in range(y0, y1 + 1):
        y = mt + ph - (k - y0) / (y1 - y0) * ph
        out.append(f'<line x1="{ml - 5}" y1="{y:.1f}" x2="{ml}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{y + 4:.1f}" text-anchor="end">1e{k}</text>')
    xlabel = "time step" if report.kind == "temporal" else "mesh size h"
    out.append(f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="15" y="{mt + ph / 2}" transform="rotate(-90 15 {mt + ph / 2})" '
               f'text-anchor="middle">RMS error</text>')
    for i, (name, rep) in enumerate(report.schemes.items()):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(f"{X(r):.1f},{Y(e):.1f}" for r, e in rep.points if r > 0 and e > 0)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for r, e in rep.points:
            if r > 0 and e > 0:
                out.append(f'<circle cx="{X(r):.1f}" cy="{Y(e):.1f}" r="3" fill="{color}"/>')
        label = f"{name} (order {rep.fitted_order:.2f})"
        out.append(f'<text x="{ml + 10}" y="{mt + 16 + 16 * i}" fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
