"""Command-line front end.

Configuration is a flat INI-style file of ``section.key = value`` lines
(``[section]`` headers may prefix the keys that follow, ``#`` starts a
comment).  Every key has a default, unknown keys are rejected, and
``--set key=value`` overrides are applied after the file.  The seed is taken
from, in decreasing priority, ``--seed``, ``--set seed=...``, the file, the
``SPDE_SEED`` environment variable and the built-in default.

Exit codes: 0 success, 2 configuration or validation error, 3 numerical
failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .drift import DriftPolynomial, admissibility_violation
from .errors import ConfigError, FitError, NumericalError, SpdeError, StepFailure
from .experiment import StudyConfig, emit_report, run_spatial_study, run_temporal_study
from .fem import OperatorSpec, coercivity_diagnostic, round_up_one_digit
from .linalg import SolveMethod, SolveSettings
from .mesh import EDGES, BoundarySpec, build_rectangle_mesh, classify_boundary, dump_mesh_csv
from .noise import NodalNoise, build_spectrum, sample_path
from .problem import CellularFlow, ProblemSpec, discretize, heat_initial
from .stepper import Jacobian, Scheme, StepperConfig, TimeStepper, coarse_steps, drift_one_sided_constant

__all__ = ["RunConfig", "parse_config", "parse_text", "validate", "main", "COMMANDS"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
COMMANDS = ("solve", "temporal-study", "spatial-study", "validate", "mesh-dump")
DEFAULT_SEED = 0


# ---------------------------------------------------------------------------
# value parsers

def _number(text: str) -> float:
    """A real number, also accepting fractions such as ``1/16``."""
    t = text.strip()
    try:
        return float(t)
    except ValueError:
        return float(Fraction(t))


def _positive(text: str) -> float:
    v = _number(text)
    if not v > 0:
        raise ValueError("must be positive")
    return v


def _integer(text: str) -> int:
    return int(text.strip())


def _count(text: str) -> int:
    v = _integer(text)
    if v < 1:
        raise ValueError("must be >= 1")
    return v


def _seed(text: str) -> int:
    v = _integer(text)
    if not 0 <= v < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


def _boolean(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t
    return parse


def _number_list(text: str) -> tuple[float, ...]:
    vals = tuple(_positive(p) for p in text.split(",") if p.strip())
    if not vals:
        raise ValueError("empty list")
    return vals


def _count_list(text: str) -> tuple[int, ...]:
    vals = tuple(_count(p) for p in text.split(",") if p.strip())
    if not vals:
        raise ValueError("empty list")
    return vals


def _edges(text: str) -> tuple[str, ...]:
    t = text.strip()
    if t in ("", "none"):
        return ()
    out = tuple(p.strip() for p in t.split(",") if p.strip())
    for e in out:
        if e not in EDGES:
            raise ValueError(f"unknown edge {e!r}; expected {', '.join(EDGES)} or none")
    return out


def _schemes(text: str) -> tuple[str, ...]:
    out = tuple(_choice(*(s.value for s in Scheme))(p) for p in text.split(",") if p.strip())
    if not out:
        raise ValueError("empty list")
    return out


def _poly(text: str) -> DriftPolynomial:
    return DriftPolynomial.parse(text)


def _c0(text: str) -> float | str:
    t = text.strip()
    return "auto" if t == "auto" else _number(t)


def _optional_dt(text: str) -> float | str:
    t = text.strip()
    return "auto" if t == "auto" else _positive(t)


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, DriftPolynomial):
        return ",".join(repr(c) for c in v.coefficients)
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v) if v else "none"
    return str(v)


# key -> (parser, default text)
KEYS: dict[str, tuple[Callable[[str], Any], str]] = {
    "command": (_choice(*COMMANDS), "validate"),
    "seed": (_seed, str(DEFAULT_SEED)),
    "out_dir": (str.strip, "out"),
    "workers": (_count, "1"),
    "scheme": (_choice(*(s.value for s in Scheme)), "implicit"),
    "dt": (_positive, "1/64"),
    "T": (_positive, "1"),
    "phi": (_poly, "0,1,0,0,0,-1"),
    "mesh.L1": (_positive, "1"),
    "mesh.L2": (_positive, "1"),
    "mesh.nx": (_count, "32"),
    "mesh.ny": (_count, "32"),
    "problem.dxx": (_number, "0.01"),
    "problem.dyy": (_number, "0.01"),
    "problem.dxy": (_number, "0"),
    "problem.velocity": (_choice("cellular", "uniform", "none"), "cellular"),
    "problem.velocity_scale": (_number, "1"),
    "problem.velocity_x": (_number, "0"),
    "problem.velocity_y": (_number, "0"),
    "problem.initial": (_choice("constant", "cosine"), "constant"),
    "problem.initial_value": (_number, "1"),
    "boundary.dirichlet": (_edges, "left"),
    "boundary.value": (_number, "1"),
    "boundary.robin_alpha0": (_number, "0"),
    "fem.c0": (_c0, "auto"),
    "noise.enabled": (_boolean, "true"),
    "noise.beta": (_positive, "2"),
    "noise.delta": (_positive, "0.001"),
    "noise.modes": (_count, "64"),
    "newton.tol": (_positive, "1e-10"),
    "newton.max_iter": (_count, "25"),
    "newton.jacobian": (_choice(*(j.value for j in Jacobian)), "krylov"),
    "linear.method": (_choice(*(m.value for m in SolveMethod)), "direct_lu"),
    "linear.tol": (_positive, "1e-10"),
    "study.samples": (_count, "50"),
    "study.schemes": (_schemes, "implicit,semi_implicit"),
    "study.dt_list": (_number_list, "1/16,1/32,1/64,1/128,1/256"),
    "study.reference_dt": (_positive, "1/1024"),
    "study.mesh_list": (_count_list, "4,8,16,32"),
    "study.reference_mesh": (_count, "64"),
    "study.spatial_dt": (_optional_dt, "auto"),
    "debug.dump_matrices": (_boolean, "false"),
}

# keys whose guard is stricter than the parser's (reported with the key name)
_GUARDS = {
    "noise.beta": "beta must be positive",
    "noise.delta": "delta must be positive",
}


def _convert(key: str, text: str, where: str) -> Any:
    if key not in KEYS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    parser = KEYS[key][0]
    try:
        return parser(text)
    except (ValueError, ZeroDivisionError) as exc:
        hint = _GUARDS.get(key, str(exc))
        raise ConfigError(f"{where}: bad value {text.strip()!r} for {key}: {hint}") from None


@dataclass
class RunConfig:
    """Fully resolved configuration; ``values`` maps every key to a typed value."""

    values: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for key, (parser, default) in KEYS.items():
            self.values.setdefault(key, parser(default))

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def set(self, key: str, text: str, where: str = "override") -> None:
        self.values[key] = _convert(key, text, where)

    @property
    def command(self) -> str:
        return self.values["command"]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    # -- builders ----------------------------------------------------------

    def drift(self) -> DriftPolynomial:
        return self["phi"]

    def operator(self) -> OperatorSpec:
        D = np.array([[self["problem.dxx"], self["problem.dxy"]], [self["problem.dxy"], self["problem.dyy"]]])
        kind = self["problem.velocity"]
        if kind == "cellular":
            q = CellularFlow(self["problem.velocity_scale"], self["mesh.L1"], self["mesh.L2"])
        elif kind == "uniform":
            q = np.array([self["problem.velocity_x"], self["problem.velocity_y"]])
        else:
            q = None
        return OperatorSpec(diffusion=D, advection=q)

    def boundary(self) -> BoundarySpec:
        return BoundarySpec(self["boundary.dirichlet"], self["boundary.value"], self["boundary.robin_alpha0"])

    def problem(self) -> ProblemSpec:
        initial = heat_initial if self["problem.initial"] == "cosine" else self["problem.initial_value"]
        return ProblemSpec(
            L1=self["mesh.L1"], L2=self["mesh.L2"], operator=self.operator(), boundary=self.boundary(),
            drift=self.drift(), initial=initial, T=self["T"], garding_shift=self["fem.c0"],
        )

    def noise(self):
        if not self["noise.enabled"]:
            return None
        n = self["noise.modes"]
        return build_spectrum(self["noise.beta"], self["noise.delta"], n, n, self["mesh.L1"], self["mesh.L2"])

    def stepper(self, scheme: str | None = None, dt: float | None = None) -> StepperConfig:
        return StepperConfig(
            scheme=scheme or self["scheme"],
            dt=self["dt"] if dt is None else dt,
            newton_tol=self["newton.tol"],
            newton_max_iter=self["newton.max_iter"],
            solve=SolveSettings(SolveMethod(self["linear.method"]), rel_tol=self["linear.tol"]),
            jacobian=self["newton.jacobian"],
        )

    def study(self) -> StudyConfig:
        sdt = self["study.spatial_dt"]
        return StudyConfig(
            problem=self.problem(),
            noise=self.noise(),
            samples=self["study.samples"],
            schemes=self["study.schemes"],
            master_seed=self.seed,
            mesh=(self["mesh.nx"], self["mesh.ny"]),
            dt_list=self["study.dt_list"],
            reference_dt=self["study.reference_dt"],
            mesh_list=self["study.mesh_list"],
            reference_mesh=self["study.reference_mesh"],
            spatial_dt=None if sdt == "auto" else sdt,
            stepper=self.stepper(),
        )

    def echo(self) -> str:
        """INI text that parses back to this exact configuration."""
        lines = ["# fully resolved configuration"]
        for key in KEYS:
            lines.append(f"{key} = {_fmt(self.values[key])}")
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict[str, str]:
        return {k: _fmt(self.values[k]) for k in KEYS}

    def check(self) -> None:
        """Cross-field constraints, checked before any command runs."""
        msg = admissibility_violation(self.drift())
        if msg is not None:
            raise ConfigError(f"phi is not admissible: {msg}")
        T = self["T"]
        cmd = self.command
        if cmd == "solve":
            coarse_steps(T, self["dt"])
        if cmd == "temporal-study":
            self.study().check_temporal()
        if cmd == "spatial-study":
            self.study().check_spatial()


def parse_text(text: str, overrides=(), source: str = "<config>") -> RunConfig:
    """Parse config text, then apply ``key=value`` overrides."""
    cfg = RunConfig()
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        where = f"{source}:{lineno}"
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"{where}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if section and "." not in key:
            key = f"{section}.{key}"
        cfg.set(key, value, where)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        cfg.set(key, value, f"--set {key}")
    return cfg


def parse_config(file_path=None, overrides=(), *, seed: int | None = None, env=None) -> RunConfig:
    """Read ``file_path`` (optional), apply overrides and resolve the seed."""
    env = os.environ if env is None else env
    text = ""
    if file_path is not None:
        try:
            text = Path(file_path).read_text()
        except OSError as exc:
            raise OSError(f"cannot read config {file_path}: {exc}") from exc
    cfg = parse_text(text, (), str(file_path or "<config>"))
    if not _sets_seed(text) and "SPDE_SEED" in env:
        cfg.set("seed", env["SPDE_SEED"], "SPDE_SEED")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        cfg.set(key, value, f"--set {key}")
    if seed is not None:
        cfg.set("seed", str(seed), "--seed")
    return cfg


def _sets_seed(text: str) -> bool:
    section = ""
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line.startswith("["):
            section = line.strip("[]").strip()
        elif "=" in line:
            key = line.split("=", 1)[0].strip()
            if key == "seed" and not section:
                return True
    return False


# ---------------------------------------------------------------------------
# validate

@dataclass
class Verdict:
    name: str
    ok: bool
    detail: str
    hard: bool = True


def validate(cfg: RunConfig) -> list[Verdict]:
    """Check the standing assumptions and the time-step guard for ``cfg``."""
    out: list[Verdict] = []
    drift = cfg.drift()

    # one-sided Lipschitz condition
    L0 = drift_one_sided_constant(drift)
    msg = admissibility_violation(drift)
    # an inadmissible polynomial has unbounded slopes; the sampled value only reflects the radius
    if msg is None:
        out.append(Verdict("one-sided Lipschitz drift", math.isfinite(L0), f"L0 = {L0:.6g}"))
    else:
        out.append(Verdict("one-sided Lipschitz drift", False, f"unbounded (sampled L0 = {L0:.6g})"))

    # polynomial growth: odd degree, negative leading coefficient
    out.append(Verdict("polynomial drift admissible", msg is None,
                       msg or f"degree {drift.degree}, leading coefficient {drift.leading:g}"))

    # trace-class noise
    spec = cfg.noise()
    if spec is None:
        out.append(Verdict("noise covariance", True, "noise disabled"))
    else:
        ok = math.isfinite(spec.trace_check)
        out.append(Verdict("noise covariance", ok,
                           f"trace_check = {spec.trace_check:.6g} with {spec.N1}x{spec.N2} modes"))

    # ellipticity / Garding inequality of the operator
    lam = need = c0 = float("nan")
    try:
        problem = cfg.problem()
        disc_problem = ProblemSpec(problem.L1, problem.L2, problem.operator, problem.boundary,
                                   problem.drift, problem.initial, problem.T, 0.0)
        disc = discretize(disc_problem, cfg["mesh.nx"], cfg["mesh.ny"])
        lam, need = coercivity_diagnostic(disc.system)
        fixed = cfg["fem.c0"]
        c0 = (round_up_one_digit(need) if math.isfinite(need) else 0.0) if fixed == "auto" else float(fixed)
        if math.isfinite(lam):
            ok = lam + c0 > 0
            detail = f"lambda_min = {lam:.6g}, required c0 = {need:.6g}, c0 = {c0:g}"
            out.append(Verdict("operator coercive after shift", ok, detail))
        else:
            out.append(Verdict("operator coercive after shift", True,
                               f"coercivity diagnostic did not converge; c0 = {c0:g}", hard=False))
    except SpdeError as exc:
        out.append(Verdict("operator coercive after shift", False, str(exc)))
        c0 = 0.0 if not isinstance(cfg["fem.c0"], float) else cfg["fem.c0"]

    # the time step guard uses the drift including the shift compensation
    L0c = drift_one_sided_constant(drift.with_compensation(c0 if math.isfinite(c0) else 0.0))
    dt = cfg["dt"]
    out.append(Verdict("time step guard dt*L0 < 1", dt * L0c < 1.0,
                       f"dt*L0 = {dt:g}*{L0c:.6g} = {dt * L0c:.6g}"))
    return out


# ---------------------------------------------------------------------------
# commands

def _write_echo(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.echo.ini").write_text(cfg.echo())


def _dump_matrices(disc, out: Path) -> None:
    for name, A in (("M", disc.system.M), ("K", disc.system.K)):
        C = A.csr.tocoo()
        with (out / f"{name}.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "col", "value"])
            for i, j, v in zip(C.row, C.col, C.data):
                w.writerow([int(i), int(j), repr(float(v))])


def cmd_validate(cfg: RunConfig, out: Path | None) -> int:
    verdicts = validate(cfg)
    bad = False
    for v in verdicts:
        status = "ok" if v.ok else ("VIOLATED" if v.hard else "warning")
        print(f"{v.name:32s} {status:9s} {v.detail}")
        bad |= v.hard and not v.ok
    return EXIT_CONFIG if bad else EXIT_OK


def cmd_mesh_dump(cfg: RunConfig, out: Path) -> int:
    mesh = classify_boundary(build_rectangle_mesh(cfg["mesh.L1"], cfg["mesh.L2"], cfg["mesh.nx"], cfg["mesh.ny"]),
                             cfg.boundary())
    _write_echo(cfg, out)
    for p in dump_mesh_csv(mesh, out):
        print(p)
    return EXIT_OK


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    disc = discretize(cfg.problem(), cfg["mesh.nx"], cfg["mesh.ny"])
    scfg = cfg.stepper()
    n = coarse_steps(cfg["T"], scfg.dt)
    stepper = TimeStepper(disc.system, disc.drift, scfg)
    spec = cfg.noise()
    if spec is None or n == 0:
        sol = stepper.run(disc.x0, None, n_steps=n)
    else:
        path = sample_path(spec, n, scfg.dt, cfg.seed, 0)
        sol = stepper.run(disc.x0, path.increments, noise=NodalNoise(spec, disc.mesh))
    _write_echo(cfg, out)
    if cfg["debug.dump_matrices"]:
        _dump_matrices(disc, out)
    with (out / "terminal.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "x", "y", "value"])
        for k, ((x, y), v) in enumerate(zip(disc.mesh.nodes, sol.terminal)):
            w.writerow([k, repr(float(x)), repr(float(y)), repr(float(v))])
    print(f"steps: {sol.step_count}  newton iterations: {sol.newton_iterations_total}  "
          f"max |X|: {sol.max_abs:.6g}  c0: {disc.c0:g}")
    print(out / "terminal.csv")
    return EXIT_OK


def _study(cfg: RunConfig, out: Path, kind: str) -> int:
    study = cfg.study()
    run = run_temporal_study if kind == "temporal" else run_spatial_study
    report = run(study, workers=cfg["workers"], config=cfg.as_dict())
    _write_echo(cfg, out)
    if cfg["debug.dump_matrices"]:
        _dump_matrices(discretize(cfg.problem(), cfg["mesh.nx"], cfg["mesh.ny"]), out)
    emit_report(report, out)
    for name, rep in report.schemes.items():
        print(f"{name}: fitted order {rep.fitted_order:.4f}")
    print(out / "errors.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spdefem", description="Finite element solver for semilinear SPDEs.")
    ap.add_argument("command", nargs="?", choices=COMMANDS, help="overrides the config's command")
    ap.add_argument("--config", help="INI-style configuration file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key")
    ap.add_argument("--seed", type=int, help="master seed (highest priority)")
    ap.add_argument("--workers", type=int, help="worker processes for studies")
    ap.add_argument("--out", help="output directory")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = list(args.set)
        if args.command:
            overrides.append(f"command={args.command}")
        if args.workers is not None:
            overrides.append(f"workers={args.workers}")
        if args.out is not None:
            overrides.append(f"out_dir={args.out}")
        cfg = parse_config(args.config, overrides, seed=args.seed)
        out = Path(cfg["out_dir"])
        if cfg.command == "validate":
            return cmd_validate(cfg, out)
        cfg.check()
        if cfg.command == "mesh-dump":
            return cmd_mesh_dump(cfg, out)
        if cfg.command == "solve":
            return cmd_solve(cfg, out)
        return _study(cfg, out, "temporal" if cfg.command == "temporal-study" else "spatial")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (NumericalError, StepFailure) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SpdeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
