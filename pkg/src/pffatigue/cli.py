"""Command-line entry point and INI run files.

A run file is a sectioned key-value file::

    [case]
    preset = desk_sent

    [load]
    cycles = 200

    [solver]
    strategy = mn+cla

Sections: ``case``, ``geometry``, ``material``, ``load``, ``solver`` and
``output``.  Keys left out keep the preset value (or the built-in default
when no preset is named).  Unknown sections or keys are errors.
"""

from __future__ import annotations

import argparse
import configparser
import io
import logging
import math
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .constitutive import ConstitutiveError, MaterialParams, SplitKind
from .mesh import ConfigurationError
from .postprocess import solution_fields, write_increment_log, write_metrics, write_vtk
from .presets import PRESETS, STEEL, CaseStudy, GeometrySpec, preset
from .solver import STRATEGIES, FatigueSolver, LoadProgram, NonConvergenceError, SolverConfig

log = logging.getLogger("pffatigue")


class ConfigError(ValueError):
    """Invalid run file; ``path`` is ``section.key``."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class OutputSpec:
    """``vtk_interval`` is in cycles; ``None`` means every 10 % of the run."""

    dir: str = "results"
    vtk_interval: float | None = None

    def interval(self, total_cycles: float) -> float:
        if self.vtk_interval is not None:
            return self.vtk_interval
        return max(total_cycles / 10.0, 1.0)


@dataclass(frozen=True)
class RunSpec:
    case: CaseStudy
    output: OutputSpec = field(default_factory=OutputSpec)
    preset: str | None = None


# -- value codecs --------------------------------------------------------------

def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _opt(conv):
    def parse(s):
        return None if s.strip().lower() in ("", "none") else conv(s)
    return parse


def _floats(n):
    def parse(s):
        vals = tuple(_float(t) for t in s.replace(",", " ").split())
        if n is not None and len(vals) != n:
            raise ValueError(f"expected {n} numbers, got {len(vals)}")
        return vals
    return parse


def _points(s: str):
    pts = [p for p in s.split(";") if p.strip()]
    return tuple(_floats(2)(p) for p in pts)


def _int(s: str) -> int:
    v = float(s)
    if v != int(v):
        raise ValueError("must be an integer")
    return int(v)


def _bool(s: str) -> bool:
    key = s.strip().lower()
    if key in ("1", "true", "yes", "on"):
        return True
    if key in ("0", "false", "no", "off"):
        return False
    raise ValueError("must be a boolean")


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(_fmt(p) for p in v)
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, SplitKind):
        return v.value
    return str(v)


GEOMETRY_KEYS = {
    "kind": str,
    "width": _float,
    "height": _float,
    "h_coarse": _float,
    "h_fine": _float,
    "refine_box": _floats(4),
    "grading": _float,
    "crack_start": _floats(2),
    "crack_tip": _floats(2),
    "holes": _points,
    "hole_radius": _float,
    "supports": _floats(2),
    "load_x": _float,
    "load_width": _float,
    "fatigue_region": _opt(_floats(4)),
}
MATERIAL_KEYS = {"E": _float, "nu": _float, "Gc": _float, "ell": _float, "alpha_T": _opt(_float), "split": SplitKind.parse}
LOAD_KEYS = {"u_max": _float, "R": _float, "cycles": _float}
SOLVER_KEYS = {
    "strategy": str,
    "tol_in": _float,
    "tol_out": _float,
    "n_i": _int,
    "n_c": _int,
    "n_i_phi": _opt(_int),
    "n_c_phi": _opt(_int),
    "max_outer": _int,
    "max_inner": _int,
    "ncycles": _float,
    "crack_set_threshold": _float,
    "residual_stiffness": _float,
}
OUTPUT_KEYS = {"dir": str, "vtk_interval": _opt(_float)}
CASE_KEYS = {"preset": _opt(str), "name": str}
SECTIONS = {
    "case": CASE_KEYS,
    "geometry": GEOMETRY_KEYS,
    "material": MATERIAL_KEYS,
    "load": LOAD_KEYS,
    "solver": SOLVER_KEYS,
    "output": OUTPUT_KEYS,
}


def _default_case() -> CaseStudy:
    return CaseStudy(
        geometry=GeometrySpec(),
        material=MaterialParams(ell=0.05, **STEEL),
        split=SplitKind.NOTENSION,
        load=LoadProgram(u_max=8e-4, total_cycles=500),
    )


def _parse_values(parser: configparser.ConfigParser) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(section, f"unknown section; expected one of {', '.join(SECTIONS)}")
        keys = SECTIONS[section]
        out[section] = {}
        for key, raw in parser.items(section):
            if key not in keys:
                raise ConfigError(f"{section}.{key}", "unknown key")
            try:
                out[section][key] = keys[key](raw)
            except (ValueError, ConstitutiveError) as exc:
                raise ConfigError(f"{section}.{key}", f"invalid value {raw!r}: {exc}") from None
    return out


def _wrap(path: str, build):
    try:
        return build()
    except (ValueError, ConstitutiveError, ConfigurationError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from None


def spec_from_string(text: str) -> RunSpec:
    """Parse an INI run file."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keys are case-sensitive (E, Gc, R)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<file>", f"malformed configuration: {exc}") from None
    if parser.defaults():
        raise ConfigError("DEFAULT", "unknown section; expected one of " + ", ".join(SECTIONS))
    values = _parse_values(parser)

    case_vals = values.get("case", {})
    preset_name = case_vals.get("preset")
    if preset_name is not None:
        try:
            base = preset(preset_name)
        except ConfigurationError as exc:
            raise ConfigError("case.preset", str(exc)) from None
    else:
        base = _default_case()
    if "name" in case_vals:
        base = replace(base, name=case_vals["name"])

    geom = _wrap("geometry", lambda: replace(base.geometry, **values.get("geometry", {})))

    mat_vals = dict(values.get("material", {}))
    split = mat_vals.pop("split", base.split)
    m = base.material
    if "alpha_T" not in mat_vals and any(k in mat_vals for k in ("Gc", "ell")):
        mat_vals["alpha_T"] = None  # re-derive from the new Gc / ell
    material = _wrap("material", lambda: replace(
        MaterialParams(m.E, m.nu, m.Gc, m.ell, m.alpha_T), **mat_vals))

    lv = values.get("load", {})
    load = _wrap("load", lambda: LoadProgram(
        u_max=lv.get("u_max", base.load.u_max),
        total_cycles=lv.get("cycles", base.load.total_cycles),
        R=lv.get("R", base.load.R),
    ))

    sv = dict(values.get("solver", {}))
    strategy = sv.pop("strategy", base.solver.strategy)
    if strategy not in STRATEGIES:
        raise ConfigError("solver.strategy", f"unknown strategy {strategy!r}; expected one of {', '.join(STRATEGIES)}")
    if "ncycles" in sv:
        sv["cycles_per_increment"] = sv.pop("ncycles")
    solver = _wrap("solver", lambda: replace(base.solver, **sv).with_strategy(strategy))

    output = _wrap("output", lambda: OutputSpec(**values.get("output", {})))
    if output.vtk_interval is not None and not output.vtk_interval > 0:
        raise ConfigError("output.vtk_interval", "must be positive")

    case = replace(base, geometry=geom, material=material, split=split, load=load, solver=solver)
    return RunSpec(case=case, output=output, preset=preset_name)


def load_spec(path) -> RunSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from None
    return spec_from_string(text)


def spec_to_string(spec: RunSpec) -> str:
    """Serialize every field; ``spec_from_string`` inverts it exactly."""
    c = spec.case
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["case"] = {"preset": _fmt(spec.preset), "name": c.name}
    parser["geometry"] = {f.name: _fmt(getattr(c.geometry, f.name)) for f in fields(GeometrySpec)}
    m = c.material
    parser["material"] = {
        "E": _fmt(m.E), "nu": _fmt(m.nu), "Gc": _fmt(m.Gc), "ell": _fmt(m.ell),
        "alpha_T": _fmt(m.alpha_T), "split": _fmt(c.split),
    }
    parser["load"] = {"u_max": _fmt(c.load.u_max), "R": _fmt(float(c.load.R)), "cycles": _fmt(float(c.load.total_cycles))}
    s = c.solver
    parser["solver"] = {
        "strategy": s.strategy, "tol_in": _fmt(s.tol_in), "tol_out": _fmt(s.tol_out),
        "n_i": str(s.n_i), "n_c": str(s.n_c), "n_i_phi": _fmt(s.n_i_phi), "n_c_phi": _fmt(s.n_c_phi),
        "max_outer": str(s.max_outer), "max_inner": str(s.max_inner),
        "ncycles": _fmt(float(s.cycles_per_increment)), "crack_set_threshold": _fmt(s.crack_set_threshold),
        "residual_stiffness": _fmt(float(s.residual_stiffness)),
    }
    parser["output"] = {"dir": spec.output.dir, "vtk_interval": _fmt(spec.output.vtk_interval)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def resolve_spec(arg: str) -> RunSpec:
    """A preset name or a path to an INI file."""
    if arg.lower().replace("-", "_") in PRESETS and not Path(arg).exists():
        return spec_from_string(f"[case]\npreset = {arg}\n")
    return load_spec(arg)


# -- execution -----------------------------------------------------------------

def apply_overrides(spec: RunSpec, cycles=None, strategy=None, split=None, ncycles=None, out=None) -> RunSpec:
    c = spec.case
    if cycles is not None:
        c = replace(c, load=_wrap("load.cycles", lambda: replace(c.load, total_cycles=cycles)))
    if strategy is not None:
        if strategy not in STRATEGIES:
            raise ConfigError("solver.strategy", f"unknown strategy {strategy!r}")
        c = replace(c, solver=c.solver.with_strategy(strategy))
    if split is not None:
        c = replace(c, split=_wrap("material.split", lambda: SplitKind.parse(split)))
    if ncycles is not None:
        c = replace(c, solver=_wrap("solver.ncycles", lambda: replace(c.solver, cycles_per_increment=ncycles)))
    output = replace(spec.output, dir=out) if out is not None else spec.output
    return replace(spec, case=c, output=output)


def execute(spec: RunSpec, out_dir: Path | None = None, write_vtk_files: bool = True):
    """Run one analysis, writing VTK snapshots, metrics and the increment log."""
    case = spec.case
    out_dir = Path(out_dir or spec.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    problem = case.build_problem()
    solver = FatigueSolver(problem, case.solver, case.load.R)
    interval = spec.output.interval(case.load.total_cycles)
    next_snapshot = [interval]
    tag = case.solver.strategy.replace("+", "_")

    def snapshot(s: FatigueSolver, label: str):
        fields_ = solution_fields(problem.mesh, s.u, s.phi, s.state.alpha, s.state.history)
        write_vtk(problem.mesh, fields_, out_dir / f"{case.name}_{tag}_{label}.vtk", title=f"{case.name} {label}")

    def on_increment(s: FatigueSolver, rec):
        if write_vtk_files and rec.cycle >= next_snapshot[0] - 1e-9:
            snapshot(s, f"c{int(round(rec.cycle)):08d}")
            while next_snapshot[0] <= rec.cycle + 1e-9:
                next_snapshot[0] += interval

    try:
        result = solver.run(case.load, on_increment)
    finally:
        if write_vtk_files:
            snapshot(solver, "final")
    write_metrics(result, out_dir / f"metrics_{tag}.csv", out_dir / f"history_{tag}.csv")
    write_increment_log(result, out_dir / f"increments_{tag}.csv")
    return result


def _summary(result) -> str:
    return (
        f"strategy={result.strategy} cycles={result.cycles:g} increments={result.increments} "
        f"factorizations={result.factorizations} iters_phi={result.iters_phi} iters_u={result.iters_u} "
        f"wall_time_s={result.wall_time:.3f} delta_a_mm={result.final_crack_extension:.6g}"
    )


def cmd_run(args) -> int:
    spec = apply_overrides(resolve_spec(args.spec), args.cycles, args.strategy, args.split, args.ncycles, args.out)
    result = execute(spec)
    print(_summary(result))
    return 0


def cmd_compare(args) -> int:
    spec = apply_overrides(resolve_spec(args.spec), args.cycles, None, args.split, args.ncycles, args.out)
    names = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if not names:
        raise ConfigError("--strategies", "no strategy given")
    for n in names:
        if n not in STRATEGIES:
            raise ConfigError("--strategies", f"unknown strategy {n!r}")
    out = Path(spec.output.dir)
    results = []
    for n in names:
        s = apply_overrides(spec, strategy=n)
        results.append(execute(s, out, write_vtk_files=False))
        print(_summary(results[-1]))
    path, _ = write_metrics(results, out / "comparison.csv", out / "comparison_history.csv")
    print(f"comparison written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pffatigue", description="Phase-field fatigue analyses.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="log progress (-vv for debug)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("spec", help="INI run file or preset name")
        sp.add_argument("--cycles", type=float)
        sp.add_argument("--split", choices=[k.value for k in SplitKind])
        sp.add_argument("--ncycles", type=float, help="cycles per increment in constant-load mode")
        sp.add_argument("--out", help="output directory")

    run = sub.add_parser("run", help="run one analysis")
    common(run)
    run.add_argument("--strategy", choices=list(STRATEGIES))
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="run several strategies and tabulate")
    common(cmp_)
    cmp_.add_argument("--strategies", required=True, help="comma-separated, e.g. baseline,mn,cla,mn+cla")
    cmp_.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NonConvergenceError as exc:
        print(f"nonconvergence: {exc} (last converged cycle {exc.last_cycle:g})", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
