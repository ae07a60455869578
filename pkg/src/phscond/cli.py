"""Command-line entry point.

Subcommands: ``verify`` (equal-conductivity check of both discretizations),
``study`` (manufactured-solution convergence study), ``app`` (application
case) and ``export-points``.  Options may also come from an INI file given
with ``--config``: flat ``key = value`` lines (or a ``[run]`` section)
using the long option names.  Flags on the command line win.  Exit status is 0 on success, 2 for
configuration errors and 1 for failures while running.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
import warnings

import numpy as np

from phscond import applications, solver, verify
from phscond.geometry import SHAPES, GeometryError, GeometrySpec, export_points, generate
from phscond.output import RunWriter, field_csv, vtk_text

WORKERS_ENV = "PHSCOND_WORKERS"


class ConfigError(ValueError):
    pass


def parse_int_list(text: str) -> list[int]:
    """``"3..6"`` -> [3, 4, 5, 6]; ``"3,5"`` -> [3, 5]."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise ConfigError(f"empty integer list {text!r}")
    return out


def parse_float_list(text: str) -> list[float]:
    vals = [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
    if not vals:
        raise ConfigError(f"empty number list {text!r}")
    return vals


def _solver_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("solver")
    g.add_argument("--tol", type=float, help="relative residual target (default 1e-12)")
    g.add_argument("--max-iterations", type=int, help="BiCGSTAB iteration cap (default 5000)")
    g.add_argument("--preconditioner", choices=solver.PRECONDITIONERS)
    g.add_argument("--no-reorder", action="store_true", default=None, help="skip RCM reordering")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with a [run] section of option defaults")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="point-generation seed (default 0)")
    p.add_argument("--alpha", type=int, help="PHS exponent parameter, kernel r^(2 alpha + 1) (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phscond", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="equal-conductivity circle: single-domain vs multidomain orders")
    _common(v)
    v.add_argument("--p", help="polynomial degrees, e.g. 3..6")
    v.add_argument("--dr", help="comma-separated spacings")
    _solver_args(v)

    s = sub.add_parser("study", help="manufactured-solution convergence study")
    _common(s)
    s.add_argument("--case", choices=verify.CASES)
    s.add_argument("--ratios", help="conductivity ratios k_I/k_II, e.g. 5,10,100")
    s.add_argument("--p", help="polynomial degrees, e.g. 3..6")
    s.add_argument("--dr", help="comma-separated spacings (default: the case's ladder)")
    s.add_argument("--modes", help="multidomain and/or single_domain_smearing")
    s.add_argument("--full", action="store_true", default=None, help="all six 3D spacing levels for sphere_in_cube")
    s.add_argument("--fields", action="store_true", default=None, help="export VTK/CSV fields at the finest spacing")
    _solver_args(s)

    a = sub.add_parser("app", help="application case")
    _common(a)
    a.add_argument("--case", help="built-in case name or INI path")
    a.add_argument("--p", type=int)
    a.add_argument("--dr", type=float, help="spacing override")
    a.add_argument("--ladder", help="spacings for a grid-independence sweep")
    _solver_args(a)

    e = sub.add_parser("export-points", help="write a generated point set")
    _common(e)
    e.add_argument("--case", help="manufactured case, geometry shape or application case")
    e.add_argument("--dr", type=float)
    return parser


DEFAULTS = {
    "verify": {"p": "3..6", "dr": None, "out": "phscond_verify"},
    "study": {"case": "circle_in_square", "ratios": "10", "p": "3..6", "dr": None,
              "modes": "multidomain", "full": False, "fields": False, "out": "phscond_study"},
    "app": {"case": "astroid_a", "p": None, "dr": None, "ladder": None, "out": "phscond_app"},
    "export-points": {"case": "circle_in_square", "dr": 0.052, "out": "phscond_points"},
}
SHARED = {"seed": 0, "alpha": 1, "tol": 1e-12, "max_iterations": 5000, "preconditioner": "ilu0", "no_reorder": False}


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and command-line flags (flags win)."""
    cfg = dict(SHARED)
    cfg.update(DEFAULTS[args.command])
    if args.config:
        cp = configparser.ConfigParser()
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from None
        if not any(line.strip().startswith("[") for line in text.splitlines()):
            text = "[run]\n" + text  # flat key = value file
        try:
            cp.read_string(text, source=args.config)
        except configparser.Error as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
        if cp.has_section("run"):
            for key, val in cp["run"].items():
                key = key.replace("-", "_")
                if key not in cfg:
                    raise ConfigError(f"{args.config}: unknown option {key!r} for {args.command}")
                cfg[key] = val
    for key, val in vars(args).items():
        if key in cfg and val is not None:
            cfg[key] = val
    try:
        for key in ("seed", "alpha", "max_iterations"):
            cfg[key] = int(cfg[key])
        cfg["tol"] = float(cfg["tol"])
        # fail early on malformed lists and numbers
        if args.command in ("verify", "study"):
            parse_int_list(cfg["p"])
            if cfg["dr"] is not None:
                parse_float_list(cfg["dr"])
        if args.command == "study":
            parse_float_list(cfg["ratios"])
        if args.command == "app":
            cfg["p"] = None if cfg["p"] is None else int(cfg["p"])
            cfg["dr"] = None if cfg["dr"] is None else float(cfg["dr"])
            if cfg["ladder"]:
                parse_float_list(cfg["ladder"])
        if args.command == "export-points":
            cfg["dr"] = float(cfg["dr"])
    except ValueError as exc:
        raise ConfigError(f"bad option value: {exc}") from None
    for key in ("no_reorder", "full", "fields"):
        if key in cfg and isinstance(cfg[key], str):
            cfg[key] = cfg[key].strip().lower() in ("1", "true", "yes", "on")
    return cfg


def solver_config(cfg: dict) -> solver.SolverConfig:
    return solver.SolverConfig(
        rel_tolerance=cfg["tol"],
        max_iterations=cfg["max_iterations"],
        preconditioner=cfg["preconditioner"],
        reorder=not cfg["no_reorder"],
    )


def workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _study(cfg: dict, out: RunWriter, case: str, modes, ratios) -> verify.StudyReport:
    if cfg["dr"] is not None:
        spacings = parse_float_list(cfg["dr"])
    elif case == "sphere_in_cube" and cfg.get("full"):
        spacings = verify.FULL_SPHERE_SPACINGS
    else:
        spacings = verify.DEFAULT_SPACINGS[case]
    report = verify.run_study(
        case, spacings, parse_int_list(cfg["p"]), ratios, modes, cfg["alpha"],
        solver_config(cfg), cfg["seed"], workers(), keep_fields=bool(cfg.get("fields")),
    )
    out.write_text("study.csv", report.to_csv())
    out.write_text("summary.txt", report.summary() + "\n")
    finest = min(spacings)
    for (mode, ratio, p, dr), (ps, T, Te) in sorted(report.fields.items()):
        if dr != finest:
            continue
        scal = {"temperature": T, "exact": Te, "abs_diff": np.abs(T - Te), "subdomain": ps.subdomain_id}
        stem = f"field_{mode}_ratio{ratio:g}_p{p}"
        out.write_text(stem + ".vtk", vtk_text(ps.coords, scal, f"{case} {stem}"))
        out.write_text(stem + ".csv", field_csv(ps.coords, scal))
    return report


def cmd_verify(cfg: dict, out: RunWriter) -> None:
    report = _study(cfg, out, "equal_k_circle", ("multidomain", "single_domain_smearing"), (1.0,))
    print(f"{'p':>3}{'single-domain C':>18}{'multidomain C':>16}")
    for p in parse_int_list(cfg["p"]):
        c_s = report.order("single_domain_smearing", 1.0, p)
        c_m = report.order("multidomain", 1.0, p)
        print(f"{p:>3}{c_s:>18.3f}{c_m:>16.3f}")


def cmd_study(cfg: dict, out: RunWriter) -> None:
    modes = [m.strip() for m in str(cfg["modes"]).split(",") if m.strip()]
    bad = [m for m in modes if m not in ("multidomain", "single_domain_smearing")]
    if bad:
        raise ConfigError(f"unknown mode(s) {bad}")
    if cfg["case"] not in verify.CASES:
        raise ConfigError(f"unknown case {cfg['case']!r}; choose from {verify.CASES}")
    report = _study(cfg, out, cfg["case"], modes, parse_float_list(cfg["ratios"]))
    print(report.summary())


def cmd_app(cfg: dict, out: RunWriter) -> None:
    case = applications.load_case(cfg["case"])
    if cfg["dr"] is not None:
        case = case.with_spacing(float(cfg["dr"]))
    p = None if cfg["p"] is None else int(cfg["p"])
    scfg = solver_config(cfg)
    if cfg["ladder"]:
        study = applications.grid_independence(case, parse_float_list(cfg["ladder"]), p, solver_cfg=scfg, seed=cfg["seed"])
        results = study.levels
        lines = ["n_points,spacing,average_temperature,iterations,residual"]
        for r in results:
            lines.append(f"{r.points.n},{r.case.geometry.spacing!r},{r.average!r},{r.report.iterations},{r.report.residual!r}")
        out.write_text("ladder.csv", "\n".join(lines) + "\n")
        print(f"finest-pair profile deviation {study.deviation():.3e}, average change {study.average_change():.3%}")
    else:
        results = [applications.run_application(case, p, scfg, cfg["seed"], cfg["alpha"])]
    res = results[-1]
    ps = res.points
    scal = {"temperature": res.temperature, "subdomain": ps.subdomain_id}
    out.write_text("field.vtk", vtk_text(ps.coords, scal, f"{case.name} temperature"))
    out.write_text("field.csv", field_csv(ps.coords, scal))
    if res.profiles:
        rows = ["probe,t," + ",".join("xyz"[: ps.dim]) + ",temperature"]
        for name, (t, xq, T) in res.profiles.items():
            for ti, xi, Ti in zip(t.tolist(), xq.tolist(), T.tolist()):
                rows.append(f"{name},{ti!r}," + ",".join(repr(v) for v in xi) + f",{Ti!r}")
        out.write_text("profiles.csv", "\n".join(rows) + "\n")
    out.write_text("summary.json", json.dumps(res.summary(), indent=2, sort_keys=True) + "\n")
    print(f"{case.name}: {ps.n} points, average temperature {res.average:.6g} (point average)")


def _export_spec(name: str, dr: float) -> GeometrySpec:
    if name in verify.CASES:
        return GeometrySpec(verify.make_case(name).geometry, dr)
    if name in SHAPES:
        return GeometrySpec(name, dr)
    try:
        return applications.load_case(name).with_spacing(dr).geometry
    except applications.CaseError:
        raise ConfigError(f"unknown case or shape {name!r}") from None


def cmd_export_points(cfg: dict, out: RunWriter) -> None:
    spec = _export_spec(cfg["case"], float(cfg["dr"]))
    ps = generate(spec, cfg["seed"])
    name = f"{cfg['case']}_dr{float(cfg['dr']):g}.pts"
    export_points(ps, out.register(name))
    print(f"{out.path(name)}: {ps.n} points {ps.counts()}")


COMMANDS = {"verify": cmd_verify, "study": cmd_study, "app": cmd_app, "export-points": cmd_export_points}
CONFIG_ERRORS = (ConfigError, applications.CaseError, verify.VerifyError, GeometryError, configparser.Error)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on bad flags
    try:
        cfg = resolve(args)
        solver_config(cfg)
        out = RunWriter(cfg["out"])
    except (ConfigError, ValueError, OSError) as exc:
        print(f"phscond: configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            COMMANDS[args.command](cfg, out)
    except CONFIG_ERRORS as exc:
        print(f"phscond: configuration error [{type(exc).__module__}]: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every failure maps to exit status 1
        cause = exc.__cause__ or exc
        print(f"phscond: {args.command} failed [{type(cause).__module__}.{type(cause).__name__}]: {exc}", file=sys.stderr)
        return 1
    finally:
        if "out" in locals():
            config = {k: v for k, v in cfg.items()}
            config["command"] = args.command
            config["workers"] = os.environ.get(WORKERS_ENV, "1")
            out.manifest(args.command, config, cfg.get("seed"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
