"""Command-line entry point: ``blowup <command> SYSTEM [options]``.

Exit codes: 0 success, 1 the input failed validation, 2 a numerical or
runtime failure, 3 bad usage.
"""

from __future__ import annotations

import argparse
import json
import sys as _sys
from pathlib import Path
from typing import Sequence

from . import __version__
from . import pipeline as pl
from .balance import power_matrix, root_to_equilibrium
from .expr import ParseError
from .flow import trajectory_csv
from .system import BUNDLED, SchemaError, SystemDef, bundled_system, load_system

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits with 2 by default, which we reserve
        self.print_usage(_sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _pair(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2 or not all(p.strip().isdigit() for p in parts):
        raise argparse.ArgumentTypeError("expected two 1-based indices such as 1,3")
    return int(parts[0]), int(parts[1])


def _common(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="seed for the PCG64 generator (default 0)")
    p.add_argument("--h", type=float, default=d(1e-3), help="integrator step (default 1e-3)")
    p.add_argument("--tau-max", type=float, default=d(1e5), help="integration horizon in desingularized time")
    p.add_argument("--out", default=d(None), help="write output here instead of stdout")
    p.add_argument("--json-indent", type=int, default=d(2), help="JSON indentation (default 2)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="blowup", description="Blow-up analysis for quasi-homogeneous ODE systems.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def cmd(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.add_argument("system", help="path to a system JSON file or a bundled name: " + ", ".join(BUNDLED))
        _common(p, suppress=True)
        return p

    p = cmd("validate", "check the quasi-homogeneous and residual parts")
    p.add_argument("--samples", type=int, default=200)

    for name, help_ in (("balance", "balance-law roots at a time t"),
                        ("spectrum", "power-matrix and Jacobian spectra at each root"),
                        ("correspond", "full eigenstructure correspondence at each root")):
        p = cmd(name, help_)
        p.add_argument("--t", type=float, default=None, help="time (default: first grid point of the system)")

    for name, help_ in (("flow", "integrate and write the trajectory as CSV"),
                        ("tmax", "integrate and report the blow-up time"),
                        ("report", "integrate, then analyse the limiting equilibrium")):
        p = cmd(name, help_)
        p.add_argument("--t0", type=float, default=0.0)
        g = p.add_mutually_exclusive_group()
        g.add_argument("--x0", type=_floats, help="initial point on the compactification")
        g.add_argument("--y0", type=_floats, help="initial point in original coordinates")
        if name != "flow":
            p.add_argument("--sign-pair", type=_pair, default=(1, 3))
        else:
            p.add_argument("--stride", type=int, default=10, help="keep every n-th step")

    p = cmd("sweep", "blow-up time over a list of initial times")
    p.add_argument("--t0-list", type=_floats, required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--x0", type=_floats)
    g.add_argument("--y0", type=_floats)
    p.add_argument("--sign-pair", type=_pair, default=(1, 3))
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    return parser


def resolve_system(ref: str) -> SystemDef:
    path = Path(ref)
    if path.exists():
        return load_system(path)
    name = ref[:-5] if ref.endswith(".json") else ref
    if name in BUNDLED:
        return bundled_system(name)
    raise UsageError(f"{ref!r} is neither a file nor a bundled system ({', '.join(BUNDLED)})")


def _start(sys: SystemDef, args) -> tuple[list[float] | None, list[float] | None]:
    x0, y0 = args.x0, args.y0
    if x0 is None and y0 is None:
        x0, y0 = sys.x0, sys.y0
        if x0 is not None and y0 is not None:
            y0 = None
        if x0 is None and y0 is None:
            raise UsageError("no initial point: pass --x0 or --y0")
    for v in (x0, y0):
        if v is not None and len(v) != sys.n:
            raise UsageError(f"initial point needs {sys.n} components, got {len(v)}")
    return (None if x0 is None else list(x0)), (None if y0 is None else list(y0))


def _time(sys: SystemDef, args) -> float:
    if args.t is not None:
        return args.t
    return sys.t_grid[0] if sys.t_grid else 0.0


def _emit(text: str, args) -> None:
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="\n")
    else:
        _sys.stdout.write(text)


def _json(data, args) -> str:
    return json.dumps(pl.jsonable(data), indent=args.json_indent or None, sort_keys=False, allow_nan=False) + "\n"


def run(args) -> int:
    sys = resolve_system(args.system)
    c = args.command
    if c == "validate":
        out = pl.validation(sys, args.samples, args.seed)
        _emit(_json(out, args), args)
        return EXIT_OK if out["passed"] else EXIT_INVALID
    if c in ("balance", "spectrum", "correspond"):
        t = _time(sys, args)
        if c == "correspond":
            _emit(_json(pl.correspond(sys, t, args.seed), args), args)
            return EXIT_OK
        roots = pl.roots_payload(sys, t, args.seed)
        if c == "balance":
            items = []
            for r in roots:
                eq = root_to_equilibrium(sys, r)
                items.append({**pl.root_dict(r), "x_star": eq.x_star, "C_star": eq.C_star,
                              "spec_A": power_matrix(sys, r).eig_A})
        else:
            items = [pl.spectrum_dict(sys, r) for r in roots]
        _emit(_json({"system": sys.name, "t": t, "seed": args.seed, "rng": pl.RNG_NAME, "roots": items}, args), args)
        return EXIT_OK
    if c == "sweep":
        x0, y0 = _start(sys, args)
        rows = pl.sweep_rows(sys, args.t0_list, x0, y0, args.h, args.tau_max, args.sign_pair, args.jobs)
        _emit(pl.sweep_csv(rows), args)
        return EXIT_OK
    x0, y0 = _start(sys, args)
    if c == "flow":
        _, _, traj = pl.run_flow(sys, args.t0, x0, y0, args.h, args.tau_max, args.stride)
        _emit(trajectory_csv(traj), args)
        if not traj.converged:
            print(f"blowup: trajectory {traj.status}: {traj.message}", file=_sys.stderr)
            return EXIT_NUMERIC
        return EXIT_OK
    if c == "tmax":
        out = pl.tmax_dict(sys, args.t0, x0, y0, args.h, args.tau_max, args.sign_pair)
        _emit(_json(out, args), args)
        return EXIT_OK if out["status"] == "converged" else EXIT_NUMERIC
    out = pl.full_report(sys, args.t0, x0, y0, args.h, args.tau_max, args.seed, args.sign_pair)
    _emit(_json(out, args), args)
    return EXIT_OK if out["ok"] else EXIT_NUMERIC


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except UsageError as exc:
        print(f"blowup: {exc}", file=_sys.stderr)
        return EXIT_USAGE
    except (SchemaError, ParseError) as exc:
        print(f"blowup: invalid system: {exc}", file=_sys.stderr)
        return EXIT_INVALID
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        print(f"blowup: {type(exc).__name__}: {exc}", file=_sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
