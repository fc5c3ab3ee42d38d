"""Golden fixtures for the bundled systems and the runner that checks them.

Fixture files live in ``data/fixtures`` (one per system) and are the only
place reference numbers are stored.  Each fixture names a quantity, the
inputs needed to compute it, the expected value, a provenance tag and a
tolerance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .balance import (BalanceRoot, field_for, find_roots, horizon_gap, power_matrix,
                      root_to_equilibrium)
from .correspondence import SpectralReport, analyze
from .flow import Trajectory, rate_check, t_max
from .pipeline import limiting_root, pair_sign, run_flow, to_complex
from .system import SystemDef, bundled_system

FIXTURE_DIR = Path(__file__).with_name("data") / "fixtures"
PROVENANCE = ("published-table", "published-formula", "derived-oracle")
SPECTRA = ("spec_A_ext", "spec_Dg")


class FixtureError(ValueError):
    pass


@dataclass(frozen=True)
class GoldenFixture:
    system: str
    id: str
    quantity: str
    inputs: dict
    expected: Any
    provenance: str
    source: str
    tolerance: dict


def load_fixtures(path: str | Path) -> list[GoldenFixture]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    system = data.get("system")
    out = []
    for i, item in enumerate(data.get("fixtures", [])):
        where = f"{path}: fixture {i}"
        missing = {"id", "quantity", "inputs", "expected", "provenance", "source", "tolerance"} - item.keys()
        if missing:
            raise FixtureError(f"{where} lacks {sorted(missing)}")
        if item["provenance"] not in PROVENANCE:
            raise FixtureError(f"{where}: unknown provenance {item['provenance']!r}")
        if not item["source"].strip():
            raise FixtureError(f"{where}: empty source")
        if len(item["tolerance"]) != 1 or next(iter(item["tolerance"])) not in ("abs", "rel", "exact"):
            raise FixtureError(f"{where}: tolerance must be one of abs, rel, exact")
        if item["quantity"] not in QUANTITIES:
            raise FixtureError(f"{where}: unknown quantity {item['quantity']!r}")
        out.append(GoldenFixture(system, item["id"], item["quantity"], item["inputs"], item["expected"],
                                 item["provenance"], item["source"], item["tolerance"]))
    return out


def bundled_fixture_paths() -> list[Path]:
    return sorted(FIXTURE_DIR.glob("*.json"))


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class _FlowRun:
    sys: SystemDef
    t0: float
    x0: list | None
    y0: list | None
    h: float

    @cached_property
    def traj(self) -> Trajectory:
        _, _, tr = run_flow(self.sys, self.t0, self.x0, self.y0, self.h)
        if not tr.converged:
            raise ArithmeticError(f"trajectory from t0={self.t0} ended with status {tr.status}")
        return tr

    @cached_property
    def tmax(self):
        return t_max(field_for(self.sys), self.traj)

    @cached_property
    def root(self) -> BalanceRoot:
        return limiting_root(self.sys, self.tmax.t_max, self.traj.final_x)

    @cached_property
    def analysis(self) -> SpectralReport:
        return analyze(self.sys, self.root)

    @cached_property
    def rates(self):
        df = field_for(self.sys)
        rep = rate_check(df, self.traj, root_to_equilibrium(self.sys, self.root), self.root)
        if rep.status == "inconclusive":
            raise ArithmeticError("rate fit inconclusive")
        return {f.component: f for f in rep.fits}


class Evaluator:
    """Computes fixture quantities, sharing flows and root searches between fixtures."""

    def __init__(self) -> None:
        self._systems: dict[str, SystemDef] = {}
        self._flows: dict[tuple, _FlowRun] = {}
        self._roots: dict[tuple, list[BalanceRoot]] = {}

    def system(self, name: str) -> SystemDef:
        if name not in self._systems:
            self._systems[name] = bundled_system(name)
        return self._systems[name]

    def flow(self, fx: GoldenFixture) -> _FlowRun:
        i = fx.inputs
        x0, y0 = i.get("x0"), i.get("y0")
        key = (fx.system, i["t0"], tuple(x0 or ()), tuple(y0 or ()), i.get("h", 1e-3))
        if key not in self._flows:
            self._flows[key] = _FlowRun(self.system(fx.system), i["t0"], x0, y0, i.get("h", 1e-3))
        return self._flows[key]

    def roots(self, fx: GoldenFixture) -> list[BalanceRoot]:
        key = (fx.system, fx.inputs["t"])
        if key not in self._roots:
            s = self.system(fx.system)
            self._roots[key] = find_roots(s, fx.inputs["t"], seeds=s.seeds, rng=np.random.default_rng(0))
        return self._roots[key]

    def root_near(self, fx: GoldenFixture, target: Sequence[float]) -> BalanceRoot:
        roots = self.roots(fx)
        if not roots:
            raise ArithmeticError(f"no balance root at t={fx.inputs['t']}")
        return min(roots, key=lambda r: float(np.linalg.norm(np.subtract(r.Y0, target))))

    def value(self, fx: GoldenFixture) -> Any:
        return QUANTITIES[fx.quantity](self, fx)


def _eq(ev: Evaluator, fx: GoldenFixture):
    s = ev.system(fx.system)
    return s, root_to_equilibrium(s, ev.root_near(fx, fx.inputs["near"]))


def _no_branch(ev: Evaluator, fx: GoldenFixture) -> bool:
    for r in ev.roots(fx):
        y = np.asarray(r.Y0)
        if all(abs(y[i - 1] - y[j - 1]) < 1e-8 * (1 + abs(y[i - 1])) for i, j in fx.inputs["pairs"]):
            return False
    return True


def _rate(ev: Evaluator, fx: GoldenFixture):
    return ev.flow(fx).rates[fx.inputs["component"]]


def _transversal(ev: Evaluator, fx: GoldenFixture) -> list[float]:
    v = np.asarray(ev.flow(fx).analysis.transversal.vector, dtype=float)
    return list(v / v[0])


QUANTITIES: dict[str, Callable[[Evaluator, GoldenFixture], Any]] = {
    "balance_root": lambda ev, fx: list(ev.root_near(fx, fx.expected).Y0),
    "spec_A_ext": lambda ev, fx: list(power_matrix(ev.system(fx.system), ev.root_near(fx, fx.inputs["near"])).eig_A_ext),
    "x_star": lambda ev, fx: list(_eq(ev, fx)[1].x_star),
    "horizon_gap": lambda ev, fx: horizon_gap(ev.system(fx.system), _eq(ev, fx)[1].x_star),
    "C_star": lambda ev, fx: _eq(ev, fx)[1].C_star,
    "no_symmetric_branch": _no_branch,
    "t_max": lambda ev, fx: ev.flow(fx).tmax.t_max,
    "limit_x": lambda ev, fx: list(ev.flow(fx).traj.final_x),
    "spec_Dg": lambda ev, fx: list(ev.flow(fx).analysis.eig_Dg),
    "limit_C_star": lambda ev, fx: ev.flow(fx).analysis.C_star,
    "transversal_d": lambda ev, fx: ev.flow(fx).analysis.transversal.d,
    "transversal_vector": _transversal,
    "rate_slope": lambda ev, fx: _rate(ev, fx).slope,
    "rate_coefficient": lambda ev, fx: _rate(ev, fx).coefficient,
    "sign_x1x3": lambda ev, fx: pair_sign(ev.flow(fx).traj.final_x, (1, 3)),
    "a_tmax": lambda ev, fx: ev.system(fx.system).drive(ev.flow(fx).tmax.t_max),
}


# ---------------------------------------------------------------------------
# comparison


def _flat(v: Any) -> list[complex]:
    if isinstance(v, (list, tuple, np.ndarray)):
        return [to_complex(x) if isinstance(x, list) else complex(x) for x in v]
    return [complex(v)]


def _pair_up(actual: list[complex], expected: list[complex]) -> list[complex]:
    """Reorder ``actual`` so each entry sits next to its nearest expected partner."""
    left = list(actual)
    out = []
    for e in expected:
        j = min(range(len(left)), key=lambda i: abs(left[i] - e))
        out.append(left.pop(j))
    return out


def compare(fx: GoldenFixture, actual: Any) -> tuple[bool, str]:
    """Check ``actual`` against the fixture; the message is a human-readable diff."""
    kind, tol = next(iter(fx.tolerance.items()))
    if kind == "exact":
        ok = actual == fx.expected
        return ok, "" if ok else f"{fx.id}: expected {fx.expected!r}, got {actual!r}"
    exp = _flat(fx.expected)
    act = _flat(actual)
    if len(exp) != len(act):
        return False, f"{fx.id}: expected {len(exp)} values, got {len(act)}"
    if fx.quantity in SPECTRA:
        act = _pair_up(act, exp)
    errs = [abs(a - e) for a, e in zip(act, exp)]
    bounds = [tol if kind == "abs" else tol * abs(e) for e in exp]
    bad = [i for i, (d, b) in enumerate(zip(errs, bounds)) if not d <= b]
    if not bad:
        return True, ""
    i = bad[0]
    return False, (f"{fx.id}: component {i} expected {_fmt(exp[i])}, got {_fmt(act[i])}, "
                   f"|diff| = {errs[i]:.3e} > {bounds[i]:.3e} ({kind})")


def _fmt(z: complex) -> str:
    return f"{z.real:.10g}" if z.imag == 0 else f"{z.real:.10g}{z.imag:+.10g}i"


@dataclass
class GoldenResult:
    fixture: GoldenFixture
    actual: Any
    passed: bool
    diff: str


@dataclass
class GoldenReport:
    results: list[GoldenResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def first_failure(self) -> GoldenResult | None:
        return next((r for r in self.results if not r.passed), None)

    def summary(self) -> str:
        bad = [r for r in self.results if not r.passed]
        head = f"{len(self.results) - len(bad)}/{len(self.results)} fixtures passed"
        return "\n".join([head] + [r.diff for r in bad])


def run_fixtures(fixtures: Iterable[GoldenFixture], fail_fast: bool = True,
                 evaluator: Evaluator | None = None) -> GoldenReport:
    ev = evaluator or Evaluator()
    report = GoldenReport()
    for fx in fixtures:
        try:
            actual = ev.value(fx)
            ok, diff = compare(fx, actual)
        except (ArithmeticError, ValueError) as exc:
            actual, ok, diff = None, False, f"{fx.id}: {type(exc).__name__}: {exc}"
        report.results.append(GoldenResult(fx, actual, ok, diff))
        if fail_fast and not ok:
            break
    return report


def _run_file(args) -> GoldenReport:
    path, fail_fast, select = args
    fixtures = [f for f in load_fixtures(path) if select is None or select(f)]
    return run_fixtures(fixtures, fail_fast)


def run_golden_suite(paths: Sequence[str | Path] | None = None, fail_fast: bool = True,
                     select: Callable[[GoldenFixture], bool] | None = None, jobs: int = 1) -> GoldenReport:
    """Evaluate every fixture file; files run in parallel when ``jobs > 1``."""
    paths = list(paths) if paths is not None else bundled_fixture_paths()
    work = [(p, fail_fast, select) for p in paths]
    if jobs > 1 and len(work) > 1 and select is None:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_run_file, work))
    else:
        parts = []
        for w in work:
            parts.append(_run_file(w))
            if fail_fast and not parts[-1].passed:
                break
    return GoldenReport([r for p in parts for r in p.results])


def fixtures_for(system: str) -> list[GoldenFixture]:
    return load_fixtures(FIXTURE_DIR / f"{system}.json")
