"""System definitions: the declared quasi-homogeneous / residual split and its checks."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import expr as ex
from .embedding import EmbeddingSpec, scale, to_horizon


class SchemaError(ValueError):
    """A system definition is malformed.  ``location`` names the file and field."""

    def __init__(self, message: str, location: str = "", line: int | None = None):
        where = location + (f":{line}" if line is not None else "")
        super().__init__(f"{where}: {message}" if where else message)
        self.location = location
        self.line = line


@dataclass(frozen=True)
class QHSignature:
    alpha: tuple[int, ...]
    k: float

    def __post_init__(self):
        if any(a < 0 for a in self.alpha):
            raise ValueError("type exponents must be nonnegative")
        if not any(a > 0 for a in self.alpha):
            raise ValueError("type exponents must not all vanish")
        if not self.k >= 1.0:
            raise ValueError(f"order k={self.k} is outside the supported range k >= 1")

    @property
    def n(self) -> int:
        return len(self.alpha)

    @property
    def active(self) -> tuple[int, ...]:
        return tuple(i for i, a in enumerate(self.alpha) if a > 0)


@dataclass(frozen=True, eq=False)
class SystemDef:
    name: str
    state: tuple[str, ...]
    signature: QHSignature
    f_qh: tuple[ex.Expr, ...]
    f_res: tuple[ex.Expr, ...]
    params: Mapping[str, float] = field(default_factory=dict)
    driver: ex.Expr | None = None
    seeds: tuple[tuple[float, ...], ...] = ()
    t_grid: tuple[float, ...] = ()
    x0: tuple[float, ...] | None = None
    y0: tuple[float, ...] | None = None

    @property
    def n(self) -> int:
        return len(self.state)

    @property
    def alpha(self) -> tuple[int, ...]:
        return self.signature.alpha

    @property
    def k(self) -> float:
        return self.signature.k

    @cached_property
    def spec(self) -> EmbeddingSpec:
        return EmbeddingSpec.from_alpha(self.alpha)

    @cached_property
    def qh_fn(self):
        return ex.compile_exprs(self.f_qh, self.n)

    @cached_property
    def res_fn(self):
        return ex.compile_exprs(self.f_res, self.n)

    @cached_property
    def qh_jac_exprs(self) -> tuple[tuple[ex.Expr, ...], ...]:
        """Rows i, columns (t, y_1..y_n) of the symbolic Jacobian of f_qh."""
        return tuple(tuple(ex.diff(e, v) for v in range(self.n + 1)) for e in self.f_qh)

    @cached_property
    def qh_jac_fn(self):
        flat = [d for row in self.qh_jac_exprs for d in row]
        return ex.compile_exprs(flat, self.n)

    def qh(self, t: float, y: Sequence[float]) -> np.ndarray:
        return np.array(self.qh_fn(t, tuple(y)))

    def res(self, t: float, y: Sequence[float]) -> np.ndarray:
        return np.array(self.res_fn(t, tuple(y)))

    def qh_jacobian(self, t: float, y: Sequence[float]) -> np.ndarray:
        """n x (n+1) matrix [D_t f_qh | D_y f_qh]."""
        return np.array(self.qh_jac_fn(t, tuple(y))).reshape(self.n, self.n + 1)

    def drive(self, t: float) -> float:
        """The scalar driver a(t) reported by sweeps (NaN when not declared)."""
        if self.driver is None:
            return math.nan
        return ex.evaluate(self.driver, t, ())


# ---------------------------------------------------------------------------
# loading


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _constant(value: Any, params: Mapping[str, float], where: str) -> float:
    if isinstance(value, bool):
        raise SchemaError("expected a number", where)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            e = ex.parse(value, [], params)
            return ex.evaluate(e, 0.0, ())
        except (ex.ParseError, ArithmeticError) as exc:
            raise SchemaError(f"not a constant expression: {exc}", where) from None
    raise SchemaError("expected a number or constant expression", where)


def system_from_dict(data: Mapping[str, Any], origin: str = "<dict>", text: str = "") -> SystemDef:
    def fail(msg: str, key: str) -> SchemaError:
        return SchemaError(msg, f"{origin}#/{key}", _line_of(text, key) if text else None)

    if not isinstance(data, Mapping):
        raise SchemaError("top level must be an object", origin)
    for key in ("name", "state", "alpha", "order_k", "qh", "res"):
        if key not in data:
            raise SchemaError(f"missing field {key!r}", origin)
    params = data.get("params", {})
    if not isinstance(params, Mapping) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in params.values()
    ):
        raise fail("params must map names to numbers", "params")
    params = {str(k): float(v) for k, v in params.items()}

    state = data["state"]
    if not isinstance(state, list) or not state or not all(
        isinstance(s, str) and re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", s) for s in state
    ):
        raise fail("state must be a nonempty list of identifiers", "state")
    if len(set(state)) != len(state) or ex.TIME in state:
        raise fail("state names must be distinct and differ from 't'", "state")
    n = len(state)

    alpha = data["alpha"]
    if (not isinstance(alpha, list) or len(alpha) != n
            or not all(isinstance(a, int) and not isinstance(a, bool) and a >= 0 for a in alpha)):
        raise fail(f"alpha must be {n} nonnegative integers", "alpha")
    if not any(alpha):
        raise fail("alpha must not be all zeros", "alpha")

    k = _constant(data["order_k"], params, f"{origin}#/order_k")
    if not (math.isfinite(k) and k >= 1.0):
        raise fail(f"order_k={k} must be a real number >= 1", "order_k")

    def exprs(key: str) -> tuple[ex.Expr, ...]:
        src = data[key]
        if not isinstance(src, list) or len(src) != n or not all(isinstance(s, str) for s in src):
            raise fail(f"{key} must be a list of {n} expression strings", key)
        out = []
        for i, s in enumerate(src):
            try:
                out.append(ex.parse(s, state, params))
            except ex.ParseError as exc:
                raise fail(f"component {i}: {exc}", key) from None
        return tuple(out)

    f_qh, f_res = exprs("qh"), exprs("res")

    driver = None
    if "driver" in data:
        try:
            driver = ex.parse(data["driver"], [], params)
        except (ex.ParseError, TypeError) as exc:
            raise fail(f"driver: {exc}", "driver") from None

    def vectors(key: str) -> tuple[tuple[float, ...], ...]:
        vals = data.get(key, [])
        if not isinstance(vals, list) or not all(
            isinstance(v, list) and len(v) == n and all(isinstance(c, (int, float)) for c in v) for v in vals
        ):
            raise fail(f"{key} must be a list of {n}-vectors", key)
        return tuple(tuple(float(c) for c in v) for v in vals)

    seeds = vectors("seeds")
    t_grid: tuple[float, ...] = ()
    if "t_grid" in data:
        g = data["t_grid"]
        if not (isinstance(g, list) and len(g) == 3 and all(isinstance(c, (int, float)) for c in g)
                and int(g[2]) == g[2] and g[2] >= 1):
            raise fail("t_grid must be [start, stop, count]", "t_grid")
        t_grid = tuple(float(v) for v in np.linspace(g[0], g[1], int(g[2])))

    def point(key: str) -> tuple[float, ...] | None:
        if key not in data:
            return None
        v = data[key]
        if not (isinstance(v, list) and len(v) == n and all(isinstance(c, (int, float)) for c in v)):
            raise fail(f"{key} must be a {n}-vector", key)
        return tuple(float(c) for c in v)

    return SystemDef(
        name=str(data["name"]),
        state=tuple(state),
        signature=QHSignature(tuple(alpha), k),
        f_qh=f_qh,
        f_res=f_res,
        params=params,
        driver=driver,
        seeds=seeds,
        t_grid=t_grid,
        x0=point("x0"),
        y0=point("y0"),
    )


def load_system(path: str | Path) -> SystemDef:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(exc.msg, str(path), exc.lineno) from None
    return system_from_dict(data, str(path), text)


BUNDLED = ("painleve1", "selfsimilar", "wwl_k2", "wwl_k1")


def bundled_path(name: str):
    if name.endswith(".json"):
        name = name[:-5]
    if name not in BUNDLED:
        raise KeyError(f"no bundled system named {name!r}")
    return resources.files("blowup") / "data" / "systems" / f"{name}.json"


def bundled_system(name: str) -> SystemDef:
    p = bundled_path(name)
    text = p.read_text(encoding="utf-8")
    return system_from_dict(json.loads(text), p.name, text)


# ---------------------------------------------------------------------------
# validation


@dataclass
class ComponentCheck:
    index: int
    name: str
    worst: float
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    kind: str
    components: list[ComponentCheck]
    samples: int
    message: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.components) and all(c.passed for c in self.components)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "passed": self.passed,
            "samples": self.samples,
            "message": self.message,
            "components": [c.__dict__ for c in self.components],
        }


QH_TOL = 1e-9
MAX_RETRIES = 100


def _sample(rng: np.random.Generator, n: int, attempt) -> tuple[float, np.ndarray] | None:
    for _ in range(MAX_RETRIES + 1):
        t = float(rng.uniform(-2.0, 2.0))
        y = rng.uniform(-2.0, 2.0, size=n)
        try:
            attempt(t, y)
            return t, y
        except ArithmeticError:
            continue
    return None


def validate_qh(sys: SystemDef, samples: int = 200, scales: Sequence[float] = (2.0, 5.0, 10.0),
                rng: np.random.Generator | None = None) -> ValidationReport:
    """Check exact quasi-homogeneity and the Euler identity of f_qh at random points.

    The scaling residual is compared after dividing by s**(k+alpha_i), so the
    tolerance 1e-9*(1+|f_i(y)|) is relative to the unscaled value.
    """
    if samples < 1 or any(s <= 1 for s in scales):
        raise ValueError("need samples >= 1 and all scales > 1")
    rng = rng or np.random.default_rng(0)
    n, k, alpha = sys.n, sys.k, np.array(sys.alpha, dtype=float)
    worst_scale = np.zeros(n)
    worst_euler = np.zeros(n)
    ok = np.ones(n, dtype=bool)

    def attempt(t, y):
        f = sys.qh(t, y)
        jac = sys.qh_jacobian(t, y)[:, 1:]
        scaled = [sys.qh(t, scale(sys.spec, s, y)) for s in scales]
        return f, jac, scaled

    for _ in range(samples):
        got = _sample(rng, n, attempt)
        if got is None:
            return ValidationReport("qh", [ComponentCheck(i, sys.state[i], math.inf, False, "domain errors")
                                           for i in range(n)], samples, "no admissible sample point")
        t, y = got
        f, jac, scaled = attempt(t, y)
        bound = QH_TOL * (1.0 + np.abs(f))
        for s, fs in zip(scales, scaled):
            err = np.abs(fs / s ** (k + alpha) - f)
            worst_scale = np.maximum(worst_scale, err / bound)
            ok &= err <= bound
        terms = jac * (alpha * y)
        lhs = terms.sum(axis=1)
        rhs = (k + alpha) * f
        mag = 1.0 + np.abs(rhs) + np.abs(terms).sum(axis=1)
        err = np.abs(lhs - rhs)
        worst_euler = np.maximum(worst_euler, err / (QH_TOL * mag))
        ok &= err <= QH_TOL * mag

    comps = [
        ComponentCheck(i, sys.state[i], float(max(worst_scale[i], worst_euler[i]) * QH_TOL), bool(ok[i]),
                       f"scaling {worst_scale[i] * QH_TOL:.3e}, euler {worst_euler[i] * QH_TOL:.3e}")
        for i in range(n)
    ]
    return ValidationReport("qh", comps, samples)


RES_MARGIN = 1e-3


def res_tilde(sys: SystemDef, t: float, x: np.ndarray, kappa: float) -> np.ndarray:
    """kappa**-(k+alpha_j) * f_res_j(t, kappa**Lambda x), evaluated directly."""
    alpha = np.array(sys.alpha, dtype=float)
    y = kappa ** alpha * x
    return sys.res(t, y) * kappa ** (-(sys.k + alpha))


def validate_res(sys: SystemDef, samples: int = 200, scales: Sequence[float] = (2.0, 5.0, 10.0),
                 rng: np.random.Generator | None = None, ladder: int = 8) -> ValidationReport:
    """Fit the decay exponent of the embedded residual towards the horizon.

    Each sample is a random horizon direction pulled inside along the
    dilation orbit to kappa in [1e3, 1e6]; the worst fitted log-log slope
    per component must lie below -1.  ``scales`` is accepted for symmetry
    with :func:`validate_qh`; the kappa ladder plays that role here.
    """
    del scales
    rng = rng or np.random.default_rng(0)
    n, spec = sys.n, sys.spec
    kappas = np.geomspace(1e3, 1e6, ladder)
    worst = np.full(n, -math.inf)
    valid_fits = np.zeros(n, dtype=int)
    for _ in range(samples):
        for _retry in range(MAX_RETRIES + 1):
            t = float(rng.uniform(-2.0, 2.0))
            d = rng.uniform(-1.0, 1.0, size=n)
            if all(abs(d[i]) < 1e-3 for i in spec.active):
                continue
            xh = to_horizon(spec, d)
            try:
                rows = []
                for kap in kappas:
                    lam = (1.0 - 1.0 / kap) ** (1.0 / (2 * spec.c))
                    x = scale(spec, lam, xh)
                    rows.append(np.abs(res_tilde(sys, t, x, kap)))
                break
            except ArithmeticError:
                continue
        else:
            return ValidationReport("res", [ComponentCheck(i, sys.state[i], math.inf, False, "domain errors")
                                            for i in range(n)], samples, "no admissible sample point")
        vals = np.array(rows)
        for i in range(n):
            col = vals[:, i]
            good = col > 0.0
            if not good.any():
                continue
            if good.sum() < 3:
                worst[i] = math.inf
                continue
            slope = np.polyfit(np.log(kappas[good]), np.log(col[good]), 1)[0]
            worst[i] = max(worst[i], slope)
            valid_fits[i] += 1
    comps = []
    for i in range(n):
        w = float(worst[i])
        if w == -math.inf:
            comps.append(ComponentCheck(i, sys.state[i], w, True, "identically zero"))
        else:
            comps.append(ComponentCheck(i, sys.state[i], w, w <= -1.0 - RES_MARGIN,
                                        f"fitted decay exponent {w:.4f} over {valid_fits[i]} samples"))
    return ValidationReport("res", comps, samples)
