"""Desingularized extended vector field on the compactified phase space.

All dependence on kappa is rewritten through ``K = 1 - p2c(x) = 1/kappa``
before differentiation, so the field and its Jacobian are ordinary
expressions in (t, x) that stay finite on the horizon ``K = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import expr as ex
from .expr import ONE, ZERO, Const, Expr, add, mul, neg, power, sub
from .system import SystemDef


class ResidualFormError(ValueError):
    """The residual part cannot be rewritten as a finite sum of monomials."""


class NotEquilibriumError(ValueError):
    """A decomposition was requested away from a horizon equilibrium."""


class ConsistencyError(ArithmeticError):
    """Two independent evaluations of the same matrix disagree."""


# ---------------------------------------------------------------------------
# monomial splitting of residual terms

Term = tuple[Expr, dict[int, float]]  # coefficient in t only, exponents of state vars


def _mono_mul(a: Term, b: Term) -> Term:
    exps = dict(a[1])
    for i, e in b[1].items():
        exps[i] = exps.get(i, 0.0) + e
    return mul(a[0], b[0]), {i: e for i, e in exps.items() if e != 0.0}


def _state_free(e: Expr) -> bool:
    return ex.variables(e) <= {0}


def monomial_terms(e: Expr) -> list[Term]:
    """Expand ``e`` into terms coef(t) * prod y_i**e_i.

    Raises :class:`ResidualFormError` for state dependence that is not of
    this form (e.g. ``sin(u)``).
    """
    if _state_free(e):
        return [] if isinstance(e, Const) and e.value == 0.0 else [(e, {})]
    if isinstance(e, ex.Var):
        return [(ONE, {e.index: 1.0})]
    if isinstance(e, ex.Neg):
        return [(neg(c), m) for c, m in monomial_terms(e.arg)]
    if isinstance(e, ex.BinOp):
        if e.op in "+-":
            right = monomial_terms(e.right)
            if e.op == "-":
                right = [(neg(c), m) for c, m in right]
            return monomial_terms(e.left) + right
        if e.op == "*":
            return [_mono_mul(a, b) for a in monomial_terms(e.left) for b in monomial_terms(e.right)]
        den = monomial_terms(e.right)
        if len(den) != 1:
            raise ResidualFormError("division by a non-monomial")
        c, m = den[0]
        inv = (ex.div(ONE, c), {i: -p for i, p in m.items()})
        return [_mono_mul(a, inv) for a in monomial_terms(e.left)]
    if isinstance(e, ex.Pow):
        base = monomial_terms(e.base)
        if len(base) == 1:
            c, m = base[0]
            return [(power(c, e.exponent), {i: p * e.exponent for i, p in m.items()})]
        if e.exponent.is_integer() and 0 <= e.exponent <= 16:
            out: list[Term] = [(ONE, {})]
            for _ in range(int(e.exponent)):
                out = [_mono_mul(a, b) for a in out for b in base]
            return out
        raise ResidualFormError("non-integer power of a sum")
    raise ResidualFormError(f"state variable inside {e.func}()")


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DesingField:
    sys: SystemDef
    p2c: Expr
    K: Expr
    f_tilde: tuple[Expr, ...]
    G: Expr
    g: tuple[Expr, ...]  # extended: g[0] is the time component

    @property
    def n(self) -> int:
        return self.sys.n

    @property
    def c(self) -> int:
        return self.sys.spec.c

    @cached_property
    def jac_exprs(self) -> tuple[tuple[Expr, ...], ...]:
        return tuple(tuple(ex.diff(gi, v) for v in range(self.n + 1)) for gi in self.g)

    @cached_property
    def ftilde_jac_exprs(self) -> tuple[tuple[Expr, ...], ...]:
        return tuple(tuple(ex.diff(fi, v) for v in range(self.n + 1)) for fi in self.f_tilde)

    @cached_property
    def _field_fn(self):
        return ex.compile_exprs(list(self.g) + [self.G, self.p2c], self.n)

    @cached_property
    def _vec_fn(self):
        return ex.compile_exprs(list(self.g), self.n)

    @cached_property
    def _jac_fn(self):
        return ex.compile_exprs([d for row in self.jac_exprs for d in row], self.n)

    @cached_property
    def _ftilde_fn(self):
        return ex.compile_exprs(list(self.f_tilde), self.n)

    @cached_property
    def _ftilde_jac_fn(self):
        return ex.compile_exprs([d for row in self.ftilde_jac_exprs for d in row], self.n)

    @cached_property
    def _G_fn(self):
        return ex.compile_exprs([self.G], self.n)

    def vector(self, t: float, x: Sequence[float]) -> tuple[float, ...]:
        """g^ext(t, x) as a plain tuple; the hot path of the integrator."""
        return self._vec_fn(t, x)

    def G_value(self, t: float, x: Sequence[float]) -> float:
        return self._G_fn(t, tuple(x))[0]

    def ftilde(self, t: float, x: Sequence[float]) -> np.ndarray:
        return np.array(self._ftilde_fn(t, tuple(x)))

    def ftilde_jacobian(self, t: float, x: Sequence[float]) -> np.ndarray:
        return np.array(self._ftilde_jac_fn(t, tuple(x))).reshape(self.n, self.n + 1)

    def jacobian(self, t: float, x: Sequence[float]) -> np.ndarray:
        m = self.n + 1
        return np.array(self._jac_fn(t, tuple(x))).reshape(m, m)


def build(sys: SystemDef) -> DesingField:
    spec = sys.spec
    n, k, c = sys.n, sys.k, spec.c
    xs = [ex.state_var(i, name) for i, name in enumerate(sys.state)]
    P: Expr = ZERO
    for i in spec.active:
        P = add(P, power(xs[i], 2 * spec.beta[i]))
    K = sub(ONE, P)
    Q = sub(ONE, mul(Const((2 * c - 1) / (2 * c)), K))

    f_tilde = []
    for j in range(n):
        fj = sys.f_qh[j]
        try:
            terms = monomial_terms(sys.f_res[j])
        except ResidualFormError as exc:
            raise ResidualFormError(f"residual component {sys.state[j]}: {exc}") from None
        for coef, exps in terms:
            deg = sum(sys.alpha[i - 1] * p for i, p in exps.items())
            q = k + sys.alpha[j] - deg
            if q < 0:
                raise ResidualFormError(
                    f"residual term in {sys.state[j]} has weighted degree {deg} above k+alpha={k + sys.alpha[j]}")
            term = coef
            for i, p in sorted(exps.items()):
                term = mul(term, power(xs[i - 1], p))
            fj = add(fj, mul(term, power(K, q)))
        f_tilde.append(fj)

    G: Expr = ZERO
    for j in spec.active:
        w = mul(Const(1.0 / sys.alpha[j]), power(xs[j], 2 * spec.beta[j] - 1))
        G = add(G, mul(w, f_tilde[j]))

    g0 = mul(Q, power(K, k))
    rows = [sub(mul(Q, f_tilde[j]), mul(G, mul(Const(float(sys.alpha[j])), xs[j]))) for j in range(n)]
    return DesingField(sys, P, K, tuple(f_tilde), G, (g0, *rows))


def eval_field(df: DesingField, t: float, x: Sequence[float]) -> tuple[float, np.ndarray, float, float]:
    """Return ``(g_0, g, G, p2c)`` at (t, x)."""
    vals = df._field_fn(t, tuple(float(v) for v in x))
    n = df.n
    return vals[0], np.array(vals[1:n + 1]), vals[n + 1], vals[n + 2]


def jacobian(df: DesingField, t: float, x: Sequence[float]) -> np.ndarray:
    return df.jacobian(t, x)


# ---------------------------------------------------------------------------
# structure at a horizon equilibrium

EQ_TOL = 1e-9
DEC_TOL = 1e-7


@dataclass(frozen=True)
class EquilibriumDecomposition:
    t_star: float
    x_star: np.ndarray
    C_star: float
    v_ext: np.ndarray
    grad_p: np.ndarray
    P: np.ndarray
    A_g: np.ndarray
    B_g: np.ndarray
    A_res: np.ndarray
    Dg: np.ndarray
    Dg_symbolic: np.ndarray
    residual: float
    checks: dict
    c: int

    @property
    def k_is_one(self) -> bool:
        return bool(np.any(self.A_res))

    @property
    def Dt_g(self) -> np.ndarray:
        return self.Dg[1:, 0]

    @property
    def Dx_g(self) -> np.ndarray:
        return self.Dg[1:, 1:]


def decompose_at_equilibrium(df: DesingField, t_star: float, x_star: Sequence[float],
                             tol: float = EQ_TOL) -> EquilibriumDecomposition:
    sys, spec = df.sys, df.sys.spec
    n = sys.n
    x = np.asarray(x_star, dtype=float)
    g0, g, G, q = eval_field(df, t_star, x)
    gap = abs(q - 1.0)
    gnorm = float(np.linalg.norm(np.concatenate(([g0], g))))
    if gap > tol or gnorm > tol:
        raise NotEquilibriumError(f"not a horizon equilibrium: |p2c-1|={gap:.2e}, |g|={gnorm:.2e}")

    C = G
    alpha = np.array(sys.alpha, dtype=float)
    lam_ext = np.diag(np.concatenate(([0.0], alpha)))
    v = np.concatenate(([0.0], alpha * x))
    dp = np.zeros(n + 1)
    for i in spec.active:
        b = spec.beta[i]
        dp[i + 1] = b / spec.c * x[i] ** (2 * b - 1)
    P = np.outer(v, dp)

    dft = np.zeros((n + 1, n + 1))
    dft[1:, :] = df.ftilde_jacobian(t_star, x)
    I = np.eye(n + 1)
    A_g = -C * lam_ext + dft
    B_g = -P @ (A_g + C * I)
    A_res = np.zeros((n + 1, n + 1))
    if sys.k == 1:
        A_res[0, :] = -2 * spec.c * dp
    Dg = A_g + B_g + A_res
    Dg_sym = df.jacobian(t_star, x)
    scale_ = 1.0 + np.max(np.abs(Dg_sym))
    residual = float(np.max(np.abs(Dg - Dg_sym)) / scale_)
    if residual > DEC_TOL:
        raise ConsistencyError(f"decomposition residual {residual:.2e} exceeds {DEC_TOL}")

    dft_qh = sys.qh_jacobian(t_star, x)
    checks = {
        "grad_dot_v": float(dp @ v),
        "projection_idempotence": float(np.max(np.abs(P @ P - P))),
        "decomposition_residual": residual,
        "ftilde_vs_qh_jacobian": float(np.max(np.abs(dft[1:, 1:] - dft_qh[:, 1:]))),
        "horizon_gap": gap,
        "field_norm": gnorm,
    }
    return EquilibriumDecomposition(float(t_star), x, float(C), v, dp, P, A_g, B_g, A_res, Dg, Dg_sym,
                                    residual, checks, spec.c)
