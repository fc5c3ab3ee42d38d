"""Balance law roots, their horizon equilibria, and the blow-up power matrix."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from . import expr as ex
from .desing import DesingField, build, eval_field
from .embedding import p2c, p_alpha, scale
from .system import SystemDef

ROOT_TOL = 1e-12
DEDUP_TOL = 1e-8
TRIVIAL_TOL = 1e-8
MAX_STARTS = 100_000


class DegenerateEquilibriumError(ArithmeticError):
    """C* vanishes (or is negative) so no balance root can be attached."""


class InconsistentSystemError(ArithmeticError):
    """A root/equilibrium identity failed; the declared split is probably wrong."""


@dataclass(frozen=True)
class BalanceRoot:
    t_star: float
    Y0: tuple[float, ...]
    residual_norm: float
    r: float


@dataclass(frozen=True)
class HorizonEquilibrium:
    t_star: float
    x_star: tuple[float, ...]
    C_star: float
    r: float
    root: BalanceRoot


@dataclass(frozen=True)
class BlowupPowerMatrix:
    A_ext: np.ndarray
    A: np.ndarray
    Dt_col: np.ndarray
    eig_A: np.ndarray
    eig_A_ext: np.ndarray


def sort_eigs(vals: Iterable[complex]) -> np.ndarray:
    """Deterministic order: ascending real part, then imaginary part."""
    v = np.asarray(list(vals), dtype=complex)
    return v[np.lexsort((np.round(v.imag, 12), np.round(v.real, 12)))]


def balance_residual(sys: SystemDef, t: float, Y: Sequence[float]) -> np.ndarray:
    alpha = np.array(sys.alpha, dtype=float)
    Y = np.asarray(Y, dtype=float)
    return -alpha * Y / sys.k + sys.qh(t, Y)


def balance_jacobian(sys: SystemDef, t: float, Y: Sequence[float]) -> np.ndarray:
    return sys.qh_jacobian(t, Y)[:, 1:] - np.diag(sys.alpha) / sys.k


@lru_cache(maxsize=None)
def _vector_fns(sys: SystemDef):
    flat = [d for row in sys.qh_jac_exprs for d in row[1:]]
    return ex.compile_exprs(sys.f_qh, sys.n, True), ex.compile_exprs(flat, sys.n, True)


def _batched_newton(sys: SystemDef, t: float, starts: np.ndarray, max_iter: int = 100,
                    max_halvings: int = 30) -> tuple[np.ndarray, np.ndarray]:
    """Damped Newton on all starts at once.  Returns (points, converged mask)."""
    n, k = sys.n, sys.k
    f_vec, j_vec = _vector_fns(sys)
    alpha = np.array(sys.alpha, dtype=float)
    shift = np.diag(alpha) / k

    def F(Y):
        return np.stack(f_vec(t, Y.T), axis=1) - Y * alpha / k

    def J(Y):
        return np.stack(j_vec(t, Y.T), axis=1).reshape(len(Y), n, n) - shift

    Y = starts.copy()
    res = np.linalg.norm(F(Y), axis=1)
    live = np.isfinite(res)
    done = live & (res < ROOT_TOL * (1 + np.linalg.norm(Y, axis=1)))
    live &= ~done
    for _ in range(max_iter):
        idx = np.flatnonzero(live)
        if idx.size == 0:
            break
        Yl = Y[idx]
        Jl = J(Yl)
        Fl = F(Yl)
        ok = np.all(np.isfinite(Jl), axis=(1, 2))
        rows = np.linalg.norm(Jl, axis=2).prod(axis=1)
        with np.errstate(all="ignore"):
            det = np.abs(np.linalg.det(np.where(ok[:, None, None], Jl, np.eye(n))))
        ok &= det > 1e-13 * np.maximum(rows, 1e-300)
        step = np.zeros_like(Yl)
        if ok.any():
            step[ok] = -np.linalg.solve(Jl[ok], Fl[ok][..., None])[..., 0]
        live[idx[~ok]] = False
        lam = np.ones(len(idx))
        pending = ok.copy()
        cur = res[idx]
        trial = Yl.copy()
        trial_res = cur.copy()
        for _h in range(max_halvings + 1):
            p = np.flatnonzero(pending)
            if p.size == 0:
                break
            cand = Yl[p] + lam[p, None] * step[p]
            r = np.linalg.norm(F(cand), axis=1)
            better = np.isfinite(r) & (r < cur[p])
            trial[p[better]] = cand[better]
            trial_res[p[better]] = r[better]
            pending[p[better]] = False
            lam[p[~better]] *= 0.5
        live[idx[pending]] = False  # no decrease after all halvings
        Y[idx] = trial
        res[idx] = trial_res
        conv = res < ROOT_TOL * (1 + np.linalg.norm(Y, axis=1))
        done |= conv & live
        live &= ~conv
        live &= np.linalg.norm(Y, axis=1) < 1e8
    return Y, done


def _polish(sys: SystemDef, t: float, Y: np.ndarray, steps: int = 3) -> np.ndarray:
    for _ in range(steps):
        try:
            d = np.linalg.solve(balance_jacobian(sys, t, Y), -balance_residual(sys, t, Y))
        except (np.linalg.LinAlgError, ArithmeticError):
            break
        Yn = Y + d
        if not np.linalg.norm(balance_residual(sys, t, Yn)) < np.linalg.norm(balance_residual(sys, t, Y)):
            break
        Y = Yn
    return Y


def grid_starts(n: int, L: float = 3.0, points: int = 5) -> np.ndarray:
    axis = np.linspace(-L, L, points)
    count = points**n
    if count > MAX_STARTS:
        raise ValueError(f"grid of {count} starts exceeds the cap of {MAX_STARTS}")
    return np.array(list(itertools.product(axis, repeat=n)), dtype=float)


def find_roots(sys: SystemDef, t: float, seeds: Sequence[Sequence[float]] = (),
               L: float = 3.0, points: int = 5, rng: np.random.Generator | None = None,
               random_starts: int = 32) -> list[BalanceRoot]:
    """All nontrivial balance roots reachable from seeds, a grid and random starts."""
    blocks = [grid_starts(sys.n, L, points)]
    if seeds:
        blocks.insert(0, np.asarray(seeds, dtype=float).reshape(-1, sys.n))
    if random_starts:
        rng = rng if rng is not None else np.random.default_rng(0)
        blocks.append(rng.uniform(-L, L, size=(random_starts, sys.n)))
    starts = np.concatenate(blocks)
    Y, conv = _batched_newton(sys, float(t), starts)
    found: list[np.ndarray] = []
    for y in Y[conv]:
        if np.linalg.norm(y) < TRIVIAL_TOL:
            continue
        if any(np.linalg.norm(y - f) < DEDUP_TOL * (1 + np.linalg.norm(f)) for f in found):
            continue
        found.append(y)
    roots = []
    for y in found:
        y = _polish(sys, float(t), y)
        res = float(np.linalg.norm(balance_residual(sys, t, y)))
        roots.append(BalanceRoot(float(t), tuple(float(v) for v in y), res, p_alpha(sys.spec, y)))
    roots.sort(key=lambda r: tuple(-v for v in r.Y0))
    return roots


def trace_family(sys: SystemDef, ts: Sequence[float], seeds: Sequence[Sequence[float]] = (),
                 **kw) -> list[list[BalanceRoot]]:
    """Root sets along a t-grid, each search seeded with the previous roots."""
    out = []
    prev = [tuple(s) for s in seeds]
    for t in ts:
        roots = find_roots(sys, t, seeds=prev, **kw)
        out.append(roots)
        prev = [r.Y0 for r in roots] + [tuple(s) for s in seeds]
    return out


@lru_cache(maxsize=None)
def field_for(sys: SystemDef) -> DesingField:
    return build(sys)


def root_to_equilibrium(sys: SystemDef, root: BalanceRoot, df: DesingField | None = None,
                        tol: float = 1e-9) -> HorizonEquilibrium:
    Y = np.asarray(root.Y0, dtype=float)
    if np.linalg.norm(Y) < TRIVIAL_TOL:
        raise ValueError("trivial root has no horizon image")
    df = df or field_for(sys)
    r = p_alpha(sys.spec, Y)
    x = scale(sys.spec, 1.0 / r, Y)
    g0, g, G, q = eval_field(df, root.t_star, x)
    gnorm = float(np.hypot(g0, np.linalg.norm(g)))
    if abs(q - 1.0) > 1e-12 or gnorm > tol:
        raise InconsistentSystemError(f"image of root is not a horizon equilibrium (|g|={gnorm:.2e})")
    expected = r ** (-sys.k) / sys.k
    if abs(G - expected) > tol:
        raise InconsistentSystemError(f"C*={G!r} differs from r^-k/k={expected!r}")
    return HorizonEquilibrium(root.t_star, tuple(float(v) for v in x), float(G), r, root)


def equilibrium_to_root(sys: SystemDef, t_star: float, x_star: Sequence[float],
                        df: DesingField | None = None) -> BalanceRoot:
    df = df or field_for(sys)
    x = np.asarray(x_star, dtype=float)
    C = df.G_value(t_star, x)
    if C <= 1e-12:
        raise DegenerateEquilibriumError(f"C*={C!r} is not positive; no balance root is attached")
    r = (sys.k * C) ** (-1.0 / sys.k)
    Y = scale(sys.spec, r, x)
    res = float(np.linalg.norm(balance_residual(sys, t_star, Y)))
    if res > 1e-10 * (1 + np.linalg.norm(Y)):
        raise InconsistentSystemError(f"balance residual {res:.2e} at the rescaled point")
    return BalanceRoot(float(t_star), tuple(float(v) for v in Y), res, r)


def power_matrix(sys: SystemDef, root: BalanceRoot) -> BlowupPowerMatrix:
    n = sys.n
    jac = sys.qh_jacobian(root.t_star, root.Y0)
    lam_ext = np.diag(np.concatenate(([0.0], np.array(sys.alpha, dtype=float))))
    A_ext = -lam_ext / sys.k
    A_ext[1:, :] += jac
    A = A_ext[1:, 1:].copy()
    eig_A = sort_eigs(np.linalg.eigvals(A))
    return BlowupPowerMatrix(A_ext, A, A_ext[1:, 0].copy(), eig_A,
                             sort_eigs(np.concatenate(([0.0], eig_A))))


def horizon_gap(sys: SystemDef, x: Sequence[float]) -> float:
    return abs(p2c(sys.spec, x) - 1.0)
