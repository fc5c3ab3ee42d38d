"""Fixed-step integration of the desingularized field and blow-up time recovery."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .balance import BalanceRoot, HorizonEquilibrium
from .desing import DesingField, eval_field
from .embedding import p2c as p2c_of
from .embedding import scale

OVERSHOOT = 1e-9
CONVERGED_FIELD = 1e-12
CONVERGED_GAP = 1e-10
TMAX_AGREEMENT = 1e-6


class NotConvergedError(RuntimeError):
    """An operation needs a trajectory that reached a horizon equilibrium."""


@dataclass
class Trajectory:
    h: float
    t0: float
    x0: tuple[float, ...]
    status: str  # converged | max-steps | domain-error | overshoot
    steps: int
    tau: np.ndarray  # recorded samples (every ``stride`` steps, plus the last)
    t: np.ndarray
    x: np.ndarray
    p2c: np.ndarray
    G: np.ndarray
    kappa_inv: np.ndarray
    g0: np.ndarray
    integral: float  # trapezoid of g_0 over all steps
    dt: np.ndarray = field(default_factory=lambda: np.zeros(0))  # t advance since the previous sample
    message: str = ""
    renormalizations: int = 0
    max_quad_drift: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def final_t(self) -> float:
        return float(self.t[-1])

    @property
    def final_x(self) -> np.ndarray:
        return self.x[-1]

    def remaining(self, tail: float = 0.0) -> np.ndarray:
        """t_end + tail - t at every sample, summed from the small increments.

        Subtracting the sampled t values instead would lose all relative
        precision once the per-step increments fall below the spacing of t.
        """
        after = np.concatenate((np.cumsum(self.dt[:0:-1])[::-1], [0.0]))
        return after + tail


def _project(spec, x: list[float], q: float) -> list[float]:
    lam = q ** (-1.0 / (2 * spec.c))
    return [v * lam ** a for a, v in zip(spec.alpha, x)]


def integrate(df: DesingField, t0: float, x0: Sequence[float], h: float = 1e-3,
              tau_max: float = 1e5, stride: int = 10) -> Trajectory:
    """Classical RK4 in the desingularized time until a horizon equilibrium is reached."""
    if h <= 0:
        raise ValueError("step size must be positive")
    spec = df.sys.spec
    n = df.n
    q0 = p2c_of(spec, x0)
    if q0 > 1.0 + OVERSHOOT:
        raise ValueError(f"initial point lies outside the horizon (p2c={q0})")
    f = df.vector
    y = [float(t0)] + [float(v) for v in x0]
    rec: list[tuple] = []
    renorm = 0
    status, message = "max-steps", ""
    max_steps = int(math.ceil(tau_max / h))
    integral = 0.0
    drift = 0.0
    step = 0
    hh = 0.5 * h
    h6 = h / 6.0

    seg = 0.0

    def record(step_no: int, state: list[float]) -> None:
        nonlocal seg
        g0, _, G, q = eval_field(df, state[0], state[1:])
        rec.append((step_no * h, state[0], tuple(state[1:]), q, G, 1.0 - q, g0, seg))
        seg = 0.0

    try:
        k1 = f(y[0], y[1:])
    except ArithmeticError as exc:
        raise ValueError(f"field undefined at the initial point: {exc}") from None
    record(0, y)
    while True:
        gnorm = math.sqrt(math.fsum(v * v for v in k1))
        gap = 1.0 - p2c_of(spec, y[1:])
        if gnorm < CONVERGED_FIELD and gap < CONVERGED_GAP:
            status = "converged"
            break
        if step >= max_steps:
            message = f"tau_max={tau_max} reached"
            break
        try:
            y2 = [a + hh * b for a, b in zip(y, k1)]
            k2 = f(y2[0], y2[1:])
            y3 = [a + hh * b for a, b in zip(y, k2)]
            k3 = f(y3[0], y3[1:])
            y4 = [a + h * b for a, b in zip(y, k3)]
            k4 = f(y4[0], y4[1:])
            incs = [h6 * (b + 2.0 * c + 2.0 * d + e) for b, c, d, e in zip(k1, k2, k3, k4)]
            ynew = [a + b for a, b in zip(y, incs)]
            q = p2c_of(spec, ynew[1:])
            if q > 1.0:
                if q > 1.0 + OVERSHOOT:
                    status, message = "overshoot", f"p2c={q!r} beyond the horizon tolerance"
                    break
                ynew[1:] = _project(spec, ynew[1:], q)
                renorm += 1
            k1new = f(ynew[0], ynew[1:])
        except ArithmeticError as exc:
            status, message = "domain-error", str(exc)
            break
        if not all(math.isfinite(v) for v in k1new):
            status, message = "domain-error", "non-finite field value"
            break
        inc = hh * (k1[0] + k1new[0])
        integral += inc
        drift = max(drift, abs((ynew[0] - y[0]) - inc))
        y, k1 = ynew, k1new
        seg += incs[0]
        step += 1
        if step % stride == 0:
            record(step, y)
    if not rec or rec[-1][0] != step * h:
        record(step, y)

    tau, t, xs, q, G, ki, g0s, dts = zip(*rec)
    return Trajectory(
        h=h, t0=float(t0), x0=tuple(float(v) for v in x0), status=status, steps=step,
        tau=np.array(tau), t=np.array(t), x=np.array(xs).reshape(-1, n), p2c=np.array(q), G=np.array(G),
        kappa_inv=np.array(ki), g0=np.array(g0s), integral=integral, dt=np.array(dts),
        message=message, renormalizations=renorm, max_quad_drift=drift,
    )


@dataclass
class TmaxResult:
    t_max: float
    from_quadrature: float
    from_time_component: float
    tail_correction: float
    agreement: float
    C_star: float


def t_max(df: DesingField, traj: Trajectory) -> TmaxResult:
    """Blow-up time from the quadrature of g_0, with an exponential tail correction."""
    if not traj.converged:
        raise NotConvergedError(f"trajectory status is {traj.status!r}")
    k = df.sys.k
    C = float(traj.G[-1])
    g0_last = float(traj.g0[-1])
    tail = g0_last / (k * C) if g0_last > 0 else 0.0
    quad = traj.t0 + traj.integral + tail
    direct = traj.final_t + tail
    agreement = abs(quad - direct)
    if agreement > TMAX_AGREEMENT * max(1.0, abs(direct)):
        raise ArithmeticError(f"quadrature and time component disagree by {agreement:.2e}")
    return TmaxResult(quad, quad, direct, tail, agreement, C)


@dataclass
class RateFit:
    component: str
    slope: float
    expected_slope: float
    coefficient: float
    expected_coefficient: float
    samples: int
    passed: bool


@dataclass
class RateReport:
    status: str  # ok | failed | inconclusive
    fits: list[RateFit] = field(default_factory=list)
    theta_range: tuple[float, float] = (math.nan, math.nan)


SLOPE_TOL = 0.05
COEF_TOL = 0.05
GAP_FLOOR = 1e-7


def rate_check(df: DesingField, traj: Trajectory, eq: HorizonEquilibrium | None,
               root: BalanceRoot, gap_floor: float = GAP_FLOOR) -> RateReport:
    """Fit log|y_i| against log theta over the last resolved decade of theta.

    Samples whose horizon gap 1 - p2c is below ``gap_floor`` are dropped:
    there the gap carries too few significant digits to rebuild y.
    """
    del eq
    if not traj.converged:
        raise NotConvergedError(f"trajectory status is {traj.status!r}")
    sys = df.sys
    theta = traj.remaining(t_max(df, traj).tail_correction)
    K = traj.kappa_inv
    usable = (K >= gap_floor) & (theta > 0)
    if not usable.any():
        return RateReport("inconclusive")
    lo = float(theta[usable].min())
    mask = usable & (theta <= 10.0 * lo)
    if mask.sum() < 20 or theta[usable].max() < 10.0 * lo:
        return RateReport("inconclusive", theta_range=(lo, float(theta[usable].max())))
    alpha = np.array(sys.alpha, dtype=float)
    ys = traj.x[mask] / K[mask][:, None] ** alpha
    lt = np.log(theta[mask])
    fits = []
    for i, Y in enumerate(root.Y0):
        if abs(Y) < 1e-12:
            continue
        slope, icpt = np.polyfit(lt, np.log(np.abs(ys[:, i])), 1)
        exp_s = -sys.alpha[i] / sys.k
        coef = math.exp(icpt)
        ok = abs(slope - exp_s) <= SLOPE_TOL and abs(coef - abs(Y)) <= COEF_TOL * abs(Y)
        fits.append(RateFit(sys.state[i], float(slope), exp_s, coef, abs(Y), int(mask.sum()), bool(ok)))
    status = "ok" if all(f.passed for f in fits) else "failed"
    return RateReport(status, fits, (lo, 10.0 * lo))


def trajectory_csv(traj: Trajectory, names: Sequence[str] | None = None) -> str:
    n = traj.x.shape[1]
    cols = ["tau", "t"] + [f"x{i + 1}" for i in range(n)] + ["p2c", "G", "kappa_inv"]
    buf = io.StringIO(newline="")
    buf.write(",".join(cols) + "\n")
    for m in range(len(traj.tau)):
        row = [traj.tau[m], traj.t[m], *traj.x[m], traj.p2c[m], traj.G[m], traj.kappa_inv[m]]
        buf.write(",".join(f"{float(v):.17g}" for v in row) + "\n")
    return buf.getvalue()


def initial_point(df: DesingField, x0: Sequence[float] | None = None, y0: Sequence[float] | None = None,
                  t0: float = 0.0) -> np.ndarray:
    """Resolve either an embedded point or an original-coordinate point."""
    from .embedding import embed

    if (x0 is None) == (y0 is None):
        raise ValueError("give exactly one of x0 and y0")
    if x0 is not None:
        return np.asarray(x0, dtype=float)
    return np.array(embed(df.sys.spec, t0, y0).x)


__all__ = ["Trajectory", "integrate", "t_max", "rate_check", "trajectory_csv", "TmaxResult",
           "RateReport", "NotConvergedError", "initial_point", "scale"]
