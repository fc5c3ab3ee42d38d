"""End-to-end orchestration shared by the CLI and the test-suite.

Everything returned here is plain JSON-ready data: complex numbers become
``[re, im]`` pairs and non-finite floats become ``null``.
"""

from __future__ import annotations

import math
from typing import Any, Sequence

import numpy as np

from .balance import (BalanceRoot, equilibrium_to_root, field_for, find_roots, power_matrix,
                      root_to_equilibrium)
from .correspondence import SpectralReport, analyze, eig_residual
from .flow import integrate, initial_point, rate_check, t_max
from .system import SystemDef, validate_qh, validate_res

RNG_NAME = "PCG64"


def jsonable(v: Any) -> Any:
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return jsonable(v.tolist())
    if isinstance(v, (complex, np.complexfloating)):
        return [jsonable(float(v.real)), jsonable(float(v.imag))]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else None
    return v


def to_complex(v: Any) -> complex:
    if isinstance(v, list):
        return complex(v[0], v[1])
    return complex(v)


def to_vector(v: Sequence) -> np.ndarray:
    arr = [to_complex(x) for x in v]
    out = np.array(arr, dtype=complex)
    return out.real if not np.any(out.imag) else out


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# ---------------------------------------------------------------------------


def validation(sys: SystemDef, samples: int = 200, seed: int = 0) -> dict:
    qh = validate_qh(sys, samples, rng=rng_for(seed))
    res = validate_res(sys, samples, rng=rng_for(seed + 1))
    return {"system": sys.name, "seed": seed, "rng": RNG_NAME, "passed": qh.passed and res.passed,
            "qh": qh.to_dict(), "res": res.to_dict()}


def roots_payload(sys: SystemDef, t: float, seed: int = 0) -> list[BalanceRoot]:
    return find_roots(sys, t, seeds=sys.seeds, rng=rng_for(seed))


def root_dict(root: BalanceRoot) -> dict:
    return {"t_star": root.t_star, "Y0": list(root.Y0), "residual_norm": root.residual_norm, "r_Y0": root.r}


def spectrum_dict(sys: SystemDef, root: BalanceRoot) -> dict:
    pm = power_matrix(sys, root)
    eq = root_to_equilibrium(sys, root)
    from .desing import decompose_at_equilibrium

    dec = decompose_at_equilibrium(field_for(sys), eq.t_star, eq.x_star)
    return {
        "root": root_dict(root),
        "x_star": list(eq.x_star),
        "C_star": eq.C_star,
        "r": eq.r,
        "A_ext": pm.A_ext,
        "spec_A_ext": pm.eig_A_ext,
        "Dg": dec.Dg,
        "spec_Dg": np.sort_complex(np.linalg.eigvals(dec.Dg)),
    }


def spectral_dict(sys: SystemDef, rep: SpectralReport) -> dict:
    """Serialize a correspondence report, including re-verifiable eigenpairs."""
    root = BalanceRoot(rep.t_star, rep.Y0, 0.0, rep.r)
    pm = power_matrix(sys, root)
    from .desing import decompose_at_equilibrium

    dec = decompose_at_equilibrium(field_for(sys), rep.t_star, rep.x_star)
    pairs = []

    def add(matrix: str, M: np.ndarray, lam: complex, vec: np.ndarray, role: str) -> None:
        lam_j, vec_j = jsonable(complex(lam)), jsonable(np.asarray(vec, dtype=complex))
        # residual recomputed from the serialized values so a reader gets the same number
        r = eig_residual(M, to_complex(lam_j), np.array([to_complex(x) for x in vec_j]))
        pairs.append({"matrix": matrix, "role": role, "eigenvalue": lam_j, "vector": vec_j, "residual": r})

    for p in rep.dg_pairs:
        add("Dg", dec.Dg, p["eigenvalue"], p["vector"], "computed-" + p["kind"])
    add("Dg", dec.Dg, rep.transversal.eigenvalue, rep.transversal.vector, "predicted-transversal")
    add("Dg", dec.Dg, 0.0, rep.zero.g_vector, "predicted-zero")
    add("A_ext", pm.A_ext, 0.0, rep.zero.a_vector, "predicted-zero")
    for tm in rep.tangential:
        add("Dg", dec.Dg, tm.g_eigenvalue, tm.vector, "predicted-tangential")
    return {
        "t_star": rep.t_star,
        "Y0": list(rep.Y0),
        "x_star": list(rep.x_star),
        "C_star": rep.C_star,
        "r": rep.r,
        "A_ext": pm.A_ext,
        "Dg": dec.Dg,
        "Dt_g": dec.Dt_g,
        "spec_A_ext": rep.eig_A_ext,
        "spec_Dg": rep.eig_Dg,
        "spec_Dg_predicted": rep.predicted_Dg,
        "spectrum_gap": rep.spectrum_gap,
        "max_eigvec_residual": rep.max_eigvec_residual,
        "matched": [
            {"a_eigenvalue": tm.a_eigenvalue, "g_eigenvalue": tm.g_eigenvalue, "a_residual": tm.a_residual,
             "forward_residual": tm.forward_residual, "reverse_residual": tm.reverse_residual,
             "block_time_component": tm.block_time_component}
            for tm in rep.tangential
        ],
        "transversal": {"eigenvalue": rep.transversal.eigenvalue, "vector": rep.transversal.vector,
                        "residual": rep.transversal.residual, "d": rep.transversal.d,
                        "d_numerator": rep.transversal.d_numerator,
                        "d_denominator": rep.transversal.d_denominator},
        "zero": {"A_ext_vector": rep.zero.a_vector, "Dg_vector": rep.zero.g_vector,
                 "A_ext_residual": rep.zero.a_residual, "Dg_residual": rep.zero.g_residual,
                 "tangency": rep.zero.tangency, "projected_gap": rep.zero.projected_gap},
        "verdict": {"status": rep.verdict.status, "m_A": rep.verdict.m_A, "m": rep.verdict.m,
                    "rates": rep.verdict.rates, "resonances": rep.verdict.resonances},
        "eigenpairs": pairs,
        "checks": rep.checks,
        "notes": rep.notes,
    }


def verify_eigenpairs(report: dict) -> list[tuple[float, float]]:
    """Recompute each stored eigenpair residual from a parsed report.

    Returns ``(stored, recomputed)`` for every pair found anywhere in the
    report.
    """
    out = []

    def walk(node: dict) -> None:
        if "eigenpairs" in node:
            mats = {"Dg": np.array(node["Dg"], dtype=float), "A_ext": np.array(node["A_ext"], dtype=float)}
            for p in node["eigenpairs"]:
                vec = np.array([to_complex(x) for x in p["vector"]])
                out.append((p["residual"], eig_residual(mats[p["matrix"]], to_complex(p["eigenvalue"]), vec)))
        for v in node.values():
            if isinstance(v, dict):
                walk(v)
            elif isinstance(v, list):
                for x in v:
                    if isinstance(x, dict):
                        walk(x)

    walk(report)
    return out


def correspond(sys: SystemDef, t: float, seed: int = 0) -> dict:
    roots = roots_payload(sys, t, seed)
    return {"system": sys.name, "t": t, "seed": seed, "rng": RNG_NAME,
            "equilibria": [spectral_dict(sys, analyze(sys, r)) for r in roots]}


# ---------------------------------------------------------------------------
# flow-based pipeline


def limiting_root(sys: SystemDef, t_star: float, x_final: Sequence[float], seed: int = 0) -> BalanceRoot:
    """The balance root at t_star whose horizon image is nearest the end point."""
    seeds = list(sys.seeds)
    try:
        seeds.insert(0, equilibrium_to_root(sys, t_star, x_final).Y0)
    except ArithmeticError:
        pass
    roots = find_roots(sys, t_star, seeds=seeds, rng=rng_for(seed))
    if not roots:
        raise ArithmeticError(f"no balance root at t={t_star}")

    def dist(r: BalanceRoot) -> float:
        return float(np.linalg.norm(np.array(root_to_equilibrium(sys, r).x_star) - np.asarray(x_final)))

    return min(roots, key=dist)


def run_flow(sys: SystemDef, t0: float, x0=None, y0=None, h: float = 1e-3, tau_max: float = 1e5,
             stride: int = 10):
    df = field_for(sys)
    x = initial_point(df, x0, y0, t0)
    return df, x, integrate(df, t0, x, h=h, tau_max=tau_max, stride=stride)


def sign_of(v: float) -> str:
    return "+" if v > 0 else "-" if v < 0 else "0"


def pair_sign(x: Sequence[float], pair: tuple[int, int]) -> str | None:
    """Sign of x_i * x_j for a 1-based index pair; None when the pair does not fit."""
    i, j = pair
    if not (1 <= i <= len(x) and 1 <= j <= len(x)):
        return None
    return sign_of(x[i - 1] * x[j - 1])


def tmax_dict(sys: SystemDef, t0: float, x0=None, y0=None, h: float = 1e-3, tau_max: float = 1e5,
              sign_pair: tuple[int, int] = (1, 3)) -> dict:
    df, x, traj = run_flow(sys, t0, x0, y0, h, tau_max)
    out = {"system": sys.name, "t0": t0, "x0": list(x), "h": h, "tau_max": tau_max,
           "status": traj.status, "steps": traj.steps, "message": traj.message,
           "final_t": traj.final_t, "final_x": list(traj.final_x)}
    if traj.converged:
        tm = t_max(df, traj)
        out.update({"t_max": tm.t_max, "t_max_time_component": tm.from_time_component,
                    "tail_correction": tm.tail_correction, "agreement": tm.agreement,
                    "sign": pair_sign(traj.final_x, sign_pair),
                    "a_tmax": sys.drive(tm.t_max)})
    return out


def full_report(sys: SystemDef, t0: float, x0=None, y0=None, h: float = 1e-3, tau_max: float = 1e5,
                seed: int = 0, sign_pair: tuple[int, int] = (1, 3)) -> dict:
    df, x, traj = run_flow(sys, t0, x0, y0, h, tau_max)
    report: dict = {
        "system": sys.name, "seed": seed, "rng": RNG_NAME,
        "input": {"t0": t0, "x0": None if x0 is None else list(x0), "y0": None if y0 is None else list(y0),
                  "h": h, "tau_max": tau_max},
        "x0_embedded": list(x),
        "trajectory": {"status": traj.status, "steps": traj.steps, "message": traj.message,
                       "renormalizations": traj.renormalizations, "final_t": traj.final_t,
                       "final_x": list(traj.final_x), "max_quadrature_drift": traj.max_quad_drift},
    }
    if not traj.converged:
        report["ok"] = False
        return jsonable(report)
    tm = t_max(df, traj)
    report["t_max"] = {"value": tm.t_max, "time_component": tm.from_time_component,
                       "tail_correction": tm.tail_correction, "agreement": tm.agreement,
                       "a_tmax": sys.drive(tm.t_max),
                       "sign": pair_sign(traj.final_x, sign_pair)}
    root = limiting_root(sys, tm.t_max, traj.final_x, seed)
    eq = root_to_equilibrium(sys, root)
    rep = analyze(sys, root)
    report["equilibrium"] = {"t_star": eq.t_star, "x_star": list(eq.x_star), "C_star": eq.C_star, "r": eq.r,
                             "root": root_dict(root),
                             "distance_to_trajectory_end": float(np.linalg.norm(np.array(eq.x_star) - traj.final_x))}
    report["analysis"] = spectral_dict(sys, rep)
    rates = rate_check(df, traj, eq, root)
    report["rate_fit"] = {"status": rates.status, "theta_range": list(rates.theta_range),
                          "fits": [f.__dict__ for f in rates.fits]}
    checks = dict(rep.checks)
    checks["max_quadrature_drift"] = traj.max_quad_drift
    report["checks"] = checks
    report["ok"] = True
    return jsonable(report)


def sweep_rows(sys: SystemDef, t0s: Sequence[float], x0=None, y0=None, h: float = 1e-3,
               tau_max: float = 1e5, sign_pair: tuple[int, int] = (1, 3), jobs: int = 1) -> list[dict]:
    args = [(sys, float(t0), x0, y0, h, tau_max, sign_pair) for t0 in t0s]
    if jobs > 1 and len(args) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_one, args))
    return [_sweep_one(a) for a in args]


def _sweep_one(a) -> dict:
    sys, t0, x0, y0, h, tau_max, sign_pair = a
    try:
        d = tmax_dict(sys, t0, x0, y0, h, tau_max, sign_pair)
    except (ArithmeticError, ValueError) as exc:
        return {"t0": t0, "t_max": math.nan, "sign": "", "a_tmax": math.nan, "status": f"error: {exc}"}
    if d["status"] != "converged":
        return {"t0": t0, "t_max": math.nan, "sign": "", "a_tmax": math.nan, "status": d["status"]}
    return {"t0": t0, "t_max": d["t_max"], "sign": d["sign"] or "", "a_tmax": d["a_tmax"], "status": "ok"}


def _num(v) -> str:
    return "" if v is None else repr(float(v))


SWEEP_HEADER = "t0,t_max,sign_x1x3,a_tmax,status"


def sweep_csv(rows: Sequence[dict]) -> str:
    lines = [SWEEP_HEADER]
    for r in rows:
        lines.append(",".join([_num(r["t0"]), _num(r["t_max"]), r["sign"], _num(r["a_tmax"]),
                               r["status"].replace(",", ";")]))
    return "\n".join(lines) + "\n"
