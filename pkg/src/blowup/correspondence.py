"""Eigenstructure correspondence between A^ext and Dg^ext at paired points.

Given a balance root (t*, Y0) and its horizon equilibrium (t*, x*), the
spectrum of the desingularized Jacobian splits as::

    Spec(Dg) = {0} u {-C*} u k C* (Spec(A) minus {1})

with explicit eigenvector maps in both directions.  Everything here
constructs the predicted objects and measures how well they satisfy the
eigen-equations; nothing is taken on trust.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .balance import (BalanceRoot, BlowupPowerMatrix, HorizonEquilibrium, field_for, power_matrix,
                      root_to_equilibrium, sort_eigs)
from .desing import DesingField, EquilibriumDecomposition, decompose_at_equilibrium
from .system import SystemDef

EIG_TOL = 1e-7
MATCH_TOL = 1e-6
IMAG_AXIS_TOL = 1e-8
DEGENERATE_D = 1e-12
RESONANCE_TOL = 1e-6


class CorrespondenceError(ArithmeticError):
    """Predicted and computed spectra could not be matched."""


class FormulaDegenerateError(ArithmeticError):
    """The denominator of the transversal constant d vanishes."""


def normalize(v: np.ndarray) -> np.ndarray:
    """Unit Euclidean norm, first non-negligible component real positive."""
    v = np.asarray(v, dtype=complex)
    nrm = np.linalg.norm(v)
    if nrm == 0:
        return v
    v = v / nrm
    big = np.flatnonzero(np.abs(v) > 1e-10)
    ph = v[big[0]] / abs(v[big[0]])
    v = v / ph
    return v.real if np.all(np.abs(v.imag) < 1e-14) else v


def eig_residual(M: np.ndarray, lam: complex, v: np.ndarray) -> float:
    v = np.asarray(v, dtype=complex)
    return float(np.linalg.norm(M @ v - lam * v) / np.linalg.norm(v))


def match_spectra(computed: Sequence[complex], predicted: Sequence[complex],
                  tol: float = MATCH_TOL) -> tuple[list[tuple[complex, complex]], float]:
    """Greedy nearest-neighbour multiset matching.  Returns pairs and worst gap."""
    left = list(computed)
    pairs = []
    worst = 0.0
    for p in sorted(predicted, key=lambda z: (z.real, z.imag)):
        if not left:
            raise CorrespondenceError(f"predicted eigenvalue {p} has no partner")
        j = int(np.argmin([abs(c - p) for c in left]))
        gap = abs(left[j] - p)
        if gap > tol * (1 + abs(p)):
            raise CorrespondenceError(f"predicted eigenvalue {p} is {gap:.2e} from the nearest computed one")
        worst = max(worst, gap)
        pairs.append((p, left.pop(j)))
    if left:
        raise CorrespondenceError(f"computed eigenvalues {left} were not predicted")
    return pairs, worst


def restricted_inverse(A: np.ndarray, shift: float, tol: float = 1e-8) -> np.ndarray:
    """(A + shift I)^{-1}, or its restriction off the eigenspace where A = -shift."""
    n = A.shape[0]
    mu, V = np.linalg.eig(A)
    if np.min(np.abs(mu + shift)) > tol:
        return np.linalg.inv(A + shift * np.eye(n))
    inv = np.array([0.0 if abs(m + shift) <= tol else 1.0 / (m + shift) for m in mu])
    return (V @ np.diag(inv) @ np.linalg.inv(V)).real


def d_constant(grad: np.ndarray, minv: np.ndarray, dt_g: np.ndarray, v: np.ndarray) -> tuple[float, float, float]:
    """Return (d, numerator, denominator) of the transversal constant for k = 1."""
    num = float(grad @ minv @ dt_g)
    den = float(grad @ minv @ v)
    if abs(den) < DEGENERATE_D:
        raise FormulaDegenerateError(f"denominator {den:.3e} of d vanishes")
    return num / den, num, den


@dataclass
class TransversalPair:
    eigenvalue: float
    vector: np.ndarray
    residual: float
    d: float | None = None
    d_numerator: float | None = None
    d_denominator: float | None = None


def transversal_pair(dec: EquilibriumDecomposition, k: float) -> TransversalPair:
    C = dec.C_star
    if C <= 0:
        raise ValueError("transversal pair needs C* > 0")
    if k != 1:
        w = dec.v_ext.copy()
        return TransversalPair(-C, w, eig_residual(dec.Dg, -C, w))
    A_g = dec.A_g[1:, 1:]
    minv = restricted_inverse(A_g, C)
    grad = dec.grad_p[1:]
    v = dec.v_ext[1:]
    dt_g = dec.Dt_g
    d, num, den = d_constant(grad, minv, dt_g, v)
    z = (C / (2 * dec.c)) * v + d * (minv @ v) - minv @ dt_g
    w = np.concatenate(([1.0], z))
    return TransversalPair(-C, w, eig_residual(dec.Dg, -C, w), d, num, den)


@dataclass
class ZeroPairs:
    a_vector: np.ndarray
    g_vector: np.ndarray
    a_residual: float
    g_residual: float
    tangency: float
    projected_gap: float  # |(I-P) r^-Lambda (1, v~) - g_vector|


def nonautonomous_zero_pairs(sys: SystemDef, root: BalanceRoot, dec: EquilibriumDecomposition,
                             pm: BlowupPowerMatrix | None = None) -> ZeroPairs:
    pm = pm or power_matrix(sys, root)
    try:
        va = -np.linalg.solve(pm.A, pm.Dt_col)
        vg = -np.linalg.solve(dec.Dx_g, dec.Dt_g)
    except np.linalg.LinAlgError as exc:
        raise CorrespondenceError(f"zero eigenvector undefined: {exc}") from None
    wa = np.concatenate(([1.0], va))
    wg = np.concatenate(([1.0], vg))
    r_inv = _r_power(sys, dec, root, -1)
    projected = (np.eye(sys.n + 1) - dec.P) @ (r_inv * wa)
    return ZeroPairs(
        wa, wg,
        float(np.linalg.norm(pm.A_ext @ wa)),
        float(np.linalg.norm(dec.Dg @ wg)),
        float(abs(dec.grad_p[1:] @ vg)),
        float(np.linalg.norm(projected - wg)),
    )


def _r_power(sys: SystemDef, dec: EquilibriumDecomposition, root: BalanceRoot, sign: int) -> np.ndarray:
    """Diagonal of r^{sign * Lambda^ext} as a vector (time slot has exponent 0)."""
    r = (sys.k * dec.C_star) ** (-1.0 / sys.k)
    return r ** (sign * np.concatenate(([0.0], np.array(sys.alpha, dtype=float))))


@dataclass
class TangentialMatch:
    a_eigenvalue: complex
    g_eigenvalue: complex
    a_residual: float
    forward_residual: float
    reverse_residual: float
    block_time_component: float
    vector: np.ndarray


def tangential_match(sys: SystemDef, root: BalanceRoot, pm: BlowupPowerMatrix,
                     dec: EquilibriumDecomposition) -> tuple[list[TangentialMatch], list[str]]:
    """Map each A^ext eigenpair (other than 0 and 1) to its predicted Dg eigenpair."""
    notes = []
    kc = sys.k * dec.C_star
    lam, vecs = np.linalg.eig(pm.A_ext)
    eig_a = pm.eig_A
    simple = all(abs(a - b) > 1e-8 for a, b in itertools.combinations(eig_a, 2))
    if not simple:
        notes.append("A has a repeated eigenvalue; eigenvector claims reduced to eigenvalue matching")
    r_inv = _r_power(sys, dec, root, -1)
    r_fwd = _r_power(sys, dec, root, +1)
    proj = np.eye(sys.n + 1) - dec.P
    shifted = dec.A_g - kc * np.eye(sys.n + 1)
    skipped_one = False
    out = []
    for i in np.argsort([(z.real, z.imag) for z in lam], axis=0)[:, 0]:
        lt, u = lam[i], vecs[:, i]
        if abs(lt) < 1e-9:
            continue
        if not skipped_one and abs(lt - 1.0) < MATCH_TOL:
            skipped_one = True
            continue
        u = normalize(u)
        w = proj @ (r_inv * u)
        lg = kc * lt
        fwd = eig_residual(dec.Dg, lg, w) if simple else 0.0
        back = r_fwd * (shifted @ w)
        rev = eig_residual(pm.A_ext, lt, back) if np.linalg.norm(back) > 0 else np.inf
        out.append(TangentialMatch(complex(lt), complex(lg), eig_residual(pm.A_ext, lt, u), fwd,
                                   rev if simple else 0.0, float(abs(u[0])), normalize(w)))
    if not skipped_one:
        raise CorrespondenceError("A^ext has no eigenvalue 1")
    notes.append("eigenvalue 1 of A^ext maps onto the transversal direction and is not matched tangentially")
    return out, notes


@dataclass
class Verdict:
    status: str  # "exists-type-I" or "inconclusive"
    m_A: int
    m: int
    rates: list[dict]
    resonances: list[str]


def _resonances(eigs: Sequence[complex]) -> list[str]:
    lams = [complex(z) for z in eigs if abs(z) > 1e-9]
    hits = []
    idx = range(len(lams))
    for order in (2, 3):
        for combo in itertools.combinations_with_replacement(idx, order):
            s = sum(lams[j] for j in combo)
            for jp in idx:
                if abs(s - lams[jp]) < RESONANCE_TOL:
                    hits.append(f"sum of eigenvalues {list(combo)} equals eigenvalue {jp}")
    return hits


def existence_verdict(sys: SystemDef, root: BalanceRoot, pm: BlowupPowerMatrix | None = None,
                      dg_eigs: Sequence[complex] | None = None) -> Verdict:
    pm = pm or power_matrix(sys, root)
    if any(abs(z.real) < IMAG_AXIS_TOL for z in pm.eig_A):
        status = "inconclusive"
    else:
        status = "exists-type-I"
    m_A = int(sum(z.real < 0 for z in pm.eig_A))
    if dg_eigs is None:
        eq = root_to_equilibrium(sys, root)
        dec = decompose_at_equilibrium(field_for(sys), eq.t_star, eq.x_star)
        dg_eigs = np.linalg.eigvals(dec.Dg)
    m = int(sum(z.real < -IMAG_AXIS_TOL for z in dg_eigs))
    rates = [
        {"component": sys.state[i], "coefficient": y, "exponent": -sys.alpha[i] / sys.k}
        for i, y in enumerate(root.Y0) if abs(y) > 1e-12
    ]
    return Verdict(status, m_A, m, rates, _resonances(dg_eigs))


@dataclass
class SpectralReport:
    t_star: float
    Y0: tuple[float, ...]
    x_star: tuple[float, ...]
    C_star: float
    r: float
    eig_A_ext: np.ndarray
    eig_Dg: np.ndarray
    dg_pairs: list[dict]
    predicted_Dg: np.ndarray
    spectrum_gap: float
    transversal: TransversalPair
    zero: ZeroPairs
    tangential: list[TangentialMatch]
    verdict: Verdict
    checks: dict
    notes: list[str] = field(default_factory=list)

    @property
    def max_eigvec_residual(self) -> float:
        vals = [self.transversal.residual, self.zero.a_residual, self.zero.g_residual]
        for tm in self.tangential:
            vals += [tm.a_residual, tm.forward_residual, tm.reverse_residual]
        return max(vals)


def classify(dec: EquilibriumDecomposition, lam: complex, w: np.ndarray) -> str:
    tol = MATCH_TOL * (1 + abs(lam))
    if abs(lam) < tol:
        return "zero"
    tangent = abs(w[0]) < 1e-8 and abs(dec.grad_p @ w) < 1e-6 * np.linalg.norm(w)
    if abs(lam + dec.C_star) < tol and not tangent:
        return "transversal"
    return "tangential"


def analyze(sys: SystemDef, root: BalanceRoot, df: DesingField | None = None) -> SpectralReport:
    """Run every correspondence check for one balance root and its equilibrium."""
    df = df or field_for(sys)
    eq: HorizonEquilibrium = root_to_equilibrium(sys, root, df)
    dec = decompose_at_equilibrium(df, eq.t_star, eq.x_star)
    pm = power_matrix(sys, root)

    lam_g, vec_g = np.linalg.eig(dec.Dg)
    order = np.lexsort((np.round(lam_g.imag, 12), np.round(lam_g.real, 12)))
    lam_g, vec_g = lam_g[order], vec_g[:, order]
    pairs = []
    for i, z in enumerate(lam_g):
        w = normalize(vec_g[:, i])
        pairs.append({"eigenvalue": complex(z), "vector": w, "kind": classify(dec, z, w),
                      "residual": eig_residual(dec.Dg, z, w)})

    kc = sys.k * dec.C_star
    rest = list(pm.eig_A)
    j = int(np.argmin([abs(z - 1.0) for z in rest]))
    if abs(rest[j] - 1.0) > MATCH_TOL:
        raise CorrespondenceError("Spec(A) does not contain 1")
    rest.pop(j)
    predicted = sort_eigs([0.0, -dec.C_star] + [kc * z for z in rest])
    _, gap = match_spectra(list(lam_g), list(predicted))

    trans = transversal_pair(dec, sys.k)
    zero = nonautonomous_zero_pairs(sys, root, dec, pm)
    tang, notes = tangential_match(sys, root, pm, dec)
    verdict = existence_verdict(sys, root, pm, lam_g)

    prop_one = np.concatenate(([0.0], np.array(sys.alpha) * np.array(root.Y0)))
    checks = dict(dec.checks)
    checks.update({
        "r_vs_rY0": abs(eq.r - root.r),
        "C_vs_r": abs(dec.C_star - root.r ** (-sys.k) / sys.k),
        "unit_eigenpair_residual": eig_residual(pm.A_ext, 1.0, prop_one),
        "A_ext_row0": float(np.max(np.abs(pm.A_ext[0]))),
        "zero_tangency": zero.tangency,
        "zero_projected_gap": zero.projected_gap,
        "stability_gap_holds": verdict.m == verdict.m_A + 1,
    })
    if verdict.resonances:
        notes.append("possible resonance: " + "; ".join(verdict.resonances))
    return SpectralReport(eq.t_star, root.Y0, eq.x_star, dec.C_star, eq.r, pm.eig_A_ext, lam_g, pairs,
                          predicted, gap, trans, zero, tang, verdict, checks, notes)
