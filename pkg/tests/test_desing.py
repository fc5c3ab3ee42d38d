import math

import numpy as np
import pytest

from blowup.balance import field_for, find_roots, root_to_equilibrium
from blowup.desing import (ConsistencyError, NotEquilibriumError, ResidualFormError, build,
                           decompose_at_equilibrium, eval_field, monomial_terms)
from blowup.embedding import grad_p2c, p2c, to_horizon
from blowup.expr import evaluate, parse
from blowup.flow import integrate
from blowup.system import BUNDLED, bundled_system, system_from_dict

PAINLEVE = {"name": "p", "state": ["u", "v"], "alpha": [2, 3], "order_k": 1,
            "qh": ["v", "6*u^2"], "res": ["0", "t"]}


def _interior(rng, spec, n):
    pts = []
    while len(pts) < n:
        x = rng.uniform(-1, 1, spec.n)
        if p2c(spec, x) < 0.95:
            pts.append(x)
    return pts


def test_monomial_split():
    e = parse("t*u^2*v - 3*u/v + sin(t)", ["u", "v"])
    terms = monomial_terms(e)
    assert sorted(sorted(m.items()) for _, m in terms) == [[], [(1, 1.0), (2, -1.0)], [(1, 2.0), (2, 1.0)]]


def test_residual_must_be_monomial():
    with pytest.raises(ResidualFormError):
        build(system_from_dict(dict(PAINLEVE, res=["0", "sin(u)"])))


def test_residual_degree_above_leading_order_is_rejected():
    with pytest.raises(ResidualFormError):
        build(system_from_dict(dict(PAINLEVE, res=["0", "u^3"])))


@pytest.mark.parametrize("name", BUNDLED)
def test_symbolic_jacobian_matches_finite_differences(name):
    s = bundled_system(name)
    df = field_for(s)
    rng = np.random.default_rng(3)
    h = 1e-6
    worst = 0.0
    for x in _interior(rng, s.spec, 100):
        t = rng.uniform(-1, 1)
        J = df.jacobian(t, x)
        p = np.concatenate(([t], x))
        F = np.zeros_like(J)
        for j in range(len(p)):
            up, dn = p.copy(), p.copy()
            up[j] += h
            dn[j] -= h
            F[:, j] = (np.array(df.vector(up[0], up[1:])) - np.array(df.vector(dn[0], dn[1:]))) / (2 * h)
        worst = max(worst, np.max(np.abs(J - F)) / (1 + np.max(np.abs(J))))
    assert worst < 1e-6


@pytest.mark.parametrize("name", BUNDLED)
def test_horizon_is_invariant(name):
    s = bundled_system(name)
    df = field_for(s)
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        x = to_horizon(s.spec, rng.normal(size=s.n))
        t = rng.uniform(-2, 2)
        g = np.array(df.vector(t, x))
        worst = max(worst, abs(grad_p2c(s.spec, x) @ g[1:]))
    assert worst < 1e-10


def test_time_component_vanishes_on_horizon():
    s = bundled_system("painleve1")
    x = to_horizon(s.spec, [0.3, 0.8])
    g0, *_ = eval_field(field_for(s), 0.0, x)
    assert abs(g0) < 1e-12


def test_G_along_a_trajectory():
    # d log kappa / d tau = G, checked with centred differences at stride 1
    s = bundled_system("painleve1")
    df = field_for(s)
    h = 1e-3
    tr = integrate(df, 0.0, [0.3, 0.2], h=h, tau_max=3.0, stride=1)
    lk = -np.log(tr.kappa_inv)
    fd = (lk[2:] - lk[:-2]) / (2 * h)
    err = np.max(np.abs(fd - tr.G[1:-1]))
    assert err < 1e-5


@pytest.mark.parametrize("name", BUNDLED)
def test_decomposition_at_every_root(name):
    s = bundled_system(name)
    for t in s.t_grid:
        for r in find_roots(s, t, seeds=s.seeds):
            eq = root_to_equilibrium(s, r)
            dec = decompose_at_equilibrium(field_for(s), eq.t_star, eq.x_star)
            assert dec.residual < 1e-9
            assert abs(dec.checks["grad_dot_v"] - 1.0) < 1e-12
            assert dec.checks["projection_idempotence"] < 1e-12
            assert np.allclose(dec.A_g[0], 0.0)


def test_decomposition_requires_equilibrium():
    s = bundled_system("painleve1")
    with pytest.raises(NotEquilibriumError):
        decompose_at_equilibrium(field_for(s), 0.0, [0.1, 0.2])


def test_consistency_error_is_arithmetic():
    assert issubclass(ConsistencyError, ArithmeticError)


def test_field_matches_hand_formula_painleve():
    # g_j = Q f~_j - alpha_j x_j G with f~ = (x2, 6 x1^2 + t K^4)
    s = bundled_system("painleve1")
    df = field_for(s)
    t, x1, x2 = 0.4, 0.3, -0.5
    K = 1 - x1 ** 6 - x2 ** 4
    Q = 1 - 11 / 12 * K
    f1, f2 = x2, 6 * x1 ** 2 + t * K ** 4
    G = x1 ** 5 / 2 * f1 + x2 ** 3 / 3 * f2
    g0, g, G_num, _ = eval_field(df, t, [x1, x2])
    assert g0 == pytest.approx(Q * K)
    assert G_num == pytest.approx(G)
    assert g == pytest.approx([Q * f1 - 2 * x1 * G, Q * f2 - 3 * x2 * G])
