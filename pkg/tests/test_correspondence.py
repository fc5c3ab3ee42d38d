import numpy as np
import pytest

from blowup.balance import field_for, find_roots, root_to_equilibrium
from blowup.correspondence import (CorrespondenceError, FormulaDegenerateError, analyze, d_constant,
                                   eig_residual, match_spectra, normalize, restricted_inverse)
from blowup.desing import decompose_at_equilibrium
from blowup.system import BUNDLED, bundled_system


def _reports(name):
    s = bundled_system(name)
    return [(s, analyze(s, r)) for t in s.t_grid for r in find_roots(s, t, seeds=s.seeds)]


@pytest.mark.parametrize("name", BUNDLED)
def test_spectrum_correspondence(name):
    reps = _reports(name)
    assert reps
    for s, rep in reps:
        assert rep.spectrum_gap < 1e-6
        assert rep.max_eigvec_residual < 1e-7
        assert rep.verdict.m == rep.verdict.m_A + 1
        assert all(p["residual"] < 1e-7 for p in rep.dg_pairs)


def test_painleve_verdict_and_rates():
    ((s, rep),) = _reports("painleve1")[:1]
    assert rep.verdict.status == "exists-type-I"
    assert (rep.verdict.m_A, rep.verdict.m) == (1, 2)
    assert [r["exponent"] for r in rep.verdict.rates] == [-2.0, -3.0]


def test_wwl_k1_flags_resonance():
    s, rep = _reports("wwl_k1")[0]
    assert rep.verdict.resonances


def test_selfsimilar_double_eigenvalue_still_verified():
    # Spec(A) = {1, -1/2} puts -C* twice in Spec(Dg); the predicted vectors are checked directly
    for s, rep in _reports("selfsimilar"):
        lam = -rep.C_star
        assert sum(abs(z - lam) < 1e-8 for z in rep.eig_Dg) == 2
        assert rep.transversal.residual < 1e-9
        assert all(tm.forward_residual < 1e-9 for tm in rep.tangential)


def test_zero_eigenvectors():
    for name in BUNDLED:
        for s, rep in _reports(name):
            assert rep.zero.a_residual < 1e-9
            assert rep.zero.g_residual < 1e-9
            assert rep.zero.tangency < 1e-9


def test_tangential_maps_are_inverse_images():
    for s, rep in _reports("wwl_k1"):
        for tm in rep.tangential:
            assert tm.a_residual < 1e-9
            assert tm.reverse_residual < 1e-9
            assert abs(tm.g_eigenvalue - s.k * rep.C_star * tm.a_eigenvalue) < 1e-9


def test_d_degenerate_denominator():
    grad = np.array([1.0, 0.0])
    minv = np.eye(2)
    with pytest.raises(FormulaDegenerateError):
        d_constant(grad, minv, np.array([1.0, 1.0]), np.array([0.0, 1.0]))


def test_d_ratio():
    d, num, den = d_constant(np.array([1.0, 0.0]), np.eye(2), np.array([3.0, 1.0]), np.array([2.0, 5.0]))
    assert (d, num, den) == (1.5, 3.0, 2.0)


def test_restricted_inverse_on_singular_shift():
    A = np.diag([-1.0, 2.0])
    Minv = restricted_inverse(A, 1.0)
    assert np.allclose(Minv @ np.array([0.0, 1.0]), [0.0, 1 / 3])


def test_match_spectra_rejects_missing_partner():
    with pytest.raises(CorrespondenceError):
        match_spectra([0.0, 1.0], [0.0, 2.0])


def test_normalize_convention():
    v = normalize(np.array([0.0, -3.0, 4.0]))
    assert np.linalg.norm(v) == pytest.approx(1.0)
    assert v[1].real > 0 and v[1].imag == 0


def test_eig_residual():
    A = np.diag([2.0, 3.0])
    assert eig_residual(A, 2.0, np.array([1.0, 0.0])) == 0.0


def test_analysis_is_deterministic():
    s = bundled_system("wwl_k2")
    r = find_roots(s, 4.0, seeds=s.seeds)[0]
    a, b = analyze(s, r), analyze(s, r)
    assert np.array_equal(a.eig_Dg, b.eig_Dg)
    assert all(np.array_equal(p["vector"], q["vector"]) for p, q in zip(a.dg_pairs, b.dg_pairs))
