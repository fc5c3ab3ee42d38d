import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blowup.embedding import (EmbeddingSpec, HorizonError, embed, kappa_of, make_point, p2c, p_alpha, scale,
                              to_horizon, unembed)

SPECS = [EmbeddingSpec.from_alpha(a) for a in ((2, 3), (1, 1), (1, 3, 1, 3), (1, 2, 1, 2), (0, 1))]


def test_lcm_and_beta():
    s = EmbeddingSpec.from_alpha((2, 3))
    assert s.c == 6 and s.beta == (3, 2)


def test_zero_weights_are_inactive():
    s = EmbeddingSpec.from_alpha((0, 2))
    assert s.active == (1,)
    assert p2c(s, [5.0, 0.5]) == pytest.approx(0.5 ** 2)


def test_origin_maps_to_origin():
    pt = embed(SPECS[0], 0.0, [0.0, 0.0])
    assert np.allclose(pt.x, 0.0) and pt.kappa_inv == 1.0


def test_unembed_rejects_horizon():
    s = SPECS[0]
    with pytest.raises(HorizonError):
        unembed(s, make_point(s, 0.0, to_horizon(s, [0.3, 0.4])))


def test_quasi_homogeneous_norm_scales():
    s = SPECS[0]
    y = np.array([0.7, -1.3])
    assert p_alpha(s, scale(s, 3.0, y)) == pytest.approx(3.0 * p_alpha(s, y))


def test_kappa_solves_defining_equation():
    s = SPECS[2]
    y = np.array([10.0, -4.0, 0.5, 300.0])
    k = kappa_of(s, y)
    x = scale(s, 1.0 / k, y)
    assert 1.0 - p2c(s, x) == pytest.approx(1.0 / k, rel=1e-12)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: str(s.alpha))
def test_round_trip_1000_points(spec):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        y = rng.normal(size=spec.n) * 10.0 ** rng.uniform(-3, 3)
        pt = embed(spec, 0.5, y)
        assert p2c(spec, pt.x) < 1.0
        _, back = unembed(spec, pt)
        worst = max(worst, float(np.max(np.abs(back - y) / (1 + np.abs(y)))))
    assert worst < 1e-10


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4, allow_nan=False), min_size=4, max_size=4))
def test_round_trip_property(y):
    spec = SPECS[3]
    _, back = unembed(spec, embed(spec, 0.0, y))
    assert np.allclose(back, y, rtol=1e-10, atol=1e-10)


def test_to_horizon_lands_on_horizon():
    s = SPECS[3]
    x = to_horizon(s, [0.2, -0.1, 0.5, 0.3])
    assert p2c(s, x) == pytest.approx(1.0, abs=1e-14)
