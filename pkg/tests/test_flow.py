import math

import numpy as np
import pytest

from blowup.balance import field_for, find_roots, root_to_equilibrium
from blowup.embedding import p2c
from blowup.flow import (NotConvergedError, initial_point, integrate, rate_check, t_max, trajectory_csv)
from blowup.system import bundled_system


@pytest.fixture(scope="module")
def painleve():
    s = bundled_system("painleve1")
    df = field_for(s)
    x = initial_point(df, y0=[3.0, 5.0], t0=0.0)
    return s, df, integrate(df, 0.0, x)


def test_converges_to_horizon(painleve):
    s, df, tr = painleve
    assert tr.converged
    assert 1 - p2c(s.spec, tr.final_x) < 1e-10
    assert np.all(tr.p2c <= 1 + 1e-9)


def test_t_is_monotone(painleve):
    _, _, tr = painleve
    assert np.all(np.diff(tr.t) >= 0)


def test_tmax_two_ways_agree(painleve):
    _, df, tr = painleve
    tm = t_max(df, tr)
    assert abs(tm.t_max - tm.from_time_component) < 1e-6
    assert tm.C_star == pytest.approx(17 ** (-1 / 12), rel=1e-6)


def test_halving_the_step_changes_tmax_little(painleve):
    s, df, tr = painleve
    tr2 = integrate(df, 0.0, tr.x[0], h=5e-4)
    assert abs(t_max(df, tr2).t_max - t_max(df, tr).t_max) < 1e-8


def test_rate_fit(painleve):
    s, df, tr = painleve
    (root,) = find_roots(s, t_max(df, tr).t_max, seeds=s.seeds)
    rep = rate_check(df, tr, root_to_equilibrium(s, root), root)
    assert rep.status == "ok"
    slopes = {f.component: f.slope for f in rep.fits}
    assert slopes["u"] == pytest.approx(-2, abs=0.05) and slopes["v"] == pytest.approx(-3, abs=0.05)


def test_unconverged_trajectory_is_reported():
    s = bundled_system("painleve1")
    df = field_for(s)
    tr = integrate(df, 0.0, [0.1, 0.1], tau_max=0.5)
    assert tr.status == "max-steps" and not tr.converged
    with pytest.raises(NotConvergedError):
        t_max(df, tr)


def test_start_outside_horizon_rejected():
    df = field_for(bundled_system("painleve1"))
    with pytest.raises(ValueError):
        integrate(df, 0.0, [1.2, 0.0])


def test_bad_step():
    df = field_for(bundled_system("painleve1"))
    with pytest.raises(ValueError):
        integrate(df, 0.0, [0.1, 0.1], h=0.0)


def test_initial_point_needs_exactly_one():
    df = field_for(bundled_system("painleve1"))
    with pytest.raises(ValueError):
        initial_point(df)
    with pytest.raises(ValueError):
        initial_point(df, [0.1, 0.1], [1.0, 1.0])


def test_csv_export(painleve):
    _, _, tr = painleve
    text = trajectory_csv(tr)
    lines = text.split("\n")
    assert lines[0] == "tau,t,x1,x2,p2c,G,kappa_inv"
    assert len(lines) == len(tr.tau) + 2 and lines[-1] == ""
    assert "\r" not in text
    row = [float(v) for v in lines[-2].split(",")]
    assert row[1] == tr.final_t


def test_remaining_time_is_resolved_to_the_end(painleve):
    _, df, tr = painleve
    tail = t_max(df, tr).tail_correction
    theta = tr.remaining(tail)
    assert np.all(np.diff(theta) <= 0) and theta[-1] == tail
    # where t still carries the digits, the increment sum agrees with t_end - t
    early = slice(0, len(theta) // 4)
    assert np.allclose(theta[early], tr.final_t + tail - tr.t[early], rtol=0, atol=1e-12)
    # near blow-up theta keeps relative precision that t_end - t has lost
    assert np.all(theta[:-1] > 0)
