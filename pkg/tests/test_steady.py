import math

import numpy as np
import pytest
from scipy import optimize

from tanglesim.fluid import solve_fluid
from tanglesim.steady import (SteadyStateError, fixed_point_map,
                              random_selection_fixed_point, solve_fixed_point,
                              verify_orphan_persistence, write_profile_csv,
                              write_report)
from tanglesim.weights import WeightFunction

EXP = WeightFunction.exponential()


def closed_form_map(zeta, h=1.0):
    """F for g = exp(-s), m = 2, symmetric normalisers, integrated by hand."""
    return (1 - math.exp(-h)) + math.exp(-h) * (zeta / 2) * (
        1 - math.exp(-2 / zeta))


@pytest.fixture(scope="module")
def exp_profile():
    return solve_fixed_point([EXP, EXP], 1.0)


def test_map_matches_closed_form():
    for z in (0.3, 0.76, 1.0, 2.5):
        F, _ = fixed_point_map([EXP, EXP], 1.0, np.array([z, z]))
        assert np.allclose(F, closed_form_map(z), atol=1e-12)


def test_fixed_point_matches_root_of_closed_form(exp_profile):
    root = optimize.brentq(lambda z: closed_form_map(z) - z, 0.1, 1.0,
                           xtol=1e-15)
    assert np.allclose(exp_profile.zeta, root, atol=1e-10)
    assert exp_profile.residual < 1e-10
    assert exp_profile.converged


def test_x_inf_positive_and_profile_shape(exp_profile):
    sp = exp_profile
    z = sp.zeta[0]
    assert sp.x_inf == pytest.approx(math.exp(-2 / z))
    s = np.linspace(0, 30, 50)
    x = sp.x(s)
    assert x[0] == 1.0 and np.all(np.diff(x) <= 0)
    assert x[-1] == pytest.approx(sp.x_inf, rel=1e-9)
    assert sp.l(0.5) == 1.0 and sp.l(3.0) == pytest.approx(sp.x(2.0))


def test_orphan_persistence_report(exp_profile):
    rep = verify_orphan_persistence(exp_profile)
    assert rep.persistent
    assert rep.slope == pytest.approx(exp_profile.x_inf, rel=1e-6)


def test_multi_start_finds_single_fixed_point():
    sp = solve_fixed_point([EXP, EXP], 1.0,
                           starts=[[1.0, 1.0], [0.05, 3.0], [4.0, 0.2]])
    assert sp.others == []


def test_asymmetric_weights():
    w2 = WeightFunction.exponential(3.0)
    sp = solve_fixed_point([EXP, w2], 0.5)
    F, _ = fixed_point_map([EXP, w2], 0.5, sp.zeta)
    assert np.max(np.abs(F - sp.zeta)) < 1e-10
    assert sp.zeta[0] != pytest.approx(sp.zeta[1])


def test_fluid_normaliser_settles_on_fixed_point(exp_profile):
    g = solve_fluid([EXP, EXP], 1.0, 30.0, n_per_h=100)
    assert np.allclose(g.zeta(30.0), exp_profile.zeta, rtol=1e-4)


def test_errors():
    with pytest.raises(SteadyStateError, match="not integrable"):
        solve_fixed_point([WeightFunction.constant()] * 2, 1.0)
    with pytest.raises(SteadyStateError, match="residual"):
        solve_fixed_point([EXP, EXP], 1.0, max_iter=1)
    with pytest.raises(ValueError):
        solve_fixed_point([EXP, EXP], 1.0, starts=[[0.0, 1.0]])


def test_random_selection_fixed_point():
    fp = random_selection_fixed_point(2, 5.0)
    assert (fp.l, fp.x, fp.w) == (10.0, 5.0, 5.0)
    fp3 = random_selection_fixed_point(3, 2.0)
    assert fp3.l == pytest.approx(3.0) and fp3.x == pytest.approx(1.0)
    with pytest.raises(ValueError):
        random_selection_fixed_point(1, 1.0)


def test_report_files(tmp_path, exp_profile):
    write_report(exp_profile, tmp_path / "r.txt",
                 verify_orphan_persistence(exp_profile))
    text = (tmp_path / "r.txt").read_text()
    assert "x_inf = " in text and "zeta_2 = " in text
    assert "orphan_persistent = True" in text
    write_profile_csv(exp_profile, tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().startswith("s,x,l\n")
