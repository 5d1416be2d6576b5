import math

import numpy as np
import pytest

from tanglesim.fluid import (FluidError, FluidGrid, compatibility_residuals,
                             solve_fluid)
from tanglesim.weights import WeightFunction

ONE = WeightFunction.constant()
EXP = WeightFunction.exponential()


@pytest.fixture(scope="module")
def const_grid():
    return solve_fluid([ONE, ONE], 1.0, 40.0, n_per_h=40, dump_stride=1)


def test_startup_matches_closed_form():
    h = 2.0
    g = FluidGrid([ONE, ONE], h, n_per_h=200)
    st = g.build_startup()
    s = np.arange(401) * g.dt
    exact = np.where(s <= h, ((h - s) / h) ** 2, 0.0)
    assert np.max(np.abs(st.phi - exact)) < 1e-4
    assert np.allclose(st.psi[0], [h, h])
    assert st.residuals["phi(0)"] == 0 and st.residuals["psi(h)"] < 1e-12


def test_startup_is_idempotent():
    g = FluidGrid([EXP, EXP], 1.0, n_per_h=20)
    assert g.build_startup() is g.build_startup()


def test_fixed_point_of_constant_weights(const_grid):
    x, l_, w = const_grid.totals(40.0)
    assert l_ == pytest.approx(2.0, rel=1e-3)
    assert x == pytest.approx(1.0, rel=1e-3)
    assert w == pytest.approx(1.0, rel=1e-3)


def test_bounds_hold_on_every_row(const_grid):
    t, x, l_, w, z = const_grid.series()
    h, m = const_grid.h, const_grid.m
    x2h = const_grid.totals(2 * h)[0]
    assert np.all(x <= max(m * h, x2h) + 1e-12)
    assert np.all(w <= m * h + 1e-12)
    assert np.all((x >= 0) & (x <= l_ + 1e-12))
    assert np.all(z[t >= 2 * h] >= const_grid.G_h - 1e-12)


def test_density_bounds(const_grid):
    t = 30.0
    x = const_grid.row(t)[: const_grid.index(t - const_grid.h) + 1]
    l_ = const_grid.l_density(t)
    assert np.all((x >= 0) & (x <= l_ + 1e-15) & (l_ <= 1))
    assert x[0] == 1.0


def test_propagator_cocycle_and_march(const_grid):
    g = const_grid
    t, s, u, v = 30.0, 3.0, 1.5, 0.5
    direct = g.propagator(t, s, v)
    split = g.propagator(t, s, u) * g.propagator(t - (s - u), u, v)
    assert direct == pytest.approx(split, rel=1e-12)
    ratio = g.row(t)[g.index(s)] / g.row(t - (s - v))[g.index(v)]
    assert direct == pytest.approx(ratio, rel=1e-12)
    assert g.propagator(t, s, s) == 1.0


def test_propagator_at_constant_normaliser(const_grid):
    # zeta has settled at l* = 2, so P = exp(-2 (s - v) / 2)
    g = const_grid
    assert np.allclose(g.zeta(35.0), 2.0, rtol=1e-4)
    assert g.propagator(38.0, 2.0, 0.5) == pytest.approx(math.exp(-1.5),
                                                          rel=1e-3)


def test_zeta_range_errors(const_grid):
    with pytest.raises(FluidError):
        const_grid.zeta(500.0)
    with pytest.raises(FluidError):
        const_grid.propagator(const_grid.last * const_grid.dt + 5, 1.0, 0.0)
    with pytest.raises(FluidError):
        const_grid.totals(41.0)
    with pytest.raises(FluidError):
        const_grid.index(0.0123)


def test_integrable_weights_grow_linearly():
    g = solve_fluid([EXP, EXP], 1.0, 60.0, n_per_h=20)
    t, x, l_, w, z = g.series()
    assert np.all(np.diff(l_[t >= 2]) > 0)
    slope = np.polyfit(t[t > 40], x[t > 40], 1)[0]
    x_inf = math.exp(-2 / z[-1, 0])
    assert slope == pytest.approx(x_inf, rel=0.02)


def test_user_supplied_initial_data_reproduce_startup():
    ref = FluidGrid([EXP, EXP], 1.0, n_per_h=20)
    st = ref.build_startup()
    ref.solve(6.0)
    user = FluidGrid.from_initial([EXP, EXP], 1.0, st.phi, st.psi,
                                  n_per_h=20).solve(6.0)
    assert user.totals(6.0)[0] == pytest.approx(ref.totals(6.0)[0], rel=1e-12)
    assert np.allclose(user.zeta(6.0), ref.zeta(6.0), rtol=1e-12)


def test_incompatible_initial_data_rejected():
    n = 20
    phi = np.full(2 * n + 1, 0.5)
    psi = np.ones((n + 1, 2))
    with pytest.raises(FluidError, match="compatibility"):
        FluidGrid.from_initial([EXP, EXP], 1.0, phi, psi, n_per_h=n)


def test_compatibility_residuals_on_startup():
    g = FluidGrid([EXP, WeightFunction.power(2.0)], 1.0, n_per_h=100)
    res = g.build_startup().residuals
    assert res["phi(0)"] < 1e-12 and res["psi(0)"] < 1e-12
    assert res["psi(h)"] < 1e-12 and res["psi_min"] >= 0
    assert res["dphi(0)"] < 1e-2 and res["dpsi(h)"] < 1e-2
    again = compatibility_residuals(g.weights, g.h, g.startup.phi,
                                    g.startup.psi, g.dt)
    assert again == res


def test_block_order_enforced():
    g = FluidGrid([ONE, ONE], 1.0, n_per_h=10)
    with pytest.raises(FluidError):
        g.advance_block(2)
    g.build_startup()
    with pytest.raises(FluidError):
        g.advance_block(3)
    g.advance_block(2)
    assert g.last == 30


def test_age_cap_reports_tail_bound():
    g = FluidGrid([EXP, EXP], 1.0, n_per_h=10, age_cap=5.0)
    assert np.allclose(g.zeta_tail_bound, math.exp(-5.0))
    assert FluidGrid([ONE, ONE], 1.0).zeta_tail_bound.tolist() == [0, 0]


def test_csv_outputs(tmp_path):
    g = solve_fluid([ONE, ONE], 1.0, 5.0, n_per_h=10, dump_stride=10)
    g.write_csv(tmp_path / "f.csv")
    g.write_density(tmp_path / "d.csv")
    head = (tmp_path / "f.csv").read_text().splitlines()
    assert head[0] == "t,x_total,l_total,w_total,zeta_1,zeta_2"
    dens = (tmp_path / "d.csv").read_text().splitlines()
    assert dens[0] == "t,s,x,l" and len(dens) > 10
