import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lawdep.market import (
    Lattice,
    MarketModel,
    StrategyCurve,
    conditional_terminal_law,
    integrate,
    normals,
    perturb,
    simulate_dollar,
    simulate_proportion,
    tail_on_grid,
)


@pytest.fixture
def merton():
    return MarketModel.constant([0.08], [[0.2]], T=1.0, n_steps=64)


def test_constant_market_kappa_and_tail(merton):
    assert merton.kappa_at(0.3)[0] == pytest.approx([0.4])
    t = np.array([0.0, 0.25, 1.0])
    assert np.allclose(merton.tail_kappa2(t), 0.16 * (1 - t), atol=1e-15)


def test_singular_volatility_rejected():
    with pytest.raises(ValueError):
        MarketModel.constant([0.1, 0.1], [[0.2, 0.2], [0.2, 0.2]])


def test_ellipticity_bounds_enforced():
    with pytest.raises(ValueError):
        MarketModel.constant([0.08], [[0.2]], c1=0.5)


def test_gauss_legendre_integrates_cubics_exactly():
    grid = np.linspace(0.0, 1.0, 5)
    v = integrate(lambda s: s**3 - 2 * s, 0.1, 0.9, grid)
    exact = (0.9**4 - 0.1**4) / 4 - (0.9**2 - 0.1**2)
    assert float(v) == pytest.approx(exact, abs=1e-15)


def test_tail_on_grid_with_breaks():
    grid = np.linspace(0.0, 1.0, 9)
    step = lambda s: np.where(s < 0.3, 1.0, 2.0)
    tails = tail_on_grid(step, grid, breaks=(0.3,))
    oracle = np.array([2 * (1 - t) - max(0.0, 0.3 - t) for t in grid])
    assert np.allclose(tails, oracle, atol=1e-14)


def test_conditional_law_for_constant_proportion(merton):
    strat = StrategyCurve.constant([1.5])
    law = conditional_terminal_law(merton, strat, 0.25, 2.0)
    a2 = (0.2 * 1.5) ** 2 * 0.75
    assert law.var == pytest.approx(a2, rel=1e-13)
    assert law.loc == pytest.approx(math.log(2.0) + 1.5 * 0.08 * 0.75 - 0.5 * a2, rel=1e-13)


def test_conditional_law_dollar_mode(merton):
    law = conditional_terminal_law(merton, StrategyCurve.constant([0.5], "dollar"), 0.0, 1.0)
    assert law.mean() == pytest.approx(1.0 + 0.5 * 0.08)
    assert law.var == pytest.approx(0.01)


def test_perturbation_is_symbolic_and_reversible():
    base = StrategyCurve.constant([1.0])
    bumped = perturb(base, 0.2, 0.1, [0.5], T=1.0)
    assert bumped(0.25)[0] == 1.5
    assert bumped(0.35)[0] == 1.0
    back = perturb(bumped, 0.2, 0.1, [-0.5], T=1.0)
    assert back.bumps == ()
    assert back(0.25)[0] == 1.0


def test_perturbation_window_must_fit():
    with pytest.raises(ValueError):
        perturb(StrategyCurve.constant([1.0]), 0.95, 0.1, [0.1], T=1.0)


def test_piecewise_constant_strategy():
    s = StrategyCurve.piecewise_constant([0.0, 0.5, 1.0], [[1.0], [2.0]])
    assert s(np.array([0.1, 0.6]))[:, 0].tolist() == [1.0, 2.0]


def test_normals_independent_of_path_count():
    a = normals(7, 10, 3)
    b = normals(7, 5000, 3)
    assert np.array_equal(a, b[:10])
    assert not np.array_equal(a, normals(8, 10, 3))


def test_antithetic_pairs_mirror():
    z = normals(1, 8, 4, antithetic=True)
    assert np.array_equal(z[4:], -z[:4])


def test_proportion_simulation_mean(merton):
    paths = simulate_proportion(merton, StrategyCurve.constant([1.0]), 1.0, 20000, seed=3, antithetic=True)
    x = paths.terminal
    se = x.std() / math.sqrt(x.size)
    assert abs(x.mean() - math.exp(0.08)) < 4 * se


def test_dollar_simulation_is_exact_in_distribution(merton):
    paths = simulate_dollar(merton, StrategyCurve.constant([2.0], "dollar"), 0.0, 4000, seed=2)
    assert paths.terminal.var() == pytest.approx(0.16, rel=0.08)


def test_wealth_csv(tmp_path, merton):
    p = simulate_proportion(merton, StrategyCurve.constant([1.0]), 1.0, 2, seed=0)
    f = tmp_path / "w.csv"
    p.to_csv(f)
    lines = f.read_text().splitlines()
    assert lines[0] == "path_id,t,X"
    assert len(lines) == 1 + 2 * (merton.n_steps + 1)


def test_simulation_mode_mismatch(merton):
    with pytest.raises(ValueError):
        simulate_dollar(merton, StrategyCurve.constant([1.0]), 1.0, 4, seed=0)


def test_lattice_deterministic_when_eta_zero():
    lat = Lattice.build(16, 1.0, 0.4, eta=0.0)
    assert lat.is_deterministic()
    assert all(np.all(k == 0.4) for k in lat.kappa)
    assert not Lattice.build(16, 1.0, 0.4, eta=0.1).is_deterministic()


@settings(max_examples=30, deadline=None)
@given(pi=st.floats(-2, 2), t=st.floats(0.0, 0.9))
def test_conditional_variance_is_quadratic_in_exposure(pi, t):
    m = MarketModel.constant([0.05], [[0.3]], n_steps=32)
    law = conditional_terminal_law(m, StrategyCurve.constant([pi]), t, 1.0)
    assert law.var == pytest.approx((0.3 * pi) ** 2 * (1 - t), rel=1e-10, abs=1e-15)
