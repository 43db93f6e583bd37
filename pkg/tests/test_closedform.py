import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lawdep.closedform import (
    CertaintyFunctions,
    InfeasibleError,
    rdu_lambda,
    solve_equilibrium_cara,
    solve_equilibrium_crra,
    solve_equilibrium_mv,
    solve_rdu_candidate,
)
from lawdep.market import MarketModel
from lawdep.preferences import (
    IdentityDistortion,
    MixedCARA,
    MixedCRRA,
    PowerDistortion,
    ProbitScaleDistortion,
    RankDependent,
    WeightedUtility,
)

KAPPA, SIGMA = 0.4, 0.2


@pytest.fixture(scope="module")
def merton():
    return MarketModel.constant([KAPPA * SIGMA], [[SIGMA]], n_steps=128)


@pytest.fixture(scope="module")
def drifting():
    return MarketModel.from_functions(lambda t: [0.05 + 0.04 * t], lambda t: [[0.2 + 0.05 * t]], n_steps=128)


# --- H, G, Gcal ---------------------------------------------------------------


def test_dirac_crra_certainty_functions():
    cf = CertaintyFunctions(MixedCRRA([-0.5]))
    y = np.array([0.0, 0.4, 2.0])
    assert np.allclose(cf.eval_H(y), np.exp(-0.25 * y), rtol=1e-13)
    assert np.allclose(cf.eval_G(y), 1 / 1.5, rtol=1e-13)
    assert cf.eval_Gcal(0.4) == pytest.approx(0.9, abs=1e-14)
    assert cf.eval_Gcal_inverse(0.9) == pytest.approx(0.4, abs=1e-14)


def test_dirac_cara_certainty_functions():
    cf = CertaintyFunctions(MixedCARA([2.0]))
    y = np.array([0.0, 0.4])
    assert np.allclose(cf.eval_H(y), -y, atol=1e-14)
    assert np.allclose(cf.eval_G(y), 0.5, rtol=1e-13)


def test_g_at_zero_is_the_mixture_harmonic_risk_tolerance():
    # G(0) = 1 / (1 - sum w gamma) for a CRRA mixture
    cf = CertaintyFunctions(MixedCRRA([-2.0, 0.5], [0.25, 0.75]))
    assert cf.G_exact(0.0) == pytest.approx(1 / (1 - (-0.5 + 0.375)), rel=1e-13)


def test_exact_and_quadrature_paths_agree():
    cf = CertaintyFunctions(MixedCRRA([-3.0, -0.2, 0.6], [0.2, 0.5, 0.3]))
    y = np.linspace(0.0, 2.0, 9)
    assert np.allclose(cf.G_exact(y), cf.eval_G(y), rtol=1e-10)
    assert all(cf.G_scalar(v) == pytest.approx(g, rel=1e-12) for v, g in zip(y, cf.G_exact(y)))


def test_weighted_utility_betweenness_has_constant_g():
    # as a betweenness preference WU has G = 1 / (rho - 2 gamma)
    cf = CertaintyFunctions(WeightedUtility(-0.5, 0.25).as_betweenness())
    assert np.allclose(cf.eval_G(np.array([0.0, 0.5, 3.0])), 0.8, rtol=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    g=st.lists(st.floats(-15.0, 0.9), min_size=1, max_size=4),
    y=st.floats(0.0, 5.0),
)
def test_mixed_crra_g_bounds(g, y):
    pref = MixedCRRA(g, eps0=0.05)
    lo, hi = CertaintyFunctions(pref).G_bounds
    val = float(CertaintyFunctions(pref).G_exact(y))
    assert lo <= val <= hi


class _DecayingG(CertaintyFunctions):
    """G(y) = 1 + y, so Gcal(inf) = 1."""

    def G_exact(self, y):
        return 1.0 + np.asarray(y, dtype=float)


def test_infeasible_target_is_reported():
    cf = _DecayingG(MixedCRRA([-0.5]))
    with pytest.raises(InfeasibleError) as info:
        cf.table(2.0)
    assert not info.value.record.feasible
    assert info.value.record.gcal_estimate < 1.0
    assert cf.feasibility(0.5).feasible


# --- equilibrium strategies --------------------------------------------------


@pytest.mark.parametrize("gamma", [-1.0, -0.5, 0.0, 0.5])
def test_merton_crra(merton, gamma):
    sol = solve_equilibrium_crra(MixedCRRA([gamma]), merton)
    assert np.allclose(sol.pi_grid, KAPPA / (SIGMA * (1 - gamma)), atol=1e-12)
    assert sol.feasibility.feasible


@pytest.mark.parametrize("rho", [0.5, 1.0, 2.0])
def test_merton_cara(merton, rho):
    sol = solve_equilibrium_cara(MixedCARA([rho]), merton)
    assert np.allclose(sol.pi_grid, KAPPA / (SIGMA * rho), atol=1e-12)


def test_merton_four_thirds(merton):
    sol = solve_equilibrium_crra(MixedCRRA([-0.5]), merton)
    assert sol.pi_grid[0, 0] == pytest.approx(4 / 3, abs=1e-12)


def test_mixture_ode_matches_inverse(drifting):
    sol = solve_equilibrium_crra(MixedCRRA([-2.0, 0.3], [0.4, 0.6]), drifting)
    assert sol.ode_gap < 1e-10
    # A is the remaining exposure variance of the strategy it defines
    a2 = (sol.a**2).sum(1)
    tail = np.concatenate([np.cumsum(((a2[1:] + a2[:-1]) / 2 * np.diff(sol.times))[::-1])[::-1], [0.0]])
    assert np.allclose(sol.A, tail, atol=1e-5)


def test_zero_market_price_of_risk_gives_zero_strategy():
    m = MarketModel.constant([0.0], [[0.2]], n_steps=16)
    sol = solve_equilibrium_crra(MixedCRRA([-1.0, 0.2]), m)
    assert np.all(sol.pi_grid == 0.0)
    assert np.all(sol.A == 0.0)


def test_mean_variance_strategy(drifting):
    sol = solve_equilibrium_mv(2.0, drifting)
    oracle = drifting.kappa_at(drifting.times)[:, 0] / (2.0 * drifting.sigma_at(drifting.times)[:, 0, 0])
    assert np.allclose(sol.pi_grid[:, 0], oracle, atol=1e-14)


def test_solution_csv(tmp_path, merton):
    sol = solve_equilibrium_crra(MixedCRRA([-0.5]), merton)
    f = tmp_path / "s.csv"
    sol.to_csv(f)
    lines = f.read_text().splitlines()
    assert lines[0] == "t,A,a0,pi0"
    assert float(lines[1].split(",")[3]) == pytest.approx(4 / 3, abs=1e-15)


# --- rank-dependent candidate --------------------------------------------------


def test_rdu_identity_collapse(drifting):
    cand = solve_rdu_candidate(RankDependent(-0.5), drifting)
    assert np.allclose(cand.lam, 1.0, atol=1e-12)
    assert np.allclose(cand.Lambda, drifting.tail_kappa2(drifting.times), atol=1e-12)


@pytest.mark.parametrize("s", [0.8, 1.1, 1.5])
def test_probit_scale_lambda_is_constant(s):
    for x in (0.0, 0.2, 0.9):
        assert rdu_lambda(ProbitScaleDistortion(s), x) == pytest.approx(1 / s**2, rel=1e-12)


def test_probit_scale_approaches_identity():
    gaps = [abs(rdu_lambda(ProbitScaleDistortion(1 + h), 0.3) - 1.0) for h in (0.1, 0.01, 0.001)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 3e-3


def test_identity_lambda_at_zero():
    assert rdu_lambda(IdentityDistortion(), 0.0) == pytest.approx(1.0, abs=1e-15)


def test_power_distortion_candidate_degenerates(merton):
    cand = solve_rdu_candidate(RankDependent(-0.5, PowerDistortion(0.9)), merton)
    assert np.allclose(cand.Lambda, 0.0)
    assert np.allclose(cand.lam, 0.0)
