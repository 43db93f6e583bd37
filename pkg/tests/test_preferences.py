import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lawdep.laws import Law, variance
from lawdep.preferences import (
    Certificate,
    ExpectedUtility,
    IdentityDistortion,
    MeanVariance,
    MixedCARA,
    MixedCRRA,
    PowerDistortion,
    ProbitScaleDistortion,
    RankDependent,
    WeightedUtility,
    certificate_slack,
    check_gradient_fd,
    crra_utility,
    from_spec,
)

POSITIVE_FAMILIES = [
    MixedCRRA([-2.0, 0.3], [0.4, 0.6]),
    WeightedUtility(-0.5, 0.25),
    ExpectedUtility(-1.0),
    RankDependent(-0.5),
    RankDependent(0.0, ProbitScaleDistortion(0.8)),
]
REAL_FAMILIES = [MixedCARA([0.5, 2.0], [0.7, 0.3]), MeanVariance(1.5)]


def _pair(rng, positive):
    n0, n1 = rng.integers(2, 6, 2)
    draw = (lambda n: rng.uniform(0.5, 2.0, n)) if positive else (lambda n: rng.normal(0.0, 1.0, n))
    return Law.discrete(draw(n0), rng.dirichlet(np.ones(n0))), Law.discrete(draw(n1), rng.dirichlet(np.ones(n1)))


# --- certainty equivalents of sure amounts --------------------------------


@pytest.mark.parametrize("pref", POSITIVE_FAMILIES[:1] + REAL_FAMILIES[:1])
@pytest.mark.parametrize("x", [0.7, 1.0, 2.5])
def test_sure_amount_is_its_own_certainty_equivalent(pref, x):
    assert pref.evaluate(Law.dirac(x)) == pytest.approx(x, rel=1e-12)


@pytest.mark.parametrize("pref", POSITIVE_FAMILIES[3:])
@pytest.mark.parametrize("x", [0.7, 2.5])
def test_rank_dependent_value_of_a_sure_amount_is_its_utility(pref, x):
    assert pref.evaluate(Law.dirac(x)) == pytest.approx(crra_utility(x, pref.gamma), rel=1e-12)


def test_mean_variance_of_a_dirac_is_the_amount():
    assert MeanVariance(3.0).evaluate(Law.dirac(-1.25)) == pytest.approx(-1.25)


# --- closed forms -----------------------------------------------------------


def test_mixed_crra_single_atom_on_lognormal():
    # CE of lognormal(m, v) under U_gamma is exp(m + gamma v / 2)
    g = MixedCRRA([-0.5]).evaluate(Law.lognormal(0.0, 0.16))
    assert g == pytest.approx(math.exp(-0.04), rel=1e-13)


def test_mixed_cara_single_atom_on_normal():
    g = MixedCARA([2.0]).evaluate(Law.normal(0.1, 0.09))
    assert g == pytest.approx(0.1 - 0.09, abs=1e-13)


def test_weighted_utility_on_a_dirac():
    wu = WeightedUtility(-0.5, 0.25)
    assert wu.evaluate(Law.dirac(2.0)) == pytest.approx(2**0.75 / 0.75, rel=1e-14)
    assert wu.evaluate(Law.dirac(2.0), scale="ce") == pytest.approx(2.0, rel=1e-13)


def test_weighted_utility_matches_its_betweenness_form():
    wu = WeightedUtility(-0.4, 0.1)
    law = Law.lognormal(0.05, 0.2)
    assert wu.as_betweenness().evaluate(law) == pytest.approx(wu.evaluate(law, scale="ce"), rel=1e-10)


def test_mean_variance_value():
    law = Law.discrete([0.0, 2.0])
    assert MeanVariance(0.5).evaluate(law) == pytest.approx(1.0 - 0.25 * variance(law))


def test_rdu_identity_is_expected_utility():
    law = Law.discrete([0.6, 1.1, 1.9, 1.1], [0.1, 0.2, 0.3, 0.4])
    eu = ExpectedUtility(-0.5).evaluate(law)
    assert RankDependent(-0.5).evaluate(law) == pytest.approx(eu, abs=1e-14)


def test_rdu_rejects_continuous_laws():
    with pytest.raises(ValueError):
        RankDependent(0.0).evaluate(Law.lognormal(0.0, 0.1))


def test_crra_utility_log_limit():
    x = np.array([0.5, 1.0, 3.0])
    assert np.allclose(crra_utility(x, 1e-10), np.log(x), atol=1e-9)


@pytest.mark.parametrize("p", [0.01, 0.3, 0.9])
def test_distortions(p):
    assert IdentityDistortion().w(p) == p
    assert PowerDistortion(0.5).w(p) == pytest.approx(math.sqrt(p))
    assert ProbitScaleDistortion(1.0).w(p) == pytest.approx(p, rel=1e-12)


# --- validation ----------------------------------------------------------------


def test_invalid_parameters_raise():
    with pytest.raises(ValueError):
        MixedCRRA([0.97])  # needs gamma < 1 - eps0
    with pytest.raises(ValueError):
        MixedCRRA([-1.0, 0.0], [0.5, 0.6])
    with pytest.raises(ValueError):
        WeightedUtility(0.2, 0.5)
    with pytest.raises(ValueError):
        MeanVariance(0.0)
    with pytest.raises(ValueError):
        Certificate(0.0, -1.0)


def test_positive_families_reject_nonpositive_support():
    with pytest.raises(ValueError):
        MixedCRRA([-0.5]).evaluate(Law.normal(1.0, 0.1))


def test_from_spec_families():
    assert isinstance(from_spec("mixed_crra", gammas=[-0.5]), MixedCRRA)
    assert isinstance(from_spec("wu", gamma=-0.5, rho=0.25), WeightedUtility)
    assert isinstance(from_spec("mv", gamma=2.0), MeanVariance)
    r = from_spec("rdu", gamma=-0.5, distortion="probit_scale", s=1.1)
    assert isinstance(r.distortion, ProbitScaleDistortion)
    with pytest.raises(ValueError):
        from_spec("prospect")


# --- derivative engine -------------------------------------------------------


@pytest.mark.parametrize("pref", POSITIVE_FAMILIES + REAL_FAMILIES, ids=lambda p: p.family)
def test_gradient_matches_finite_differences(pref):
    rng = np.random.default_rng(11)
    pos = pref.support == "positive"
    worst = max(check_gradient_fd(pref, *_pair(rng, pos), grid=5) for _ in range(8))
    assert worst < 1e-6


@pytest.mark.parametrize("pref", POSITIVE_FAMILIES[:3] + REAL_FAMILIES, ids=lambda p: p.family)
def test_grad_x_is_the_derivative_of_grad(pref):
    rng = np.random.default_rng(5)
    law, _ = _pair(rng, pref.support == "positive")
    x = np.array([0.8, 1.3]) if pref.support == "positive" else np.array([-0.4, 0.9])
    h = 1e-6
    fd = (pref.grad(law, x + h) - pref.grad(law, x - h)) / (2 * h)
    assert np.allclose(pref.grad_x(law, x), fd, atol=1e-7)


def test_rdu_has_no_certificate():
    with pytest.raises(NotImplementedError):
        RankDependent(0.0).certificate(Law.dirac(1.0), Law.dirac(2.0))


def test_mean_variance_certificate_is_quadratic_in_mean_shift():
    c = MeanVariance(2.0).certificate(Law.dirac(1.0), Law.dirac(1.5))
    assert c.m1 == 1.0
    assert c.m0 == pytest.approx(0.25)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), k=st.integers(0, 4))
def test_certificate_inequality_holds(seed, k):
    pref = [POSITIVE_FAMILIES[0], POSITIVE_FAMILIES[1], POSITIVE_FAMILIES[2], REAL_FAMILIES[0], REAL_FAMILIES[1]][k]
    rng = np.random.default_rng(seed)
    law0, law1 = _pair(rng, pref.support == "positive")
    assert pref.certificate(law0, law1).m1 >= 0
    assert certificate_slack(pref, law0, law1) >= -1e-9


@settings(max_examples=40, deadline=None)
@given(x=st.floats(0.2, 5.0), lam=st.floats(0.2, 5.0))
def test_crra_betweenness_is_scale_equivariant(x, lam):
    pref = MixedCRRA([-1.0, 0.4], [0.3, 0.7])
    law = Law.discrete([x, 2 * x], [0.5, 0.5])
    scaled = Law.discrete([lam * x, 2 * lam * x], [0.5, 0.5])
    assert pref.evaluate(scaled) == pytest.approx(lam * pref.evaluate(law), rel=1e-11)


@settings(max_examples=40, deadline=None)
@given(x=st.floats(-3.0, 3.0), c=st.floats(-3.0, 3.0))
def test_cara_betweenness_is_translation_equivariant(x, c):
    pref = MixedCARA([0.5, 2.0], [0.7, 0.3])
    law = Law.discrete([x, x + 1.0])
    moved = Law.discrete([x + c, x + c + 1.0])
    assert pref.evaluate(moved) == pytest.approx(pref.evaluate(law) + c, abs=1e-11)
