import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lawdep.market import Lattice
from lawdep.qbsde import (
    AdaptedStrategy,
    QbsdeDivergence,
    admissible,
    bmo_norm,
    build_coefficients,
    closed_form_entries,
    constructive_entries,
    decouple,
    deterministic_Ybar,
    extract_strategy,
    foc_residual_wu,
    recursion_residual,
    restart_check,
    solve_picard,
    v_theta,
)

G, R = -0.5, 0.25
KAPPA, SIGMA = 0.4, 0.2


@pytest.fixture(scope="module")
def coeffs():
    return build_coefficients(G, R)


@pytest.fixture(scope="module")
def random_solve(coeffs):
    lat = Lattice.build(200, 1.0, KAPPA, eta=0.02, s=1.0, sigma=SIGMA)
    return lat, solve_picard(coeffs, lat)


# --- coefficients ------------------------------------------------------------------


def test_b_values(coeffs):
    d = (R - 2 * G) ** 2
    assert coeffs.b[0] == pytest.approx(G * (2 * R - 3 * G - 1) / d, abs=1e-15)
    assert coeffs.b[1] == pytest.approx((1 - R + G) * (R - 3 * G) / d, abs=1e-15)


def test_determinants(coeffs):
    assert np.linalg.det(coeffs.P) == pytest.approx(R - 2 * G, abs=1e-15)
    assert np.linalg.det(coeffs.c) == pytest.approx(-0.32, abs=1e-14)


def test_gamma_zero_reduces_first_equation():
    co = constructive_entries(0.0, 0.4)
    assert np.allclose(co["C1"], np.diag([1.0, 0.0]), atol=1e-15)
    assert co["b"][0] == 0.0
    assert np.allclose(co["c"][:, 0], 0.0, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(g=st.floats(-0.95, -0.01), frac=st.floats(0.02, 0.98))
def test_closed_form_equals_constructive(g, frac):
    r = g + frac
    if not admissible(g, r):
        return
    cf, ct = closed_form_entries(g, r), constructive_entries(g, r)
    for k in ("C1", "C2", "c", "b"):
        assert np.allclose(cf[k], ct[k], atol=1e-11), k
    assert np.linalg.det(ct["c"]) < 0


def test_inadmissible_parameters_rejected():
    with pytest.raises(ValueError):
        build_coefficients(0.2, 0.5)
    with pytest.raises(ValueError):
        build_coefficients(-0.5, 0.6)


def test_decoupling_diagonalises_c(coeffs):
    mu, U = decouple(coeffs)
    assert np.allclose(coeffs.c @ U, U * mu, atol=1e-14)


# --- deterministic collapse ----------------------------------------------------------


def test_deterministic_collapse(coeffs):
    lat = Lattice.build(512, 1.0, KAPPA, eta=0.0, sigma=SIGMA)
    sol = solve_picard(coeffs, lat)
    assert sol.iterations <= 2
    assert sol.sup_Z() < 1e-12
    ref = deterministic_Ybar(coeffs, lat)
    tail = KAPPA**2 * (1 - np.arange(513) / 512)
    assert np.allclose(ref, 0.5 * np.outer(tail, coeffs.b), atol=1e-15)
    assert max(np.abs(y - ref[n]).max() for n, y in enumerate(sol.Ybar)) < 1e-10
    st_ = extract_strategy(coeffs, lat, sol)
    assert all(np.allclose(p, 1.6, atol=1e-12) for p in st_.levels)
    assert foc_residual_wu(coeffs, lat, st_) < 1e-10


def test_zero_kappa_gives_zero_solution(coeffs):
    lat = Lattice.build(32, 1.0, 0.0, sigma=SIGMA)
    sol = solve_picard(coeffs, lat)
    assert all(np.all(y == 0) for y in sol.Ybar)
    assert sol.sup_Z() == 0.0
    zero = AdaptedStrategy([np.zeros(n + 1) for n in range(32)], SIGMA)
    assert foc_residual_wu(coeffs, lat, zero) == 0.0


def test_gamma_zero_is_merton_with_relative_risk_aversion_rho():
    co = build_coefficients(0.0, 0.6)
    lat = Lattice.build(64, 1.0, KAPPA, sigma=SIGMA)
    st_ = extract_strategy(co, lat, solve_picard(co, lat))
    assert all(np.allclose(p, KAPPA / (SIGMA * 0.6), atol=1e-12) for p in st_.levels)


# --- random coefficients --------------------------------------------------------------


def test_v_theta_small_for_small_eta(random_solve):
    lat, sol = random_solve
    assert 0 < v_theta(lat) <= 0.01
    assert v_theta(Lattice.build(50, 1.0, KAPPA, eta=0.0)) == 0.0


def test_contraction(random_solve):
    _, sol = random_solve
    h = np.asarray(sol.contraction_history)
    assert sol.converged
    assert np.all(h[1:] / h[:-1] < 0.9)
    assert sol.iterations <= 30


def test_fixed_point_satisfies_recursion(coeffs, random_solve):
    lat, sol = random_solve
    assert recursion_residual(coeffs, lat, sol) < 1e-12


def test_restarts_reach_same_fixed_point(coeffs, random_solve):
    lat, sol = random_solve
    assert restart_check(coeffs, lat, sol, n_restarts=3, seed=1) < 1e-9


def test_strategy_close_to_frozen_kappa_rule(coeffs, random_solve):
    lat, sol = random_solve
    st_ = extract_strategy(coeffs, lat, sol)
    dev = max(np.abs(p - k / (SIGMA * coeffs.denom)).max() for p, k in zip(st_.levels, lat.kappa))
    assert 0 < dev <= np.abs(coeffs.lam).sum() * sol.sup_Z() / (SIGMA * coeffs.denom) + 1e-15


def test_first_order_condition_halves_with_grid(coeffs):
    res = []
    for N in (100, 200):
        lat = Lattice.build(N, 1.0, KAPPA, eta=0.02, sigma=SIGMA)
        res.append(foc_residual_wu(coeffs, lat, extract_strategy(coeffs, lat, solve_picard(coeffs, lat))))
    assert 1.7 < res[0] / res[1] < 2.3


def test_shifted_strategy_has_large_residual(coeffs):
    lat = Lattice.build(100, 1.0, KAPPA, eta=0.0, sigma=SIGMA)
    st_ = extract_strategy(coeffs, lat, solve_picard(coeffs, lat)).shifted(0.1)
    assert foc_residual_wu(coeffs, lat, st_) >= 0.1 * SIGMA * (1 - 5 * lat.dt)


def test_threshold_triggers_divergence(coeffs):
    lat = Lattice.build(50, 1.0, KAPPA, eta=0.5, sigma=SIGMA)
    with pytest.raises(QbsdeDivergence) as info:
        solve_picard(coeffs, lat, v_threshold=1e-4)
    assert info.value.V_theta > 1e-4


def test_bmo_norm_of_constant_field():
    # |Z|^2 = 0.5 over unit time
    levels = [np.full((n + 1, 2), 0.5) for n in range(10)]
    assert bmo_norm(levels, 0.1) == pytest.approx(np.sqrt(0.5), rel=1e-14)


def test_csv_round_trip(tmp_path, coeffs, random_solve):
    lat, sol = random_solve
    st_ = extract_strategy(coeffs, lat, sol)
    f = tmp_path / "pi.csv"
    st_.to_csv(f)
    back = AdaptedStrategy.from_csv(f, SIGMA)
    assert all(np.array_equal(a, b) for a, b in zip(st_.levels, back.levels))
    g = tmp_path / "nodes.csv"
    sol.to_csv(g)
    assert g.read_text().splitlines()[0] == "level,node_index,Ybar1,Ybar2,Zbar1,Zbar2"
