"""The twelve acceptance checks, each returning a :class:`CriterionResult`.

Every check is deterministic (fixed seeds) and enforces its own wall-clock
budget in addition to the numerical tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .closedform import (
    CertaintyFunctions,
    solve_equilibrium_cara,
    solve_equilibrium_crra,
    solve_equilibrium_mv,
    solve_rdu_candidate,
)
from .laws import Law
from .market import Lattice, MarketModel, StrategyCurve
from .preferences import (
    ExpectedUtility,
    MeanVariance,
    MixedCARA,
    MixedCRRA,
    RankDependent,
    WeightedUtility,
    certificate_slack,
    check_gradient_fd,
)
from .qbsde import (
    admissible,
    build_coefficients,
    closed_form_entries,
    constructive_entries,
    extract_strategy,
    foc_residual_wu,
    restart_check,
    solve_picard,
)
from .verify import VIOLATED, CONSISTENT, perturbation_test, phi_basket

KAPPA, SIGMA = 0.4, 0.2
INTERIOR_T = (0.1, 0.3, 0.5, 0.7, 0.9)


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    runtime: float
    budget: float

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.number:2d} {self.name}: {self.detail} ({self.runtime:.3f}s / {self.budget:g}s)"

    def as_dict(self) -> dict:
        return {
            "number": self.number,
            "name": self.name,
            "passed": self.passed,
            "detail": self.detail,
            "runtime": self.runtime,
            "budget": self.budget,
        }


def _timed(number: int, name: str, budget: float, body) -> CriterionResult:
    t0 = time.perf_counter()
    ok, detail = body()
    dt = time.perf_counter() - t0
    if ok and dt >= budget:
        ok, detail = False, detail + "; over time budget"
    return CriterionResult(number, name, bool(ok), detail, dt, budget)


def merton_market(n_steps: int = 256) -> MarketModel:
    return MarketModel.constant([KAPPA * SIGMA], [[SIGMA]], T=1.0, n_steps=n_steps)


def varying_market(n_steps: int = 256) -> MarketModel:
    return MarketModel.from_functions(
        lambda t: np.array([0.05 + 0.04 * t]), lambda t: np.array([[0.2 + 0.05 * np.sin(3 * t)]]), T=1.0, n_steps=n_steps
    )


def _strategy_gap(sol, target_fn, model) -> float:
    probe = np.linspace(0.0, model.T, 97)
    gap_grid = np.abs(sol.pi_grid[:, 0] - target_fn(model.times)).max()
    gap_probe = np.abs(sol.strategy(probe)[:, 0] - target_fn(probe)).max()
    return float(max(gap_grid, gap_probe))


# ---------------------------------------------------------------------------


def criterion_1() -> CriterionResult:
    def body():
        m = merton_market()
        worst = 0.0
        for g in (-1.0, -0.5, 0.0, 0.5):
            sol = solve_equilibrium_crra(MixedCRRA([g]), m)
            worst = max(worst, _strategy_gap(sol, lambda t: np.full_like(np.asarray(t, float), KAPPA / (SIGMA * (1 - g))), m))
        return worst < 1e-8, f"max |pi - kappa/(sigma(1-gamma))| = {worst:.2e}"

    return _timed(1, "Merton CRRA recovery", 1.0, body)


def criterion_2() -> CriterionResult:
    def body():
        m = merton_market()
        worst = 0.0
        for r in (0.5, 1.0, 2.0):
            sol = solve_equilibrium_cara(MixedCARA([r]), m)
            worst = max(worst, _strategy_gap(sol, lambda t: np.full_like(np.asarray(t, float), KAPPA / (SIGMA * r)), m))
        return worst < 1e-8, f"max |pi - kappa/(sigma rho)| = {worst:.2e}"

    return _timed(2, "Merton CARA recovery", 1.0, body)


def criterion_3(seed: int = 3) -> CriterionResult:
    def body():
        rng = np.random.default_rng(seed)
        m = varying_market()
        worst = 0.0
        for _ in range(5):
            g = rng.uniform(-4.0, 0.9, 2)
            w0 = rng.uniform(0.1, 0.9)
            sol = solve_equilibrium_crra(MixedCRRA(g, [w0, 1 - w0]), m)
            worst = max(worst, sol.ode_gap)
        return worst < 1e-8, f"max |A_rk4 - Gcal^-1(tail)| = {worst:.2e}"

    return _timed(3, "ODE / closed-form equivalence", 5.0, body)


def criterion_4(seed: int = 4) -> CriterionResult:
    def body():
        rng = np.random.default_rng(seed)
        eps0 = 0.05
        lo, hi = eps0 / (1 + eps0), 1 / eps0
        ys = np.linspace(0.0, 3.0, 20)
        target = float(merton_market().tail_kappa2(0.0)[0])
        worst_lo, worst_hi, feasible = np.inf, -np.inf, True
        for _ in range(100):
            k = int(rng.integers(1, 5))
            g = rng.uniform(-1 / eps0 + 1e-3, 1 - eps0 - 1e-3, k)
            w = rng.dirichlet(np.ones(k))
            cf = CertaintyFunctions(MixedCRRA(g, w, eps0))
            G = np.asarray(cf.G_exact(ys))
            worst_lo, worst_hi = min(worst_lo, G.min()), max(worst_hi, G.max())
            rec = cf.feasibility(target)
            feasible &= rec.feasible and rec.bounded_G
        ok = lo <= worst_lo and worst_hi <= hi and feasible
        return ok, f"G range [{worst_lo:.4g}, {worst_hi:.4g}] within [{lo:.4g}, {hi:.4g}], feasibility auto-satisfied={feasible}"

    return _timed(4, "Mixed-CRRA G bounds", 5.0, body)


def wu_grid(n: int = 10) -> list[tuple[float, float]]:
    out = []
    for g in np.linspace(-0.9, -0.05, n):
        for r in np.linspace(g + 0.05, g + 0.95, n):
            if admissible(g, r):
                out.append((float(g), float(r)))
    return out


def criterion_5() -> CriterionResult:
    def body():
        gap, det_gap, det_c = 0.0, 0.0, -np.inf
        grid = wu_grid()
        for g, r in grid:
            cf, ct = closed_form_entries(g, r), constructive_entries(g, r)
            for k in ("C1", "C2", "c", "b"):
                gap = max(gap, float(np.abs(cf[k] - ct[k]).max()))
            det_gap = max(det_gap, abs(np.linalg.det(ct["P"]) - (r - 2 * g)))
            det_c = max(det_c, float(np.linalg.det(ct["c"])))
        ok = len(grid) == 100 and gap < 1e-12 and det_gap < 1e-12 and det_c < 0
        return ok, f"{len(grid)} points, entry gap {gap:.2e}, |det P - (rho-2gamma)| {det_gap:.2e}, max det c {det_c:.3g}"

    return _timed(5, "Weighted-utility coefficient identities", 1.0, body)


def criterion_6() -> CriterionResult:
    def body():
        g, r = -0.5, 0.25
        co = build_coefficients(g, r)
        lat = Lattice.build(512, 1.0, KAPPA, eta=0.0, sigma=SIGMA)
        sol = solve_picard(co, lat)
        zmax = sol.sup_Z()
        tail = KAPPA**2 * (1.0 - np.arange(lat.N + 1) * lat.dt)
        ygap = max(float(np.abs(y - 0.5 * co.b * tail[n]).max()) for n, y in enumerate(sol.Ybar))
        st = extract_strategy(co, lat, sol)
        sgap = max(float(np.abs(p - KAPPA / (SIGMA * (r - 2 * g))).max()) for p in st.levels)
        ok = zmax < 1e-12 and ygap < 1e-10 and sgap < 1e-9
        return ok, f"|Z| {zmax:.1e}, Ybar gap {ygap:.1e}, strategy gap {sgap:.1e}, iterations {sol.iterations}"

    return _timed(6, "QBSDE deterministic collapse", 2.0, body)


def criterion_7() -> CriterionResult:
    def body():
        co = build_coefficients(-0.5, 0.25)
        lat = Lattice.build(200, 1.0, KAPPA, eta=0.02, s=1.0, sigma=SIGMA)
        sol = solve_picard(co, lat, tol=1e-12, max_iter=30)
        h = np.asarray(sol.contraction_history)
        ratios = h[1:] / h[:-1] if h.size > 1 else np.array([0.0])
        gap = restart_check(co, lat, sol, n_restarts=3, size=1e-2, seed=7)
        ok = sol.V_theta <= 0.01 and sol.converged and h[-1] < 1e-10 and np.all(ratios < 0.9) and gap < 1e-9
        return ok, (
            f"V(Theta) {sol.V_theta:.4g}, {sol.iterations} iterations, max ratio {ratios.max():.3g}, "
            f"last step {h[-1]:.1e}, restart gap {gap:.1e}"
        )

    return _timed(7, "QBSDE contraction", 30.0, body)


def criterion_8() -> CriterionResult:
    def body():
        co = build_coefficients(-0.5, 0.25)
        res, kmax = [], 0.0
        for N in (200, 400):
            lat = Lattice.build(N, 1.0, KAPPA, eta=0.02, s=1.0, sigma=SIGMA)
            sol = solve_picard(co, lat)
            res.append(foc_residual_wu(co, lat, extract_strategy(co, lat, sol)))
            kmax = max(kmax, lat.sup_kappa)
        ratio = res[0] / res[1]
        ok = res[0] < 5e-3 * kmax and 1.7 <= ratio <= 2.3
        return ok, f"residual N=200 {res[0]:.3e} (bound {5e-3 * kmax:.1e}), N=400 {res[1]:.3e}, ratio {ratio:.3f}"

    return _timed(8, "WU first-order condition on the lattice", 60.0, body)


def criterion_9() -> CriterionResult:
    def body():
        m = merton_market()
        cases = [(MixedCRRA([g]), solve_equilibrium_crra, KAPPA / (SIGMA * (1 - g + 0.5)), "proportion") for g in (-1.0, -0.5, 0.0, 0.5)]
        cases += [(MixedCARA([r]), solve_equilibrium_cara, KAPPA / (SIGMA * (r + 0.5)), "dollar") for r in (0.5, 1.0, 2.0)]
        worst, n_tests, detected = -np.inf, 0, 0
        for pref, solver, detuned, mode in cases:
            strat = solver(pref, m).strategy
            for t in INTERIOR_T:
                for phi in phi_basket(1):
                    rep = perturbation_test(pref, m, strat, t, phi)
                    n_tests += 1
                    if rep.verdict != CONSISTENT:
                        return False, f"equilibrium flagged {rep.verdict} at t={t}, phi={phi}"
                    worst = max(worst, rep.extrapolated_limit)
            bad = StrategyCurve.constant([detuned], mode)
            if any(perturbation_test(pref, m, bad, 0.5, phi).verdict == VIOLATED for phi in phi_basket(1)):
                detected += 1
        ok = worst <= 1e-6 and detected == len(cases)
        return ok, f"{n_tests} tests, max extrapolated gain {worst:.2e}, detuned flagged {detected}/{len(cases)}"

    return _timed(9, "Perturbation certification", 10.0, body)


def _random_pair(rng, positive: bool):
    n0, n1 = rng.integers(2, 7, 2)
    if positive:
        p0, p1 = rng.uniform(0.5, 2.0, n0), rng.uniform(0.5, 2.0, n1)
    else:
        p0, p1 = rng.normal(0.0, 1.0, n0), rng.normal(0.0, 1.0, n1)
    return Law.discrete(p0, rng.dirichlet(np.ones(n0))), Law.discrete(p1, rng.dirichlet(np.ones(n1)))


def derivative_families():
    return [
        MixedCRRA([-2.0, 0.3], [0.4, 0.6]),
        MixedCARA([0.5, 2.0], [0.7, 0.3]),
        WeightedUtility(-0.5, 0.25),
        MeanVariance(1.5),
        ExpectedUtility(-1.0),
        RankDependent(-0.5),
    ]


def criterion_10(seed: int = 10) -> CriterionResult:
    def body():
        rng = np.random.default_rng(seed)
        fd_err, slack = 0.0, np.inf
        for pref in derivative_families():
            pos = pref.support == "positive"
            for _ in range(50):
                fd_err = max(fd_err, check_gradient_fd(pref, *_random_pair(rng, pos), grid=5))
            if pref.has_certificate:
                for _ in range(200):
                    slack = min(slack, certificate_slack(pref, *_random_pair(rng, pos)))
        ok = fd_err < 1e-6 and slack >= -1e-9
        return ok, f"max finite-difference error {fd_err:.2e}, min certificate slack {slack:.2e}"

    return _timed(10, "Derivative engine", 20.0, body)


def criterion_11() -> CriterionResult:
    def body():
        m = varying_market()
        cand = solve_rdu_candidate(RankDependent(-0.5), m)
        lam_gap = float(np.abs(cand.lam - 1.0).max())
        L_gap = float(np.abs(cand.Lambda - m.tail_kappa2(m.times)).max())
        return lam_gap < 1e-9 and L_gap < 1e-8, f"max |lambda - 1| {lam_gap:.1e}, max |Lambda - tail kappa^2| {L_gap:.1e}"

    return _timed(11, "RDU identity-distortion collapse", 1.0, body)


def criterion_12() -> CriterionResult:
    def body():
        gmv = 2.0
        m = varying_market()
        sol = solve_equilibrium_mv(gmv, m)
        gap = _strategy_gap(sol, lambda t: m.kappa_at(t)[:, 0] / (gmv * m.sigma_at(t)[:, 0, 0]), m)
        pref = MeanVariance(gmv)
        slope, worst = np.inf, -np.inf
        for t in INTERIOR_T:
            for phi in phi_basket(1):
                rep = perturbation_test(pref, m, sol.strategy, t, phi)
                if rep.verdict != CONSISTENT:
                    return False, f"flagged {rep.verdict} at t={t}"
                worst = max(worst, rep.extrapolated_limit)
                slope = min(slope, float(np.polyfit(np.log(rep.eps_grid), np.log(rep.m0), 1)[0]))
        ok = gap < 1e-10 and worst <= 1e-6 and slope >= 1.9
        return ok, f"strategy gap {gap:.1e}, max extrapolated gain {worst:.1e}, min M0 slope {slope:.3f}"

    return _timed(12, "Mean-variance recovery", 5.0, body)


CRITERIA = (
    criterion_1,
    criterion_2,
    criterion_3,
    criterion_4,
    criterion_5,
    criterion_6,
    criterion_7,
    criterion_8,
    criterion_9,
    criterion_10,
    criterion_11,
    criterion_12,
)


def run_all(verbose: bool = False) -> list[CriterionResult]:
    out = []
    for fn in CRITERIA:
        res = fn()
        if verbose:
            print(res.line(), flush=True)
        out.append(res)
    return out
