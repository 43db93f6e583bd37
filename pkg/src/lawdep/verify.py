"""Equilibrium checks: first-order residuals, adjoint processes and perturbation tests.

A perturbation test compares g of the conditional terminal law under a
strategy with g under the strategy bumped by ``phi`` on [t, t + eps).  For
an equilibrium the gain (g_bumped - g_base) / eps must have a
non-positive limit as eps -> 0; the limit is estimated by two-point
Richardson extrapolation over a shrinking eps grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .closedform import CertaintyFunctions
from .laws import DEFAULT_ORDER, Law, gauss_hermite
from .market import (
    Lattice,
    MarketModel,
    StrategyCurve,
    conditional_terminal_law,
    exposure,
    integrate,
    normals,
    perturb,
    simulate_dollar,
    simulate_proportion,
    tail_on_grid,
)
from .preferences import CRRABetweenness, MixedCARA, Preference
from .qbsde import AdaptedStrategy, WuCoefficients, log_moments

CONSISTENT = "equilibrium_consistent"
VIOLATED = "violated"
INCONCLUSIVE = "inconclusive"


# ---------------------------------------------------------------------------
# first-order residuals


@dataclass(frozen=True, eq=False)
class ResidualCurve:
    times: np.ndarray
    residual: np.ndarray  # (N+1, d)
    A: np.ndarray

    @property
    def sup(self) -> float:
        return float(np.abs(self.residual).max())


def _foc_residual(pref, model: MarketModel, strategy: StrategyCurve, order: int) -> ResidualCurve:
    cf = CertaintyFunctions(pref, order)
    A = tail_on_grid(lambda s: (exposure(model, strategy, s) ** 2).sum(-1), model.times, strategy.all_breaks)
    A[-1] = 0.0
    a = exposure(model, strategy, model.times)
    G = np.asarray(cf.G_exact(A))
    return ResidualCurve(model.times, a - model.kappa_at(model.times) * G[:, None], A)


def foc_residual_crra(pref, model: MarketModel, strategy: StrategyCurve, order: int = DEFAULT_ORDER) -> ResidualCurve:
    """r(t) = a_t - kappa(t) G(A(t)) with A(t) = int_t^T |sigma^T pi|^2, proportion mode."""
    if not isinstance(pref, CRRABetweenness):
        raise TypeError("needs a CRRA-form betweenness preference")
    if strategy.mode != "proportion":
        raise ValueError("CRRA residuals need a proportion strategy")
    return _foc_residual(pref, model, strategy, order)


def foc_residual_cara(pref, model: MarketModel, strategy: StrategyCurve, order: int = DEFAULT_ORDER) -> ResidualCurve:
    """Dollar-mode analogue of :func:`foc_residual_crra`."""
    if not isinstance(pref, MixedCARA):
        raise TypeError("needs a CARA mixture")
    if strategy.mode != "dollar":
        raise ValueError("CARA residuals need a dollar strategy")
    return _foc_residual(pref, model, strategy, order)


# ---------------------------------------------------------------------------
# adjoint processes in the lognormal case


@dataclass(eq=False)
class AdjointProcesses:
    """p^t(s, y) and q^t(s, y), where y is the realised int_t^s a dW.

    Wealth is normalised to X_t = 1.
    """

    t: float
    p: Callable[[float, float], float]
    p_y: Callable[[float, float], float]
    q: Callable[[float, float], np.ndarray]
    xi: Callable[[float], float]
    exposure: Callable[[float], np.ndarray]
    kappa: Callable[[float], np.ndarray]
    theta: Callable[[float], np.ndarray]
    sigma: Callable[[float], np.ndarray]

    def foc(self) -> np.ndarray:
        """theta p + sigma q on the diagonal s = t, y = 0."""
        s = self.t
        return self.theta(s) * self.p(s, 0.0) + self.sigma(s) @ self.q(s, 0.0)

    def bsde_residual(self, s: float, y: float, hs: float = 1e-4, hy: float = 1e-3) -> float:
        """Drift residual P_s + |a|^2 (P_yy / 2 + P_y) + a.kappa P by fourth-order differences."""
        P = self.p
        ps = (-P(s + 2 * hs, y) + 8 * P(s + hs, y) - 8 * P(s - hs, y) + P(s - 2 * hs, y)) / (12 * hs)
        yy = [P(s, y + k * hy) for k in (-2, -1, 0, 1, 2)]
        pyy = (-yy[0] + 16 * yy[1] - 30 * yy[2] + 16 * yy[3] - yy[4]) / (12 * hy * hy)
        a = self.exposure(s)
        k = self.kappa(s)
        return float(ps + (a @ a) * (0.5 * pyy + self.p_y(s, y)) + (a @ k) * yy[2])


def adjoint_processes(pref, model: MarketModel, strategy: StrategyCurve, t: float, order: int = DEFAULT_ORDER) -> AdjointProcesses:
    """Closed-form adjoint pair for a deterministic proportion strategy."""
    if not isinstance(pref, CRRABetweenness):
        raise TypeError("needs a CRRA-form betweenness preference")
    rule = gauss_hermite(order)
    xi_n, w = rule.nodes, rule.weights
    breaks = strategy.all_breaks

    def a_of(s):
        return exposure(model, strategy, s)[0]

    def I_A(s):
        f = lambda u: np.stack([(exposure(model, strategy, u) * model.kappa_at(u)).sum(-1), (exposure(model, strategy, u) ** 2).sum(-1)], -1)
        v = integrate(f, s, model.T, model.times, breaks)
        return float(v[0]), max(float(v[1]), 0.0)

    _, At = I_A(t)
    cf = CertaintyFunctions(pref, order)
    Ht = float(cf.eval_H_exact(At)) if hasattr(pref, "gammas") else float(cf.eval_H(At))
    Rt = np.exp(math.sqrt(At) * xi_n)
    K = Ht / float(w @ (Rt * pref.dF(Rt / Ht)))

    def P(s, y):
        I, A = I_A(s)
        R = np.exp(math.sqrt(A) * xi_n)
        return K * math.exp(I - 0.5 * A) * float(w @ (R * pref.dF(R * math.exp(y) / Ht)))

    def Py(s, y):
        I, A = I_A(s)
        R = np.exp(math.sqrt(A) * xi_n)
        u = R * math.exp(y) / Ht
        return K * math.exp(I - 0.5 * A) * float(w @ (R * pref.d2F(u) * u))

    def q(s, y):
        return Py(s, y) * a_of(s)

    def xi(y):
        return K * float(pref.dF(np.array([math.exp(y) / Ht]))[0])

    return AdjointProcesses(
        t, P, Py, q, xi, a_of,
        lambda s: model.kappa_at(s)[0],
        lambda s: model.theta_at(s)[0],
        lambda s: model.sigma_at(s)[0],
    )


# ---------------------------------------------------------------------------
# perturbation reports


@dataclass(eq=False)
class PerturbationReport:
    t: float
    phi: np.ndarray
    eps_grid: np.ndarray
    gain: np.ndarray
    std_err: np.ndarray
    extrapolated_limit: float
    richardson_residual: float
    verdict: str
    tol_gain: float
    mode: str = "analytic"
    m0: np.ndarray | None = None
    m1: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def rows(self):
        phi = ";".join(f"{v:.17g}" for v in np.atleast_1d(self.phi))
        for e, g, s in zip(self.eps_grid, self.gain, self.std_err):
            yield (self.t, phi, e, g, s)

    def summary(self) -> dict:
        return {
            "t": self.t,
            "phi": [float(v) for v in np.atleast_1d(self.phi)],
            "extrapolated_limit": self.extrapolated_limit,
            "richardson_residual": self.richardson_residual,
            "tol_gain": self.tol_gain,
            "verdict": self.verdict,
            "mode": self.mode,
        }


def write_reports_csv(reports, path) -> None:
    with open(path, "w") as fh:
        fh.write("t,phi,eps,gain,std_err\n")
        for rep in reports:
            for t, phi, e, g, s in rep.rows():
                fh.write(f"{t:.17g},{phi},{e:.17g},{g:.17g},{s:.17g}\n")


def richardson(eps: np.ndarray, gain: np.ndarray, std_err: np.ndarray | None = None) -> tuple[float, float]:
    """Linear extrapolation to eps = 0 from the two smallest windows.

    Also returns the linearity defect at the third-smallest window, relative
    to the largest gain in magnitude (0 when all gains vanish).  With
    ``std_err`` the part of the defect within three standard errors of
    sampling noise is discounted.
    """
    e1, e2 = eps[-2], eps[-1]
    g1, g2 = gain[..., -2], gain[..., -1]
    L = (e1 * g2 - e2 * g1) / (e1 - e2)
    if eps.size < 3:
        return L, 0.0
    slope = (g1 - g2) / (e1 - e2)
    pred = L + slope * eps[-3]
    defect = np.abs(pred - gain[..., -3])
    if std_err is not None:
        c1, c2 = (eps[-3] - e2) / (e1 - e2), (e1 - eps[-3]) / (e1 - e2)
        noise = np.sqrt((c1 * std_err[..., -2]) ** 2 + (c2 * std_err[..., -1]) ** 2 + std_err[..., -3] ** 2)
        defect = np.maximum(defect - 3.0 * noise, 0.0)
    scale_ = np.max(np.abs(gain), axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        res = np.where(scale_ > 0, defect / scale_, 0.0)
    return L, res


def _verdict(limit: float, residual: float, tol: float) -> str:
    if limit > tol:
        return VIOLATED
    if abs(limit) <= tol and residual > 0.5:
        return INCONCLUSIVE
    return CONSISTENT


def default_eps_grid(t: float, T: float) -> np.ndarray:
    return (T - t) * 2.0 ** -np.arange(3, 9)


def perturbation_test(
    pref: Preference,
    model: MarketModel,
    strategy: StrategyCurve,
    t: float,
    phi,
    eps_grid=None,
    mode: str = "analytic",
    paths: int = 20000,
    seed: int = 0,
    tol_gain: float | None = None,
    x_t: float = 1.0,
) -> PerturbationReport:
    """Type-I perturbation test at time t along direction phi."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if eps_grid is None:
        eps_grid = default_eps_grid(t, model.T)
    eps = np.asarray(eps_grid, dtype=float)
    if mode == "mc":
        t = float(model.times[int(round(t / model.dt))])  # simulation windows start on the grid
        steps = np.unique(np.maximum(1, np.round(eps / model.dt).astype(int)))[::-1]
        eps = steps * model.dt
    if np.any(np.diff(eps) >= 0):
        raise ValueError("eps grid must be strictly decreasing")
    if t + eps[0] > model.T * (1 + 1e-12):
        raise ValueError("perturbation window exceeds the horizon")

    if mode == "analytic":
        base = conditional_terminal_law(model, strategy, t, x_t)
        gb = pref.evaluate(base)
        gains, m0, m1 = [], [], []
        for e in eps:
            law = conditional_terminal_law(model, perturb(strategy, t, e, phi, model.T), t, x_t)
            gains.append((pref.evaluate(law) - gb) / e)
            if pref.has_certificate:
                c = pref.certificate(base, law)
                m0.append(c.m0)
                m1.append(c.m1)
        gains = np.array(gains)
        se = np.zeros_like(gains)
        L, res = richardson(eps, gains)
        tol = 1e-6 if tol_gain is None else tol_gain
        return PerturbationReport(
            t, phi, eps, gains, se, float(L), float(res), _verdict(L, res, tol), tol, mode,
            np.array(m0) if m0 else None, np.array(m1) if m1 else None,
        )

    if mode != "mc":
        raise ValueError("mode must be 'analytic' or 'mc'")
    ti = model.index_of(t)
    dW = math.sqrt(model.dt) * normals(seed, paths, model.n_steps, model.d, antithetic=True)[:, ti:, :]
    sim = simulate_proportion if strategy.mode == "proportion" else simulate_dollar
    Xb = sim(model, strategy, x_t, paths, seed, t_index=ti, dW=dW, keep_paths=False).terminal
    law_b = Law.discrete(Xb, support=None)
    gb = pref.evaluate(law_b)
    half = paths // 2
    gains, ses = [], []
    for k, e in zip(steps, eps):
        Xp = sim(model, perturb(strategy, t, e, phi, model.T), x_t, paths, seed, t_index=ti, dW=dW, keep_paths=False).terminal
        law_p = Law.discrete(Xp, support=None)
        gains.append((pref.evaluate(law_p) - gb) / e)
        psi = pref.grad(law_p, Xp) - pref.grad(law_b, Xb)
        pairs = 0.5 * (psi[:half] + psi[half : 2 * half])
        ses.append(float(np.std(pairs, ddof=1) / math.sqrt(half) / e))
    gains, ses = np.array(gains), np.array(ses)
    L, res = richardson(eps, gains, ses)
    e1, e2 = eps[-2], eps[-1]
    se_L = math.hypot(e1 * ses[-1], e2 * ses[-2]) / (e1 - e2)
    tol = 3.0 * se_L if tol_gain is None else tol_gain
    return PerturbationReport(t, phi, eps, gains, ses, float(L), float(res), _verdict(L, res, tol), tol, mode, extras={"se_limit": se_L})


def phi_basket(d: int, scale: float = 0.05) -> list[np.ndarray]:
    """{+h e_j, -h e_j, +2h e_j, -2h e_j} for each coordinate j."""
    out = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        out += [scale * e, -scale * e, 2 * scale * e, -2 * scale * e]
    return out


def certify(pref, model, strategy, t_points, scale: float = 0.05, **kw) -> list[PerturbationReport]:
    """Run the perturbation test over the basket at each t."""
    return [perturbation_test(pref, model, strategy, t, phi, **kw) for t in t_points for phi in phi_basket(model.d, scale)]


# ---------------------------------------------------------------------------
# Type-II test on the lattice


def perturbation_test_wu_lattice(
    coeffs: WuCoefficients,
    lattice: Lattice,
    strategy: AdaptedStrategy,
    t_level: int,
    phi: float,
    eps_steps_grid=None,
    tol_gain: float = 1e-6,
) -> PerturbationReport:
    """Node-wise conditional gains of the weighted utility at level ``t_level``.

    Wealth at each node is normalised to one; the report holds the maximum
    over nodes.
    """
    remaining = lattice.N - t_level
    if eps_steps_grid is None:
        eps_steps_grid = np.unique(np.maximum(1, np.round(remaining * 2.0 ** -np.arange(3, 9)).astype(int)))[::-1]
    steps = np.asarray(eps_steps_grid, dtype=int)
    if np.any(np.diff(steps) >= 0):
        raise ValueError("eps grid must be strictly decreasing")
    if t_level < 0 or t_level + steps[0] > lattice.N:
        raise ValueError("perturbation window overflows the lattice")
    one_m_rho = 1.0 - coeffs.rho

    def g_at_level(strat):
        yb, _ = log_moments(coeffs.r, lattice, strat, start=t_level)
        y = yb[t_level]
        return np.exp(y[:, 1] - y[:, 0]) / one_m_rho

    gb = g_at_level(strategy)
    eps = steps * lattice.dt
    node_gains = np.array([(g_at_level(strategy.bumped(t_level, k, phi)) - gb) / e for k, e in zip(steps, eps)]).T
    L_nodes, res_nodes = richardson(eps, node_gains)
    L_nodes = np.atleast_1d(L_nodes)
    worst = int(np.argmax(L_nodes))
    L = float(L_nodes[worst])
    res = float(np.atleast_1d(res_nodes)[worst])
    gains = node_gains.max(axis=0)
    return PerturbationReport(
        t_level * lattice.dt, np.atleast_1d(float(phi)), eps, gains, np.zeros_like(gains), L, res,
        _verdict(L, res, tol_gain), tol_gain, "lattice", extras={"node_limits": L_nodes, "worst_node": worst},
    )
