"""Law-dependent preference functionals.

Each family exposes the value ``g(mu)``, the measure derivative
``grad(mu, x)``, its x-derivative ``grad_x(mu, x)`` and, where the family
admits one, a ``Certificate`` ``(m0, m1)`` with

    g(mu1) - g(mu0) <= m1 * <grad(mu0, .), mu1 - mu0> + m0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtri

from .laws import (
    POSITIVE,
    Law,
    expect,
    log_mgf,
    log_power_moment,
    mean_log,
    mixture,
    solve_monotone_root,
    variance,
)


@dataclass(frozen=True)
class Certificate:
    m0: float
    m1: float

    def __post_init__(self):
        if not self.m1 >= 0:
            raise ValueError("certificate slope m1 must be non-negative")


def crra_utility(x, gamma: float):
    """U(x) = (x^gamma - 1)/gamma, or log x at gamma = 0."""
    lx = np.log(x)
    if gamma == 0.0:
        return lx
    return np.expm1(gamma * lx) / gamma


class Preference:
    """Common interface. Subclasses set ``family`` and ``support``."""

    family: str = "abstract"
    support: str = "real"
    has_certificate: bool = True

    def check_law(self, law: Law) -> None:
        if self.support == POSITIVE and law.support != POSITIVE:
            raise ValueError(f"{self.family} needs a law on (0, inf)")

    def evaluate(self, law: Law) -> float:
        raise NotImplementedError

    def grad(self, law: Law, x, g: float | None = None):
        raise NotImplementedError

    def grad_x(self, law: Law, x, g: float | None = None):
        raise NotImplementedError

    def certificate(self, law0: Law, law1: Law) -> Certificate:
        raise NotImplementedError(f"{self.family} has no certificate")


# ---------------------------------------------------------------------------
# betweenness, CRRA form: E[F(X/g)] = 0


class CRRABetweenness(Preference):
    """Generic CRRA-form betweenness preference built from F, F', F''."""

    support = POSITIVE

    def __init__(self, F: Callable, dF: Callable, d2F: Callable, name: str = "crra_betweenness"):
        self._F, self._dF, self._d2F = F, dF, d2F
        self.family = name

    def F(self, x):
        return self._F(x)

    def dF(self, x):
        return self._dF(x)

    def d2F(self, x):
        return self._d2F(x)

    def evaluate(self, law: Law) -> float:
        self.check_law(law)
        start = math.log(law.mean())
        ell = solve_monotone_root(lambda u: expect(law, lambda x: self.F(x * math.exp(-u))), start=start, width=0.5)
        return math.exp(ell)

    def _denominator(self, law: Law, g: float) -> float:
        d = expect(law, lambda y: y * self.dF(y / g))
        if not d > 0:
            raise ValueError("gradient denominator is not positive; law outside the valid region")
        return d

    def grad(self, law, x, g=None):
        g = self.evaluate(law) if g is None else g
        x = np.asarray(x, dtype=float)
        return self.F(x / g) * g * g / self._denominator(law, g)

    def grad_x(self, law, x, g=None):
        g = self.evaluate(law) if g is None else g
        x = np.asarray(x, dtype=float)
        return self.dF(x / g) * g / self._denominator(law, g)

    def certificate(self, law0, law1):
        g0, g1 = self.evaluate(law0), self.evaluate(law1)
        num = expect(law0, lambda x: x * self.dF(x / g0))
        den = expect(law1, lambda x: x * self.dF(x / g0))
        return Certificate(0.0, g1 / g0 * num / den)


class MixedCRRA(CRRABetweenness):
    """F = sum_i w_i U_{gamma_i}, a finite mixture of CRRA utilities."""

    def __init__(self, gammas, weights=None, eps0: float = 0.05):
        g = np.atleast_1d(np.asarray(gammas, dtype=float))
        w = np.full(g.size, 1.0 / g.size) if weights is None else np.atleast_1d(np.asarray(weights, dtype=float))
        if g.shape != w.shape or g.size == 0:
            raise ValueError("gammas and weights must be non-empty and equally long")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to one")
        if not 0 < eps0 < 1:
            raise ValueError("eps0 must lie in (0, 1)")
        if np.any(g <= -1.0 / eps0) or np.any(g >= 1.0 - eps0):
            raise ValueError(f"every gamma must lie in (-1/eps0, 1-eps0) = ({-1 / eps0}, {1 - eps0})")
        self.gammas, self.weights, self.eps0 = g, w, float(eps0)
        self.family = "mixed_crra"

    def __repr__(self):
        return f"MixedCRRA(gammas={self.gammas.tolist()}, weights={self.weights.tolist()}, eps0={self.eps0})"

    def _atoms(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., None], self.gammas, self.weights

    def F(self, x):
        x, g, w = self._atoms(x)
        lx = np.log(x)
        safe = np.where(g == 0.0, 1.0, g)
        u = np.where(g == 0.0, lx, np.expm1(g * lx) / safe)
        return (u * w).sum(-1)

    def dF(self, x):
        x, g, w = self._atoms(x)
        return (w * np.exp((g - 1.0) * np.log(x))).sum(-1)

    def d2F(self, x):
        x, g, w = self._atoms(x)
        return (w * (g - 1.0) * np.exp((g - 2.0) * np.log(x))).sum(-1)

    def check_law(self, law):
        super().check_law(law)
        for r in (1.0, -1.0 / self.eps0):
            if not math.isfinite(log_power_moment(law, r)):
                raise ValueError(f"moment of order {r} is not finite")

    def evaluate(self, law):
        self.check_law(law)
        # per-atom certainty equivalents (in logs) bracket the mixture's
        logm = np.array([mean_log(law) if gk == 0 else log_power_moment(law, gk) for gk in self.gammas])
        ce = np.where(self.gammas == 0, logm, logm / np.where(self.gammas == 0, 1.0, self.gammas))
        lo, hi = ce.min(), ce.max()
        if hi - lo <= 1e-15 * max(1.0, abs(hi)):
            return math.exp(hi)
        g, w = self.gammas, self.weights

        def phi(u):
            safe = np.where(g == 0, 1.0, g)
            terms = np.where(g == 0, logm - u, np.expm1(logm - g * u) / safe)
            return float(np.dot(w, terms))

        return math.exp(solve_monotone_root(phi, (lo, hi), tol=1e-15))


# ---------------------------------------------------------------------------
# betweenness, CARA form: E[F(X - g)] = 0


class MixedCARA(Preference):
    """F = sum_i w_i (1 - exp(-rho_i x)), rho_i > 0."""

    support = "real"

    def __init__(self, rhos, weights=None):
        r = np.atleast_1d(np.asarray(rhos, dtype=float))
        w = np.full(r.size, 1.0 / r.size) if weights is None else np.atleast_1d(np.asarray(weights, dtype=float))
        if r.shape != w.shape or r.size == 0:
            raise ValueError("rhos and weights must be non-empty and equally long")
        if np.any(r <= 0):
            raise ValueError("absolute risk aversions must be positive")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to one")
        self.rhos, self.weights = r, w
        self.family = "cara"

    def __repr__(self):
        return f"MixedCARA(rhos={self.rhos.tolist()}, weights={self.weights.tolist()})"

    def F(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return (-self.weights * np.expm1(-self.rhos * x)).sum(-1)

    def dF(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return (self.weights * self.rhos * np.exp(-self.rhos * x)).sum(-1)

    def d2F(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return (-self.weights * self.rhos**2 * np.exp(-self.rhos * x)).sum(-1)

    def evaluate(self, law):
        self.check_law(law)
        ce = np.array([-log_mgf(law, -r) / r for r in self.rhos])
        lo, hi = ce.min(), ce.max()
        if hi - lo <= 1e-15 * max(1.0, abs(hi)):
            return float(hi)
        r, w = self.rhos, self.weights
        return solve_monotone_root(lambda z: float(-np.dot(w, np.expm1(r * (z - ce)))), (lo, hi), tol=1e-15)

    def _denominator(self, law, g):
        d = expect(law, lambda y: self.dF(y - g))
        if not d > 0:
            raise ValueError("gradient denominator is not positive")
        return d

    def grad(self, law, x, g=None):
        g = self.evaluate(law) if g is None else g
        return self.F(np.asarray(x, dtype=float) - g) / self._denominator(law, g)

    def grad_x(self, law, x, g=None):
        g = self.evaluate(law) if g is None else g
        return self.dF(np.asarray(x, dtype=float) - g) / self._denominator(law, g)

    def certificate(self, law0, law1):
        g0 = self.evaluate(law0)
        return Certificate(0.0, expect(law0, lambda x: self.dF(x - g0)) / expect(law1, lambda x: self.dF(x - g0)))


# ---------------------------------------------------------------------------


class WeightedUtility(Preference):
    """g = E[X^(1-rho+gamma)] / ((1-rho) E[X^gamma]), in utility scale.

    ``evaluate(law, scale="ce")`` returns the certainty equivalent
    ((1-rho) g)^(1/(1-rho)) instead.
    """

    support = POSITIVE

    def __init__(self, gamma: float, rho: float):
        if not (-1.0 < gamma <= 0.0 and gamma <= rho < gamma + 1.0):
            raise ValueError("weighted utility needs -1 < gamma <= 0 and gamma <= rho < gamma + 1")
        self.gamma, self.rho = float(gamma), float(rho)
        self.r1, self.r2 = self.gamma, 1.0 - self.rho + self.gamma
        self.family = "weighted_utility"

    def __repr__(self):
        return f"WeightedUtility(gamma={self.gamma}, rho={self.rho})"

    def _moments(self, law):
        self.check_law(law)
        return math.exp(log_power_moment(law, self.r1)), math.exp(log_power_moment(law, self.r2))

    def evaluate(self, law, scale: str = "utility"):
        m1, m2 = self._moments(law)
        g = m2 / ((1.0 - self.rho) * m1)
        if scale == "utility":
            return g
        if scale == "ce":
            return ((1.0 - self.rho) * g) ** (1.0 / (1.0 - self.rho))
        raise ValueError("scale must be 'utility' or 'ce'")

    def grad(self, law, x, g=None):
        m1, m2 = self._moments(law)
        x = np.asarray(x, dtype=float)
        return (x**self.r2 * m1 - x**self.r1 * m2) / ((1.0 - self.rho) * m1 * m1)

    def grad_x(self, law, x, g=None):
        m1, m2 = self._moments(law)
        x = np.asarray(x, dtype=float)
        num = self.r2 * x ** (self.r2 - 1.0) * m1 - self.r1 * x ** (self.r1 - 1.0) * m2
        return num / ((1.0 - self.rho) * m1 * m1)

    def certificate(self, law0, law1):
        return Certificate(0.0, math.exp(log_power_moment(law0, self.r1) - log_power_moment(law1, self.r1)))

    def as_betweenness(self) -> CRRABetweenness:
        """The same preference written as F(x) = x^r2 - x^r1."""
        r1, r2 = self.r1, self.r2
        return CRRABetweenness(
            lambda x: np.asarray(x) ** r2 - np.asarray(x) ** r1,
            lambda x: r2 * np.asarray(x) ** (r2 - 1) - r1 * np.asarray(x) ** (r1 - 1),
            lambda x: r2 * (r2 - 1) * np.asarray(x) ** (r2 - 2) - r1 * (r1 - 1) * np.asarray(x) ** (r1 - 2),
            name="weighted_utility_betweenness",
        )


class MeanVariance(Preference):
    """g = E[X] - (gamma/2) Var[X].

    The derivative is normalised as x - (gamma/2)(x - E[X])^2, which makes
    <grad(mu), mu> = g(mu).
    """

    def __init__(self, gamma: float):
        if not gamma > 0:
            raise ValueError("mean-variance aversion must be positive")
        self.gamma = float(gamma)
        self.family = "mean_variance"

    def __repr__(self):
        return f"MeanVariance(gamma={self.gamma})"

    def evaluate(self, law):
        return law.mean() - 0.5 * self.gamma * variance(law)

    def grad(self, law, x, g=None):
        x = np.asarray(x, dtype=float)
        return x - 0.5 * self.gamma * (x - law.mean()) ** 2

    def grad_x(self, law, x, g=None):
        x = np.asarray(x, dtype=float)
        return 1.0 - self.gamma * x + self.gamma * law.mean()

    def certificate(self, law0, law1):
        return Certificate(0.5 * self.gamma * (law1.mean() - law0.mean()) ** 2, 1.0)


class ExpectedUtility(Preference):
    """Plain CRRA expected utility E[U_gamma(X)]."""

    support = POSITIVE

    def __init__(self, gamma: float):
        if not gamma < 1:
            raise ValueError("expected utility exponent must be below 1")
        self.gamma = float(gamma)
        self.family = "expected_utility"

    def __repr__(self):
        return f"ExpectedUtility(gamma={self.gamma})"

    def evaluate(self, law):
        self.check_law(law)
        return expect(law, lambda x: crra_utility(x, self.gamma))

    def grad(self, law, x, g=None):
        return crra_utility(np.asarray(x, dtype=float), self.gamma)

    def grad_x(self, law, x, g=None):
        return np.asarray(x, dtype=float) ** (self.gamma - 1.0)

    def certificate(self, law0, law1):
        return Certificate(0.0, 1.0)


# ---------------------------------------------------------------------------
# rank-dependent utility


class IdentityDistortion:
    name = "identity"

    def w(self, p, t=0.0):
        return np.asarray(p, dtype=float)

    def dw(self, p, t=0.0):
        return np.ones_like(np.asarray(p, dtype=float))

    def dw_at_normal(self, xi, t=0.0):
        return np.ones_like(np.asarray(xi, dtype=float))


class PowerDistortion:
    """w(p) = p^theta with 0 < theta <= 1."""

    name = "power"

    def __init__(self, theta: float):
        if not 0 < theta <= 1:
            raise ValueError("power distortion needs 0 < theta <= 1")
        self.theta = float(theta)

    def w(self, p, t=0.0):
        return np.asarray(p, dtype=float) ** self.theta

    def dw(self, p, t=0.0):
        with np.errstate(divide="ignore"):
            return self.theta * np.asarray(p, dtype=float) ** (self.theta - 1.0)

    def dw_at_normal(self, xi, t=0.0):
        from scipy.special import log_ndtr

        return self.theta * np.exp((self.theta - 1.0) * log_ndtr(np.asarray(xi, dtype=float)))


class ProbitScaleDistortion:
    """w(p) = Phi(Phi^{-1}(p) / s); s > 1 overweights both tails."""

    name = "probit_scale"

    def __init__(self, s: float):
        if not s > 0:
            raise ValueError("probit scale must be positive")
        self.s = float(s)

    def w(self, p, t=0.0):
        from scipy.special import ndtr

        return ndtr(ndtri(np.asarray(p, dtype=float)) / self.s)

    def dw(self, p, t=0.0):
        return self.dw_at_normal(ndtri(np.asarray(p, dtype=float)), t)

    def dw_at_normal(self, xi, t=0.0):
        xi = np.asarray(xi, dtype=float)
        return np.exp(0.5 * xi * xi * (1.0 - 1.0 / self.s**2)) / self.s


class RankDependent(Preference):
    """Rank-dependent utility with CRRA utility and probability distortion.

    Only discrete laws are accepted; the value is the layer sum over the
    sorted utility levels.
    """

    support = POSITIVE
    has_certificate = False

    def __init__(self, gamma: float, distortion=None, t: float = 0.0):
        if not gamma < 1:
            raise ValueError("utility exponent must be below 1")
        self.gamma = float(gamma)
        self.distortion = IdentityDistortion() if distortion is None else distortion
        self.t = float(t)
        self.family = "rdu"

    def __repr__(self):
        return f"RankDependent(gamma={self.gamma}, distortion={self.distortion.name})"

    def _levels(self, law):
        if not law.is_discrete:
            raise ValueError("rank-dependent evaluation needs a discrete law")
        self.check_law(law)
        u = crra_utility(law.points, self.gamma)
        levels, inv = np.unique(u, return_inverse=True)
        probs = np.bincount(inv, weights=law.weights, minlength=levels.size)
        # tails[k] = P(U > levels[k])
        tails = np.clip(1.0 - np.cumsum(probs), 0.0, 1.0)
        tails[-1] = 0.0
        return levels, tails

    def evaluate(self, law):
        levels, tails = self._levels(law)
        w = self.distortion.w
        return float(levels[0] + np.dot(np.diff(levels), w(tails[:-1], self.t)))

    def grad(self, law, x, g=None):
        levels, tails = self._levels(law)
        dw = self.distortion.dw
        ux = np.atleast_1d(crra_utility(np.asarray(x, dtype=float), self.gamma))
        upper = np.append(levels[1:], np.inf)
        with np.errstate(invalid="ignore"):
            seg = np.clip(np.minimum(ux[:, None], upper) - levels, 0.0, None)
            slopes = dw(tails, self.t)
            out = np.where(seg > 0, seg * slopes, 0.0).sum(1)
        below = ux < levels[0]
        out[below] = float(dw(1.0, self.t)) * (ux[below] - levels[0])
        return out.reshape(np.shape(x))

    def grad_x(self, law, x, g=None):
        levels, tails = self._levels(law)
        ux = np.atleast_1d(crra_utility(np.asarray(x, dtype=float), self.gamma))
        k = np.searchsorted(levels, ux, side="right") - 1
        q = np.where(k < 0, 1.0, tails[np.clip(k, 0, None)])
        out = self.distortion.dw(q, self.t) * np.atleast_1d(np.asarray(x, dtype=float)) ** (self.gamma - 1.0)
        return out.reshape(np.shape(x))


# ---------------------------------------------------------------------------
# functional interface


def evaluate(pref: Preference, law: Law, **kw) -> float:
    return pref.evaluate(law, **kw)


def grad(pref: Preference, law: Law, x):
    return pref.grad(law, x)


def grad_x(pref: Preference, law: Law, x):
    return pref.grad_x(law, x)


def certificate(pref: Preference, law0: Law, law1: Law) -> Certificate:
    return pref.certificate(law0, law1)


def certificate_slack(pref: Preference, law0: Law, law1: Law) -> float:
    """m0 + m1 <grad g(law0), law1 - law0> - (g(law1) - g(law0)); non-negative when the bound holds."""
    c = pref.certificate(law0, law1)
    g0 = pref.evaluate(law0)
    lin = expect(law1, lambda x: pref.grad(law0, x, g0)) - expect(law0, lambda x: pref.grad(law0, x, g0))
    return c.m0 + c.m1 * lin - (pref.evaluate(law1) - g0)


def check_gradient_fd(pref: Preference, law0: Law, law1: Law, grid: int = 9, step: float = 1e-5) -> float:
    """Largest gap between d/ds g(s*law1 + (1-s)*law0) and <grad, law1 - law0>."""
    if not (law0.is_discrete and law1.is_discrete):
        raise ValueError("finite-difference check needs discrete laws")
    worst = 0.0
    for j in range(1, grid + 1):
        s = j / (grid + 1)
        fd = (pref.evaluate(mixture(law1, law0, s + step)) - pref.evaluate(mixture(law1, law0, s - step))) / (2 * step)
        mid = mixture(law1, law0, s)
        g = pref.evaluate(mid)
        lin = expect(law1, lambda x: pref.grad(mid, x, g)) - expect(law0, lambda x: pref.grad(mid, x, g))
        worst = max(worst, abs(fd - lin))
    return worst


def from_spec(family: str, **params) -> Preference:
    """Build a preference from a family tag and keyword parameters."""
    family = family.lower()
    if family == "mixed_crra":
        return MixedCRRA(params["gammas"], params.get("weights"), params.get("eps0", 0.05))
    if family == "cara":
        return MixedCARA(params["rhos"], params.get("weights"))
    if family in ("weighted_utility", "wu"):
        return WeightedUtility(params["gamma"], params["rho"])
    if family in ("mean_variance", "mv"):
        return MeanVariance(params["gamma"])
    if family == "expected_utility":
        return ExpectedUtility(params["gamma"])
    if family == "rdu":
        kind = params.get("distortion", "identity")
        if kind == "identity":
            dist = IdentityDistortion()
        elif kind == "power":
            dist = PowerDistortion(params["theta"])
        elif kind == "probit_scale":
            dist = ProbitScaleDistortion(params["s"])
        else:
            raise ValueError(f"unknown distortion {kind!r}")
        return RankDependent(params.get("gamma", 0.0), dist)
    raise ValueError(f"unknown preference family {family!r}")
