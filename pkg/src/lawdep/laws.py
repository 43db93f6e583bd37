"""Probability laws, Gauss-Hermite quadrature and a bracketing root finder.

Laws are immutable. A law is either a finite weighted point set or an
analytic log-normal / normal descriptor; expectations against analytic
laws go through probabilists' Gauss-Hermite quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.optimize import brentq
from scipy.special import logsumexp

DEFAULT_ORDER = 64
POSITIVE = "positive"
REAL = "real"


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for E[f(xi)], xi ~ N(0, 1)."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def expect(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


@lru_cache(maxsize=None)
def gauss_hermite(order: int = DEFAULT_ORDER) -> QuadratureRule:
    """Probabilists' Gauss-Hermite rule with weights summing to one."""
    if not isinstance(order, (int, np.integer)) or not 2 <= order <= 256:
        raise ValueError(f"quadrature order must be an integer in [2, 256], got {order!r}")
    x, w = hermegauss(int(order))
    w = w / math.sqrt(2.0 * math.pi)
    # symmetrise to remove round-off asymmetry of the eigen-solver
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    w = w / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(nodes=x, weights=w, order=int(order))


@dataclass(frozen=True, eq=False)
class Law:
    """A probability law on the real line or on (0, inf).

    Use the constructors :meth:`discrete`, :meth:`dirac`, :meth:`lognormal`
    and :meth:`normal` rather than the raw initialiser.
    """

    kind: str
    support: str
    points: np.ndarray | None = None
    weights: np.ndarray | None = None
    loc: float = 0.0
    var: float = 0.0
    order: int = DEFAULT_ORDER

    # -- constructors -------------------------------------------------
    @classmethod
    def discrete(cls, points, weights=None, support: str | None = None) -> "Law":
        x = np.atleast_1d(np.asarray(points, dtype=float)).ravel()
        if x.size == 0:
            raise ValueError("a discrete law needs at least one point")
        if weights is None:
            w = np.full(x.size, 1.0 / x.size)
        else:
            w = np.atleast_1d(np.asarray(weights, dtype=float)).ravel()
        if w.shape != x.shape:
            raise ValueError("points and weights differ in length")
        if not np.all(np.isfinite(x)):
            raise ValueError("discrete points must be finite")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("discrete weights must be strictly positive")
        total = w.sum()
        if abs(total - 1.0) > 1e-12:
            if weights is not None and abs(total - 1.0) > 1e-6:
                raise ValueError(f"discrete weights sum to {total}, not 1")
            w = w / total
        if support is None:
            support = POSITIVE if np.all(x > 0) else REAL
        if support == POSITIVE and np.any(x <= 0):
            raise ValueError("points outside the declared support (0, inf)")
        x.setflags(write=False)
        w.setflags(write=False)
        return cls(kind="discrete", support=support, points=x, weights=w)

    @classmethod
    def dirac(cls, x: float) -> "Law":
        return cls.discrete([x], [1.0])

    @classmethod
    def lognormal(cls, mean_log: float, var_log: float, order: int = DEFAULT_ORDER) -> "Law":
        if var_log < 0 or not math.isfinite(var_log) or not math.isfinite(mean_log):
            raise ValueError("lognormal law needs finite mean_log and var_log >= 0")
        return cls(kind="lognormal", support=POSITIVE, loc=float(mean_log), var=float(var_log), order=order)

    @classmethod
    def normal(cls, mean: float, var: float, order: int = DEFAULT_ORDER) -> "Law":
        if var < 0 or not math.isfinite(var) or not math.isfinite(mean):
            raise ValueError("normal law needs finite mean and var >= 0")
        return cls(kind="normal", support=REAL, loc=float(mean), var=float(var), order=order)

    # -- helpers ------------------------------------------------------
    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"

    def abscissae(self) -> tuple[np.ndarray, np.ndarray]:
        """Points and weights used to integrate against this law."""
        if self.is_discrete:
            return self.points, self.weights
        rule = gauss_hermite(self.order)
        z = self.loc + math.sqrt(self.var) * rule.nodes
        if self.kind == "lognormal":
            z = np.exp(z)
        return z, rule.weights

    def mean(self) -> float:
        if self.kind == "lognormal":
            return math.exp(self.loc + 0.5 * self.var)
        if self.kind == "normal":
            return self.loc
        return float(np.dot(self.points, self.weights))

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        if self.is_discrete:
            return f"Law.discrete(n={self.points.size}, support={self.support})"
        return f"Law.{self.kind}({self.loc!r}, {self.var!r})"


def expect(law: Law, f: Callable[[np.ndarray], np.ndarray]) -> float:
    """E[f(X)] for X ~ law; ``f`` must accept a numpy array."""
    x, w = law.abscissae()
    with np.errstate(all="ignore"):
        v = np.asarray(f(x), dtype=float)
    v = np.broadcast_to(v, x.shape)
    bad = ~np.isfinite(v)
    if bad.any():
        raise ValueError(f"integrand not finite at x={x[bad][0]!r}")
    return float(np.dot(w, v))


def log_power_moment(law: Law, r: float) -> float:
    """log E[X^r] on a positive law; exact for discrete and lognormal laws."""
    if law.support != POSITIVE:
        raise ValueError("power moments need a law on (0, inf)")
    if law.kind == "lognormal":
        return r * law.loc + 0.5 * r * r * law.var
    return float(logsumexp(r * np.log(law.points), b=law.weights))


def log_mgf(law: Law, s: float) -> float:
    """log E[exp(s X)]; exact for discrete and normal laws."""
    if law.kind == "normal":
        return s * law.loc + 0.5 * s * s * law.var
    if law.kind == "lognormal":
        return math.log(expect(law, lambda x: np.exp(s * x)))
    return float(logsumexp(s * law.points, b=law.weights))


def mean_log(law: Law) -> float:
    if law.kind == "lognormal":
        return law.loc
    return expect(law, np.log)


def variance(law: Law) -> float:
    if law.kind == "normal":
        return law.var
    m = law.mean()
    return expect(law, lambda x: (x - m) ** 2)


def mixture(a: Law, b: Law, s: float) -> Law:
    """The law s*a + (1-s)*b of two discrete laws."""
    if not (a.is_discrete and b.is_discrete):
        raise ValueError("mixture needs discrete laws; discretise analytic laws first")
    if not 0.0 <= s <= 1.0:
        raise ValueError("mixing weight must lie in [0, 1]")
    if s == 0.0:
        return b
    if s == 1.0:
        return a
    support = POSITIVE if (a.support == POSITIVE and b.support == POSITIVE) else REAL
    return Law.discrete(
        np.concatenate([a.points, b.points]),
        np.concatenate([s * a.weights, (1.0 - s) * b.weights]),
        support=support,
    )


def scale(law: Law, lam: float) -> Law:
    """Law of lam * X for lam > 0."""
    if lam <= 0:
        raise ValueError("scale factor must be positive")
    if law.is_discrete:
        return Law.discrete(lam * law.points, law.weights, support=law.support)
    if law.kind == "lognormal":
        return Law.lognormal(law.loc + math.log(lam), law.var, law.order)
    return Law.normal(lam * law.loc, lam * lam * law.var, law.order)


def shift(law: Law, c: float) -> Law:
    """Law of X + c on the real line."""
    if law.is_discrete:
        return Law.discrete(law.points + c, law.weights, support=REAL)
    if law.kind == "normal":
        return Law.normal(law.loc + c, law.var, law.order)
    raise ValueError("cannot shift a lognormal law and keep it analytic")


def sample_discretize(law: Law, n: int) -> Law:
    """Replace an analytic law by its n-point Gauss-Hermite discretisation."""
    if law.is_discrete:
        return law
    rule = gauss_hermite(n)
    z = law.loc + math.sqrt(law.var) * rule.nodes
    if law.kind == "lognormal":
        z = np.exp(z)
    return Law.discrete(z, rule.weights, support=law.support)


def solve_monotone_root(
    f: Callable[[float], float],
    bracket: tuple[float, float] | None = None,
    tol: float = 1e-12,
    *,
    start: float = 0.0,
    width: float = 1.0,
    max_expand: int = 60,
) -> float:
    """Root of a strictly monotone scalar function.

    With no bracket, one is grown geometrically (factor 2) around ``start``.
    Brent's method then does the work; it keeps a bisection fallback.
    """

    def fv(z: float) -> float:
        v = float(f(z))
        if not math.isfinite(v):
            raise ValueError(f"non-finite function value at z={z!r}")
        return v

    if bracket is None:
        lo, hi = start - width, start + width
        flo, fhi = fv(lo), fv(hi)
        for _ in range(max_expand):
            if flo * fhi <= 0:
                break
            width *= 2.0
            lo, hi = start - width, start + width
            flo, fhi = fv(lo), fv(hi)
        else:
            raise ValueError("no sign change found while expanding the bracket")
    else:
        lo, hi = map(float, bracket)
        flo, fhi = fv(lo), fv(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise ValueError(f"no sign change on [{lo}, {hi}]")
    xtol = tol * max(1.0, min(abs(lo), abs(hi)))
    return brentq(fv, lo, hi, xtol=max(xtol, 1e-300), rtol=max(4 * np.finfo(float).eps, min(tol, 1e-3)), maxiter=500)
