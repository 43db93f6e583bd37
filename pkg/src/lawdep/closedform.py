"""Deterministic-coefficient equilibria.

For a CRRA-form betweenness preference with aggregator F let

    H(y):  E[F(exp(sqrt(y) xi) / H)] = 0,
    G(y):  H E[R F'(R/H)] / (-E[R^2 F''(R/H)]),   R = exp(sqrt(y) xi),
    Gcal(y) = int_0^y G(u)^-2 du.

The equilibrium exposure is a = kappa G(A) with A(t) = Gcal^{-1}(int_t^T |kappa|^2),
equivalently A' = -|kappa|^2 G(A)^2, A(T) = 0.  The CARA-form analogue uses
H(y): E[F(sqrt(y) xi - H)] = 0 and G = E[F'] / E[-F''] at sqrt(y) xi - H.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Chebyshev

from .laws import DEFAULT_ORDER, gauss_hermite, solve_monotone_root
from .market import MarketModel, StrategyCurve, _gl_w, _gl_x
from .preferences import CRRABetweenness, MixedCARA, MixedCRRA, RankDependent


class InfeasibleError(RuntimeError):
    """Raised when Gcal(inf) does not exceed the required target."""

    def __init__(self, record: "Feasibility"):
        super().__init__(record.note)
        self.record = record


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    target: float
    gcal_estimate: float
    bounded_G: bool
    y_max: float
    note: str = ""

    def as_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "target": self.target,
            "gcal_estimate": self.gcal_estimate,
            "bounded_G": self.bounded_G,
            "y_max": self.y_max,
            "note": self.note,
        }


def _bracketed_newton(f, fprime, lo, hi, iters=200):
    """Vectorised safeguarded Newton for increasing-or-decreasing f on [lo, hi]."""
    lo, hi = np.array(lo, dtype=float), np.array(hi, dtype=float)
    x = 0.5 * (lo + hi)
    flo = f(lo)
    done = np.zeros(x.shape, dtype=bool)
    for _ in range(iters):
        fx = f(x)
        hit = fx == 0
        same = np.sign(fx) == np.sign(flo)
        lo = np.where(same, x, lo)
        flo = np.where(same, fx, flo)
        hi = np.where(same | hit, hi, x)
        d = fprime(x)
        with np.errstate(all="ignore"):
            xn = x - fx / d
        bad = ~np.isfinite(xn) | (xn < np.minimum(lo, hi)) | (xn > np.maximum(lo, hi))
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        xn = np.where(hit | done, x, xn)
        done = done | hit | (np.abs(xn - x) <= 4e-16 * np.maximum(1.0, np.abs(x)))
        x = xn
        if np.all(done):
            break
    return x


class CertaintyFunctions:
    """H, G and Gcal for a mixed-CRRA, mixed-CARA or generic CRRA-form preference."""

    def __init__(self, pref, order: int = DEFAULT_ORDER):
        if isinstance(pref, MixedCARA):
            self.kind = "cara"
        elif isinstance(pref, CRRABetweenness):
            self.kind = "crra"
        else:
            raise TypeError("certainty functions need a CRRA- or CARA-form betweenness preference")
        self.pref = pref
        self.rule = gauss_hermite(order)
        self._table = None

    # -- quadrature path ----------------------------------------------
    def _eval_H_scalar(self, y: float) -> float:
        if y < 0:
            raise ValueError("y must be non-negative")
        if y == 0:
            return 1.0 if self.kind == "crra" else 0.0
        z = math.sqrt(y) * self.rule.nodes
        w = self.rule.weights
        F = self.pref.F
        if self.kind == "crra":
            ell = solve_monotone_root(lambda u: float(w @ F(np.exp(z - u))), start=0.0, width=max(0.5, y), tol=1e-15)
            return math.exp(ell)
        return solve_monotone_root(lambda h: float(w @ F(z - h)), start=0.0, width=max(0.5, y), tol=1e-15)

    def eval_H(self, y):
        """H by Gauss-Hermite quadrature and monotone root finding."""
        if np.ndim(y) == 0:
            return self._eval_H_scalar(float(y))
        return np.array([self._eval_H_scalar(float(v)) for v in np.ravel(y)]).reshape(np.shape(y))

    def _eval_G_scalar(self, y: float) -> float:
        H = self._eval_H_scalar(y)
        z = math.sqrt(y) * self.rule.nodes
        w = self.rule.weights
        if self.kind == "crra":
            R = np.exp(z)
            num = H * (w @ (R * self.pref.dF(R / H)))
            den = -(w @ (R * R * self.pref.d2F(R / H)))
        else:
            num = w @ self.pref.dF(z - H)
            den = -(w @ self.pref.d2F(z - H))
        if not den > 0:
            raise ValueError("denominator of G is not positive")
        return float(num / den)

    def eval_G(self, y):
        """G as a ratio of quadrature integrals."""
        if np.ndim(y) == 0:
            return self._eval_G_scalar(float(y))
        return np.array([self._eval_G_scalar(float(v)) for v in np.ravel(y)]).reshape(np.shape(y))

    # -- exact mixture path -------------------------------------------
    def _mixed_crra_logH(self, y):
        g, w = self.pref.gammas, self.pref.weights
        y = np.atleast_1d(np.asarray(y, dtype=float))[:, None]
        safe = np.where(g == 0, 1.0, g)
        q = 0.5 * g * g * y

        def f(u):
            u = u[:, None]
            return np.where(g == 0, -u, np.expm1(q - g * u) / safe) @ w

        def fp(u):
            return -(np.exp(q - g * u[:, None]) @ w)

        lo, hi = g.min() * y[:, 0] / 2, g.max() * y[:, 0] / 2
        return _bracketed_newton(f, fp, lo, hi)

    def _mixed_cara_H(self, y):
        r, w = self.pref.rhos, self.pref.weights
        y = np.atleast_1d(np.asarray(y, dtype=float))[:, None]
        q = 0.5 * r * r * y

        def f(z):
            return -(np.expm1(r * z[:, None] + q) @ w)

        def fp(z):
            return -(np.exp(r * z[:, None] + q) * r) @ w

        return _bracketed_newton(f, fp, -r.max() * y[:, 0] / 2, -r.min() * y[:, 0] / 2)

    def eval_H_exact(self, y):
        """H from exact Gaussian moments (mixtures only)."""
        shape = np.shape(y)
        if isinstance(self.pref, MixedCRRA):
            return np.exp(self._mixed_crra_logH(y)).reshape(shape)
        if isinstance(self.pref, MixedCARA):
            return self._mixed_cara_H(y).reshape(shape)
        return self.eval_H(y)

    def eval_G_mixed_crra(self, y):
        """G for a CRRA mixture through Gaussian moments, no xi-quadrature."""
        if not isinstance(self.pref, MixedCRRA):
            raise TypeError("needs a mixed CRRA preference")
        g, w = self.pref.gammas, self.pref.weights
        yy = np.atleast_1d(np.asarray(y, dtype=float))
        ell = self._mixed_crra_logH(yy)[:, None]
        e = np.exp(-g * ell + 0.5 * g * g * yy[:, None]) * w
        out = e.sum(1) / (e * (1.0 - g)).sum(1)
        return out.reshape(np.shape(y)) if np.ndim(y) else float(out[0])

    def eval_G_mixed_cara(self, y):
        if not isinstance(self.pref, MixedCARA):
            raise TypeError("needs a mixed CARA preference")
        r, w = self.pref.rhos, self.pref.weights
        yy = np.atleast_1d(np.asarray(y, dtype=float))
        H = self._mixed_cara_H(yy)[:, None]
        e = np.exp(r * H + 0.5 * r * r * yy[:, None]) * w * r
        out = e.sum(1) / (e * r).sum(1)
        return out.reshape(np.shape(y)) if np.ndim(y) else float(out[0])

    def G_exact(self, y):
        """Most accurate available G: moment formulas for mixtures, quadrature otherwise."""
        if isinstance(self.pref, MixedCRRA):
            return self.eval_G_mixed_crra(y)
        if isinstance(self.pref, MixedCARA):
            return self.eval_G_mixed_cara(y)
        return self.eval_G(y)

    def G_scalar(self, y: float) -> float:
        """Scalar G with a pure-Python Newton solve; used inside ODE loops."""
        if isinstance(self.pref, MixedCRRA):
            gs, ws = self.pref.gammas.tolist(), self.pref.weights.tolist()
            if len(gs) == 1:
                return 1.0 / (1.0 - gs[0])
            qs = [0.5 * g * g * y for g in gs]
            u = sum(w * g for g, w in zip(gs, ws)) * y / 2
            lo, hi = min(gs) * y / 2, max(gs) * y / 2
            for _ in range(100):
                f = sum(w * (math.expm1(q - g * u) / g if g else -u) for g, w, q in zip(gs, ws, qs))
                fp = -sum(w * math.exp(q - g * u) for g, w, q in zip(gs, ws, qs))
                if f > 0:
                    lo = u
                elif f < 0:
                    hi = u
                else:
                    break
                un = u - f / fp
                if not lo <= un <= hi:
                    un = 0.5 * (lo + hi)
                if abs(un - u) <= 4e-16 * max(1.0, abs(u)):
                    u = un
                    break
                u = un
            e = [w * math.exp(-g * u + q) for g, w, q in zip(gs, ws, qs)]
            return sum(e) / sum(v * (1.0 - g) for v, g in zip(e, gs))
        if isinstance(self.pref, MixedCARA):
            rs, ws = self.pref.rhos.tolist(), self.pref.weights.tolist()
            if len(rs) == 1:
                return 1.0 / rs[0]
            qs = [0.5 * r * r * y for r in rs]
            z = -sum(w * r for r, w in zip(rs, ws)) * y / 2
            lo, hi = -max(rs) * y / 2, -min(rs) * y / 2
            for _ in range(100):
                f = -sum(w * math.expm1(r * z + q) for r, w, q in zip(rs, ws, qs))
                fp = -sum(w * r * math.exp(r * z + q) for r, w, q in zip(rs, ws, qs))
                if f > 0:
                    lo = z
                elif f < 0:
                    hi = z
                else:
                    break
                zn = z - f / fp
                if not lo <= zn <= hi:
                    zn = 0.5 * (lo + hi)
                if abs(zn - z) <= 4e-16 * max(1.0, abs(z)):
                    z = zn
                    break
                z = zn
            e = [w * r * math.exp(r * z + q) for r, w, q in zip(rs, ws, qs)]
            return sum(e) / sum(v * r for v, r in zip(e, rs))
        return float(self.eval_G(y))

    @property
    def G_bounds(self) -> tuple[float, float] | None:
        if isinstance(self.pref, MixedCRRA):
            e = self.pref.eps0
            return e / (1 + e), 1 / e
        if isinstance(self.pref, MixedCARA):
            return 1 / self.pref.rhos.max(), 1 / self.pref.rhos.min()
        return None

    # -- Gcal and its inverse -----------------------------------------
    def _gcal_direct(self, y: float) -> float:
        nodes = 0.5 * y * (_gl_x + 1.0)
        return float(0.5 * y * (_gl_w @ (1.0 / np.asarray(self.G_exact(nodes)) ** 2)))

    def table(self, target: float) -> "GcalTable":
        """Build (and cache) a Chebyshev table of 1/G^2 covering Gcal^{-1}(target)."""
        if self._table is not None and self._table.gcal_max >= target:
            return self._table
        bounded = self.G_bounds is not None
        g0 = float(self.G_exact(0.0))
        y = max(target * g0 * g0, 1e-6)
        total, steps = 0.0, 0
        while True:
            total = self._gcal_direct(y) if y <= 1.0 else self._gcal_piecewise(y)
            if total >= target:
                break
            steps += 1
            if steps > 60 or y > 1e8:
                rec = Feasibility(False, target, total, bounded, y, "Gcal(inf) appears not to exceed the target")
                raise InfeasibleError(rec)
            y *= 2.0
        self._table = GcalTable.build(self, y)
        return self._table

    def _gcal_piecewise(self, y: float) -> float:
        edges = np.linspace(0.0, y, 33)
        a, b = edges[:-1], edges[1:]
        nodes = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * _gl_x
        vals = 1.0 / np.asarray(self.G_exact(nodes.ravel())).reshape(nodes.shape) ** 2
        return float(((0.5 * (b - a))[:, None] * _gl_w * vals).sum())

    def feasibility(self, target: float) -> Feasibility:
        bounded = self.G_bounds is not None
        try:
            tab = self.table(target)
        except InfeasibleError as exc:
            return exc.record
        note = "G bounded above, Gcal(inf) = inf" if bounded else "target reached by direct integration"
        return Feasibility(True, target, math.inf if bounded else tab.gcal_max, bounded, tab.y_max, note)

    def eval_Gcal(self, y):
        """Gcal(y) = int_0^y G^-2, from a table whose range covers max(y)."""
        ymax = float(np.max(y))
        tab = self._table
        if tab is None or tab.y_max < ymax:
            tab = self._table = GcalTable.build(self, max(ymax, 1e-6, 0.0 if tab is None else tab.y_max))
        return tab.gcal(y)

    def eval_Gcal_inverse(self, target):
        t = np.asarray(target, dtype=float)
        if np.any(t < 0):
            raise ValueError("target must be non-negative")
        if np.all(t == 0):
            return np.zeros_like(t) if t.ndim else 0.0
        tab = self.table(float(t.max()))
        out = tab.inverse(t)
        return out if t.ndim else float(out)


@dataclass(frozen=True, eq=False)
class GcalTable:
    """Chebyshev interpolant of 1/G^2 on [0, y_max] and its antiderivative."""

    inv_g2: Chebyshev
    gcal_poly: Chebyshev
    y_max: float
    gcal_max: float
    degree: int

    @classmethod
    def build(cls, cf: CertaintyFunctions, y_max: float) -> "GcalTable":
        def f(y):
            return 1.0 / np.asarray(cf.G_exact(np.asarray(y)), dtype=float) ** 2

        for deg in (16, 32, 64, 128, 256):
            cheb = Chebyshev.interpolate(f, deg, domain=[0.0, y_max])
            c = np.abs(cheb.coef)
            if c[-3:].max() <= 1e-15 * c.max():
                break
        gp = cheb.integ(lbnd=0.0)
        return cls(cheb, gp, float(y_max), float(gp(y_max)), deg)

    def gcal(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y > self.y_max * (1 + 1e-12)) or np.any(y < 0):
            raise ValueError("argument outside the tabulated range")
        return self.gcal_poly(y)

    def G(self, y):
        return 1.0 / np.sqrt(self.inv_g2(np.asarray(y, dtype=float)))

    def inverse(self, target):
        t = np.atleast_1d(np.asarray(target, dtype=float))
        if np.any(t > self.gcal_max * (1 + 1e-12)):
            raise ValueError("target beyond the tabulated range")
        lo, hi = np.zeros_like(t), np.full_like(t, self.y_max)
        x = _bracketed_newton(lambda v: self.gcal_poly(v) - t, self.inv_g2, lo, hi)
        x = np.where(t == 0, 0.0, x)
        return x.reshape(np.shape(target))


# ---------------------------------------------------------------------------
# equilibrium solutions


@dataclass(eq=False)
class EquilibriumSolution:
    family: str
    mode: str
    times: np.ndarray
    A: np.ndarray  # from Gcal^{-1}
    A_ode: np.ndarray  # from backward RK4
    a: np.ndarray  # (N+1, d)
    pi_grid: np.ndarray  # (N+1, d)
    strategy: StrategyCurve
    feasibility: Feasibility | None = None
    extras: dict = field(default_factory=dict)

    @property
    def ode_gap(self) -> float:
        return float(np.max(np.abs(self.A - self.A_ode)))

    def to_csv(self, path) -> None:
        d = self.a.shape[1]
        head = ["t", "A"] + [f"a{j}" for j in range(d)] + [f"pi{j}" for j in range(d)]
        with open(path, "w") as fh:
            fh.write(",".join(head) + "\n")
            for i, t in enumerate(self.times):
                row = [t, self.A[i], *self.a[i], *self.pi_grid[i]]
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    def summary(self) -> dict:
        return {
            "family": self.family,
            "mode": self.mode,
            "A0": float(self.A[0]),
            "ode_gap": self.ode_gap,
            "pi0": [float(v) for v in self.pi_grid[0]],
            "feasibility": None if self.feasibility is None else self.feasibility.as_dict(),
        }


def _rk4_backward(model: MarketModel, rhs, substeps: int = 4) -> np.ndarray:
    """Integrate y' = -|kappa(t)|^2 rhs(y) backward from y(T) = 0."""
    N = model.n_steps
    out = np.zeros(N + 1)
    y = 0.0
    h = model.dt / substeps
    # |kappa|^2 at every half sub-step, from T backwards
    grid = model.T - 0.5 * h * np.arange(2 * N * substeps + 1)
    k2 = (model.kappa_at(grid) ** 2).sum(-1).tolist()
    for n in range(N):
        for k in range(substeps):
            j = 2 * (n * substeps + k)
            f1 = k2[j] * rhs(y)
            f2 = k2[j + 1] * rhs(y + 0.5 * h * f1)
            f3 = k2[j + 1] * rhs(y + 0.5 * h * f2)
            f4 = k2[j + 2] * rhs(y + h * f3)
            y = y + h * (f1 + 2 * f2 + 2 * f3 + f4) / 6.0
        out[N - n - 1] = y
    return out


def _solve_betweenness(pref, model: MarketModel, mode: str, order: int, substeps: int) -> EquilibriumSolution:
    cf = CertaintyFunctions(pref, order)
    times = model.times
    target = model.theta_total
    d = model.d
    if target == 0.0:
        zeros = np.zeros(times.size)
        strat = StrategyCurve.constant(np.zeros(d), mode, label=f"{pref.family} equilibrium")
        feas = Feasibility(True, 0.0, 0.0, cf.G_bounds is not None, 0.0, "no risk premium")
        return EquilibriumSolution(pref.family, mode, times, zeros, zeros.copy(), np.zeros((times.size, d)), np.zeros((times.size, d)), strat, feas)
    feas = cf.feasibility(target)
    if not feas.feasible:
        raise InfeasibleError(feas)
    tab = cf.table(target)
    A = tab.inverse(model.tail_kappa2(times))
    A[-1] = 0.0
    G = np.asarray(cf.G_exact(A))
    a = model._kappa_nodes * G[:, None]
    pi = np.linalg.solve(np.swapaxes(model.sigma, 1, 2), a[..., None])[..., 0]
    A_ode = _rk4_backward(model, lambda y: cf.G_scalar(max(y, 0.0)) ** 2, substeps)

    def base(t):
        t = np.atleast_1d(t)
        g = tab.G(tab.inverse(model.tail_kappa2(t)))
        aa = model.kappa_at(t) * g[:, None]
        return np.linalg.solve(np.swapaxes(model.sigma_at(t), 1, 2), aa[..., None])[..., 0]

    strat = StrategyCurve(base, mode, d, tuple(times), label=f"{pref.family} equilibrium")
    return EquilibriumSolution(pref.family, mode, times, A, A_ode, a, pi, strat, feas, {"certainty": cf, "table": tab})


def solve_equilibrium_crra(pref, model: MarketModel, order: int = DEFAULT_ORDER, substeps: int = 4) -> EquilibriumSolution:
    """Equilibrium proportions for a CRRA-form betweenness preference."""
    if not isinstance(pref, CRRABetweenness):
        raise TypeError("needs a CRRA-form betweenness preference")
    return _solve_betweenness(pref, model, "proportion", order, substeps)


def solve_equilibrium_cara(pref, model: MarketModel, order: int = DEFAULT_ORDER, substeps: int = 4) -> EquilibriumSolution:
    """Equilibrium dollar amounts for a CARA-form betweenness preference."""
    if not isinstance(pref, MixedCARA):
        raise TypeError("needs a CARA mixture")
    return _solve_betweenness(pref, model, "dollar", order, substeps)


def solve_equilibrium_mv(gamma_mv: float, model: MarketModel) -> EquilibriumSolution:
    """pi = sigma^{-T} kappa / gamma, in dollars."""
    if not gamma_mv > 0:
        raise ValueError("mean-variance aversion must be positive")
    times = model.times
    a = model._kappa_nodes / gamma_mv
    pi = np.linalg.solve(np.swapaxes(model.sigma, 1, 2), a[..., None])[..., 0]
    A = model.tail_kappa2(times) / gamma_mv**2
    A[-1] = 0.0

    def base(t):
        aa = model.kappa_at(t) / gamma_mv
        return np.linalg.solve(np.swapaxes(model.sigma_at(t), 1, 2), aa[..., None])[..., 0]

    strat = StrategyCurve(base, "dollar", model.d, tuple(times), label="mean-variance equilibrium")
    return EquilibriumSolution("mean_variance", "dollar", times, A, A.copy(), a, pi, strat, None)


# ---------------------------------------------------------------------------
# rank-dependent candidate


def _sinhc(u):
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < 1e-4
    safe = np.where(small, 1.0, u)
    return np.where(small, 1.0 + u * u / 6.0, np.sinh(safe) / safe)


def rdu_lambda(distortion, x: float, t: float = 0.0, order: int = DEFAULT_ORDER) -> float:
    """lambda = x h(x) / h'(x) with h(x) = E[w'(N(xi)) exp(x xi)].

    Nodes are paired (+xi, -xi) so that the odd part of h' is computed
    without cancellation; the limit x -> 0 is handled analytically.
    """
    rule = gauss_hermite(order)
    pos = rule.nodes > 0
    xi, w = rule.nodes[pos], rule.weights[pos]
    a = distortion.dw_at_normal(xi, t)
    b = distortion.dw_at_normal(-xi, t)
    zero_w = rule.weights[rule.nodes == 0].sum()
    c0 = float(distortion.dw_at_normal(np.array([0.0]), t)[0]) if zero_w else 0.0
    h = float(w @ ((a + b) * np.cosh(x * xi) + (a - b) * np.sinh(x * xi)) + zero_w * c0)
    odd = float(w @ (xi * (a - b) * np.cosh(x * xi)))  # h'(x) part that does not vanish at 0
    even = float(w @ (xi * xi * (a + b) * _sinhc(x * xi)))  # h'(x)/x part
    scale_ = float(w @ (xi * np.abs(a - b)) + 1e-300)
    if abs(odd) <= 1e-13 * max(scale_, abs(even)):
        return h / even
    if x == 0.0:
        return 0.0
    return h / (odd / x + even)


@dataclass(eq=False)
class RduCandidate:
    times: np.ndarray
    Lambda: np.ndarray
    lam: np.ndarray
    candidate: bool = True

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,Lambda,lambda\n")
            for row in zip(self.times, self.Lambda, self.lam):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    def summary(self) -> dict:
        return {"family": "rdu", "candidate": True, "Lambda0": float(self.Lambda[0]), "lambda0": float(self.lam[0])}


def solve_rdu_candidate(pref: RankDependent, model: MarketModel, order: int = DEFAULT_ORDER, substeps: int = 4) -> RduCandidate:
    """Backward RK4 for Lambda' = -|kappa|^2 lambda^2 with lambda = sqrt(L) h / h'.

    The output is a candidate only; no equilibrium check is attempted.
    """
    if not isinstance(pref, RankDependent):
        raise TypeError("needs a rank-dependent preference")
    dist = pref.distortion
    N = model.n_steps
    h = model.dt / substeps
    Lam = np.zeros(N + 1)
    y = 0.0

    def lam2(L, s):
        return rdu_lambda(dist, math.sqrt(max(L, 0.0)), s, order) ** 2

    for n in range(N, 0, -1):
        t = model.times[n]
        for k in range(substeps):
            s = t - k * h
            kk = (model.kappa_at([s, s - 0.5 * h, s - h]) ** 2).sum(-1)
            f1 = kk[0] * lam2(y, s)
            f2 = kk[1] * lam2(y + 0.5 * h * f1, s - 0.5 * h)
            f3 = kk[1] * lam2(y + 0.5 * h * f2, s - 0.5 * h)
            f4 = kk[2] * lam2(y + h * f3, s - h)
            y = y + h * (f1 + 2 * f2 + 2 * f3 + f4) / 6.0
        Lam[n - 1] = y
    lam = np.array([rdu_lambda(dist, math.sqrt(L), t, order) for L, t in zip(Lam, model.times)])
    return RduCandidate(model.times.copy(), Lam, lam)
