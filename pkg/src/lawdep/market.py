"""Market coefficients, strategies, wealth simulation and conditional laws.

Deterministic coefficients are stored at the nodes of a uniform grid and
interpolated linearly in between, so that every time integral can be
evaluated by Gauss-Legendre quadrature step by step.  The interest rate
is zero throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .laws import Law

GL_NODES = 8
_gl_x, _gl_w = np.polynomial.legendre.leggauss(GL_NODES)
CHUNK = 4096  # paths per RNG block


# ---------------------------------------------------------------------------
# deterministic market


@dataclass(frozen=True, eq=False)
class MarketModel:
    """theta (N+1, d) and sigma (N+1, d, d) sampled on ``times``."""

    times: np.ndarray
    theta: np.ndarray
    sigma: np.ndarray
    c1: float | None = None
    c2: float | None = None

    def __post_init__(self):
        t, th, sg = self.times, self.theta, self.sigma
        if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0) or t[0] != 0.0:
            raise ValueError("time grid must start at 0 and increase strictly")
        if th.shape != (t.size, th.shape[1]) or sg.shape != (t.size, th.shape[1], th.shape[1]):
            raise ValueError("theta must be (N+1, d) and sigma (N+1, d, d)")
        sv = np.linalg.svd(sg, compute_uv=False)
        if np.any(sv[:, -1] <= 1e-14 * np.maximum(sv[:, 0], 1.0)):
            raise ValueError("sigma is singular at some grid point")
        if self.c1 is not None and np.any(sv[:, -1] ** 2 < self.c1 * (1 - 1e-12)):
            raise ValueError("lower ellipticity bound c1 violated")
        if self.c2 is not None and np.any(sv[:, 0] ** 2 > self.c2 * (1 + 1e-12)):
            raise ValueError("upper bound c2 violated")
        if not (np.all(np.isfinite(th)) and np.all(np.isfinite(sg))):
            raise ValueError("market coefficients must be finite")
        kap = np.linalg.solve(sg, th[..., None])[..., 0]
        step = np.diff(t)
        # exact per-step integrals of |kappa|^2 under linear theta, sigma
        nodes = 0.5 * (t[:-1, None] + t[1:, None]) + 0.5 * step[:, None] * _gl_x
        vals = (self.kappa_at(nodes.ravel()) ** 2).sum(-1).reshape(nodes.shape)
        per_step = 0.5 * step * (vals @ _gl_w)
        tail = np.concatenate([np.cumsum(per_step[::-1])[::-1], [0.0]])
        object.__setattr__(self, "_kappa_nodes", kap)
        object.__setattr__(self, "_tail", tail)

    # -- construction -------------------------------------------------
    @classmethod
    def constant(cls, theta, sigma, T: float = 1.0, n_steps: int = 256, **kw) -> "MarketModel":
        th = np.atleast_1d(np.asarray(theta, dtype=float))
        sg = np.asarray(sigma, dtype=float)
        sg = np.diag(np.broadcast_to(sg, th.shape)) if sg.ndim <= 1 else sg
        times = np.linspace(0.0, T, n_steps + 1)
        return cls(times, np.tile(th, (n_steps + 1, 1)), np.tile(sg, (n_steps + 1, 1, 1)), **kw)

    @classmethod
    def from_functions(cls, theta_fn: Callable, sigma_fn: Callable, T: float = 1.0, n_steps: int = 256, **kw):
        times = np.linspace(0.0, T, n_steps + 1)
        th = np.array([np.atleast_1d(theta_fn(s)) for s in times], dtype=float)
        sg = []
        for s in times:
            v = np.asarray(sigma_fn(s), dtype=float)
            sg.append(np.diag(np.broadcast_to(v, th.shape[1:])) if v.ndim <= 1 else v)
        return cls(times, th, np.array(sg), **kw)

    # -- basic geometry -----------------------------------------------
    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def d(self) -> int:
        return self.theta.shape[1]

    def index_of(self, t: float) -> int:
        i = int(round(t / self.dt))
        if abs(self.times[i] - t) > 1e-12 * max(1.0, self.T):
            raise ValueError(f"t={t} is not a grid point")
        return i

    # -- interpolated coefficients ------------------------------------
    def _interp(self, arr, t):
        t = np.clip(np.atleast_1d(np.asarray(t, dtype=float)), 0.0, self.T)
        pos = t / self.dt
        i = np.clip(np.floor(pos).astype(int), 0, self.n_steps - 1)
        frac = (pos - i).reshape((-1,) + (1,) * (arr.ndim - 1))
        return (1.0 - frac) * arr[i] + frac * arr[i + 1]

    def theta_at(self, t) -> np.ndarray:
        return self._interp(self.theta, t)

    def sigma_at(self, t) -> np.ndarray:
        return self._interp(self.sigma, t)

    def kappa_at(self, t) -> np.ndarray:
        return np.linalg.solve(self.sigma_at(t), self.theta_at(t)[..., None])[..., 0]

    def kappa(self, t_index: int) -> np.ndarray:
        return self._kappa_nodes[t_index].copy()

    def tail_kappa2(self, t) -> np.ndarray:
        """Integral of |kappa|^2 over [t, T], vectorised in t."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        i = np.clip(np.floor(t / self.dt + 1e-12).astype(int), 0, self.n_steps)
        right = self.times[np.minimum(i + 1, self.n_steps)]
        half = 0.5 * (right - t)
        nodes = 0.5 * (t + right)[:, None] + half[:, None] * _gl_x
        vals = (self.kappa_at(nodes.ravel()) ** 2).sum(-1).reshape(nodes.shape)
        part = np.where(i >= self.n_steps, 0.0, half * (vals @ _gl_w))
        return self._tail[np.minimum(i + 1, self.n_steps)] * (i < self.n_steps) + part

    @property
    def theta_total(self) -> float:
        """Integral of |kappa|^2 over the whole horizon."""
        return float(self._tail[0])


def integrate(f: Callable, t0: float, t1: float, grid: np.ndarray, breaks=()) -> np.ndarray:
    """Composite Gauss-Legendre integral of a vectorised ``f`` over [t0, t1].

    Panels are delimited by grid points and extra break points; ``f`` maps
    an array of times of shape (m,) to an array with leading axis m.
    """
    if t1 < t0:
        raise ValueError("integration bounds reversed")
    if t1 == t0:
        return np.zeros_like(np.asarray(f(np.array([t0])))[0], dtype=float)
    cuts = np.concatenate([[t0, t1], grid[(grid > t0) & (grid < t1)], [b for b in breaks if t0 < b < t1]])
    cuts = np.unique(cuts)
    a, b = cuts[:-1], cuts[1:]
    nodes = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * _gl_x
    vals = np.asarray(f(nodes.ravel()), dtype=float)
    vals = vals.reshape(nodes.shape + vals.shape[1:])
    w = (0.5 * (b - a))[:, None] * _gl_w
    return np.tensordot(w, vals, axes=([0, 1], [0, 1]))


def tail_on_grid(f: Callable, grid: np.ndarray, breaks=()) -> np.ndarray:
    """int_{grid[n]}^{grid[-1]} f for every n (scalar f), panels split at the break points."""
    inner = [b for b in breaks if grid[0] < b < grid[-1]]
    cuts = np.unique(np.concatenate([grid, inner]))
    a, b = cuts[:-1], cuts[1:]
    nodes = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * _gl_x
    vals = np.asarray(f(nodes.ravel()), dtype=float).reshape(nodes.shape)
    panel = ((0.5 * (b - a))[:, None] * _gl_w * vals).sum(1)
    tail = np.concatenate([np.cumsum(panel[::-1])[::-1], [0.0]])
    idx = np.searchsorted(cuts, grid)
    return tail[idx]


# ---------------------------------------------------------------------------
# strategies


@dataclass(frozen=True, eq=False)
class StrategyCurve:
    """Deterministic strategy t -> pi(t) in proportion or dollar mode.

    ``base`` is vectorised: an array of m times maps to an (m, d) array.
    Perturbations are kept symbolically in ``bumps`` so they can be undone
    exactly.
    """

    base: Callable[[np.ndarray], np.ndarray]
    mode: str
    d: int = 1
    breakpoints: tuple = ()
    bumps: tuple = ()  # ((t0, t1), phi-tuple)
    label: str = ""

    def __post_init__(self):
        if self.mode not in ("proportion", "dollar"):
            raise ValueError("mode must be 'proportion' or 'dollar'")

    def __call__(self, t):
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.array(self.base(t), dtype=float).reshape(t.size, self.d)
        for (a, b), phi in self.bumps:
            out[(t >= a) & (t < b)] += np.asarray(phi)
        return out[0] if scalar else out

    @property
    def all_breaks(self) -> tuple:
        extra = [x for (ab, _) in self.bumps for x in ab]
        return tuple(self.breakpoints) + tuple(extra)

    # -- constructors -------------------------------------------------
    @classmethod
    def constant(cls, value, mode: str = "proportion", label: str = "") -> "StrategyCurve":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(lambda t: np.tile(v, (np.size(t), 1)), mode, v.size, label=label)

    @classmethod
    def piecewise_constant(cls, times, values, mode: str = "proportion", label: str = "") -> "StrategyCurve":
        """values[n] is held on [times[n], times[n+1])."""
        times = np.asarray(times, dtype=float)
        vals = np.asarray(values, dtype=float).reshape(times.size - 1, -1)

        def base(t):
            i = np.clip(np.searchsorted(times, t, side="right") - 1, 0, vals.shape[0] - 1)
            return vals[i]

        return cls(base, mode, vals.shape[1], tuple(times), label=label)

    @classmethod
    def piecewise_linear(cls, times, values, mode: str = "proportion", label: str = "") -> "StrategyCurve":
        times = np.asarray(times, dtype=float)
        vals = np.asarray(values, dtype=float).reshape(times.size, -1)

        def base(t):
            return np.stack([np.interp(t, times, vals[:, j]) for j in range(vals.shape[1])], axis=-1)

        return cls(base, mode, vals.shape[1], tuple(times), label=label)

    def on_grid(self, times) -> np.ndarray:
        return self(np.asarray(times, dtype=float))


def perturb(strategy: StrategyCurve, t: float, eps: float, phi, T: float | None = None) -> StrategyCurve:
    """Add phi on [t, t + eps). Repeated windows accumulate; zero sums vanish."""
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if phi.size != strategy.d:
        raise ValueError("perturbation has the wrong dimension")
    if eps < 0:
        raise ValueError("window length must be non-negative")
    if T is not None and t + eps > T * (1 + 1e-12):
        raise ValueError("perturbation window overflows the horizon")
    if eps == 0 or not np.any(phi):
        return strategy
    key = (float(t), float(t + eps))
    bumps = dict(strategy.bumps)
    total = np.asarray(bumps.get(key, np.zeros_like(phi))) + phi
    if np.any(total):
        bumps[key] = tuple(total)
    else:
        bumps.pop(key, None)
    return StrategyCurve(strategy.base, strategy.mode, strategy.d, strategy.breakpoints, tuple(bumps.items()), strategy.label)


def perturb_steps(strategy: StrategyCurve, model: MarketModel, t_index: int, eps_steps: int, phi) -> StrategyCurve:
    """Grid-indexed form of :func:`perturb`."""
    if t_index < 0 or t_index + eps_steps > model.n_steps:
        raise ValueError("perturbation window overflows the grid")
    return perturb(strategy, float(model.times[t_index]), float(model.times[t_index + eps_steps] - model.times[t_index]), phi)


def exposure(model: MarketModel, strategy: StrategyCurve, t) -> np.ndarray:
    """a = sigma^T pi at the given times."""
    return np.einsum("nji,nj->ni", model.sigma_at(t), strategy(np.atleast_1d(t)))


def conditional_terminal_law(model: MarketModel, strategy: StrategyCurve, t: float, x_t: float) -> Law:
    """Law of X_T given X_t = x_t under a deterministic strategy.

    Proportion mode gives a lognormal law, dollar mode a normal one.
    """
    if strategy.d != model.d:
        raise ValueError("strategy and market dimensions differ")

    def integrand(s):
        a = exposure(model, strategy, s)
        k = model.kappa_at(s)
        return np.stack([(a * k).sum(-1), (a * a).sum(-1)], axis=-1)

    drift, var = integrate(integrand, t, model.T, model.times, strategy.all_breaks)
    var = max(float(var), 0.0)
    if strategy.mode == "proportion":
        if x_t <= 0:
            raise ValueError("proportion-mode wealth must be positive")
        return Law.lognormal(math.log(x_t) + drift - 0.5 * var, var)
    return Law.normal(x_t + drift, var)


# ---------------------------------------------------------------------------
# simulation


def normals(seed: int, paths: int, steps: int, d: int = 1, antithetic: bool = False) -> np.ndarray:
    """Standard normals of shape (paths, steps, d).

    Blocks of CHUNK paths come from a Philox stream keyed by (seed, block),
    so a path's draws do not depend on how many paths are requested.
    With ``antithetic`` the second half of the paths mirrors the first.
    """
    base = (paths + 1) // 2 if antithetic else paths
    out = np.empty((base, steps, d))
    for b in range(0, base, CHUNK):
        gen = np.random.Generator(np.random.Philox(key=np.array([seed, b // CHUNK], dtype=np.uint64)))
        block = gen.standard_normal((CHUNK, steps, d))
        n = min(CHUNK, base - b)
        out[b : b + n] = block[:n]
    if antithetic:
        out = np.concatenate([out, -out[: paths - base]])
    return out


@dataclass(frozen=True, eq=False)
class WealthPaths:
    times: np.ndarray
    X: np.ndarray  # (paths, len(times))
    seed: int
    mode: str

    @property
    def terminal(self) -> np.ndarray:
        return self.X[:, -1]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("path_id,t,X\n")
            for i, row in enumerate(self.X):
                for t, x in zip(self.times, row):
                    fh.write(f"{i},{t:.17g},{x:.17g}\n")


def _simulate(model, strategy, x0, paths, seed, mode, t_index=0, antithetic=False, dW=None, keep_paths=True):
    if strategy.mode != mode:
        raise ValueError(f"strategy mode is {strategy.mode}, expected {mode}")
    n = model.n_steps
    dt = model.dt
    times = model.times[t_index:]
    left = model.times[t_index:-1]
    pi = strategy(left)  # (m, d)
    sig = model.sigma[t_index:-1]
    th = model.theta[t_index:-1]
    a = np.einsum("mji,mj->mi", sig, pi)
    drift = (pi * th).sum(-1)
    if dW is None:
        dW = math.sqrt(dt) * normals(seed, paths, n, model.d, antithetic)[:, t_index:, :]
    shocks = np.einsum("pmi,mi->pm", dW, a)
    if mode == "proportion":
        if x0 <= 0:
            raise ValueError("initial wealth must be positive")
        inc = (drift - 0.5 * (a * a).sum(-1)) * dt + shocks
        logx = math.log(x0) + np.concatenate([np.zeros((paths, 1)), np.cumsum(inc, axis=1)], axis=1)
        X = np.exp(logx)
    else:
        inc = drift * dt + shocks
        X = x0 + np.concatenate([np.zeros((paths, 1)), np.cumsum(inc, axis=1)], axis=1)
    if not keep_paths:
        return WealthPaths(times[[0, -1]], X[:, [0, -1]], seed, mode)
    return WealthPaths(times, X, seed, mode)


def simulate_proportion(model: MarketModel, strategy: StrategyCurve, x0: float, paths: int, seed: int, **kw) -> WealthPaths:
    """Exact log-Euler simulation with pi frozen at left endpoints."""
    return _simulate(model, strategy, x0, paths, seed, "proportion", **kw)


def simulate_dollar(model: MarketModel, strategy: StrategyCurve, x0: float, paths: int, seed: int, **kw) -> WealthPaths:
    """Arithmetic Euler simulation; exact for piecewise-constant pi."""
    return _simulate(model, strategy, x0, paths, seed, "dollar", **kw)


# ---------------------------------------------------------------------------
# recombining lattice for random kappa


@dataclass(frozen=True, eq=False)
class Lattice:
    """Binomial lattice on W with kappa = kappa0 (1 + eta tanh(s W)).

    Node (n, j), j = 0..n, sits at W = (2j - n) sqrt(dt); an up move goes
    to (n+1, j+1).  ``kappa[n]`` holds the values used on step n.
    """

    N: int
    T: float
    kappa0: float
    eta: float = 0.0
    s: float = 1.0
    sigma: float = 0.2
    kappa: list = field(default_factory=list)

    @classmethod
    def build(cls, N: int, T: float, kappa0: float, eta: float = 0.0, s: float = 1.0, sigma: float = 0.2, kappa_fn=None):
        if N < 1 or T <= 0 or sigma <= 0:
            raise ValueError("lattice needs N >= 1, T > 0 and sigma > 0")
        dt = T / N
        field_ = []
        for n in range(N):
            W = (2.0 * np.arange(n + 1) - n) * math.sqrt(dt)
            if kappa_fn is None:
                k = kappa0 * (1.0 + eta * np.tanh(s * W))
            else:
                k = np.asarray(kappa_fn(n * dt, W), dtype=float) * np.ones(n + 1)
            field_.append(k)
        return cls(N, float(T), float(kappa0), float(eta), float(s), float(sigma), field_)

    @classmethod
    def from_field(cls, kappa_levels, T: float, sigma: float = 0.2):
        levels = [np.asarray(k, dtype=float) for k in kappa_levels]
        for n, k in enumerate(levels):
            if k.shape != (n + 1,):
                raise ValueError("level n of the kappa field needs n + 1 nodes")
        k0 = float(max(np.abs(k).max() for k in levels))
        return cls(len(levels), float(T), k0, 0.0, 1.0, float(sigma), levels)

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def bound(self) -> float:
        return abs(self.kappa0) * (1.0 + abs(self.eta))

    @property
    def sup_kappa(self) -> float:
        return float(max(np.abs(k).max() for k in self.kappa))

    def is_deterministic(self) -> bool:
        return all(np.ptp(k) == 0 for k in self.kappa)
