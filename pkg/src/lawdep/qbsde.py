"""Weighted utility under a random market price of risk.

With r = (gamma, 1 - rho + gamma) and lam = (-gamma, 1 - rho + gamma) / (1 - rho),
the log-moments Ybar_i = log E_s[(X_T / X_s)^{r_i}] of the equilibrium wealth solve

    dYbar_i = -1/2 [Z^T C^i Z + (c^T Z)_i kappa + b_i kappa^2] ds + Z_i dW,  Ybar_i(T) = 0,

with P = I - r lam^T, C^i = P^{-T} (E_i - r_i lam lam^T) P^{-1}, c[:, i] = 2 C^i r and
b_i = r^T C^i r + r_i.  The equilibrium is sigma pi = (kappa + lam . Z) / (rho - 2 gamma).

On a binomial lattice the system is solved by Picard iteration in the
eigenbasis of c, where the linear term is diagonal and is absorbed into
tilted transition weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .market import Lattice


class QbsdeDivergence(RuntimeError):
    """Picard iteration failed to contract."""

    def __init__(self, msg: str, history: list, V_theta: float):
        super().__init__(msg)
        self.history = history
        self.V_theta = V_theta


# ---------------------------------------------------------------------------
# coefficients


def admissible(gamma: float, rho: float) -> bool:
    return -1.0 < gamma <= 0.0 and gamma <= rho < gamma + 1.0 and rho - 2.0 * gamma > 0.0


def closed_form_entries(gamma: float, rho: float) -> dict:
    """Entry-wise formulas for C1, C2, c and b."""
    g, r = gamma, rho
    D = (r - 2 * g) ** 2 * (1 - r) ** 2
    q = 1 - r + g
    C1 = np.array(
        [
            [g**4 + (3 - 4 * r) * g**3 + (1 - r) * (4 - 6 * r) * g**2 - 4 * r * (1 - r) ** 2 * g + r**2 * (1 - r) ** 2, q**2 * (r - g) * g],
            [q**2 * (r - g) * g, g * q**2 * (g - 1)],
        ]
    ) / D
    C2 = np.array(
        [
            [g**2 * q * (g - r), q * (1 - g) * g**2],
            [q * (1 - g) * g**2, g**4 - g**3 - (1 - r) * g**2 - 3 * (1 - r) ** 2 * g + (1 - r) ** 2 * r],
        ]
    ) / D
    c = 2.0 / ((r - 2 * g) ** 2 * (1 - r)) * np.array(
        [
            [g * ((r - g) * (1 - r) + g**2), g**2 * q],
            [-g * q**2, ((r - 3 * g) * (1 - r) - g**2) * q],
        ]
    )
    b = np.array([g * (2 * r - 3 * g - 1), q * (r - 3 * g)]) / (r - 2 * g) ** 2
    return {"C1": C1, "C2": C2, "c": c, "b": b}


def constructive_entries(gamma: float, rho: float) -> dict:
    """The same quantities assembled from P, Q_i and r."""
    r = np.array([gamma, 1 - rho + gamma])
    lam = np.array([-gamma, 1 - rho + gamma]) / (1 - rho)
    P = np.eye(2) - np.outer(r, lam)
    Pi = np.linalg.inv(P)
    C = [Pi.T @ (np.diag(e) - r[i] * np.outer(lam, lam)) @ Pi for i, e in enumerate(([1.0, 0.0], [0.0, 1.0]))]
    c = np.column_stack([2.0 * Ci @ r for Ci in C])
    b = np.array([r @ C[i] @ r + r[i] for i in range(2)])
    return {"C1": C[0], "C2": C[1], "c": c, "b": b, "P": P, "P_inv": Pi, "r": r, "lam": lam}


@dataclass(frozen=True, eq=False)
class WuCoefficients:
    gamma: float
    rho: float
    r: np.ndarray
    lam: np.ndarray
    P: np.ndarray
    P_inv: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    c: np.ndarray
    b: np.ndarray
    crosscheck: float = 0.0  # largest relative gap between the two constructions

    @property
    def r1(self):
        return float(self.r[0])

    @property
    def r2(self):
        return float(self.r[1])

    @property
    def lambda1(self):
        return float(self.lam[0])

    @property
    def lambda2(self):
        return float(self.lam[1])

    @property
    def C(self):
        return (self.C1, self.C2)

    @property
    def denom(self) -> float:
        return self.rho - 2.0 * self.gamma


def build_coefficients(gamma: float, rho: float, check: float = 1e-12) -> WuCoefficients:
    if not admissible(gamma, rho):
        raise ValueError("need -1 < gamma <= 0, gamma <= rho < gamma + 1 and rho > 2 gamma")
    cf = closed_form_entries(gamma, rho)
    ct = constructive_entries(gamma, rho)
    gap = 0.0
    for k in ("C1", "C2", "c", "b"):
        s = max(1.0, float(np.abs(ct[k]).max()))
        gap = max(gap, float(np.abs(cf[k] - ct[k]).max()) / s)
    if gap > check:
        raise ArithmeticError(f"coefficient constructions disagree by {gap:.3e}")
    return WuCoefficients(gamma, rho, ct["r"], ct["lam"], ct["P"], ct["P_inv"], ct["C1"], ct["C2"], ct["c"], ct["b"], gap)


def decouple(coeffs_or_c) -> tuple[np.ndarray, np.ndarray]:
    """Real eigen-decomposition of c; columns of the returned matrix are eigenvectors."""
    c = coeffs_or_c.c if isinstance(coeffs_or_c, WuCoefficients) else np.asarray(coeffs_or_c, dtype=float)
    mu, U = np.linalg.eig(c)
    if np.any(np.abs(mu.imag) > 1e-12 * max(1.0, np.abs(mu).max())):
        raise ArithmeticError("c has complex eigenvalues")
    mu, U = mu.real, U.real
    order = np.argsort(mu)
    mu, U = mu[order], U[:, order]
    # sign convention: largest component positive
    for j in range(U.shape[1]):
        k = np.argmax(np.abs(U[:, j]))
        if U[k, j] < 0:
            U[:, j] = -U[:, j]
    return mu, U


# ---------------------------------------------------------------------------
# lattice utilities


def v_theta(lattice: Lattice) -> float:
    """sup over nodes of the oscillation of the remaining int kappa^2 about its mean."""
    dt = lattice.dt
    E = Mx = Mn = np.zeros(lattice.N + 1)
    worst = 0.0
    for n in range(lattice.N - 1, -1, -1):
        inc = lattice.kappa[n] ** 2 * dt
        E = inc + 0.5 * (E[1:] + E[:-1])
        Mx = inc + np.maximum(Mx[1:], Mx[:-1])
        Mn = inc + np.minimum(Mn[1:], Mn[:-1])
        worst = max(worst, float(np.max(Mx - E)), float(np.max(E - Mn)))
    return worst


def bmo_norm(levels: list, dt: float) -> float:
    """sqrt of sup over nodes of E_node[sum_{s >= node} |Z_s|^2 dt] (uniform weights)."""
    N = len(levels)
    Q = np.zeros(N + 1)
    worst = 0.0
    for n in range(N - 1, -1, -1):
        z = np.asarray(levels[n])
        sq = (z * z).sum(-1) if z.ndim > 1 else z * z
        Q = sq * dt + 0.5 * (Q[1:] + Q[:-1])
        worst = max(worst, float(Q.max()))
    return math.sqrt(worst)


def deterministic_Ybar(coeffs: WuCoefficients, lattice: Lattice) -> np.ndarray:
    """Per-level 1/2 b_i sum kappa^2 dt for a deterministic kappa field, shape (N+1, 2)."""
    k2 = np.array([k[0] ** 2 for k in lattice.kappa]) * lattice.dt
    tail = np.concatenate([np.cumsum(k2[::-1])[::-1], [0.0]])
    return 0.5 * tail[:, None] * coeffs.b[None, :]


@dataclass(eq=False)
class QbsdeSolution:
    Ybar: list  # level n -> (n+1, 2)
    Zbar: list  # level n -> (n+1, 2), n < N
    bmo_norm_Z: float
    iterations: int
    contraction_history: list
    V_theta: float
    converged: bool = True
    restarts_gap: float | None = None
    extras: dict = field(default_factory=dict)

    @property
    def Ybar1(self):
        return [y[:, 0] for y in self.Ybar]

    @property
    def Ybar2(self):
        return [y[:, 1] for y in self.Ybar]

    @property
    def Zbar1(self):
        return [z[:, 0] for z in self.Zbar]

    @property
    def Zbar2(self):
        return [z[:, 1] for z in self.Zbar]

    def sup_Z(self) -> float:
        return float(max(np.abs(z).max() for z in self.Zbar))

    def diagnostics(self) -> dict:
        return {
            "V_theta": self.V_theta,
            "bmo_norm_Z": self.bmo_norm_Z,
            "iterations": self.iterations,
            "contraction_history": [float(v) for v in self.contraction_history],
            "converged": self.converged,
        }

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("level,node_index,Ybar1,Ybar2,Zbar1,Zbar2\n")
            for n, y in enumerate(self.Ybar):
                z = self.Zbar[n] if n < len(self.Zbar) else np.full_like(y, np.nan)
                for j in range(y.shape[0]):
                    vals = (y[j, 0], y[j, 1], z[j, 0], z[j, 1])
                    fh.write(f"{n},{j}," + ",".join(f"{v:.17g}" for v in vals) + "\n")


def _picard_sweep(coeffs, lattice, mu, U, Uinv, D, beta, z_prev):
    """One application of the Picard map in the eigen-coordinates.

    z_prev holds transformed Z (level n -> (n+1, 2)).  Returns the new
    transformed Y and Z level lists.
    """
    N, dt = lattice.N, lattice.dt
    sq = math.sqrt(dt)
    Y = [None] * (N + 1)
    Z = [None] * N
    Y[N] = np.zeros((N + 1, 2))
    for n in range(N - 1, -1, -1):
        up, dn = Y[n + 1][1:], Y[n + 1][:-1]
        k = lattice.kappa[n][:, None]
        p_up = np.clip(0.5 * (1.0 + 0.5 * mu[None, :] * k * sq), 1e-12, 1 - 1e-12)
        zp = z_prev[n]
        quad = np.stack([np.einsum("ni,ij,nj->n", zp, D[j], zp) for j in range(2)], axis=-1)
        Y[n] = p_up * up + (1.0 - p_up) * dn + 0.5 * (quad + beta[None, :] * k * k) * dt
        Z[n] = (up - dn) / (2.0 * sq)
    return Y, Z


def solve_picard(
    coeffs: WuCoefficients,
    lattice: Lattice,
    tol: float = 1e-12,
    max_iter: int = 200,
    z0: list | None = None,
    v_threshold: float | None = None,
) -> QbsdeSolution:
    """Picard iteration for the coupled quadratic system on the lattice.

    The stopping rule uses the lattice BMO norm of successive Z differences.
    Three non-decreasing steps in a row, or a blow-up of Ybar beyond ten
    times its deterministic scale, abort with :class:`QbsdeDivergence`.
    """
    V = v_theta(lattice)
    if v_threshold is not None and V > v_threshold:
        raise QbsdeDivergence(
            f"V(Theta) = {V:.4g} exceeds the configured threshold {v_threshold:.4g}; "
            "existence is only guaranteed when V(Theta) is small",
            [],
            V,
        )
    mu, U = decouple(coeffs)
    T_ = U.T  # rows are eigenvectors: transformed Y = T_ @ Ybar
    T_inv = np.linalg.inv(T_)
    D = [T_inv.T @ (T_[j, 0] * coeffs.C1 + T_[j, 1] * coeffs.C2) @ T_inv for j in range(2)]
    beta = T_ @ coeffs.b
    N, dt = lattice.N, lattice.dt
    scale = 10.0 * max(1e-300, 0.5 * float(np.abs(coeffs.b).max()) * lattice.sup_kappa**2 * lattice.T) + 1e-12

    if z0 is None:
        z = [np.zeros((n + 1, 2)) for n in range(N)]
    else:
        z = [np.asarray(v, dtype=float) @ T_.T for v in z0]  # original -> transformed
    history: list[float] = []
    rising = 0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Yt, Zt = _picard_sweep(coeffs, lattice, mu, U, T_inv, D, beta, z)
        Zorig_new = [v @ T_inv.T for v in Zt]
        Zorig_old = [v @ T_inv.T for v in z]
        diff = bmo_norm([a - b for a, b in zip(Zorig_new, Zorig_old)], dt)
        history.append(diff)
        z = Zt
        ymax = max(float(np.abs(y).max()) for y in Yt)
        if not math.isfinite(ymax) or ymax > scale:
            raise QbsdeDivergence(f"Ybar blew up (|Y| = {ymax:.3g}); V(Theta) = {V:.4g} is likely too large", history, V)
        if diff < tol:
            converged = True
            break
        if len(history) >= 2 and history[-1] >= history[-2]:
            rising += 1
            if rising >= 3:
                raise QbsdeDivergence(
                    f"contraction lost after {it} iterations; V(Theta) = {V:.4g} may violate the smallness condition",
                    history,
                    V,
                )
        else:
            rising = 0
    if not converged:
        raise QbsdeDivergence(f"no convergence within {max_iter} iterations", history, V)
    Ybar = [y @ T_inv.T for y in Yt]
    Zbar = [v @ T_inv.T for v in Zt]
    return QbsdeSolution(Ybar, Zbar, bmo_norm(Zbar, dt), it, history, V, True, None, {"eigvals": mu, "eigvecs": U})


def recursion_residual(coeffs: WuCoefficients, lattice: Lattice, sol: QbsdeSolution) -> float:
    """Largest violation of the explicit backward scheme in the original coordinates."""
    dt = lattice.dt
    sq = math.sqrt(dt)
    worst = 0.0
    for n in range(lattice.N):
        up, dn = sol.Ybar[n + 1][1:], sol.Ybar[n + 1][:-1]
        Z = (up - dn) / (2 * sq)
        k = lattice.kappa[n]
        drv = np.stack(
            [np.einsum("ni,ij,nj->n", Z, Ci, Z) + (Z @ coeffs.c[:, i]) * k + coeffs.b[i] * k * k for i, Ci in enumerate(coeffs.C)],
            axis=-1,
        )
        res = sol.Ybar[n] - 0.5 * (up + dn) - 0.5 * drv * dt
        worst = max(worst, float(np.abs(res).max()), float(np.abs(Z - sol.Zbar[n]).max()))
    return worst


def restart_check(coeffs: WuCoefficients, lattice: Lattice, sol: QbsdeSolution, n_restarts: int = 3, size: float = 1e-2, seed: int = 0, tol: float = 1e-12, max_iter: int = 200) -> float:
    """Restart from random small Z fields; return the largest gap to ``sol``."""
    rng = np.random.default_rng(seed)
    gap = 0.0
    for _ in range(n_restarts):
        z0 = [size * rng.uniform(-1, 1, (n + 1, 2)) for n in range(lattice.N)]
        other = solve_picard(coeffs, lattice, tol, max_iter, z0=z0)
        gap = max(gap, max(float(np.abs(a - b).max()) for a, b in zip(other.Ybar, sol.Ybar)))
        gap = max(gap, max(float(np.abs(a - b).max()) for a, b in zip(other.Zbar, sol.Zbar)))
    sol.restarts_gap = gap
    return gap


# ---------------------------------------------------------------------------
# strategy on the lattice


@dataclass(eq=False)
class AdaptedStrategy:
    """Proportion strategy pi[n][j] held on step n from node (n, j)."""

    levels: list
    sigma: float

    def shifted(self, c: float) -> "AdaptedStrategy":
        return AdaptedStrategy([p + c for p in self.levels], self.sigma)

    def bumped(self, start: int, steps: int, phi: float) -> "AdaptedStrategy":
        if start < 0 or start + steps > len(self.levels):
            raise ValueError("perturbation window overflows the lattice")
        lv = [p.copy() for p in self.levels]
        for n in range(start, start + steps):
            lv[n] = lv[n] + phi
        return AdaptedStrategy(lv, self.sigma)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("level,node_index,pi\n")
            for n, p in enumerate(self.levels):
                for j, v in enumerate(p):
                    fh.write(f"{n},{j},{v:.17g}\n")

    @classmethod
    def from_csv(cls, path, sigma: float) -> "AdaptedStrategy":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        N = int(data[:, 0].max()) + 1
        lv = [np.zeros(n + 1) for n in range(N)]
        for n, j, v in data:
            lv[int(n)][int(j)] = v
        return cls(lv, sigma)


def extract_strategy(coeffs: WuCoefficients, lattice: Lattice, sol: QbsdeSolution) -> AdaptedStrategy:
    """sigma pi = (kappa + lam1 Z1 + lam2 Z2) / (rho - 2 gamma) at every node."""
    if not sol.converged:
        raise ValueError("solution did not converge")
    lv = [(k + z @ coeffs.lam) / (lattice.sigma * coeffs.denom) for k, z in zip(lattice.kappa, sol.Zbar)]
    return AdaptedStrategy(lv, lattice.sigma)


def log_moments(r: np.ndarray, lattice: Lattice, strategy: AdaptedStrategy, start: int = 0):
    """Exact lattice values of log E_node[(X_T / X_node)^{r_i}] for levels >= start.

    Returns (ybar, zhat): ybar[n] has shape (n+1, len(r)); zhat[n] is the
    log-difference quotient that plays the role of Z_i / Y_i.
    """
    N, dt = lattice.N, lattice.dt
    sq = math.sqrt(dt)
    r = np.asarray(r, dtype=float)
    sig = strategy.sigma
    ybar = [None] * (N + 1)
    zhat = [None] * N
    ybar[N] = np.zeros((N + 1, r.size))
    for n in range(N - 1, start - 1, -1):
        p = strategy.levels[n][:, None]
        k = lattice.kappa[n][:, None]
        drift = (p * sig * k - 0.5 * (sig * p) ** 2) * dt
        lu, ld = drift + sig * p * sq, drift - sig * p * sq
        up, dn = ybar[n + 1][1:], ybar[n + 1][:-1]
        ybar[n] = np.logaddexp(r * lu + up, r * ld + dn) - math.log(2.0)
        zhat[n] = (r * (lu - ld) + up - dn) / (2.0 * sq)
    return ybar, zhat


def foc_residual_wu(coeffs: WuCoefficients, lattice: Lattice, strategy: AdaptedStrategy, return_field: bool = False):
    """sup over nodes of |sigma pi - kappa - lam1 Zhat1 - lam2 Zhat2|."""
    _, zhat = log_moments(coeffs.r, lattice, strategy)
    res = [strategy.sigma * p - k - z @ coeffs.lam for p, k, z in zip(strategy.levels, lattice.kappa, zhat)]
    worst = float(max(np.abs(v).max() for v in res))
    if not np.isfinite(worst):
        raise OverflowError("non-finite FOC residual; refine the lattice")
    return (worst, res) if return_field else worst
