"""Recover Merton's constant strategies from the ODE solver and check them by perturbation.

    python scripts/merton_recovery.py --steps 256
"""
import argparse

import numpy as np

from lawdep.closedform import solve_equilibrium_cara, solve_equilibrium_crra
from lawdep.market import MarketModel
from lawdep.preferences import MixedCARA, MixedCRRA
from lawdep.verify import certify

KAPPA, SIGMA = 0.4, 0.2


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=256)
    args = ap.parse_args()
    m = MarketModel.constant([KAPPA * SIGMA], [[SIGMA]], n_steps=args.steps)

    print(f"{'preference':<18}{'pi*':>10}{'oracle':>10}{'max gap':>11}{'worst limit':>13}")
    rows = [(f"CRRA gamma={g}", MixedCRRA([g]), solve_equilibrium_crra, KAPPA / (SIGMA * (1 - g))) for g in (-1.0, -0.5, 0.0, 0.5)]
    rows += [(f"CARA rho={r}", MixedCARA([r]), solve_equilibrium_cara, KAPPA / (SIGMA * r)) for r in (0.5, 1.0, 2.0)]
    for name, pref, solver, oracle in rows:
        sol = solver(pref, m)
        gap = np.abs(sol.pi_grid - oracle).max()
        worst = max(r.extrapolated_limit for r in certify(pref, m, sol.strategy, (0.25, 0.5, 0.75)))
        print(f"{name:<18}{sol.pi_grid[0, 0]:>10.6f}{oracle:>10.6f}{gap:>11.1e}{worst:>13.1e}")


if __name__ == "__main__":
    main()
