"""Grid refinement of the weighted-utility lattice solver.

The lattice first-order residual should shrink roughly like 1/N.
"""
import argparse

from lawdep.market import Lattice
from lawdep.qbsde import build_coefficients, extract_strategy, foc_residual_wu, solve_picard, v_theta


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--gamma", type=float, default=-0.5)
    ap.add_argument("--rho", type=float, default=0.25)
    ap.add_argument("--eta", type=float, default=0.02)
    ap.add_argument("--grids", type=int, nargs="+", default=[50, 100, 200, 400])
    args = ap.parse_args()

    co = build_coefficients(args.gamma, args.rho)
    print(f"{'N':>6}{'V(Theta)':>11}{'iters':>7}{'sup|Z|':>11}{'residual':>12}{'ratio':>8}")
    prev = None
    for N in args.grids:
        lat = Lattice.build(N, 1.0, 0.4, eta=args.eta, s=1.0, sigma=0.2)
        sol = solve_picard(co, lat)
        res = foc_residual_wu(co, lat, extract_strategy(co, lat, sol))
        ratio = f"{prev / res:8.3f}" if prev else " " * 8
        print(f"{N:>6}{v_theta(lat):>11.5f}{sol.iterations:>7}{sol.sup_Z():>11.3e}{res:>12.3e}{ratio}")
        prev = res


if __name__ == "__main__":
    main()
