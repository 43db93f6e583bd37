"""Rank-dependent candidate strategies for a few probability distortions.

The identity distortion reproduces expected utility; the probit-scale family has a
constant weight 1/s^2; the power distortion degenerates to Lambda = 0.
"""
from lawdep.closedform import solve_rdu_candidate
from lawdep.market import MarketModel
from lawdep.preferences import IdentityDistortion, PowerDistortion, ProbitScaleDistortion, RankDependent


def main():
    m = MarketModel.constant([0.08], [[0.2]], n_steps=128)
    cases = [
        ("identity", IdentityDistortion()),
        ("probit s=0.9", ProbitScaleDistortion(0.9)),
        ("probit s=1.1", ProbitScaleDistortion(1.1)),
        ("power 0.9", PowerDistortion(0.9)),
    ]
    mid = m.n_steps // 2
    print(f"{'distortion':<14}{'lambda(0)':>11}{'lambda(T/2)':>13}{'Lambda(0)':>11}")
    for name, w in cases:
        cand = solve_rdu_candidate(RankDependent(-0.5, w), m)
        print(f"{name:<14}{cand.lam[0]:>11.5f}{cand.lam[mid]:>13.5f}{cand.Lambda[0]:>11.5f}")


if __name__ == "__main__":
    main()
