"""Batch front end.

    lawdep <subcommand> [--config PATH] [--seed N] [--out DIR]
                        [--override section.key=value ...]
                        [--quadrature-order N] [--grid N]

Exit status: 0 on success (including a "violated" verdict), 2 when the
problem is infeasible or the lattice solver diverges, 1 on any other error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .closedform import (
    InfeasibleError,
    solve_equilibrium_cara,
    solve_equilibrium_crra,
    solve_equilibrium_mv,
    solve_rdu_candidate,
)
from .config import ConfigError, RunConfig, load_config, parse_config
from .market import StrategyCurve
from .qbsde import (
    AdaptedStrategy,
    QbsdeDivergence,
    build_coefficients,
    extract_strategy,
    foc_residual_wu,
    restart_check,
    solve_picard,
)
from .verify import (
    certify,
    foc_residual_cara,
    foc_residual_crra,
    perturbation_test_wu_lattice,
    phi_basket,
    write_reports_csv,
)

SUBCOMMANDS = ("solve-crra", "solve-cara", "solve-mv", "solve-rdu", "solve-wu", "verify", "selftest")
_FAMILY_FOR = {
    "solve-crra": ("mixed_crra",),
    "solve-cara": ("cara",),
    "solve-mv": ("mean_variance",),
    "solve-rdu": ("rdu",),
    "solve-wu": ("weighted_utility",),
}
_MODE = {"mixed_crra": "proportion", "cara": "dollar", "mean_variance": "dollar"}


def _f(x) -> float | list:
    """Floats rounded through 17 significant digits so JSON output is stable."""
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_f(v) for v in x]
    return float(f"{float(x):.17g}")


def _clean(d: dict) -> dict:
    return {k: _f(v) if isinstance(v, (float, list)) else v for k, v in d.items()}


class Run:
    def __init__(self, cfg: RunConfig, subcommand: str, out: Path):
        self.cfg, self.sub, self.out = cfg, subcommand, out
        self.report: dict = {
            "tool": "lawdep",
            "version": __version__,
            "subcommand": subcommand,
            "seed": cfg.seed,
            "config": cfg.to_ini(),
            "status": {},
            "feasibility": [],
            "verdicts": [],
            "artifacts": [],
        }
        self.timings: dict = {}

    def artifact(self, name: str) -> Path:
        self.report["artifacts"].append(name)
        return self.out / name

    def timed(self, label, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        finally:
            self.timings[label] = time.perf_counter() - t0

    def finish(self) -> None:
        self.report["artifacts"].append("timings.json")
        (self.out / "run_report.json").write_text(json.dumps(self.report, indent=2, sort_keys=True) + "\n")
        (self.out / "timings.json").write_text(json.dumps(self.timings, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# deterministic solves


def _solve_deterministic(run: Run):
    cfg = run.cfg
    fam = cfg.preference.family
    pref = cfg.preference.build()
    model = cfg.market.build()
    order, sub = cfg.solver.quadrature_order, cfg.solver.substeps
    if fam == "mixed_crra":
        return pref, model, run.timed("solve", solve_equilibrium_crra, pref, model, order, sub)
    if fam == "cara":
        return pref, model, run.timed("solve", solve_equilibrium_cara, pref, model, order, sub)
    if fam == "mean_variance":
        return pref, model, run.timed("solve", solve_equilibrium_mv, pref.gamma, model)
    if fam == "rdu":
        return pref, model, run.timed("solve", solve_rdu_candidate, pref, model, order, sub)
    raise ConfigError(f"family {fam} has no deterministic solver")


def cmd_solve_deterministic(run: Run) -> int:
    try:
        _, model, sol = _solve_deterministic(run)
    except InfeasibleError as exc:
        run.report["status"]["solve"] = "infeasible"
        run.report["feasibility"].append(exc.record.as_dict())
        return 2
    name = "rdu_candidate.csv" if run.cfg.preference.family == "rdu" else "strategy.csv"
    sol.to_csv(run.artifact(name))
    summary = sol.summary()
    if summary.get("feasibility"):
        run.report["feasibility"].append(summary.pop("feasibility"))
    run.report["status"]["solve"] = "ok"
    run.report["solution"] = _clean(summary)
    if run.cfg.output.plot:
        if run.cfg.preference.family == "rdu":
            series = {"Lambda": sol.Lambda, "lambda": sol.lam}
        else:
            series = {"A": sol.A, **{f"pi{j}": sol.pi_grid[:, j] for j in range(sol.pi_grid.shape[1])}}
        write_svg(run.artifact("curves.svg"), model.times, series)
    return 0


# ---------------------------------------------------------------------------
# lattice solve


def _solve_lattice(run: Run):
    cfg = run.cfg
    pref = cfg.preference.build()
    co = build_coefficients(pref.gamma, pref.rho)
    lat = cfg.market.lattice.build(cfg.market.T)
    sol = run.timed("picard", solve_picard, co, lat, cfg.solver.picard_tol, cfg.solver.picard_max_iter, v_threshold=cfg.solver.v_threshold)
    return co, lat, sol


def cmd_solve_wu(run: Run) -> int:
    try:
        co, lat, sol = _solve_lattice(run)
    except QbsdeDivergence as exc:
        run.report["status"]["solve"] = "diverged"
        run.report["diagnostics"] = {"message": str(exc), "V_theta": _f(exc.V_theta), "contraction_history": _f(exc.history)}
        return 2
    if run.cfg.solver.restarts:
        run.timed("restarts", restart_check, co, lat, sol, run.cfg.solver.restarts, seed=run.cfg.seed)
    strat = extract_strategy(co, lat, sol)
    sol.to_csv(run.artifact("qbsde_nodes.csv"))
    strat.to_csv(run.artifact("strategy_nodes.csv"))
    diag = sol.diagnostics()
    diag["restarts_gap"] = sol.restarts_gap
    diag["coefficient_crosscheck"] = co.crosscheck
    diag["foc_residual"] = foc_residual_wu(co, lat, strat)
    run.report["diagnostics"] = _clean(diag)
    run.report["status"]["solve"] = "ok"
    return 0


# ---------------------------------------------------------------------------
# verification


def read_strategy_csv(path, mode: str) -> StrategyCurve:
    """Piecewise-linear strategy from a CSV with a t column and pi0, pi1, ... columns."""
    with open(path) as fh:
        head = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    cols = [i for i, h in enumerate(head) if h.startswith("pi")]
    if "t" not in head or not cols:
        raise ConfigError(f"{path}: need a t column and at least one pi column")
    return StrategyCurve.piecewise_linear(data[:, head.index("t")], data[:, cols], mode, label=str(path))


def _record_reports(run: Run, reports) -> None:
    write_reports_csv(reports, run.artifact("perturbation.csv"))
    for rep in reports:
        run.report["verdicts"].append(_clean(rep.summary()))
    bad = [r for r in reports if r.verdict != "equilibrium_consistent"]
    run.report["status"]["verdict"] = "violated" if any(r.verdict == "violated" for r in bad) else ("inconclusive" if bad else "equilibrium_consistent")


def cmd_verify(run: Run) -> int:
    cfg = run.cfg
    fam = cfg.preference.family
    if fam == "weighted_utility":
        return _verify_lattice(run)
    if fam not in _MODE:
        raise ConfigError(f"no verifier for family {fam}")
    pref = cfg.preference.build()
    model = cfg.market.build()
    if cfg.verify.strategy:
        strategy = read_strategy_csv(cfg.verify.strategy, _MODE[fam])
        run.report["status"]["strategy"] = "loaded"
    else:
        try:
            _, _, sol = _solve_deterministic(run)
        except InfeasibleError as exc:
            run.report["status"]["solve"] = "infeasible"
            run.report["feasibility"].append(exc.record.as_dict())
            return 2
        strategy = sol.strategy
        run.report["status"]["strategy"] = "solved"
    if fam in ("mixed_crra", "cara"):
        fn = foc_residual_crra if fam == "mixed_crra" else foc_residual_cara
        curve = run.timed("foc", fn, pref, model, strategy, cfg.solver.quadrature_order)
        with open(run.artifact("foc_residual.csv"), "w") as fh:
            fh.write("t,A," + ",".join(f"r{j}" for j in range(curve.residual.shape[1])) + "\n")
            for t, A, r in zip(curve.times, curve.A, curve.residual):
                fh.write(",".join(f"{v:.17g}" for v in (t, A, *r)) + "\n")
        run.report["foc_sup_residual"] = _f(curve.sup)
    kw = dict(mode=cfg.verify.mode, paths=cfg.verify.paths, seed=cfg.seed, tol_gain=cfg.verify.tol_gain)
    if cfg.verify.eps_grid is not None:
        kw["eps_grid"] = cfg.verify.eps_grid
    reports = run.timed("perturbation", certify, pref, model, strategy, cfg.verify.t_points, cfg.verify.phi_scale, **kw)
    _record_reports(run, reports)
    return 0


def _verify_lattice(run: Run) -> int:
    cfg = run.cfg
    pref = cfg.preference.build()
    co = build_coefficients(pref.gamma, pref.rho)
    lat = cfg.market.lattice.build(cfg.market.T)
    if cfg.verify.strategy:
        strategy = AdaptedStrategy.from_csv(cfg.verify.strategy, lat.sigma)
        if len(strategy.levels) != lat.N:
            raise ConfigError(f"{cfg.verify.strategy}: {len(strategy.levels)} levels, lattice has {lat.N}")
        run.report["status"]["strategy"] = "loaded"
    else:
        try:
            _, _, sol = _solve_lattice(run)
        except QbsdeDivergence as exc:
            run.report["status"]["solve"] = "diverged"
            run.report["diagnostics"] = {"message": str(exc), "V_theta": _f(exc.V_theta)}
            return 2
        strategy = extract_strategy(co, lat, sol)
        run.report["status"]["strategy"] = "solved"
    run.report["foc_sup_residual"] = _f(run.timed("foc", foc_residual_wu, co, lat, strategy))
    levels = cfg.verify.t_levels
    if levels is None:
        levels = sorted({min(lat.N - 1, int(round(t / lat.dt))) for t in cfg.verify.t_points})
    tol = 1e-6 if cfg.verify.tol_gain is None else cfg.verify.tol_gain
    reports = [
        perturbation_test_wu_lattice(co, lat, strategy, int(n), float(phi[0]), tol_gain=tol)
        for n in levels
        for phi in phi_basket(1, cfg.verify.phi_scale)
    ]
    _record_reports(run, reports)
    return 0


def cmd_selftest(run: Run) -> int:
    from .acceptance import run_all

    results = run_all(verbose=True)
    run.report["acceptance"] = [{k: v for k, v in r.as_dict().items() if k != "runtime"} for r in results]
    run.timings.update({f"criterion_{r.number}": r.runtime for r in results})
    ok = all(r.passed for r in results)
    run.report["status"]["selftest"] = "pass" if ok else "fail"
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# plotting


def write_svg(path, x, series: dict, width: int = 640, height: int = 360) -> None:
    """Static line plot of a few curves against x, one polyline each."""
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
    pad = 40
    x = np.asarray(x, dtype=float)
    ys = np.concatenate([np.asarray(v, dtype=float) for v in series.values()])
    lo, hi = float(ys.min()), float(ys.max())
    hi = hi if hi > lo else lo + 1.0
    sx = lambda v: pad + (v - x[0]) / (x[-1] - x[0]) * (width - 2 * pad)
    sy = lambda v: height - pad - (v - lo) / (hi - lo) * (height - 2 * pad)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" stroke="#888"/>',
        f'<text x="{pad}" y="{height - 10}" font-size="11">t from {x[0]:.3g} to {x[-1]:.3g}; y from {lo:.4g} to {hi:.4g}</text>',
    ]
    for k, (name, v) in enumerate(series.items()):
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, np.asarray(v, dtype=float)))
        c = colors[k % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 14 * (k + 1)}" font-size="11" fill="{c}">{name}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lawdep", description="Equilibrium strategies for law-dependent preferences.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--quadrature-order", type=int)
    p.add_argument("--grid", type=int, help="time steps (market grid and lattice levels)")
    return p


def load_run_config(args) -> RunConfig:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.quadrature_order is not None:
        overrides.append(f"solver.quadrature_order={args.quadrature_order}")
    if args.grid is not None:
        overrides += [f"market.n_steps={args.grid}", f"market.lattice.N={args.grid}"]
    if args.out is not None:
        overrides.append(f"output.directory={str(args.out)!r}")
    if args.config is None:
        return parse_config("", overrides)
    return load_config(args.config, overrides)


def run(subcommand: str, cfg: RunConfig) -> int:
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    r = Run(cfg, subcommand, out)
    try:
        if subcommand in _FAMILY_FOR and cfg.preference.family not in _FAMILY_FOR[subcommand]:
            raise ConfigError(f"{subcommand} needs preference family {_FAMILY_FOR[subcommand][0]}, got {cfg.preference.family}")
        if subcommand == "solve-wu":
            code = cmd_solve_wu(r)
        elif subcommand.startswith("solve-"):
            code = cmd_solve_deterministic(r)
        elif subcommand == "verify":
            code = cmd_verify(r)
        else:
            code = cmd_selftest(r)
    except (ConfigError, ValueError, TypeError, OSError) as exc:
        r.report["status"]["error"] = str(exc)
        r.finish()
        print(f"lawdep: error: {exc}", file=sys.stderr)
        return 1
    r.finish()
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args)
    except (ConfigError, OSError) as exc:
        print(f"lawdep: error: {exc}", file=sys.stderr)
        return 1
    return run(args.subcommand, cfg)


if __name__ == "__main__":
    sys.exit(main())
