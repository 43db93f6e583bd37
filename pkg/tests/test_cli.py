import json
from pathlib import Path

import numpy as np
import pytest

from lawdep import cli
from lawdep.closedform import Feasibility, InfeasibleError
from lawdep.config import ConfigError, load_config, parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

MERTON = """
[preference]
family = "mixed_crra"
gammas = [-0.5]

[market]
n_steps = 64
theta = [0.08]
sigma = [[0.2]]
"""

WU_FLAT = """
[preference]
family = "weighted_utility"
gamma = -0.5
rho = 0.25

[market.lattice]
N = 32
kappa0 = 0.4
eta = 0.0
sigma = 0.2

[solver]
restarts = 0

[verify]
t_points = [0.5]
"""


def _cfg(tmp_path, text, name="run.ini"):
    f = tmp_path / name
    f.write_text(text)
    return f


def _run(*argv):
    return cli.main([str(a) for a in argv])


def _report(out):
    return json.loads((out / "run_report.json").read_text())


def _csv(path):
    head = path.read_text().splitlines()[0].split(",")
    return head, np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


# --- config -------------------------------------------------------------------------


def test_shipped_configs_parse():
    for f in sorted(CONFIGS.glob("*.ini")):
        cfg = load_config(f)
        assert parse_config(cfg.to_ini()).as_dict() == cfg.as_dict(), f.name


def test_unknown_key_reports_its_line():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config("[preference]\nfamily = 'cara'\nrhoo = [1.0]\n")


def test_override_syntax():
    cfg = parse_config(MERTON, ["market.n_steps=32", "run.seed=7"])
    assert cfg.market.n_steps == 32 and cfg.seed == 7
    with pytest.raises(ConfigError):
        parse_config(MERTON, ["market.n_steps"])


# --- solve commands -------------------------------------------------------------------


def test_solve_crra_dirac_is_constant(tmp_path):
    out = tmp_path / "o"
    assert _run("solve-crra", "--config", _cfg(tmp_path, MERTON), "--out", out) == 0
    head, data = _csv(out / "strategy.csv")
    assert np.allclose(data[:, head.index("pi0")], 4 / 3, atol=1e-12)
    rep = _report(out)
    assert rep["status"]["solve"] == "ok"
    assert rep["subcommand"] == "solve-crra"


@pytest.mark.parametrize("name, sub", [("cara", "solve-cara"), ("mean_variance", "solve-mv"), ("rdu", "solve-rdu")])
def test_shipped_solves_succeed(tmp_path, name, sub):
    out = tmp_path / name
    assert _run(sub, "--config", CONFIGS / f"{name}.ini", "--out", out, "--grid", 64) == 0
    artifact = "rdu_candidate.csv" if name == "rdu" else "strategy.csv"
    assert (out / artifact).exists()


def test_plot_writes_svg(tmp_path):
    out = tmp_path / "p"
    assert _run("solve-crra", "--config", _cfg(tmp_path, MERTON), "--out", out, "--override", "output.plot=True") == 0
    assert (out / "curves.svg").read_text().startswith("<svg")


def test_family_mismatch_is_an_error(tmp_path):
    assert _run("solve-cara", "--config", _cfg(tmp_path, MERTON), "--out", tmp_path / "o") == 1


def test_solve_wu_flat_lattice(tmp_path):
    out = tmp_path / "wu"
    assert _run("solve-wu", "--config", _cfg(tmp_path, WU_FLAT), "--out", out) == 0
    diag = _report(out)["diagnostics"]
    assert diag["V_theta"] == 0.0
    assert diag["iterations"] <= 2
    head, data = _csv(out / "strategy_nodes.csv")
    assert np.allclose(data[:, -1], 1.6, atol=1e-12)


def test_divergence_exits_two(tmp_path):
    text = WU_FLAT.replace("eta = 0.0", "eta = 0.5") + "\n"
    cfg = _cfg(tmp_path, text)
    out = tmp_path / "d"
    assert _run("solve-wu", "--config", cfg, "--out", out, "--override", "solver.v_threshold=1e-4") == 2
    rep = _report(out)
    assert rep["status"]["solve"] == "diverged"
    assert rep["diagnostics"]["V_theta"] > 1e-4


def test_infeasibility_exits_two(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise InfeasibleError(Feasibility(False, 2.0, 1.0, True, 5.0, "forced"))

    monkeypatch.setattr(cli, "solve_equilibrium_crra", boom)
    out = tmp_path / "inf"
    assert _run("solve-crra", "--config", _cfg(tmp_path, MERTON), "--out", out) == 2
    rep = _report(out)
    assert rep["status"]["solve"] == "infeasible"
    assert rep["feasibility"][0]["feasible"] is False


def test_bad_key_exits_one(tmp_path, capsys):
    cfg = _cfg(tmp_path, "[preference]\nfamily = 'cara'\nrhoo = [1.0]\n")
    assert _run("solve-cara", "--config", cfg, "--out", tmp_path / "o") == 1
    assert "line 3" in capsys.readouterr().err


# --- verify --------------------------------------------------------------------------


def test_verify_equilibrium(tmp_path):
    out = tmp_path / "v"
    text = MERTON + "\n[verify]\nt_points = [0.25, 0.5]\n"
    assert _run("verify", "--config", _cfg(tmp_path, text), "--out", out) == 0
    rep = _report(out)
    assert rep["status"]["verdict"] == "equilibrium_consistent"
    assert rep["foc_sup_residual"] < 1e-9
    assert len(rep["verdicts"]) == 8
    assert (out / "perturbation.csv").read_text().startswith("t,phi,eps,gain,std_err")


def test_verify_tampered_strategy_is_violated(tmp_path):
    solved = tmp_path / "s"
    assert _run("solve-crra", "--config", _cfg(tmp_path, MERTON), "--out", solved) == 0
    head, data = _csv(solved / "strategy.csv")
    data[:, head.index("pi0")] = 1.0
    tampered = tmp_path / "tampered.csv"
    np.savetxt(tampered, data, delimiter=",", header=",".join(head), comments="")
    text = MERTON + f"\n[verify]\nt_points = [0.5]\nstrategy = {str(tampered)!r}\n"
    out = tmp_path / "v"
    assert _run("verify", "--config", _cfg(tmp_path, text), "--out", out) == 0
    assert _report(out)["status"]["verdict"] == "violated"


def test_verify_lattice(tmp_path):
    out = tmp_path / "wl"
    assert _run("verify", "--config", _cfg(tmp_path, WU_FLAT), "--out", out) == 0
    assert _report(out)["status"]["verdict"] == "equilibrium_consistent"


# --- determinism --------------------------------------------------------------------


def test_repeated_runs_are_byte_identical(tmp_path):
    cfg = _cfg(tmp_path, MERTON + "\n[verify]\nt_points = [0.5]\nmode = 'mc'\npaths = 2000\n")
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        assert _run("verify", "--config", cfg, "--out", o, "--seed", 5) == 0
    for name in ("perturbation.csv", "foc_residual.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
    a, b = _report(outs[0]), _report(outs[1])
    a["artifacts"] = b["artifacts"] = None
    a["config"] = b["config"] = None
    assert a == b
