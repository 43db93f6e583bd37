"""Run configuration: INI files with dotted section names, typed dataclass blocks.

Values are Python literals (numbers, strings, lists, None, booleans); a
bare word that is not a literal is kept as a string.  Unknown sections or
keys are rejected with the line they appear on.
"""

from __future__ import annotations

import ast
import configparser
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .market import Lattice, MarketModel
from .preferences import Preference, from_spec

_PREF_KEYS = {
    "mixed_crra": {"gammas", "weights", "eps0"},
    "cara": {"rhos", "weights"},
    "weighted_utility": {"gamma", "rho"},
    "mean_variance": {"gamma"},
    "expected_utility": {"gamma"},
    "rdu": {"gamma", "distortion", "theta", "s"},
}
_ALIASES = {"wu": "weighted_utility", "mv": "mean_variance"}


class ConfigError(ValueError):
    pass


@dataclass
class PreferenceConfig:
    family: str = "mixed_crra"
    params: dict = field(default_factory=lambda: {"gammas": [-0.5]})

    def build(self) -> Preference:
        return from_spec(self.family, **self.params)


@dataclass
class LatticeConfig:
    N: int = 512
    kappa0: float = 0.4
    eta: float = 0.0
    s: float = 1.0
    sigma: float = 0.2

    def build(self, T: float) -> Lattice:
        return Lattice.build(self.N, T, self.kappa0, self.eta, self.s, self.sigma)


@dataclass
class MarketConfig:
    """theta(t) = theta + theta_slope * t, sigma(t) = sigma + sigma_slope * t."""

    T: float = 1.0
    n_steps: int = 256
    theta: list = field(default_factory=lambda: [0.08])
    sigma: list = field(default_factory=lambda: [[0.2]])
    theta_slope: list | None = None
    sigma_slope: list | None = None
    c1: float | None = None
    c2: float | None = None
    lattice: LatticeConfig = field(default_factory=LatticeConfig)

    def build(self) -> MarketModel:
        th0 = np.atleast_1d(np.asarray(self.theta, dtype=float))
        sg0 = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        th1 = np.zeros_like(th0) if self.theta_slope is None else np.atleast_1d(np.asarray(self.theta_slope, dtype=float))
        sg1 = np.zeros_like(sg0) if self.sigma_slope is None else np.atleast_2d(np.asarray(self.sigma_slope, dtype=float))
        return MarketModel.from_functions(
            lambda t: th0 + th1 * t, lambda t: sg0 + sg1 * t, self.T, self.n_steps, c1=self.c1, c2=self.c2
        )


@dataclass
class SolverConfig:
    quadrature_order: int = 64
    substeps: int = 4
    picard_tol: float = 1e-12
    picard_max_iter: int = 200
    v_threshold: float | None = None
    restarts: int = 3


@dataclass
class VerifyConfig:
    t_points: list = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9])
    phi_scale: float = 0.05
    eps_grid: list | None = None
    mode: str = "analytic"
    paths: int = 20000
    tol_gain: float | None = None
    strategy: str | None = None
    t_levels: list | None = None


@dataclass
class OutputConfig:
    directory: str = "out"
    plot: bool = False


@dataclass
class RunConfig:
    preference: PreferenceConfig = field(default_factory=PreferenceConfig)
    market: MarketConfig = field(default_factory=MarketConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    # -- serialisation ---------------------------------------------------

    def to_ini(self) -> str:
        out = ["[run]", f"seed = {self.seed!r}", "", "[preference]", f"family = {self.preference.family!r}"]
        out += [f"{k} = {v!r}" for k, v in sorted(self.preference.params.items())]
        for name, block in (
            ("market", self.market),
            ("market.lattice", self.market.lattice),
            ("solver", self.solver),
            ("verify", self.verify),
            ("output", self.output),
        ):
            out += ["", f"[{name}]"]
            for f in fields(block):
                v = getattr(block, f.name)
                if not hasattr(v, "__dataclass_fields__"):
                    out.append(f"{f.name} = {v!r}")
        return "\n".join(out) + "\n"

    def as_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "RunConfig":
        """Re-run every owning module's parameter checks."""
        self.preference.build()
        self.market.build()
        self.market.lattice.build(self.market.T)
        if self.solver.quadrature_order < 2:
            raise ConfigError("solver.quadrature_order must be at least 2")
        if self.verify.mode not in ("analytic", "mc"):
            raise ConfigError("verify.mode must be 'analytic' or 'mc'")
        if any(not 0 <= t < self.market.T for t in self.verify.t_points):
            raise ConfigError("verify.t_points must lie in [0, T)")
        return self


# ---------------------------------------------------------------------------
# parsing


def _literal(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw.strip()


def _line_map(text: str) -> dict:
    """(section, key) -> line number, plus (section, None) for headers."""
    where, sec = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[(.+)\]$", s)
        if m:
            sec = m.group(1).strip()
            where[(sec, None)] = i
        elif "=" in s and sec is not None:
            where[(sec, s.split("=", 1)[0].strip())] = i
    return where


_BLOCKS = ("solver", "verify", "output", "market.lattice")


def _apply(cfg: RunConfig, section: str, key: str, value, line: int | None = None) -> None:
    at = f" (line {line})" if line else ""
    if section == "run":
        if key != "seed":
            raise ConfigError(f"unknown key run.{key}{at}")
        cfg.seed = int(value)
        return
    if section == "preference":
        if key == "family":
            cfg.preference.family = _ALIASES.get(str(value), str(value))
        else:
            cfg.preference.params[key] = value
        return
    if section == "market":
        target = cfg.market
    elif section in _BLOCKS:
        target = cfg.market.lattice if section == "market.lattice" else getattr(cfg, section)
    else:
        raise ConfigError(f"unknown section [{section}]{at}")
    names = {f.name for f in fields(target)} - {"lattice"}
    if key not in names:
        raise ConfigError(f"unknown key {section}.{key}{at}")
    setattr(target, key, value)


def _check_preference_keys(cfg: RunConfig, lines: dict) -> None:
    fam = cfg.preference.family
    if fam not in _PREF_KEYS:
        raise ConfigError(f"unknown preference family {fam!r} (line {lines.get(('preference', 'family'), '?')})")
    bad = set(cfg.preference.params) - _PREF_KEYS[fam]
    for k in sorted(bad):
        raise ConfigError(f"unknown key preference.{k} for family {fam} (line {lines.get(('preference', k), '?')})")


def parse_config(text: str, overrides=()) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    lines = _line_map(text)
    cfg = RunConfig(preference=PreferenceConfig(params={}))
    for sec in cp.sections():
        for key, raw in cp.items(sec):
            _apply(cfg, sec, key, _literal(raw), lines.get((sec, key)))
    if "preference" not in cp.sections():
        cfg.preference = PreferenceConfig()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        path, raw = item.split("=", 1)
        sec, _, key = path.strip().rpartition(".")
        if not sec:
            raise ConfigError(f"override {item!r} needs a section prefix")
        _apply(cfg, sec, key, _literal(raw))
    _check_preference_keys(cfg, lines)
    try:
        return cfg.validate()
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None


def load_config(path, overrides=()) -> RunConfig:
    return parse_config(Path(path).read_text(), overrides)
