"""Run configuration: a YAML key-value tree parsed into typed, validated settings.

Layout (all keys except ``seed`` and ``model.countries`` have defaults)::

    seed: 7
    paths:
      data: raw_levels.csv        # tidy raw levels (country, variable, quarter, value)
      panel: null                 # OR an already-transformed panel in the same tidy form
      trade_flows: trade.csv      # OR weights: weight_matrix.csv
      ppp_weights: ppp.csv        # euro-area aggregation and group weights
      shadow_rates: null
      out: runs/example
    model:
      countries: [USA, EA, ...]
      origin: USA
      equity: false
      lags: {p: 2, q: 1, s: 1, m: 1}
      sample: {start: 1979Q2, end: 2016Q4}
      training_split: 1989Q2
      euro_area: {members: [AUT, ...], name: EA}
      trade: {basis: total, window: 2014-2016}
      specs: null                 # optional explicit per-country variable lists
    mcmc: {draws: 10000, burn_in: 2000, thin: 1, h_step: 0.5, h_sweeps: 1, h_update: single}
    priors: {coef_scale: 4.0, ...}
    experiments:
      horizon: 20
      reps: 200
      level_size: auto            # auto = average rate-shock sd of the origin
      vol_shock: 1.0
      regimes: [level, level+vol]
      n_models: 100
      initial: final
      matching: index             # or random (seeded)
      filter_explosive: false
      screen_countries: false
      groups: paper               # or {name: {country: weight}}

Relative paths resolve against the directory holding the config file.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .core import CountrySpec, LagOrders, check_model_set, parse_quarter
from .estimation import McmcConfig, priors_from_arrays
from .ingest import EA_MEMBERS
from .shocks import LEVEL, LEVEL_VOL

_PRIOR_KEYS = {f for f in priors_from_arrays.__kwdefaults__ if f != "n_training"}


class ConfigError(ValueError):
    """Invalid or incomplete configuration (a user error)."""


def _section(tree: Mapping, key: str) -> dict:
    val = tree.get(key) or {}
    if not isinstance(val, Mapping):
        raise ConfigError(f"'{key}' must be a mapping")
    return dict(val)


def _unknown(section: str, given: Mapping, allowed) -> None:
    extra = sorted(set(given) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in '{section}': {extra}")


def _quarter(value, what: str) -> int | None:
    if value is None:
        return None
    try:
        return parse_quarter(str(value))
    except ValueError:
        raise ConfigError(f"{what}: malformed quarter {value!r} (expected e.g. 1979Q2)") from None


@dataclass(frozen=True)
class ModelConfig:
    specs: tuple[CountrySpec, ...]
    origin: str
    equity: bool = False
    sample_start: int | None = None
    sample_end: int | None = None
    training_split: int | None = None
    euro_area: tuple[tuple[str, ...], str] | None = None
    trade_basis: str = "total"
    trade_window: str = ""
    standard_layout: bool = True

    @property
    def countries(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.specs)


@dataclass(frozen=True)
class ExperimentConfig:
    horizon: int = 20
    reps: int = 200
    level_size: float | str = "auto"
    vol_shock: float = 1.0
    regimes: tuple[str, ...] = (LEVEL, LEVEL_VOL)
    n_models: int = 100
    initial: str = "final"
    matching: str = "index"
    filter_explosive: bool = False   # drop unit-root and overflowing draws (reported)
    screen_countries: bool = False   # keep only country draws with stable own lags before matching
    coverage: float = 0.68
    groups: Any = "paper"
    target: str = "ShortRate"


@dataclass(frozen=True)
class RunConfig:
    seed: int
    paths: dict[str, Path | None]
    model: ModelConfig
    mcmc: McmcConfig
    priors: dict[str, float]
    experiments: ExperimentConfig
    source: dict = field(default_factory=dict)

    @property
    def out(self) -> Path:
        return self.paths["out"]

    def to_dict(self) -> dict:
        """Normalized tree used for the config hash; the output location is left out
        so that identical runs written to different directories hash alike."""
        tree = {k: v for k, v in self.source.items() if k != "seed"}
        if "paths" in tree:
            tree["paths"] = {k: v for k, v in tree["paths"].items() if k != "out"}
        return {"seed": self.seed, **tree}


_PATH_KEYS = ("data", "panel", "trade_flows", "weights", "ppp_weights", "shadow_rates", "out")


def _build_specs(m: dict, lags: LagOrders, origin: str, equity: bool) -> tuple[CountrySpec, ...]:
    countries = m.get("countries")
    explicit = m.get("specs")
    if explicit:
        specs = []
        for item in explicit:
            try:
                specs.append(CountrySpec(str(item["id"]), tuple(item["domestic"]),
                                         tuple(item.get("foreign", ())), lags,
                                         str(item["id"]) == origin))
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"model.specs entry {item!r}: {exc}") from None
        return tuple(specs)
    if not countries:
        raise ConfigError("model.countries is required")
    return tuple(CountrySpec.standard(str(c), origin=str(c) == origin, equity=equity, lags=lags)
                 for c in countries)


def parse_config(tree: Mapping, base_dir: Path | str = ".", *, seed: int | None = None,
                 out: str | None = None) -> RunConfig:
    if not isinstance(tree, Mapping):
        raise ConfigError("configuration must be a mapping at the top level")
    tree = dict(tree)
    _unknown("top level", tree, {"seed", "paths", "model", "mcmc", "priors", "experiments"})
    base = Path(base_dir)
    if seed is not None:
        tree["seed"] = int(seed)
    if tree.get("seed") is None:
        raise ConfigError("seed is mandatory (set 'seed' in the config or pass --seed)")
    try:
        run_seed = int(tree["seed"])
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {tree['seed']!r}") from None
    if not 0 <= run_seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")

    p = _section(tree, "paths")
    _unknown("paths", p, _PATH_KEYS)
    if out is not None:
        p["out"] = out
    paths: dict[str, Path | None] = {}
    for key in _PATH_KEYS:
        v = p.get(key)
        paths[key] = None if v in (None, "") else (base / str(v) if not Path(str(v)).is_absolute()
                                                    else Path(str(v)))
    if paths["out"] is None:
        raise ConfigError("paths.out (or --out) is required")
    if (paths["data"] is None) == (paths["panel"] is None):
        raise ConfigError("give exactly one of paths.data (raw levels) or paths.panel")
    if (paths["trade_flows"] is None) == (paths["weights"] is None):
        raise ConfigError("give exactly one of paths.trade_flows or paths.weights")

    m = _section(tree, "model")
    _unknown("model", m, {"countries", "origin", "equity", "lags", "sample", "training_split",
                          "euro_area", "trade", "specs", "standard_layout"})
    try:
        lags = LagOrders(**_section(m, "lags"))
    except TypeError as exc:
        raise ConfigError(f"model.lags: {exc}") from None
    origin = str(m.get("origin", "USA"))
    equity = bool(m.get("equity", False))
    specs = _build_specs(m, lags, origin, equity)
    standard = bool(m.get("standard_layout", not m.get("specs")))
    try:
        check_model_set(specs, standard_layout=standard)
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None
    if origin not in [s.id for s in specs]:
        raise ConfigError(f"model.origin {origin!r} is not among the countries")
    sample = _section(m, "sample")
    _unknown("model.sample", sample, {"start", "end"})
    ea = m.get("euro_area")
    euro = None
    if ea:
        members = tuple(str(c) for c in ea.get("members", EA_MEMBERS))
        euro = (members, str(ea.get("name", "EA")))
    trade = _section(m, "trade")
    _unknown("model.trade", trade, {"basis", "window"})
    if trade.get("basis", "total") not in ("total", "exports", "imports"):
        raise ConfigError("model.trade.basis must be total, exports or imports")
    model = ModelConfig(specs, origin, equity,
                        _quarter(sample.get("start"), "model.sample.start"),
                        _quarter(sample.get("end"), "model.sample.end"),
                        _quarter(m.get("training_split"), "model.training_split"),
                        euro, str(trade.get("basis", "total")), str(trade.get("window", "")),
                        standard)
    if model.training_split is None:
        raise ConfigError("model.training_split is required (priors come from the training window)")

    mc = _section(tree, "mcmc")
    allowed = {f.name for f in dataclasses.fields(McmcConfig)} - {"seed"}
    _unknown("mcmc", mc, allowed)
    try:
        mcmc = McmcConfig(seed=run_seed, **mc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"mcmc: {exc}") from None

    pr = _section(tree, "priors")
    _unknown("priors", pr, _PRIOR_KEYS)
    priors = {k: float(v) for k, v in pr.items()}

    ex = _section(tree, "experiments")
    _unknown("experiments", ex, {f.name for f in dataclasses.fields(ExperimentConfig)})
    if "regimes" in ex:
        ex["regimes"] = tuple(ex["regimes"])
        bad = [r for r in ex["regimes"] if r not in (LEVEL, LEVEL_VOL)]
        if bad:
            raise ConfigError(f"experiments.regimes: unknown regime(s) {bad}")
    try:
        exp = ExperimentConfig(**ex)
    except TypeError as exc:
        raise ConfigError(f"experiments: {exc}") from None
    if not (isinstance(exp.level_size, (int, float)) or exp.level_size == "auto"):
        raise ConfigError("experiments.level_size must be a number or 'auto'")
    if exp.horizon < 1 or exp.reps < 1 or exp.n_models < 1:
        raise ConfigError("experiments.horizon, reps and n_models must be >= 1")
    if exp.initial not in ("final", "mean") or exp.matching not in ("index", "random"):
        raise ConfigError("experiments.initial must be final|mean and matching index|random")

    source = {k: tree[k] for k in ("paths", "model", "mcmc", "priors", "experiments") if k in tree}
    if out is not None:
        source = {**source, "paths": {**source.get("paths", {}), "out": out}}
    return RunConfig(run_seed, paths, model, mcmc, priors, exp, source)


def load_config(path, *, seed: int | None = None, out: str | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        tree = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return parse_config(tree or {}, path.parent, seed=seed, out=out)


def check_inputs(cfg: RunConfig, keys=("data", "panel", "trade_flows", "weights",
                                        "ppp_weights", "shadow_rates")) -> None:
    """Referenced input files must exist."""
    for k in keys:
        p = cfg.paths.get(k)
        if p is not None and not p.exists():
            raise ConfigError(f"paths.{k}: file not found: {p}")
