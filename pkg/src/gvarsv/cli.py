"""``gvarsv`` command line: ingest -> estimate -> solve -> irf / decompose -> report.

Every stage reads its inputs from the output directory written by the previous
one and leaves a ``manifest_<stage>.json`` listing input hashes, the config
hash, the seed, the software version and the sha256 of each file it wrote.

Exit codes: 0 success, 1 internal error (or partial estimation failure),
2 user or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import config_hash, load_bundle, save_bundle, sha256_file, write_json
from .config import ConfigError, RunConfig, check_inputs, load_config
from .core import CountrySpec, Panel, VariableKind
from .estimation import PosteriorDraws, build_priors, estimate_all
from .ingest import (
    IngestError,
    aggregate_euro_area,
    aggregate_trade_flows,
    build_weight_matrix,
    load_panel,
    load_trade_flows,
    load_weights,
    read_panel_csv,
    read_weight_matrix,
    transform,
    write_panel_csv,
    write_weight_matrix,
)
from .shocks import (
    DIRECT,
    INDIRECT,
    TOTAL,
    IrfSet,
    ShockError,
    ShockSpec,
    aggregate_groups,
    headline_checks,
    paper_groups,
    run_regimes,
    shock_size_level,
)
from .stack import (check_stability, country_stable_draws, models_from_draws, save_models,
                    stability_table)

log = logging.getLogger("gvarsv")

OK, INTERNAL, USER = 0, 1, 2


class MissingArtifact(ConfigError):
    pass


# ------------------------------------------------------------- manifests

def _rel(path: Path, root: Path) -> str:
    try:
        return path.relative_to(root).as_posix()
    except ValueError:
        return path.name


def write_manifest(cfg: RunConfig, stage: str, inputs: dict[str, Path], outputs: list[Path],
                   extra: dict | None = None) -> Path:
    doc = {
        "stage": stage,
        "software_version": __version__,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg.to_dict()),
        "inputs": {k: {"file": _rel(p, cfg.out), "sha256": sha256_file(p)}
                   for k, p in sorted(inputs.items())},
        "outputs": {_rel(p, cfg.out): sha256_file(p) for p in sorted(outputs)},
    }
    if extra:
        doc.update(extra)
    path = cfg.out / f"manifest_{stage}.json"
    write_json(path, doc)
    return path


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing {path}; run `gvarsv {stage}` first")
    return path


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([repr(v) if isinstance(v, float) else v for v in r])


# ------------------------------------------------------------------ ingest

def _raw_specs(cfg: RunConfig) -> list[CountrySpec]:
    """Specs at the raw-data level: the euro-area aggregate is replaced by its members."""
    specs = list(cfg.model.specs)
    if cfg.model.euro_area is None:
        return specs
    members, name = cfg.model.euro_area
    out = []
    for s in specs:
        if s.id == name:
            out += [dataclasses.replace(s, id=m) for m in members]
        else:
            out.append(s)
    return out


def cmd_ingest(cfg: RunConfig, jobs: int = 1) -> int:
    check_inputs(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    m = cfg.model
    inputs: dict[str, Path] = {}
    if cfg.paths["data"] is not None:
        inputs["data"] = cfg.paths["data"]
        raw = load_panel(cfg.paths["data"], _raw_specs(cfg), shadow_rates=cfg.paths["shadow_rates"])
        if cfg.paths["shadow_rates"] is not None:
            inputs["shadow_rates"] = cfg.paths["shadow_rates"]
        panel = transform(raw, numeraire=m.origin)
    else:
        inputs["panel"] = cfg.paths["panel"]
        panel = read_panel_csv(cfg.paths["panel"])
        if not panel.transformed:
            raise ConfigError(f"{cfg.paths['panel']}: panel variables are not transformed series")
    ppp = None
    if cfg.paths["ppp_weights"] is not None:
        inputs["ppp_weights"] = cfg.paths["ppp_weights"]
        ppp = load_weights(cfg.paths["ppp_weights"])
    if m.euro_area is not None:
        members, name = m.euro_area
        if ppp is None:
            raise ConfigError("euro-area aggregation needs paths.ppp_weights")
        missing = [c for c in members if c not in ppp]
        if missing:
            raise ConfigError(f"paths.ppp_weights: no weight for {missing}")
        tot = sum(ppp[c] for c in members)
        panel = aggregate_euro_area(panel, {c: ppp[c] / tot for c in members},
                                    members=members, name=name)
    if cfg.paths["trade_flows"] is not None:
        inputs["trade_flows"] = cfg.paths["trade_flows"]
        flows = load_trade_flows(cfg.paths["trade_flows"], basis=m.trade_basis,
                                 window=m.trade_window)
        if m.euro_area is not None and m.euro_area[1] not in flows.order:
            flows = aggregate_trade_flows(flows, *m.euro_area)
        W = build_weight_matrix(flows, m.countries)
    else:
        inputs["weights"] = cfg.paths["weights"]
        W = read_weight_matrix(cfg.paths["weights"])
        if W.order != m.countries:
            raise ConfigError("paths.weights: country order differs from model.countries")

    absent = [c for c in m.countries if c not in panel.countries]
    if absent:
        raise ConfigError(f"countries missing from the data: {absent}")
    for s in m.specs:
        lacking = [v.value for v in s.domestic_vars if v.value not in panel.variables[s.id]]
        if lacking:
            raise ConfigError(f"{s.id}: data lacks {lacking}")
    panel = Panel(m.countries, {c: panel.variables[c] for c in m.countries}, panel.quarters,
                  {c: panel.values[c] for c in m.countries}, None, True, panel.gaps)
    panel = panel.window(m.sample_start, m.sample_end)
    q = panel.quarters
    if not q[0] < m.training_split < q[-1]:
        raise ConfigError("model.training_split must fall inside the sample")
    panel = dataclasses.replace(panel, training_split=m.training_split)

    out_panel, out_w = cfg.out / "panel.csv", cfg.out / "weights.csv"
    write_panel_csv(panel, out_panel)
    write_weight_matrix(W, out_w)
    write_manifest(cfg, "ingest", inputs, [out_panel, out_w],
                   {"countries": list(m.countries), "quarters": [q[0], q[-1]], "gaps": len(panel.gaps)})
    log.info("ingest: %d countries, %d quarters -> %s", len(m.countries), panel.T, cfg.out)
    return OK


def _load_stage_inputs(cfg: RunConfig) -> tuple[Panel, "object", dict[str, Path]]:
    p = _need(cfg.out / "panel.csv", "ingest")
    w = _need(cfg.out / "weights.csv", "ingest")
    panel = read_panel_csv(p, training_split=cfg.model.training_split)
    return panel, read_weight_matrix(w), {"panel": p, "weights": w}


# ---------------------------------------------------------------- estimate

def cmd_estimate(cfg: RunConfig, jobs: int = 1) -> int:
    panel, W, inputs = _load_stage_inputs(cfg)
    priors, failures = {}, {}
    for s in cfg.model.specs:
        try:
            priors[s.id] = build_priors(panel, W, s, **cfg.priors)
        except Exception as exc:  # a bad country must not stop the others
            failures[s.id] = f"{type(exc).__name__}: {exc}"
    specs = [s for s in cfg.model.specs if s.id in priors]
    draws, chain_fail = estimate_all(panel, W, specs, priors, cfg.mcmc, jobs=jobs)
    failures.update(chain_fail)
    ddir = cfg.out / "draws"
    ddir.mkdir(parents=True, exist_ok=True)
    outputs, diag = [], {}
    for c in cfg.model.countries:
        if c in draws:
            path = ddir / f"{c}.npz"
            draws[c].save(path)
            outputs.append(path)
            diag[c] = draws[c].diagnostics
    dpath = cfg.out / "diagnostics.json"
    write_json(dpath, {"countries": diag, "failures": failures})
    outputs.append(dpath)
    write_manifest(cfg, "estimate", inputs, outputs,
                   {"partial": bool(failures), "failed": sorted(failures)})
    if failures:
        for c, err in sorted(failures.items()):
            log.error("estimation failed for %s: %s", c, err)
        return INTERNAL
    return OK


def _load_draws(cfg: RunConfig) -> tuple[dict[str, PosteriorDraws], dict[str, Path]]:
    draws, inputs = {}, {}
    for c in cfg.model.countries:
        path = _need(cfg.out / "draws" / f"{c}.npz", "estimate")
        draws[c] = PosteriorDraws.load(path)
        inputs[f"draws/{c}"] = path
    return draws, inputs


def _draw_indices(n: int, want: int) -> list[int]:
    if want >= n:
        return list(range(n))
    return sorted({int(round(v)) for v in np.linspace(0, n - 1, want)})


def _models(cfg: RunConfig, *, require: bool = True):
    """Joint models and the indices flagged explosive. With filtering on, flagged
    models are dropped from ``kept``; ``models`` always holds every joint draw."""
    draws, inputs = _load_draws(cfg)
    _, W, win = _load_stage_inputs(cfg)
    inputs.update(win)
    ex = cfg.experiments
    eligible, screened = None, {}
    if ex.screen_countries:
        eligible = {c: country_stable_draws(d) for c, d in draws.items()}
        screened = {c: len(draws[c]) - len(v) for c, v in eligible.items() if len(v) < len(draws[c])}
        if screened:
            log.warning("country screen dropped draws with explosive own lags: %s", screened)
        if not all(eligible.values()):
            raise ConfigError(f"country screen left no draws for "
                              f"{[c for c, v in eligible.items() if not v]}")
    n = min(len(v) for v in (eligible or {c: range(len(d)) for c, d in draws.items()}).values())
    models = models_from_draws(draws, W, indices=_draw_indices(n, ex.n_models),
                               matching=ex.matching, seed=cfg.seed, initial=ex.initial,
                               eligible=eligible)
    flagged = [i for i, m in enumerate(models) if check_stability(m).unit_root]
    kept = models
    if ex.filter_explosive and flagged:
        log.warning("dropping %d explosive draws of %d", len(flagged), len(models))
        kept = [m for i, m in enumerate(models) if i not in set(flagged)]
    if require and not kept:
        raise ConfigError("no stable draws left after filtering (see stability.csv from gvarsv solve)")
    return models, kept, draws, inputs, flagged, screened


# ------------------------------------------------------------------- solve

def cmd_solve(cfg: RunConfig, jobs: int = 1) -> int:
    every, models, _, inputs, flagged, screened = _models(cfg, require=False)
    rows = stability_table(every)
    spath = cfg.out / "stability.csv"
    _write_csv(spath, ["draw", "spectral_radius", "joint_radius", "flagged", "condition_number"],
               [[r["draw"], r["spectral_radius"], r["joint_radius"], int(r["flagged"]),
                 r["condition_number"]] for r in rows])
    if not models:
        raise ConfigError(f"no stable draws left after filtering; radii are in {spath}")
    mpath = cfg.out / "models.npz"
    save_models(mpath, models)
    write_manifest(cfg, "solve", inputs, [spath, mpath],
                   {"n_models": len(models), "flagged": len(flagged), "screened": screened})
    log.info("solve: %d models, %d flagged explosive", len(models), len(flagged))
    return OK


# --------------------------------------------------------------- irf/decompose

def _shock(cfg: RunConfig, draws) -> ShockSpec:
    ex = cfg.experiments
    if ex.level_size == "auto":
        return ShockSpec(cfg.model.origin, VariableKind(ex.target), 1.0, None, ex.horizon,
                         shock_size_level(draws[cfg.model.origin], VariableKind(ex.target)))
    return ShockSpec(cfg.model.origin, VariableKind(ex.target), float(ex.level_size), None,
                     ex.horizon, 1.0)


def _groups(cfg: RunConfig, irfs: IrfSet):
    g = cfg.experiments.groups
    available = sorted({c for c, _ in irfs.labels})
    if g in (None, "none", {}):
        return None
    if g == "paper":
        if cfg.paths["ppp_weights"] is None:
            return None
        return paper_groups(load_weights(cfg.paths["ppp_weights"]), available) or None
    if not isinstance(g, dict):
        raise ConfigError("experiments.groups must be 'paper', 'none' or a mapping")
    return {str(k): {str(c): float(w) for c, w in v.items()} for k, v in g.items()}


def _regime_tag(regime: str) -> str:
    return regime.replace("+", "_").replace("/", "_")


def _emit(cfg: RunConfig, irfs: IrfSet, kinds: tuple[str, ...], stage: str, inputs, extra) -> int:
    idir = cfg.out / "irf"
    idir.mkdir(parents=True, exist_ok=True)
    groups = _groups(cfg, irfs)
    sets = [("", irfs)]
    if groups:
        sets.append(("groups_", aggregate_groups(irfs, groups)))
    outputs = []
    cov = cfg.experiments.coverage
    for prefix, s in sets:
        for regime in sorted(s.responses):
            if regime.rsplit("/", 1)[1] not in kinds:
                continue
            sub = IrfSet(s.labels, {regime: s.responses[regime]}, s.meta)
            path = idir / f"{prefix}{_regime_tag(regime)}.csv"
            sub.to_csv(path, coverage=cov)
            outputs.append(path)
        sub = IrfSet(s.labels, {r: a for r, a in s.responses.items()
                                if r.rsplit("/", 1)[1] in kinds}, s.meta)
        jpath = idir / f"{prefix}{stage}.json"
        sub.to_json(jpath, coverage=cov)
        outputs.append(jpath)
        rpath = idir / f"{prefix}{stage}_draws.npz"
        save_bundle(rpath, {_regime_tag(r): a for r, a in sub.responses.items()},
                    {"labels": [list(l) for l in sub.labels], "meta": sub.meta,
                     "regimes": {_regime_tag(r): r for r in sub.responses}})
        outputs.append(rpath)
    write_manifest(cfg, stage, inputs, outputs, extra)
    return OK


def _run(cfg: RunConfig, direct: bool, stage: str) -> int:
    _, models, draws, inputs, flagged, screened = _models(cfg)
    if len(models) < 30:
        raise ConfigError(f"bands need at least 30 posterior draws, have {len(models)} "
                          "(raise experiments.n_models or mcmc draws)")
    ex = cfg.experiments
    spec = _shock(cfg, draws)
    try:
        irfs = run_regimes(models, spec, reps=ex.reps, seed=cfg.seed, vol_shock=ex.vol_shock,
                           regimes=ex.regimes, direct=direct,
                           on_diverge="drop" if ex.filter_explosive else "raise")
    except ShockError as exc:
        raise ShockError(f"{exc} (set experiments.filter_explosive: true to drop such draws)") from None
    diverged = irfs.meta["diverged"]
    if diverged:
        log.warning("dropped %d draws whose simulated paths overflowed", len(diverged))
    if len(models) - len(diverged) < 30:
        raise ConfigError(f"bands need at least 30 posterior draws, {len(models) - len(diverged)} "
                          "left after dropping divergent ones")
    kinds = (TOTAL,) if not direct else (DIRECT, TOTAL, INDIRECT)
    extra = {"n_models": len(models), "flagged_explosive": len(flagged), "diverged": diverged,
             "screened": screened,
             "shock": {"origin": spec.origin, "target": spec.target.value,
                       "level_size": spec.level_size, "sd_unit": spec.sd_unit,
                       "vol_shock": ex.vol_shock, "horizon": spec.horizon, "reps": ex.reps}}
    return _emit(cfg, irfs, kinds, stage, inputs, extra)


def cmd_irf(cfg: RunConfig, jobs: int = 1) -> int:
    return _run(cfg, False, "irf")


def cmd_decompose(cfg: RunConfig, jobs: int = 1) -> int:
    return _run(cfg, True, "decompose")


# ------------------------------------------------------------------ report

def cmd_report(cfg: RunConfig, jobs: int = 1) -> int:
    inputs: dict[str, Path] = {}
    doc: dict = {"software_version": __version__, "seed": cfg.seed}
    diag = cfg.out / "diagnostics.json"
    if diag.exists():
        inputs["diagnostics"] = diag
        doc["diagnostics"] = json.loads(diag.read_text())
    stab = cfg.out / "stability.csv"
    if stab.exists():
        inputs["stability"] = stab
        with stab.open() as fh:
            rows = list(csv.DictReader(fh))
        doc["stability"] = {"n_models": len(rows),
                            "flagged": sum(int(r["flagged"]) for r in rows),
                            "max_spectral_radius": max(float(r["spectral_radius"]) for r in rows)}
    found = {}
    for stage in ("irf", "decompose"):
        for prefix in ("", "groups_"):
            p = cfg.out / "irf" / f"{prefix}{stage}_draws.npz"
            if p.exists():
                inputs[f"{prefix}{stage}"] = p
                arrays, meta = load_bundle(p)
                labels = tuple(tuple(l) for l in meta["labels"])
                found[(prefix, stage)] = IrfSet(labels, {meta["regimes"][k]: v for k, v in arrays.items()},
                                                meta["meta"])
    if not found:
        raise MissingArtifact("no IRF outputs found; run `gvarsv irf` or `gvarsv decompose` first")
    impact = []
    for (prefix, stage), s in sorted(found.items()):
        for regime, arr in sorted(s.responses.items()):
            med = np.median(arr[:, 0, :], axis=0)
            for (c, v), val in zip(s.labels, med):
                impact.append({"source": f"{prefix}{stage}", "regime": regime, "country": c,
                               "variable": v, "impact_median": float(val)})
    doc["impact"] = impact
    # headline checks need the paper groups and all four regimes
    merged = None
    for key in (("", "decompose"), ("groups_", "decompose")):
        if key in found:
            part = found[key]
            merged = part if merged is None else IrfSet(merged.labels + part.labels, {
                r: np.concatenate([merged.responses[r], part.responses[r]], axis=2)
                for r in merged.responses}, merged.meta)
    if merged is not None:
        try:
            doc["headline_checks"] = headline_checks(merged)
        except (KeyError, ValueError) as exc:
            doc["headline_checks"] = f"not applicable: {exc}"
    rpath = cfg.out / "report.json"
    write_json(rpath, doc)
    write_manifest(cfg, "report", inputs, [rpath])
    return OK


COMMANDS = {
    "ingest": cmd_ingest,
    "estimate": cmd_estimate,
    "solve": cmd_solve,
    "irf": cmd_irf,
    "decompose": cmd_decompose,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gvarsv", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"gvarsv {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed (u64)")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        p.add_argument("--out", default=None, help="override paths.out")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return USER
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        return COMMANDS[args.command](cfg, jobs=args.jobs)
    except (ConfigError, IngestError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USER
    except Exception as exc:  # anything else is a bug or numerical failure
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return INTERNAL


if __name__ == "__main__":
    sys.exit(main())
