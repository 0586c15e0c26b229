import csv
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from gvarsv import oracle
from gvarsv.cli import INTERNAL, OK, USER, main
from gvarsv.config import ConfigError, load_config, parse_config
from gvarsv.estimation import PosteriorDraws
from gvarsv.ingest import read_panel_csv, read_weight_matrix, write_panel_csv
from gvarsv.stack import country_stable_draws, models_from_draws

REPO = Path(__file__).resolve().parents[1]

SPECS = [
    {"id": "USA", "domestic": ["ShortRate", "OutputGrowth", "Inflation"],
     "foreign": ["OutputGrowth", "Inflation"]},
    {"id": "AAA", "domestic": ["ShortRate", "OutputGrowth", "Inflation"],
     "foreign": ["OutputGrowth", "Inflation", "ShortRate"]},
    {"id": "BBB", "domestic": ["ShortRate", "OutputGrowth", "Inflation"],
     "foreign": ["OutputGrowth", "Inflation", "ShortRate"]},
]


@pytest.fixture(scope="module")
def world_inputs(tmp_path_factory):
    d = tmp_path_factory.mktemp("world")
    world = oracle.world_with(oracle.canonical_world(), T=120)
    oracle.write_world_inputs(world, d)
    return d


def _config(tmp, inputs, **over):
    tree = {
        "seed": 11,
        "paths": {"panel": str(inputs / "panel.csv"), "weights": str(inputs / "weights.csv"),
                  "out": str(tmp / "run")},
        "model": {"origin": "USA", "lags": {"p": 1, "q": 1, "s": 1, "m": 1},
                  "training_split": "1964Q4", "specs": SPECS},
        "mcmc": {"draws": 50, "burn_in": 20},
        "experiments": {"horizon": 4, "reps": 3, "n_models": 30, "groups": "none"},
    }
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(tree.get(key), dict):
            tree[key] = {**tree[key], **val}
        else:
            tree[key] = val
    path = tmp / "run.yaml"
    path.write_text(yaml.safe_dump(tree))
    return path


def _files(root: Path) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file()}


def _pipeline(cfg, stages=("ingest", "estimate", "solve", "irf", "decompose", "report"), extra=()):
    for stage in stages:
        assert main([stage, "--config", str(cfg), *extra]) == OK, stage


# ------------------------------------------------------------------ config

def test_shipped_configs_parse():
    dims = {}
    for path in sorted((REPO / "configs").glob("*.yaml")):
        cfg = load_config(path)
        dims[path.stem] = sum(s.k for s in cfg.model.specs)
    assert dims["paper_baseline"] == 103
    assert dims["paper_equity"] == 129
    assert dims["desk_world"] == 9


def test_seed_is_mandatory(tmp_path, world_inputs):
    tree = yaml.safe_load(_config(tmp_path, world_inputs).read_text())
    del tree["seed"]
    with pytest.raises(ConfigError, match="seed is mandatory"):
        parse_config(tree)
    assert parse_config(tree, seed=2**64 - 1).seed == 2**64 - 1
    with pytest.raises(ConfigError, match="64-bit"):
        parse_config(tree, seed=2**64)


def test_unknown_keys_and_bad_dates(tmp_path, world_inputs):
    tree = yaml.safe_load(_config(tmp_path, world_inputs).read_text())
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config({**tree, "mcmc": {"drawz": 5}})
    with pytest.raises(ConfigError, match="malformed quarter"):
        parse_config({**tree, "model": {**tree["model"], "training_split": "1964Q5"}})


def test_exactly_one_trade_source(tmp_path, world_inputs):
    tree = yaml.safe_load(_config(tmp_path, world_inputs).read_text())
    tree["paths"]["trade_flows"] = "trade.csv"
    with pytest.raises(ConfigError, match="exactly one"):
        parse_config(tree)


# ------------------------------------------------------------------ stages

def test_ingest_writes_panel_and_manifest(tmp_path, world_inputs):
    cfg = _config(tmp_path, world_inputs)
    assert main(["ingest", "--config", str(cfg)]) == OK
    out = tmp_path / "run"
    panel = read_panel_csv(out / "panel.csv")
    assert panel.countries == ("USA", "AAA", "BBB")
    man = json.loads((out / "manifest_ingest.json").read_text())
    assert set(man) >= {"seed", "config_hash", "software_version", "inputs", "outputs"}
    assert set(man["outputs"]) == {"panel.csv", "weights.csv"}
    assert len(man["inputs"]["panel"]["sha256"]) == 64


def test_missing_trade_file_exit_code(tmp_path, world_inputs, capsys):
    cfg = _config(tmp_path, world_inputs,
                  paths={"weights": None, "trade_flows": str(tmp_path / "nope.csv")})
    assert main(["ingest", "--config", str(cfg)]) == USER
    assert "nope.csv" in capsys.readouterr().err


def test_missing_config_and_bad_yaml(tmp_path, capsys):
    assert main(["ingest", "--config", str(tmp_path / "absent.yaml")]) == USER
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [1,\n")
    assert main(["ingest", "--config", str(bad)]) == USER


def test_irf_before_estimate(tmp_path, world_inputs, capsys):
    cfg = _config(tmp_path, world_inputs)
    assert main(["ingest", "--config", str(cfg)]) == OK
    assert main(["irf", "--config", str(cfg)]) == USER
    assert "gvarsv estimate" in capsys.readouterr().err


def test_too_few_models_for_bands(tmp_path, world_inputs, capsys):
    cfg = _config(tmp_path, world_inputs, experiments={"n_models": 10})
    _pipeline(cfg, ("ingest", "estimate"))
    assert main(["irf", "--config", str(cfg)]) == USER
    assert "at least 30" in capsys.readouterr().err


def test_partial_estimation_failure(tmp_path, world_inputs):
    panel = read_panel_csv(world_inputs / "panel.csv")
    values = dict(panel.values)
    values["BBB"] = np.ones_like(values["BBB"])
    broken = tmp_path / "in"
    broken.mkdir()
    write_panel_csv(type(panel)(panel.countries, panel.variables, panel.quarters, values,
                                transformed=True), broken / "panel.csv")
    (broken / "weights.csv").write_bytes((world_inputs / "weights.csv").read_bytes())
    cfg = _config(tmp_path, broken)
    assert main(["ingest", "--config", str(cfg)]) == OK
    assert main(["estimate", "--config", str(cfg)]) == INTERNAL
    out = tmp_path / "run"
    assert (out / "draws" / "USA.npz").exists() and not (out / "draws" / "BBB.npz").exists()
    diag = json.loads((out / "diagnostics.json").read_text())
    assert "BBB" in diag["failures"]
    assert json.loads((out / "manifest_estimate.json").read_text())["partial"] is True


def test_end_to_end_is_byte_identical(tmp_path, world_inputs):
    runs = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        cfg = _config(d, world_inputs)
        _pipeline(cfg)
        runs.append(_files(d / "run"))
    assert runs[0].keys() == runs[1].keys()
    assert {"irf/level_total.csv", "irf/level_vol_direct.csv", "report.json",
            "manifest_report.json", "draws/BBB.npz", "stability.csv"} <= set(runs[0])
    for name in runs[0]:
        assert runs[0][name] == runs[1][name], name


def test_seed_changes_draws(tmp_path, world_inputs):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    _pipeline(_config(a, world_inputs), ("ingest", "estimate"))
    _pipeline(_config(b, world_inputs), ("ingest", "estimate"), extra=("--seed", "12"))
    assert (a / "run/draws/USA.npz").read_bytes() != (b / "run/draws/USA.npz").read_bytes()


def test_parallel_jobs_match_serial(tmp_path, world_inputs):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    _pipeline(_config(a, world_inputs), ("ingest", "estimate"))
    _pipeline(_config(b, world_inputs), ("ingest", "estimate"), extra=("--jobs", "2"))
    for c in ("USA", "AAA", "BBB"):
        assert (a / f"run/draws/{c}.npz").read_bytes() == (b / f"run/draws/{c}.npz").read_bytes()


def test_zero_shock_output_is_zero(tmp_path, world_inputs):
    cfg = _config(tmp_path, world_inputs,
                  experiments={"level_size": 0.0, "regimes": ["level"]})
    _pipeline(cfg, ("ingest", "estimate", "irf"))
    with open(tmp_path / "run/irf/level_total.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(float(r[k]) == 0.0 for r in rows for k in ("median", "lo", "hi"))


def test_country_screen(tmp_path, world_inputs):
    cfg = _config(tmp_path, world_inputs, experiments={"screen_countries": True})
    _pipeline(cfg, ("ingest", "estimate", "solve"))
    out = tmp_path / "run"
    man = json.loads((out / "manifest_solve.json").read_text())
    assert man["screened"] == {} and man["n_models"] == 30
    draws = {c: PosteriorDraws.load(out / f"draws/{c}.npz") for c in ("USA", "AAA", "BBB")}
    draws["AAA"].phi[0] = 1.1 * np.eye(3)
    assert country_stable_draws(draws["AAA"]) == list(range(1, len(draws["AAA"])))
    # the r-th eligible draw of every country forms joint model r
    W = read_weight_matrix(out / "weights.csv")
    odd = {c: list(range(1, len(d), 2)) for c, d in draws.items()}
    models = models_from_draws(draws, W, indices=[0, 2], eligible=odd)
    for m, r in zip(models, (0, 2)):
        assert np.array_equal(m.blocks[1].params.phi, draws["AAA"].phi[odd["AAA"][r]])


def test_out_override(tmp_path, world_inputs):
    cfg = _config(tmp_path, world_inputs)
    assert main(["ingest", "--config", str(cfg), "--out", str(tmp_path / "elsewhere")]) == OK
    assert (tmp_path / "elsewhere" / "panel.csv").exists()


def test_raw_database_with_euro_area(tmp_path):
    members = ["AUT", "BEL", "FIN", "FRA", "DEU", "ITA", "NLD", "ESP"]
    files = oracle.synthetic_database(tmp_path / "db", countries=["USA", "GBR", "JPN", *members],
                                      start="1985Q1", end="2005Q4", seed=5)
    tree = {
        "seed": 1,
        "paths": {"data": str(files["levels"]), "trade_flows": str(files["trade"]),
                  "ppp_weights": str(files["ppp"]), "out": str(tmp_path / "run")},
        "model": {"countries": ["USA", "EA", "GBR", "JPN"], "origin": "USA",
                  "sample": {"start": "1986Q2", "end": "2005Q4"}, "training_split": "1992Q4",
                  "euro_area": {"members": members, "name": "EA"}},
    }
    cfg = tmp_path / "raw.yaml"
    cfg.write_text(yaml.safe_dump(tree))
    assert main(["ingest", "--config", str(cfg)]) == OK
    panel = read_panel_csv(tmp_path / "run/panel.csv")
    assert panel.countries == ("USA", "EA", "GBR", "JPN")
    assert panel.variables["EA"] == ("ShortRate", "OutputGrowth", "Inflation", "RealFxGrowth")
    with open(tmp_path / "run/weights.csv") as fh:
        rows = list(csv.reader(fh))
    w = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    assert np.all(np.abs(w.sum(axis=1) - 1) <= 1e-12) and np.all(np.diag(w) == 0)
