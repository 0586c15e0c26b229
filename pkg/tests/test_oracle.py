import dataclasses

import numpy as np
import pytest

from gvarsv import oracle
from gvarsv.core import (
    CountryParameters,
    CountrySpec,
    IdentificationMatrix,
    LagOrders,
    VariableKind,
    VolatilityParameters,
    WeightMatrix,
    format_quarter,
)
from gvarsv.ingest import load_panel, load_trade_flows, load_weights, transform

R, Y, P = VariableKind.SHORT_RATE, VariableKind.OUTPUT_GROWTH, VariableKind.INFLATION


def _one_country(q=(0.1, 0.2, 0.1)):
    spec = CountrySpec("A", (R, Y, P), (), LagOrders(1, 0, 1, 1))
    at = np.array([[1.0, 0, 0], [-0.3, 1, 0], [-0.1, 0.2, 1]])
    params = CountryParameters(np.array([0.3, 0.5, 0.2]),
                               np.array([np.diag([0.7, 0.5, 0.6])]), np.zeros((1, 3, 0)),
                               np.array([np.diag([0.1, -0.2, 0.0]), np.diag([0.0, 0.05, 0.1])]),
                               IdentificationMatrix(at, (R, Y, P)))
    vol = VolatilityParameters(np.array([-0.1, -0.05, -0.1]), np.array([np.eye(3) * 0.9]),
                               np.zeros((0, 3, 3)), np.array(q))
    return oracle.TrueWorld((spec,), (params,), (vol,), WeightMatrix(("A",), np.zeros((1, 1))),
                            seed=4, T=120, n_training=20, burn=30)


def test_generate_is_deterministic(desk_world):
    a, b = oracle.generate(desk_world), oracle.generate(desk_world)
    for c in a.panel.countries:
        assert a.panel.values[c].tobytes() == b.panel.values[c].tobytes()
        assert a.h[c].h.tobytes() == b.h[c].h.tobytes()


def test_desk_truth_layout(desk_world, desk_truth):
    panel = desk_truth.panel
    assert panel.T == desk_world.n_training + desk_world.T == 460
    assert format_quarter(panel.training_split) == "1964Q4"
    assert panel.quarters.index(panel.training_split) == desk_world.n_training - 1
    assert oracle.level_radius(desk_world) < 1


def test_desk_log_volatility_has_unit_variance(desk_world):
    for v in desk_world.vols:
        ups = np.diag(v.ups[0])
        np.testing.assert_allclose(v.q_diag / (1 - ups ** 2), 1.0)


def test_one_country_world_is_plain_varx_sv():
    world = _one_country()
    truth = oracle.generate(world)
    s, p, v = world.specs[0], world.params[0], world.vols[0]
    X, H = oracle._mean_state(world)
    x, h = X[-1].copy(), H[-1].copy()
    rng = np.random.default_rng(world.seed)
    xs, hs = [], []
    for _ in range(world.burn + world.n_training + world.T):
        e, eta = rng.standard_normal(3), rng.standard_normal(3)
        h_new = v.intercept + v.ups[0] @ h + np.sqrt(v.q_diag) * eta
        x = (p.intercept + p.phi[0] @ x + p.psi[0] @ h_new + p.psi[1] @ h
             + p.ident.a_tilde @ (np.exp(h_new / 2) * e))
        h = h_new
        xs.append(x)
        hs.append(h)
    np.testing.assert_allclose(truth.panel.values["A"], np.array(xs)[world.burn:], atol=1e-12)
    np.testing.assert_allclose(truth.h["A"].h, np.array(hs)[world.burn:], atol=1e-12)


def test_homoskedastic_residual_covariance():
    world = oracle.world_with(oracle.canonical_world(vol_in_mean=False, feedback=False,
                                                     q_scale=1e-12), T=6000)
    truth = oracle.generate(world)
    for s, p in zip(world.specs, world.params):
        h = truth.h[s.id].h
        assert np.ptp(h, axis=0).max() < 1e-4
        omega = p.ident.a_tilde @ np.diag(np.exp(h[0])) @ p.ident.a_tilde.T
        u = truth.u[s.id]
        prod = u[:, :, None] * u[:, None, :]
        se = prod.std(axis=0, ddof=1) / np.sqrt(u.shape[0])
        assert np.all(np.abs(prod.mean(axis=0) - omega) < 4 * se)


def test_unstable_world_rejected(desk_world):
    p = desk_world.params[0]
    bad = dataclasses.replace(p, phi=p.phi * 2.0)
    with pytest.raises(oracle.UnstableWorld):
        oracle.world_with(desk_world, params=(bad,) + desk_world.params[1:])


def test_explosion_detected():
    world = _one_country(q=(3.0, 3.0, 3.0))
    v = world.vols[0]
    hot = dataclasses.replace(v, intercept=np.full(3, 5.0), ups=np.array([np.eye(3) * 0.99]))
    world = oracle.world_with(world, vols=(hot,), T=2000)
    with pytest.raises(oracle.UnstableWorld, match="unstable world"):
        oracle.generate(world)


def test_residuals_consistent_with_structural_shocks(desk_world, desk_truth):
    for s, p in zip(desk_world.specs, desk_world.params):
        h, e = desk_truth.h[s.id].h, desk_truth.e[s.id]
        np.testing.assert_allclose(desk_truth.u[s.id], (np.exp(h / 2) * e) @ p.ident.a_tilde.T,
                                   atol=1e-12)


def test_mc_covariance_reports_standard_error(rng):
    at = np.array([[1.0, 0], [-0.5, 1]])
    cov, se = oracle.mc_covariance(at, np.array([0.3, -0.2]), 50_000, rng)
    target = at @ np.diag(np.exp([0.3, -0.2])) @ at.T
    assert np.all(np.abs(cov - target) < 5 * se)


def test_synthetic_database_ingests(tmp_path):
    countries = ("USA", "GBR", "JPN")
    files = oracle.synthetic_database(tmp_path, countries=countries, start="1990Q1",
                                      end="1999Q4", seed=3)
    specs = [CountrySpec.standard(c, origin=c == "USA") for c in countries]
    panel = transform(load_panel(files["levels"], specs), numeraire="USA")
    assert panel.T == 36 and panel.variables["GBR"][-1] == "RealFxGrowth"
    flows = load_trade_flows(files["trade"])
    assert flows.order == countries
    assert sum(load_weights(files["ppp"]).values()) == pytest.approx(1.0)


def test_desk_world_frozen_values(desk_world, desk_truth):
    # frozen from the first run of the canonical world; a change means the
    # world or the generator's random layout moved
    assert oracle.level_radius(desk_world) == pytest.approx(0.7906007874483396, abs=1e-12)
    np.testing.assert_allclose(desk_truth.panel.values["USA"][-1],
                               [6.04650907, 1.46984881, 2.60327296], atol=1e-8)
    np.testing.assert_allclose(desk_truth.h["BBB"].h[-1], [-1.90813246, -0.05170462, -0.42560403],
                               atol=1e-8)
