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
)
from gvarsv.ingest import foreign_variables
from gvarsv.stack import (
    CountryBlock,
    StackError,
    build_links,
    check_stability,
    simulate,
    simulate_country,
    stability_table,
    stack_global,
    unconditional_mean,
)
from helpers import loop_paths, world_model

R, Y, P = VariableKind.SHORT_RATE, VariableKind.OUTPUT_GROWTH, VariableKind.INFLATION


def _var1(coef, k=1, lam=None, spec=None):
    spec = spec or CountrySpec("A", (R,) if k == 1 else (R, Y)[:k], (), LagOrders(1, 0, 0, 1))
    ks = spec.k_star
    params = CountryParameters(np.zeros(k), np.array([np.eye(k) * coef]),
                               np.zeros((1, k, ks)) if lam is None else lam, np.zeros((1, k, k)),
                               IdentificationMatrix(np.eye(k), spec.domestic_vars))
    vol = VolatilityParameters(np.zeros(k), np.zeros((1, k, k)), np.zeros((0, k, k)),
                               np.full(k, 1e-12))
    return CountryBlock(spec, params, vol, np.zeros((2, k)), np.zeros((2, k)))


# ------------------------------------------------------------------ links

def test_two_country_links_select_partner():
    specs = (CountrySpec("A", (R, Y), (R, Y)), CountrySpec("B", (R, Y), (R, Y)))
    L = build_links(WeightMatrix(("A", "B"), np.array([[0.0, 1.0], [1.0, 0.0]])), specs)
    np.testing.assert_array_equal(L.weights[0], [[0, 0, 1, 0], [0, 0, 0, 1]])
    np.testing.assert_array_equal(L.select[1], [[0, 0, 1, 0], [0, 0, 0, 1]])


def test_links_reproduce_foreign_variables(desk_world, desk_truth):
    panel = desk_truth.panel
    L = build_links(desk_world.weights, desk_world.specs)
    X = np.hstack([panel.matrix(s.id, [k.value for k in s.domestic_vars]) for s in desk_world.specs])
    for i, s in enumerate(desk_world.specs):
        ref = foreign_variables(panel, desk_world.weights, s)
        assert np.abs(L.foreign(X, i) - ref).max() <= 1e-12
        assert np.abs(X @ L.weights[i].T - ref).max() <= 1e-12


def test_origin_block_has_no_foreign_rate(desk_world):
    L = build_links(desk_world.weights, desk_world.specs)
    assert L.weights[0].shape[0] == 2
    assert R not in desk_world.specs[0].foreign_vars


def test_missing_partner_kind():
    specs = (CountrySpec("A", (R, Y), (P,)), CountrySpec("B", (R, Y), (Y,)))
    with pytest.raises(StackError, match="partner B"):
        build_links(WeightMatrix(("A", "B"), np.array([[0.0, 1.0], [1.0, 0.0]])), specs)


def test_order_mismatch():
    specs = (CountrySpec("A", (R,), (R,)), CountrySpec("B", (R,), (R,)))
    with pytest.raises(StackError):
        build_links(WeightMatrix(("B", "A"), np.array([[0.0, 1.0], [1.0, 0.0]])), specs)


def test_paper_dimension():
    ids = ["USA"] + [f"C{i:02d}" for i in range(25)]
    specs = [CountrySpec.standard(c, origin=c == "USA") for c in ids]
    W = np.full((26, 26), 1 / 25)
    np.fill_diagonal(W, 0.0)
    assert build_links(WeightMatrix(tuple(ids), W), specs).k_total == 103


# --------------------------------------------------------------- stacking

def test_single_country_reduces_to_varx(rng):
    spec = CountrySpec("A", (R, Y, P), (), LagOrders(1, 0, 1, 1))
    params = CountryParameters(np.array([0.1, 0.2, 0.3]),
                               np.array([[[0.5, 0.1, 0], [0, 0.4, 0.1], [0.1, 0, 0.3]]]),
                               np.zeros((1, 3, 0)), 0.1 * rng.standard_normal((2, 3, 3)),
                               IdentificationMatrix(np.array([[1, 0, 0], [-0.3, 1, 0],
                                                              [-0.2, 0.1, 1.0]]), (R, Y, P)))
    vol = VolatilityParameters(np.array([-0.1, 0.0, -0.2]), np.array([np.eye(3) * 0.8]),
                               np.zeros((0, 3, 3)), np.array([0.1, 0.2, 0.1]))
    block = CountryBlock(spec, params, vol, rng.standard_normal((4, 3)), rng.standard_normal((4, 3)))
    m = stack_global([block], WeightMatrix(("A",), np.zeros((1, 1))))
    e = rng.standard_normal((5, 9, 3))
    eta = rng.standard_normal((5, 9, 3))
    X, H = simulate(m, e, eta)
    Xc, Hc = simulate_country(m, 0, np.zeros((5, X.shape[1], 0)), e, eta)
    np.testing.assert_array_equal(X, Xc)
    np.testing.assert_array_equal(H, Hc)


def test_two_country_stack_matches_joint_loop(rng):
    W = WeightMatrix(("A", "B"), np.array([[0.0, 1.0], [1.0, 0.0]]))
    world = oracle.small_world(W)
    m = world_model(world)
    e = rng.standard_normal((4, 13, 6))
    eta = rng.standard_normal((4, 13, 6))
    X, H = simulate(m, e, eta)
    Xo, Ho = loop_paths(world, m.x_hist, m.h_hist, e, eta)
    L = m.n_hist
    assert np.abs(X[:, L:] - Xo).max() <= 1e-10
    assert np.abs(H[:, L:] - Ho).max() <= 1e-10


@pytest.mark.parametrize("contemporaneous", [False, True])
def test_desk_stack_matches_joint_loop(contemporaneous, rng):
    world = oracle.canonical_world(contemporaneous=contemporaneous)
    m = world_model(world, oracle.generate(world))
    assert np.array_equal(m.G0, np.eye(9)) != contemporaneous
    e = rng.standard_normal((3, 21, 9))
    eta = rng.standard_normal((3, 21, 9))
    X, H = simulate(m, e, eta)
    Xo, Ho = loop_paths(world, m.x_hist, m.h_hist, e, eta)
    assert np.abs(X[:, m.n_hist:] - Xo).max() <= 1e-10
    assert np.abs(H[:, m.n_hist:] - Ho).max() <= 1e-10


def test_permutation_equivariance(desk_world, desk_truth, rng):
    m = world_model(desk_world, desk_truth)
    perm = [2, 0, 1]
    order = tuple(desk_world.weights.order[i] for i in perm)
    Wp = WeightMatrix(order, desk_world.weights.w[np.ix_(perm, perm)])
    mp = stack_global([m.blocks[i] for i in perm], Wp)
    cols = np.concatenate([np.arange(m.links.offsets[i], m.links.offsets[i] + 3) for i in perm])
    e = rng.standard_normal((3, 11, 9))
    eta = rng.standard_normal((3, 11, 9))
    X, H = simulate(m, e, eta)
    Xp, Hp = simulate(mp, e[..., cols], eta[..., cols])
    np.testing.assert_allclose(Xp, X[..., cols], rtol=0, atol=1e-12)
    np.testing.assert_allclose(Hp, H[..., cols], rtol=0, atol=1e-12)


def test_volatility_dynamics_are_country_local(desk_world):
    m = world_model(desk_world)
    for i in range(3):
        for j in range(3):
            if i != j:
                bi, bj = m.links.block(i), m.links.block(j)
                assert not m.ups[:, bi, bj].any() and not m.xi[:, bi, bj].any()
                assert not m.psi[:, bi, bj].any()


def test_singular_contemporaneous_matrix():
    spec_a = CountrySpec("A", (R,), (R,), LagOrders(1, 0, 0, 1))
    spec_b = CountrySpec("B", (R,), (R,), LagOrders(1, 0, 0, 1))
    one = np.ones((1, 1, 1))
    blocks = [_var1(0.1, lam=one, spec=spec_a), _var1(0.1, lam=one, spec=spec_b)]
    with pytest.raises(StackError, match="singular"):
        stack_global(blocks, WeightMatrix(("A", "B"), np.array([[0.0, 1.0], [1.0, 0.0]])))


def test_unconditional_mean_is_fixed_point(desk_world):
    m = world_model(desk_world)
    xm, hm = unconditional_mean(m)
    zeros = np.zeros((1, 30, m.k_total))
    X, H = simulate(m, zeros, zeros)
    np.testing.assert_allclose(X[0, -1], xm, atol=1e-10)
    np.testing.assert_allclose(H[0, -1], hm, atol=1e-10)


# -------------------------------------------------------------- stability

def test_stability_diagonal_half():
    m = stack_global([_var1(0.5, k=2)], WeightMatrix(("A",), np.zeros((1, 1))))
    rep = check_stability(m)
    assert rep.spectral_radius == pytest.approx(0.5, abs=1e-14) and not rep.unit_root


def test_stability_unit_root_flagged():
    m = stack_global([_var1(1.0)], WeightMatrix(("A",), np.zeros((1, 1))))
    assert check_stability(m).unit_root


def test_stable_world_draws_not_flagged(desk_world, desk_truth):
    rng = np.random.default_rng(5)
    base = world_model(desk_world, desk_truth)
    models = []
    for _ in range(100):
        blocks = []
        for b in base.blocks:
            p = b.params
            phi = p.phi + 0.02 * rng.standard_normal(p.phi.shape)
            blocks.append(dataclasses.replace(b, params=dataclasses.replace(p, phi=phi)))
        models.append(stack_global(blocks, desk_world.weights))
    rows = stability_table(models)
    assert sum(r["flagged"] for r in rows) == 0
    assert rows[0]["spectral_radius"] < 1 and rows[0]["condition_number"] > 0


def test_level_radius_agrees_with_oracle(desk_world):
    m = world_model(desk_world)
    assert check_stability(m).spectral_radius == pytest.approx(oracle.level_radius(desk_world),
                                                              abs=1e-12)
