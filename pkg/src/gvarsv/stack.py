"""Stacking per-country draws into one simulable world model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import (
    CountryParameters,
    CountrySpec,
    InvariantError,
    VariableKind,
    VolatilityParameters,
    WeightMatrix,
)

COND_LIMIT = 1e10


class StackError(ValueError):
    pass


@dataclass(frozen=True)
class LinkMatrices:
    """Maps the stacked x_t onto each country's (x_it; x*_it).

    ``select[i]`` (k_i x k) picks the domestic block; ``weights[i]``
    (k*_i x k) builds x*_it. ``terms[i][r]`` lists the (column, weight)
    pairs behind foreign row r, zero weights omitted.
    """

    order: tuple[str, ...]
    offsets: tuple[int, ...]
    sizes: tuple[int, ...]
    select: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]
    terms: tuple[tuple[tuple[tuple[int, float], ...], ...], ...]
    labels: tuple[tuple[str, str], ...]

    @property
    def k_total(self) -> int:
        return sum(self.sizes)

    def block(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i] + self.sizes[i])

    def foreign(self, X: np.ndarray, i: int) -> np.ndarray:
        """x*_i from stacked paths X (..., k); zero-weight partners are skipped."""
        out = np.zeros(X.shape[:-1] + (len(self.terms[i]),))
        for r, row in enumerate(self.terms[i]):
            for col, w in row:
                out[..., r] += w * X[..., col]
        return out


def build_links(W: WeightMatrix, specs: Sequence[CountrySpec]) -> LinkMatrices:
    order = tuple(s.id for s in specs)
    if tuple(W.order) != order:
        raise StackError(f"weight matrix order {W.order} does not match specs {order}")
    sizes = tuple(s.k for s in specs)
    offsets = tuple(int(v) for v in np.concatenate([[0], np.cumsum(sizes)[:-1]]))
    k = sum(sizes)
    labels = tuple((s.id, v.value) for s in specs for v in s.domestic_vars)
    select, weights, terms = [], [], []
    for i, s in enumerate(specs):
        S = np.zeros((s.k, k))
        S[np.arange(s.k), offsets[i] + np.arange(s.k)] = 1.0
        Wi = np.zeros((s.k_star, k))
        rows = []
        for r, kind in enumerate(s.foreign_vars):
            row = []
            for j, partner in enumerate(specs):
                w = float(W.w[i, j])
                if w == 0.0:
                    continue
                if kind not in partner.domestic_vars:
                    raise StackError(
                        f"{s.id}: partner {partner.id} (weight {w:.4g}) has no {kind.value}")
                col = offsets[j] + partner.index(kind)
                Wi[r, col] = w
                row.append((col, w))
            rows.append(tuple(row))
        select.append(S)
        weights.append(Wi)
        terms.append(tuple(rows))
    return LinkMatrices(order, offsets, sizes, tuple(select), tuple(weights), tuple(terms), labels)


@dataclass(frozen=True)
class CountryBlock:
    """One country's draw plus its simulation history (last rows of data / h)."""

    spec: CountrySpec
    params: CountryParameters
    vol: VolatilityParameters
    x_hist: np.ndarray | None = None
    h_hist: np.ndarray | None = None

    def __post_init__(self):
        self.params.check_against(self.spec)
        L = self.spec.lags
        if self.vol.ups.shape[0] != L.m or self.vol.xi.shape[0] != L.q:
            raise InvariantError(f"{self.spec.id}: volatility lag shapes do not match lag orders")


@dataclass(frozen=True)
class GlobalModel:
    """Stacked world system for one joint posterior draw.

    Level block::

        G0 x_t = a + sum_l F_l x_{t-l} + sum_l Psi_l h_{t-l} + A~ H_t^{1/2} e_t,
        G0 = I - [Lam_{i0} W~_i]_i,   F_l = blockdiag(Phi_il) + [Lam_il W~_i]_i

    Volatility dynamics stay block-diagonal (country-local).
    """

    blocks: tuple[CountryBlock, ...]
    weights: WeightMatrix
    links: LinkMatrices
    a: np.ndarray
    G0: np.ndarray
    G0inv: np.ndarray
    phi: np.ndarray         # (P, k, k) block-diagonal domestic lags
    lamw: np.ndarray        # (Q+1, k, k) foreign terms mapped to stacked x
    psi: np.ndarray         # (S+1, k, k)
    c: np.ndarray
    ups: np.ndarray         # (M, k, k)
    xi: np.ndarray          # (QX, k, k)
    a_tilde: np.ndarray     # (k, k) block-diagonal
    sqrt_q: np.ndarray
    x_hist: np.ndarray      # (Lg, k) oldest first
    h_hist: np.ndarray      # (Lg, k)
    cond: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def k_total(self) -> int:
        return self.a.shape[0]

    @property
    def n_hist(self) -> int:
        return self.x_hist.shape[0]

    @property
    def order(self) -> tuple[str, ...]:
        return self.links.order

    def index(self, country: str, kind) -> int:
        i = self.order.index(country)
        return self.links.offsets[i] + self.blocks[i].spec.index(VariableKind(kind))

    def companion(self) -> np.ndarray:
        """Level-block companion matrix (h held fixed)."""
        F = [self.G0inv @ (self._phi(l) + self._lamw(l)) for l in range(1, self.n_lags + 1)]
        return _companion(F)

    @property
    def n_lags(self) -> int:
        return max(self.phi.shape[0], self.lamw.shape[0] - 1)

    def _phi(self, l: int) -> np.ndarray:
        return self.phi[l - 1] if l <= self.phi.shape[0] else np.zeros_like(self.G0)

    def _lamw(self, l: int) -> np.ndarray:
        return self.lamw[l] if l < self.lamw.shape[0] else np.zeros_like(self.G0)


def _companion(F: Sequence[np.ndarray]) -> np.ndarray:
    k, P = F[0].shape[0], len(F)
    C = np.zeros((k * P, k * P))
    C[:k] = np.hstack(F)
    if P > 1:
        C[k:, :-k] = np.eye(k * (P - 1))
    return C


def _block_lags(mats: Sequence[np.ndarray], offsets, sizes, n: int, k: int) -> np.ndarray:
    out = np.zeros((n, k, k))
    for arr, o, s in zip(mats, offsets, sizes):
        for l in range(arr.shape[0]):
            out[l, o:o + s, o:o + s] = arr[l]
    return out


def stack_global(blocks: Sequence[CountryBlock], W: WeightMatrix, *,
                 links: LinkMatrices | None = None, initial: str = "final") -> GlobalModel:
    """Solve the contemporaneous foreign links into one stacked recursion.

    ``initial`` selects the simulation start: the blocks' final observed
    history ("final") or the unconditional mean with h at its mean ("mean").
    """
    specs = [b.spec for b in blocks]
    links = links or build_links(W, specs)
    k = links.k_total
    offs, sizes = links.offsets, links.sizes
    Q = max(s.lags.q for s in specs)
    P = max(s.lags.p for s in specs)
    S = max(s.lags.s for s in specs)
    M = max(s.lags.m for s in specs)
    lamw = np.zeros((Q + 1, k, k))
    for i, b in enumerate(blocks):
        for l in range(b.params.lam.shape[0]):
            lamw[l, offs[i]:offs[i] + sizes[i]] = b.params.lam[l] @ links.weights[i]
    G0 = np.eye(k) - lamw[0]
    cond = float(np.linalg.cond(G0))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise StackError(f"contemporaneous matrix is singular (condition number {cond:.3g})")
    G0inv = np.linalg.inv(G0)
    a = np.concatenate([b.params.intercept for b in blocks])
    phi = _block_lags([b.params.phi for b in blocks], offs, sizes, P, k)
    psi = _block_lags([b.params.psi for b in blocks], offs, sizes, S + 1, k)
    ups = _block_lags([b.vol.ups for b in blocks], offs, sizes, M, k)
    xi = _block_lags([b.vol.xi for b in blocks], offs, sizes, Q, k)
    a_tilde = _block_lags([b.params.ident.a_tilde[None] for b in blocks], offs, sizes, 1, k)[0]
    c = np.concatenate([b.vol.intercept for b in blocks])
    sqrt_q = np.sqrt(np.concatenate([b.vol.q_diag for b in blocks]))
    Lg = max(P, Q, S, M, 1)

    model = GlobalModel(tuple(blocks), W, links, a, G0, G0inv, phi, lamw, psi, c, ups, xi,
                        a_tilde, sqrt_q, np.zeros((Lg, k)), np.zeros((Lg, k)), cond)
    if initial == "final":
        xh, hh = np.zeros((Lg, k)), np.zeros((Lg, k))
        for i, b in enumerate(blocks):
            if b.x_hist is None or b.h_hist is None:
                raise StackError(f"{b.spec.id}: no history for final-state initialization")
            xh[:, offs[i]:offs[i] + sizes[i]] = _tail(b.x_hist, Lg, b.spec.id)
            hh[:, offs[i]:offs[i] + sizes[i]] = _tail(b.h_hist, Lg, b.spec.id)
    elif initial == "mean":
        xm, hm = unconditional_mean(model)
        xh, hh = np.tile(xm, (Lg, 1)), np.tile(hm, (Lg, 1))
    else:
        raise ValueError(f"unknown initial state {initial!r}")
    object.__setattr__(model, "x_hist", xh)
    object.__setattr__(model, "h_hist", hh)
    return model


def _tail(arr: np.ndarray, n: int, who: str) -> np.ndarray:
    arr = np.asarray(arr, float)
    if arr.shape[0] < n:
        raise StackError(f"{who}: history has {arr.shape[0]} rows, need {n}")
    return arr[-n:]


def unconditional_mean(model: GlobalModel) -> tuple[np.ndarray, np.ndarray]:
    """Fixed point of the joint (x, h) recursion with shocks at zero."""
    k = model.k_total
    F = sum(model._phi(l) + model._lamw(l) for l in range(1, model.n_lags + 1))
    top = np.hstack([model.G0 - F, -model.psi.sum(axis=0)])
    bot = np.hstack([-model.xi.sum(axis=0) if model.xi.shape[0] else np.zeros((k, k)),
                     np.eye(k) - model.ups.sum(axis=0)])
    sol = np.linalg.solve(np.vstack([top, bot]), np.concatenate([model.a, model.c]))
    return sol[:k], sol[k:]


def simulate(model: GlobalModel, e: np.ndarray, eta: np.ndarray, *,
             level_impulse: np.ndarray | None = None,
             vol_impulse: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Simulate R paths of length H+1 from the model's history.

    ``e``/``eta`` are standard normals of shape (R, H+1, k); impulses (k,) are
    added at t = 0 to the structural shocks and to the h innovations (both in
    natural units). Returns (x, h), each (R, Lg+H+1, k) including history.
    """
    R, H1, k = e.shape
    Lg = model.n_hist
    X = np.empty((R, Lg + H1, k))
    Hh = np.empty((R, Lg + H1, k))
    X[:, :Lg] = model.x_hist
    Hh[:, :Lg] = model.h_hist
    G0inv_t = model.G0inv.T
    at_t = model.a_tilde.T
    with np.errstate(over="ignore", invalid="ignore"):  # overflow is reported below
        for t in range(H1):
            n = Lg + t
            h = model.c + model.sqrt_q * eta[:, t]
            for l in range(1, model.ups.shape[0] + 1):
                h = h + Hh[:, n - l] @ model.ups[l - 1].T
            for l in range(1, model.xi.shape[0] + 1):
                h = h + X[:, n - l] @ model.xi[l - 1].T
            if t == 0 and vol_impulse is not None:
                h = h + vol_impulse
            Hh[:, n] = h
            eps = np.exp(h / 2.0) * e[:, t]
            if t == 0 and level_impulse is not None:
                eps = eps + level_impulse
            rhs = model.a + eps @ at_t
            for l in range(1, model.phi.shape[0] + 1):
                rhs = rhs + X[:, n - l] @ model.phi[l - 1].T
            for l in range(1, model.lamw.shape[0]):
                rhs = rhs + X[:, n - l] @ model.lamw[l].T
            for l in range(model.psi.shape[0]):
                rhs = rhs + Hh[:, n - l] @ model.psi[l].T
            X[:, n] = rhs @ G0inv_t
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Hh))):
        bad = np.flatnonzero(~(np.all(np.isfinite(X), axis=(1, 2)) & np.all(np.isfinite(Hh), axis=(1, 2))))
        raise FloatingPointError(f"non-finite simulated state in replication {int(bad[0])}")
    return X, Hh


def simulate_country(model: GlobalModel, i: int, xstar: np.ndarray, e: np.ndarray,
                     eta: np.ndarray, *, level_impulse: np.ndarray | None = None,
                     vol_impulse: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Simulate country i alone with its foreign variables given as a path.

    ``xstar`` is (R, Lg+H+1, k*_i) including history; ``e``/``eta``/impulses
    are the country's own slices. Returns (x_i, h_i) with history rows.
    """
    b = model.blocks[i]
    p, v = b.params, b.vol
    sl = model.links.block(i)
    R, H1, ki = e.shape
    Lg = model.n_hist
    X = np.empty((R, Lg + H1, ki))
    Hh = np.empty((R, Lg + H1, ki))
    X[:, :Lg] = model.x_hist[:, sl]
    Hh[:, :Lg] = model.h_hist[:, sl]
    sq = np.sqrt(v.q_diag)
    at_t = p.ident.a_tilde.T
    with np.errstate(over="ignore", invalid="ignore"):  # overflow is reported below
        for t in range(H1):
            n = Lg + t
            h = v.intercept + sq * eta[:, t]
            for l in range(1, v.ups.shape[0] + 1):
                h = h + Hh[:, n - l] @ v.ups[l - 1].T
            for l in range(1, v.xi.shape[0] + 1):
                h = h + X[:, n - l] @ v.xi[l - 1].T
            if t == 0 and vol_impulse is not None:
                h = h + vol_impulse
            Hh[:, n] = h
            eps = np.exp(h / 2.0) * e[:, t]
            if t == 0 and level_impulse is not None:
                eps = eps + level_impulse
            x = p.intercept + eps @ at_t
            for l in range(1, p.phi.shape[0] + 1):
                x = x + X[:, n - l] @ p.phi[l - 1].T
            for l in range(p.lam.shape[0]):
                x = x + xstar[:, n - l] @ p.lam[l].T
            for l in range(p.psi.shape[0]):
                x = x + Hh[:, n - l] @ p.psi[l].T
            X[:, n] = x
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Hh))):
        raise FloatingPointError(f"non-finite simulated state for {b.spec.id}")
    return X, Hh


@dataclass(frozen=True)
class StabilityReport:
    eigenvalues: np.ndarray
    spectral_radius: float
    joint_radius: float
    unit_root: bool


def check_stability(model: GlobalModel) -> StabilityReport:
    """Spectral radius of the level companion (h fixed) and of the joint (x, h) linearization."""
    ev = np.linalg.eigvals(model.companion())
    rad = float(np.max(np.abs(ev))) if ev.size else 0.0
    return StabilityReport(ev, rad, _joint_radius(model), rad >= 1.0)


def _joint_radius(model: GlobalModel) -> float:
    k = model.k_total
    L = max(model.n_lags, model.psi.shape[0] - 1, model.ups.shape[0], model.xi.shape[0], 1)
    # state (x_t, h_t); h_t is predetermined relative to x_t within a period
    F = []
    for l in range(1, L + 1):
        ups = model.ups[l - 1] if l <= model.ups.shape[0] else np.zeros((k, k))
        xi = model.xi[l - 1] if l <= model.xi.shape[0] else np.zeros((k, k))
        hx = np.hstack([xi, ups])
        psi_l = model.psi[l] if l < model.psi.shape[0] else np.zeros((k, k))
        xx = model.G0inv @ (model._phi(l) + model._lamw(l) + model.psi[0] @ xi)
        xh = model.G0inv @ (psi_l + model.psi[0] @ ups)
        F.append(np.vstack([np.hstack([xx, xh]), hx]))
    ev = np.linalg.eigvals(_companion(F))
    return float(np.max(np.abs(ev)))


def stability_table(models: Sequence[GlobalModel]) -> list[dict]:
    rows = []
    for d, m in enumerate(models):
        r = check_stability(m)
        rows.append({"draw": d, "spectral_radius": r.spectral_radius,
                     "joint_radius": r.joint_radius, "flagged": r.unit_root,
                     "condition_number": m.cond})
    return rows


def country_stable_draws(pd: "PosteriorDraws") -> list[int]:
    """Retained draws whose domestic lag dynamics (Phi alone) have no unit root."""
    n, p, k, _ = pd.phi.shape
    keep = []
    for d in range(n):
        rad = np.max(np.abs(np.linalg.eigvals(_companion(list(pd.phi[d]))))) if p else 0.0
        if rad < 1.0:
            keep.append(d)
    return keep


def models_from_draws(draws: Mapping[str, "PosteriorDraws"], W: WeightMatrix, *,
                      indices: Sequence[int] | None = None, matching: str = "index",
                      seed: int | None = None, initial: str = "final",
                      eligible: Mapping[str, Sequence[int]] | None = None) -> list[GlobalModel]:
    """One GlobalModel per joint draw; draws are matched by index or at random (seeded).

    ``eligible`` restricts each country to a subset of its retained draws; index
    matching then pairs the r-th eligible draw of every country.
    """
    order = list(W.order)
    missing = [c for c in order if c not in draws]
    if missing:
        raise StackError(f"no posterior draws for {missing}")
    pool = {c: list(range(len(draws[c]))) if eligible is None else list(eligible[c]) for c in order}
    n = min(len(pool[c]) for c in order)
    if n == 0:
        raise StackError("a country has no eligible draws")
    idx = list(range(n)) if indices is None else list(indices)
    picks = {c: [pool[c][i] for i in idx] for c in order}
    if matching == "random":
        rng = np.random.default_rng(seed)
        picks = {c: [pool[c][i] for i in rng.permutation(len(pool[c]))[:len(idx)]] for c in order}
    elif matching != "index":
        raise ValueError(f"unknown draw matching {matching!r}")
    specs = [draws[c].spec for c in order]
    links = build_links(W, specs)
    models = []
    for r in range(len(idx)):
        blocks = []
        for c in order:
            d = int(picks[c][r])
            pd = draws[c]
            blocks.append(CountryBlock(pd.spec, pd.country_params(d), pd.vol_params(d),
                                       pd.data.x, pd.h[d]))
        models.append(stack_global(blocks, W, links=links, initial=initial))
    return models


def save_models(path, models: Sequence[GlobalModel]) -> None:
    """Persist the stacked matrices of each draw (numeric part only)."""
    from .artifacts import save_bundle

    names = ("a", "G0", "phi", "lamw", "psi", "c", "ups", "xi", "a_tilde", "sqrt_q",
             "x_hist", "h_hist")
    arrays = {n: np.stack([getattr(m, n) for m in models]) for n in names}
    arrays["cond"] = np.array([m.cond for m in models])
    meta = {"order": list(models[0].order), "labels": [list(l) for l in models[0].links.labels],
            "n_models": len(models)}
    save_bundle(path, arrays, meta)
