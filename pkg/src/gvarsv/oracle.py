"""Synthetic worlds with known parameters and independent brute-force references.

Nothing here imports the simulation or sampling kernels of ``stack``,
``shocks`` or ``estimation``; the code is deliberately loop-based so that it
can serve as an oracle for those modules.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    CountryParameters,
    CountrySpec,
    IdentificationMatrix,
    LagOrders,
    LatentVolPath,
    Panel,
    VariableKind,
    VolatilityParameters,
    WeightMatrix,
    parse_quarter,
)

R_, Y_, P_ = VariableKind.SHORT_RATE, VariableKind.OUTPUT_GROWTH, VariableKind.INFLATION

CANONICAL_SEED = 20240611


class UnstableWorld(RuntimeError):
    pass


@dataclass(frozen=True)
class TrueWorld:
    specs: tuple[CountrySpec, ...]
    params: tuple[CountryParameters, ...]
    vols: tuple[VolatilityParameters, ...]
    weights: WeightMatrix
    seed: int = CANONICAL_SEED
    T: int = 400
    n_training: int = 60
    burn: int = 200
    start_quarter: str = "1950Q1"

    def __post_init__(self):
        if tuple(self.weights.order) != tuple(s.id for s in self.specs):
            raise ValueError("weight matrix order does not match specs")
        for s, p in zip(self.specs, self.params):
            p.check_against(s)
        rad = level_radius(self)
        if rad >= 1.0:
            raise UnstableWorld(f"level dynamics not stable (spectral radius {rad:.3f})")

    @property
    def offsets(self) -> list[int]:
        out, o = [], 0
        for s in self.specs:
            out.append(o)
            o += s.k
        return out

    @property
    def k_total(self) -> int:
        return sum(s.k for s in self.specs)


@dataclass
class GroundTruth:
    panel: Panel
    h: dict[str, LatentVolPath]
    u: dict[str, np.ndarray]
    e: dict[str, np.ndarray] = field(default_factory=dict)


# ------------------------------------------------------------- loop kernels

def _foreign(world: TrueWorld, x_flat: np.ndarray, i: int) -> np.ndarray:
    spec = world.specs[i]
    offs = world.offsets
    out = np.zeros(spec.k_star)
    for r, kind in enumerate(spec.foreign_vars):
        tot = 0.0
        for j, partner in enumerate(world.specs):
            w = world.weights.w[i, j]
            if w != 0.0:
                tot += w * x_flat[offs[j] + partner.domestic_vars.index(kind)]
        out[r] = tot
    return out


def _contemporaneous_matrix(world: TrueWorld) -> np.ndarray:
    """M with x_t - M x_t = (everything predetermined); M row i = Lam_i0 applied to x*_i."""
    k = world.k_total
    offs = world.offsets
    M = np.zeros((k, k))
    for i, (s, p) in enumerate(zip(world.specs, world.params)):
        for a in range(s.k):
            for r, kind in enumerate(s.foreign_vars):
                coef = p.lam[0][a, r]
                for j, partner in enumerate(world.specs):
                    w = world.weights.w[i, j]
                    if w != 0.0:
                        M[offs[i] + a, offs[j] + partner.domestic_vars.index(kind)] += coef * w
    return M


def _lag_matrix(world: TrueWorld, l: int) -> np.ndarray:
    """Coefficient on x_{t-l} in the stacked level equation (before solving)."""
    k = world.k_total
    offs = world.offsets
    F = np.zeros((k, k))
    for i, (s, p) in enumerate(zip(world.specs, world.params)):
        if l <= p.phi.shape[0]:
            F[offs[i]:offs[i] + s.k, offs[i]:offs[i] + s.k] += p.phi[l - 1]
        if l < p.lam.shape[0]:
            for a in range(s.k):
                for r, kind in enumerate(s.foreign_vars):
                    for j, partner in enumerate(world.specs):
                        w = world.weights.w[i, j]
                        if w != 0.0:
                            F[offs[i] + a, offs[j] + partner.domestic_vars.index(kind)] += p.lam[l][a, r] * w
    return F


def level_radius(world: TrueWorld) -> float:
    k = world.k_total
    n_l = max(max(p.phi.shape[0], p.lam.shape[0] - 1) for p in world.params)
    S = np.linalg.inv(np.eye(k) - _contemporaneous_matrix(world))
    C = np.zeros((k * n_l, k * n_l))
    for l in range(1, n_l + 1):
        C[:k, (l - 1) * k:l * k] = S @ _lag_matrix(world, l)
    for l in range(1, n_l):
        C[l * k:(l + 1) * k, (l - 1) * k:l * k] = np.eye(k)
    return float(np.abs(np.linalg.eigvals(C)).max())


def _step(world, Xpast, Hpast, e_t, eta_t, extra_eps=None, extra_eta=None, frozen=None):
    """One period for every country. Xpast/Hpast: lists of earlier stacked vectors (newest last).

    ``frozen`` maps country index -> given x*_t path row (skips the joint solve
    for that country and uses the given foreign values instead).
    """
    k = world.k_total
    offs = world.offsets
    h_now = np.zeros(k)
    rhs = np.zeros(k)
    for i, (s, p, v) in enumerate(zip(world.specs, world.params, world.vols)):
        sl = slice(offs[i], offs[i] + s.k)
        h = v.intercept.copy()
        for l in range(1, v.ups.shape[0] + 1):
            h = h + v.ups[l - 1] @ Hpast[-l][sl]
        for l in range(1, v.xi.shape[0] + 1):
            h = h + v.xi[l - 1] @ Xpast[-l][sl]
        h = h + np.sqrt(v.q_diag) * eta_t[sl]
        if extra_eta is not None:
            h = h + extra_eta[sl]
        h_now[sl] = h
    for i, (s, p, v) in enumerate(zip(world.specs, world.params, world.vols)):
        sl = slice(offs[i], offs[i] + s.k)
        eps = np.exp(h_now[sl] / 2.0) * e_t[sl]
        if extra_eps is not None:
            eps = eps + extra_eps[sl]
        r = p.intercept + p.ident.a_tilde @ eps
        for l in range(1, p.phi.shape[0] + 1):
            r = r + p.phi[l - 1] @ Xpast[-l][sl]
        for l in range(1, p.lam.shape[0]):
            fs = frozen[i][-l - 1] if frozen and i in frozen else _foreign(world, Xpast[-l], i)
            r = r + p.lam[l] @ fs
        for l in range(0, p.psi.shape[0]):
            hh = h_now[sl] if l == 0 else Hpast[-l][sl]
            r = r + p.psi[l] @ hh
        rhs[sl] = r
    if frozen:
        x = rhs.copy()
        joint = [i for i in range(len(world.specs)) if i not in frozen]
        for i in frozen:
            sl = slice(offs[i], offs[i] + world.specs[i].k)
            x[sl] = rhs[sl] + world.params[i].lam[0] @ frozen[i][-1]
        if joint:
            raise NotImplementedError("mixed frozen/joint solve is not needed by the oracles")
        return x, h_now
    M = _contemporaneous_matrix(world)
    x = np.linalg.solve(np.eye(k) - M, rhs)
    return x, h_now


def _mean_state(world: TrueWorld):
    """Deterministic steady state of (x, h) obtained by iterating without shocks."""
    k = world.k_total
    n_hist = max(max(s.lags.max_lag for s in world.specs), 1)
    X = [np.zeros(k)] * n_hist
    H = []
    for s, v in zip(world.specs, world.vols):
        H.append(np.linalg.solve(np.eye(s.k) - v.ups.sum(axis=0), v.intercept))
    H = [np.concatenate(H)] * n_hist
    zero = np.zeros(k)
    for _ in range(2000):
        x, h = _step(world, X, H, zero, zero)
        X = X[1:] + [x]
        H = H[1:] + [h]
    return X, H


def generate(world: TrueWorld) -> GroundTruth:
    """Simulate the world forward; returns a transformed Panel and latent truth."""
    rng = np.random.default_rng(world.seed)
    k = world.k_total
    offs = world.offsets
    X, H = _mean_state(world)
    n = world.burn + world.n_training + world.T
    xs, hs, us, es = [], [], [], []
    for t in range(n):
        e_t = rng.standard_normal(k)
        eta_t = rng.standard_normal(k)
        x, h = _step(world, X, H, e_t, eta_t)
        if not np.all(np.isfinite(x)) or np.abs(x).max() > 1e8:
            raise UnstableWorld("unstable world: simulated state exploded")
        X = X[1:] + [x]
        H = H[1:] + [h]
        u = np.zeros(k)
        for i, (s, p) in enumerate(zip(world.specs, world.params)):
            sl = slice(offs[i], offs[i] + s.k)
            u[sl] = p.ident.a_tilde @ (np.exp(h[sl] / 2.0) * e_t[sl])
        xs.append(x)
        hs.append(h)
        us.append(u)
        es.append(e_t)
    xs, hs, us, es = (np.array(a)[world.burn:] for a in (xs, hs, us, es))
    q0 = parse_quarter(world.start_quarter)
    quarters = tuple(range(q0, q0 + xs.shape[0]))
    values, variables, hpaths, upaths, epaths = {}, {}, {}, {}, {}
    for i, s in enumerate(world.specs):
        sl = slice(offs[i], offs[i] + s.k)
        values[s.id] = xs[:, sl]
        variables[s.id] = tuple(v.value for v in s.domestic_vars)
        hpaths[s.id] = LatentVolPath(hs[:, sl])
        upaths[s.id] = us[:, sl]
        epaths[s.id] = es[:, sl]
    split = quarters[world.n_training - 1] if 0 < world.n_training < len(quarters) - 1 else None
    panel = Panel(tuple(s.id for s in world.specs), variables, quarters, values, split, True)
    return GroundTruth(panel, hpaths, upaths, epaths)


# --------------------------------------------------------------- worlds

def _ident(ordering, lower):
    a = np.eye(len(ordering))
    for (i, j), v in lower.items():
        a[i, j] = v
    return IdentificationMatrix(a, ordering)


def small_world(weights: WeightMatrix, *, seed: int = CANONICAL_SEED, T: int = 400,
                n_training: int = 60, vol_in_mean: bool = True, feedback: bool = True,
                q_scale: float = 1.0, zero_lam=(), contemporaneous: bool = True) -> TrueWorld:
    """Countries with (rate, output, inflation) and p = q = s = m = 1.

    The first country in ``weights.order`` is the shock origin with foreign
    (output, inflation); every other country sees (output, inflation, rate).
    Countries listed in ``zero_lam`` get no foreign loadings at all. With
    ``contemporaneous=False`` foreign variables enter with a lag only, so
    x*_t is uncorrelated with the country's own shocks (weak exogeneity holds).
    """
    lags = LagOrders(1, 1, 1, 1)
    dom = (R_, Y_, P_)
    ids = tuple(weights.order)
    specs = tuple(CountrySpec(c, dom, (Y_, P_) if n == 0 else (Y_, P_, R_), lags, n == 0)
                  for n, c in enumerate(ids))
    phi = np.array([[[0.60, 0.10, 0.15], [-0.10, 0.50, 0.00], [0.00, 0.10, 0.55]]])
    ident_lower = [
        {(1, 0): -0.40, (2, 0): -0.25, (2, 1): 0.20},
        {(1, 0): -0.30, (2, 0): 0.15, (2, 1): 0.10},
        {(1, 0): 0.20, (2, 0): -0.10, (2, 1): 0.25},
    ]
    params, vols = [], []
    for n, s in enumerate(specs):
        ks = s.k_star
        lam = np.zeros((2, 3, ks))
        # own-kind foreign loadings
        for r, kind in enumerate(s.foreign_vars):
            a = dom.index(kind)
            lam[0, a, r] = 0.25
            lam[1, a, r] = 0.10
        lam[0, 0, 0] += 0.05 if ks else 0.0
        if not contemporaneous:
            lam[1] = np.where(lam[0] != 0.0, 0.30, 0.0)
            lam[0] = 0.0
        if s.id in zero_lam:
            lam[:] = 0.0
        psi = np.zeros((2, 3, 3))
        if vol_in_mean:
            psi[0] = np.array([[0.00, 0.0, 0.0], [-0.30, 0.0, 0.0], [0.0, 0.0, -0.15]])
            psi[1] = np.array([[0.05, 0.0, 0.0], [0.0, -0.10, 0.0], [0.0, 0.0, 0.05]])
        params.append(CountryParameters(np.array([0.5, 0.8, 0.6]) * (1 + 0.1 * n), phi * (1 - 0.05 * n),
                                        lam, psi, _ident(dom, ident_lower[n % 3])))
        ups = np.array([np.diag([0.90, 0.85, 0.88])])
        xi = np.zeros((1, 3, 3))
        if feedback:
            xi[0] = np.array([[0.03, 0.0, 0.0], [0.0, -0.02, 0.0], [0.0, 0.0, 0.03]])
        c = (1 - np.diag(ups[0])) * np.array([-1.0, -0.5, -1.2])
        # unit unconditional variance of each log-volatility: enough signal at T = 400
        vols.append(VolatilityParameters(c, ups, xi, q_scale * (1 - np.diag(ups[0]) ** 2)))
    return TrueWorld(specs, tuple(params), tuple(vols), weights, seed, T, n_training)


DESK_WEIGHTS = ((0.0, 0.6, 0.4), (0.5, 0.0, 0.5), (0.7, 0.3, 0.0))


def canonical_world(seed: int = CANONICAL_SEED, T: int = 400, *, n_training: int = 60,
                    vol_in_mean: bool = True, feedback: bool = True, q_scale: float = 1.0,
                    zero_origin_lam: bool = False, contemporaneous: bool = False) -> TrueWorld:
    """Desk-scale world: USA (origin), AAA and BBB with fixed trade weights.

    Each country holds a large trade share of the others, so contemporaneous
    foreign loadings would make x*_t respond within the quarter to the
    country's own shocks and bias any VARX estimate of them. The canonical
    world therefore links countries through lagged foreign variables;
    ``contemporaneous=True`` restores impact links (for simulation checks).
    """
    W = WeightMatrix(("USA", "AAA", "BBB"), np.array(DESK_WEIGHTS))
    return small_world(W, seed=seed, T=T, n_training=n_training, vol_in_mean=vol_in_mean,
                       feedback=feedback, q_scale=q_scale,
                       zero_lam=("USA",) if zero_origin_lam else (),
                       contemporaneous=contemporaneous)


def world_with(world: TrueWorld, **changes) -> TrueWorld:
    kw = {f: getattr(world, f) for f in ("specs", "params", "vols", "weights", "seed", "T",
                                        "n_training", "burn", "start_quarter")}
    kw.update(changes)
    return TrueWorld(**kw)


# --------------------------------------------------------------- IRF oracles

def _shocks(seed, d, reps, horizon, k):
    # identical draw order to the documented shock-lab layout
    rng = np.random.default_rng([int(seed), int(d)])
    e = rng.standard_normal((reps, horizon + 1, k))
    eta = rng.standard_normal((reps, horizon + 1, k))
    return e, eta


def _impulse_vectors(world, origin, target, size, vol_sd):
    k = world.k_total
    i = [s.id for s in world.specs].index(origin)
    pos = world.offsets[i] + world.specs[i].domestic_vars.index(VariableKind(target))
    lvl = np.zeros(k)
    lvl[pos] = size
    vol = np.zeros(k)
    if vol_sd:
        vol[pos] = vol_sd * np.sqrt(world.vols[i].q_diag[world.specs[i].domestic_vars.index(VariableKind(target))])
    return lvl, vol


def _history(world, x_hist, h_hist):
    if x_hist is None:
        return _mean_state(world)
    return [np.asarray(r, float) for r in x_hist], [np.asarray(r, float) for r in h_hist]


def brute_force_irf(world: TrueWorld, origin: str, *, size: float, vol_sd: float | None = None,
                    horizon: int = 20, reps: int = 50, seed: int = 0, draw: int = 0,
                    target=VariableKind.SHORT_RATE, x_hist=None, h_hist=None):
    """Paired-path GIRF by explicit loops; returns (x_irf, h_irf), each (H+1, k)."""
    k = world.k_total
    e, eta = _shocks(seed, draw, reps, horizon, k)
    lvl, vol = _impulse_vectors(world, origin, target, size, vol_sd)
    X0, H0 = _history(world, x_hist, h_hist)
    acc_x = np.zeros((horizon + 1, k))
    acc_h = np.zeros((horizon + 1, k))
    for r in range(reps):
        paths = []
        for shocked in (False, True):
            X, H = list(X0), list(H0)
            xs, hs = [], []
            for t in range(horizon + 1):
                x, h = _step(world, X, H, e[r, t], eta[r, t],
                             lvl if (shocked and t == 0) else None,
                             vol if (shocked and t == 0) else None)
                X.append(x)
                H.append(h)
                xs.append(x)
                hs.append(h)
            paths.append((np.array(xs), np.array(hs)))
        acc_x += paths[1][0] - paths[0][0]
        acc_h += paths[1][1] - paths[0][1]
    return acc_x / reps, acc_h / reps


def closed_form_irf(world: TrueWorld, origin: str, *, size: float, horizon: int = 20,
                    target=VariableKind.SHORT_RATE) -> np.ndarray:
    """Moving-average IRF of the linear homoskedastic reduction (Psi = Xi = 0)."""
    k = world.k_total
    S = np.linalg.inv(np.eye(k) - _contemporaneous_matrix(world))
    n_l = max(max(p.phi.shape[0], p.lam.shape[0] - 1) for p in world.params)
    F = [S @ _lag_matrix(world, l) for l in range(1, n_l + 1)]
    i = [s.id for s in world.specs].index(origin)
    col = world.specs[i].domestic_vars.index(VariableKind(target))
    impact = np.zeros(k)
    o = world.offsets[i]
    impact[o:o + world.specs[i].k] = world.params[i].ident.a_tilde[:, col] * size
    resp = [S @ impact]
    for h in range(1, horizon + 1):
        r = np.zeros(k)
        for l in range(1, n_l + 1):
            if h - l >= 0:
                r += F[l - 1] @ resp[h - l]
        resp.append(r)
    return np.array(resp)


def brute_force_direct(world: TrueWorld, origin: str, *, size: float, vol_sd: float | None = None,
                       horizon: int = 20, reps: int = 50, seed: int = 0, draw: int = 0,
                       target=VariableKind.SHORT_RATE, x_hist=None, h_hist=None):
    """DIRECT responses by frozen-path loops: each country is re-run with its foreign
    variables assembled from baseline third-country paths and the origin's no-spillback path."""
    k = world.k_total
    offs = world.offsets
    ids = [s.id for s in world.specs]
    o = ids.index(origin)
    e, eta = _shocks(seed, draw, reps, horizon, k)
    lvl, vol = _impulse_vectors(world, origin, target, size, vol_sd)
    X0, H0 = _history(world, x_hist, h_hist)
    n0 = len(X0)
    acc = np.zeros((horizon + 1, k))

    def run_frozen(i, fpath, shocked, r):
        X, H = list(X0), list(H0)
        out = []
        for t in range(horizon + 1):
            x, _ = _step(world, X, H, e[r, t], eta[r, t],
                         lvl if (shocked and t == 0) else None,
                         vol if (shocked and t == 0) else None,
                         frozen={j: fpath[j][:n0 + t + 1] for j in range(len(ids))})
            # only country i's block is meaningful here
            X.append(x)
            H.append(_)
            out.append(x)
        return np.array(out)

    for r in range(reps):
        # baseline (joint) path
        X, H = list(X0), list(H0)
        for t in range(horizon + 1):
            x, h = _step(world, X, H, e[r, t], eta[r, t])
            X.append(x)
            H.append(h)
        base = np.array(X)
        fbase = {j: [_foreign(world, row, j) for row in base] for j in range(len(ids))}
        # origin without spillbacks
        so = slice(offs[o], offs[o] + world.specs[o].k)
        xo_s = run_frozen(o, fbase, True, r)[:, so]
        xo_b = run_frozen(o, fbase, False, r)[:, so]
        acc[:, so] += xo_s - xo_b
        mix = base.copy()
        mix[n0:, so] = base[n0:, so] + (xo_s - xo_b)
        fmix = {j: [_foreign(world, row, j) for row in mix] for j in range(len(ids))}
        for j in range(len(ids)):
            if j == o:
                continue
            sj = slice(offs[j], offs[j] + world.specs[j].k)
            acc[:, sj] += run_frozen(j, fmix, False, r)[:, sj] - run_frozen(j, fbase, False, r)[:, sj]
    return acc / reps


# ------------------------------------------------------ conjugate VARX oracle

def conjugate_varx_sampler(Y, Z, d_var, coef_mean, coef_cov, ident_mean, ident_var, *,
                           draws: int, burn_in: int, seed: int, restricted_cells=()):
    """Gibbs sampler for a homoskedastic structural VARX with known diagonal
    structural variances ``d_var``: y_t = B z_t + A^-1 eps_t, eps_t ~ N(0, diag(d_var)).

    Coefficients use the Kronecker form kron(Omega^-1, Z'Z); rows of A are
    drawn by weighted regressions; restrictions on A^-1 by rejection.
    Returns (coef draws (D, k*nz), a_tilde draws (D, k, k)).
    """
    rng = np.random.default_rng(seed)
    n, k = Y.shape
    nz = Z.shape[1]
    V0inv = np.linalg.inv(coef_cov)
    ZZ = Z.T @ Z
    A = np.eye(k)
    off = 0
    for j in range(1, k):
        A[j, :j] = -ident_mean[off:off + j]
        off += j
    Dinv = np.diag(1.0 / np.asarray(d_var))
    keep_b, keep_a = [], []
    for it in range(draws):
        Oinv = A.T @ Dinv @ A
        prec = V0inv + np.kron(Oinv, ZZ)
        rhs = V0inv @ coef_mean + (Oinv @ Y.T @ Z).ravel()
        cov = np.linalg.inv(prec)
        cov = (cov + cov.T) / 2
        beta = rng.multivariate_normal(cov @ rhs, cov, method="cholesky")
        U = Y - Z @ beta.reshape(k, nz).T
        for _ in range(10_000):
            A_new = np.eye(k)
            off = 0
            for j in range(1, k):
                X = U[:, :j]
                P = np.eye(j) / ident_var + X.T @ X / d_var[j]
                C = np.linalg.inv(P)
                m = C @ (ident_mean[off:off + j] / ident_var + X.T @ U[:, j] / d_var[j])
                A_new[j, :j] = -rng.multivariate_normal(m, (C + C.T) / 2, method="cholesky")
                off += j
            at = np.linalg.inv(A_new)
            if all(at[i, j] <= 0 for i, j in restricted_cells):
                A = A_new
                break
        else:
            raise RuntimeError("restriction rejection cap hit in oracle")
        if it >= burn_in:
            keep_b.append(beta)
            keep_a.append(np.linalg.inv(A))
    return np.array(keep_b), np.array(keep_a)


def mc_covariance(a_tilde: np.ndarray, h: np.ndarray, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo covariance of u = A~ H^{1/2} e and its elementwise standard error."""
    k = a_tilde.shape[0]
    e = rng.standard_normal((n, k))
    u = (e * np.exp(h / 2.0)) @ a_tilde.T
    u = u - u.mean(axis=0)
    prod = u[:, :, None] * u[:, None, :]
    cov = prod.mean(axis=0) * n / (n - 1)
    se = prod.std(axis=0, ddof=1) / np.sqrt(n)
    return cov, se


# ----------------------------------------------------- synthetic raw database

PAPER_COUNTRIES = (
    "USA", "AUT", "BEL", "FIN", "FRA", "DEU", "ITA", "NLD", "ESP", "GBR", "JPN", "CHN",
    "CAN", "AUS", "NZL", "NOR", "SWE", "CHE", "KOR", "IND", "IDN", "MYS", "PHL", "SGP",
    "THA", "ARG", "BRA", "CHL", "MEX", "PER", "ZAF", "SAU", "TUR",
)


def synthetic_database(out_dir, *, countries=PAPER_COUNTRIES, start: str = "1978Q2",
                       end: str = "2019Q4", origin: str = "USA", seed: int = 0,
                       equity: bool = False) -> dict:
    """Write raw-level CSVs shaped like the public quarterly GVAR database.

    Files: ``levels.csv`` (country, variable, quarter, value) with gdp, cpi,
    rate and (except for the origin) fx in local currency per origin unit;
    ``trade.csv`` (reporter, partner, exports, imports); ``ppp.csv``
    (country, weight). The series are plausible macro paths, not a GVAR-SV draw.
    """
    import csv
    from pathlib import Path

    from .core import format_quarter

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    q0, q1 = parse_quarter(start), parse_quarter(end)
    T = q1 - q0 + 1
    n = len(countries)
    # world business-cycle and inflation factors, so foreign averages carry signal
    common, common_p = np.zeros(T), np.zeros(T)
    for t in range(1, T):
        common[t] = 0.8 * common[t - 1] + rng.normal(0, 0.4)
        common_p[t] = 0.8 * common_p[t - 1] + rng.normal(0, 0.3)
    with (out / "levels.csv").open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["country", "variable", "quarter", "value"])
        for c in countries:
            g = np.zeros(T)
            p = np.zeros(T)
            r = np.zeros(T)
            f = np.zeros(T)
            eq = np.zeros(T)
            mg, mp = rng.uniform(0.3, 1.2), rng.uniform(0.4, 2.0)
            for t in range(1, T):
                # the rate rule reacts to last quarter; its own shock lowers growth and
                # inflation on impact, so rate-first recursive sign restrictions can hold
                m = rng.normal(0, 0.3)
                g[t] = mg + 0.5 * (g[t - 1] - mg) + 0.3 * common[t] - 0.6 * m + rng.normal(0, 0.5)
                p[t] = mp + 0.7 * (p[t - 1] - mp) + 0.3 * common_p[t] - 0.3 * m + rng.normal(0, 0.3)
                r[t] = 0.9 * r[t - 1] + 0.1 * (4 * p[t - 1] + 2.0) + 0.2 * common[t - 1] + m
                f[t] = 0.2 * f[t - 1] + rng.normal(0, 2.0)
                eq[t] = 0.1 * eq[t - 1] + 2.0 * common[t] + rng.normal(0, 4.0)
            series = {"gdp": 100 * np.exp(np.cumsum(g) / 100), "cpi": 50 * np.exp(np.cumsum(p) / 100),
                      "rate": r}
            if c != origin:
                series["fx"] = rng.uniform(0.5, 100) * np.exp(np.cumsum(f) / 100)
            if equity:
                series["equity"] = 100 * np.exp(np.cumsum(eq) / 100)
            for v, vals in series.items():
                for t in range(T):
                    wr.writerow([c, v, format_quarter(q0 + t), repr(float(vals[t]))])
    size = rng.lognormal(0, 1, n)
    with (out / "trade.csv").open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["reporter", "partner", "exports", "imports"])
        for i, a in enumerate(countries):
            for j, b in enumerate(countries):
                if i != j:
                    wr.writerow([a, b, repr(float(size[i] * size[j] * rng.uniform(0.5, 1.5))),
                                 repr(float(size[i] * size[j] * rng.uniform(0.5, 1.5)))])
    ppp = size / size.sum()
    with (out / "ppp.csv").open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["country", "weight"])
        for c, w in zip(countries, ppp):
            wr.writerow([c, repr(float(w))])
    return {"levels": out / "levels.csv", "trade": out / "trade.csv", "ppp": out / "ppp.csv"}


def write_world_inputs(world: TrueWorld, out_dir) -> dict:
    """Panel and weight-matrix CSVs for a synthetic world (inputs for the CLI)."""
    from pathlib import Path

    from .ingest import write_panel_csv, write_weight_matrix

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = generate(world)
    write_panel_csv(truth.panel, out / "panel.csv")
    write_weight_matrix(world.weights, out / "weights.csv")
    return {"panel": out / "panel.csv", "weights": out / "weights.csv", "truth": truth}
