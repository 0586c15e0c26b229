"""Bayesian estimation of one country's VARX model with endogenous stochastic volatility.

Level equation (per country)::

    x_t = a + sum_{l=1..p} Phi_l x_{t-l} + sum_{l=0..q} Lam_l x*_{t-l}
            + sum_{l=0..s} Psi_l h_{t-l} + u_t,      u_t = A~ H_t^{1/2} e_t

Volatility equation::

    h_t = c + sum_{l=1..m} Ups_l h_{t-l} + sum_{l=1..q} Xi_l x_{t-l} + eta_t,  eta_t ~ N(0, Q)

The sampler is Metropolis-within-Gibbs with four blocks per sweep:

1. level coefficients given h and A~ (GLS with a Gaussian prior),
2. free elements of A given residuals and h, sign restrictions by rejection,
3. the latent h path, single-site random-walk Metropolis per (t, variable),
4. volatility-equation coefficients and Q given h (normal / inverse-gamma).

Sites of h that share no likelihood term are updated together, so block 3
vectorizes over time. With ``h_update="block"`` each sweep first moves chunks
of consecutive periods jointly, proposing from a Gaussian fitted at each
chunk's conditional mode. This helps when h is persistent and the single-site
chain drifts slowly along the (persistence, Q, h) ridge.
"""

from __future__ import annotations

import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, signal

from . import __version__
from .artifacts import config_hash, load_bundle, save_bundle
from .core import (
    CountryParameters,
    CountrySpec,
    IdentificationMatrix,
    LagOrders,
    LatentVolPath,
    Panel,
    VolatilityParameters,
    WeightMatrix,
    format_quarter,
    restricted_cells,
)
from .ingest import foreign_variables

log = logging.getLogger(__name__)

MIN_TRAINING = 20


class EstimationError(RuntimeError):
    pass


class SignRestrictionError(EstimationError):
    pass


@dataclass(frozen=True)
class CountryData:
    """Aligned domestic/foreign data for one country (rows are quarters)."""

    x: np.ndarray
    xstar: np.ndarray
    quarters: tuple[int, ...] = ()

    def __post_init__(self):
        x = np.asarray(self.x, float)
        xs = np.asarray(self.xstar, float).reshape(x.shape[0], -1)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xs))):
            raise EstimationError("country data contains missing values inside the window")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xstar", xs)

    @property
    def T(self) -> int:
        return self.x.shape[0]


def country_data(panel: Panel, W: WeightMatrix, spec: CountrySpec,
                 start: int | None = None, stop: int | None = None) -> CountryData:
    """Extract the country block and its foreign variables, dropping leading gaps."""
    x = panel.matrix(spec.id, [v.value for v in spec.domestic_vars])
    xs = foreign_variables(panel, W, spec)
    q = np.asarray(panel.quarters)
    mask = np.ones(q.size, bool)
    if start is not None:
        mask &= q >= start
    if stop is not None:
        mask &= q <= stop
    ok = mask & np.all(np.isfinite(x), axis=1) & np.all(np.isfinite(xs), axis=1)
    if not ok.any():
        raise EstimationError(f"{spec.id}: no complete observations in window")
    first = np.flatnonzero(ok)[0]
    mask &= np.arange(q.size) >= first
    if not np.all(ok[mask]):
        bad = q[mask & ~ok][0]
        raise EstimationError(f"{spec.id}: gap in data at {format_quarter(int(bad))}")
    return CountryData(x[mask], xs[mask], tuple(int(v) for v in q[mask]))


# ---------------------------------------------------------------- regressors

@dataclass(frozen=True)
class Layout:
    """Column layout of the level-equation regressor vector z_t."""

    k: int
    k_star: int
    lags: LagOrders
    with_h: bool = True

    @property
    def start(self) -> int:
        return self.lags.max_lag

    @property
    def n_base(self) -> int:
        L = self.lags
        return 1 + self.k * L.p + self.k_star * (L.q + 1)

    @property
    def nz(self) -> int:
        return self.n_base + (self.k * (self.lags.s + 1) if self.with_h else 0)

    @property
    def nw(self) -> int:
        return 1 + self.k * self.lags.m + self.k * self.lags.q


def base_regressors(data: CountryData, lay: Layout) -> np.ndarray:
    """[1, x_{t-1..t-p}, x*_{t..t-q}] for t = start..T-1."""
    T, L0 = data.T, lay.start
    cols = [np.ones((T - L0, 1))]
    cols += [data.x[L0 - l:T - l] for l in range(1, lay.lags.p + 1)]
    cols += [data.xstar[L0 - l:T - l] for l in range(0, lay.lags.q + 1)]
    return np.hstack(cols)


def h_regressors(h: np.ndarray, lay: Layout) -> np.ndarray:
    T, L0 = h.shape[0], lay.start
    return np.hstack([h[L0 - l:T - l] for l in range(0, lay.lags.s + 1)])


def vol_regressors(h: np.ndarray, x: np.ndarray, lay: Layout) -> np.ndarray:
    """[1, h_{t-1..t-m}, x_{t-1..t-q}] for t = start..T-1."""
    T, L0 = h.shape[0], lay.start
    cols = [np.ones((T - L0, 1))]
    cols += [h[L0 - l:T - l] for l in range(1, lay.lags.m + 1)]
    cols += [x[L0 - l:T - l] for l in range(1, lay.lags.q + 1)]
    return np.hstack(cols)


def unpack_coefficients(B: np.ndarray, lay: Layout):
    """Split B (k x nz) into intercept, Phi, Lam, Psi arrays."""
    k, ks, L = lay.k, lay.k_star, lay.lags
    a = B[:, 0]
    i = 1
    phi = np.stack([B[:, i + l * k:i + (l + 1) * k] for l in range(L.p)])
    i += k * L.p
    lam = np.stack([B[:, i + l * ks:i + (l + 1) * ks] for l in range(L.q + 1)])
    i += ks * (L.q + 1)
    if lay.with_h:
        psi = np.stack([B[:, i + l * k:i + (l + 1) * k] for l in range(L.s + 1)])
    else:
        psi = np.zeros((L.s + 1, k, k))
    return a, phi, lam, psi


def unpack_vol(G: np.ndarray, lay: Layout):
    k, L = lay.k, lay.lags
    c = G[:, 0]
    ups = np.stack([G[:, 1 + l * k:1 + (l + 1) * k] for l in range(L.m)])
    i = 1 + k * L.m
    xi = (np.stack([G[:, i + l * k:i + (l + 1) * k] for l in range(L.q)])
          if L.q else np.zeros((0, k, k)))
    return c, ups, xi


# -------------------------------------------------------------------- priors

@dataclass(frozen=True)
class Priors:
    """Gaussian / inverse-gamma priors for one country.

    Level coefficients are stacked equation by equation (row-major vec of the
    k x nz matrix B). ``ident_mean``/``ident_var`` refer to the regression form
    u_jt = sum_{l<j} alpha_jl u_lt + eps_jt with alpha_j = -A[j, :j].
    """

    coef_mean: np.ndarray
    coef_cov: np.ndarray
    ident_mean: np.ndarray
    ident_var: float
    vol_mean: np.ndarray      # (k, nw)
    vol_cov: np.ndarray       # (nw, nw), shared by the k equations
    q_shape: float
    q_scale: np.ndarray       # (k,)
    h0_mean: np.ndarray       # (k,)
    h0_var: float
    n_training: int = 0

    def __post_init__(self):
        for name in ("coef_cov", "vol_cov"):
            m = np.asarray(getattr(self, name))
            if not np.allclose(m, m.T, rtol=0, atol=1e-10 * max(1.0, np.abs(m).max())):
                raise ValueError(f"prior {name} is not symmetric")
            if np.linalg.eigvalsh((m + m.T) / 2).min() <= 0:
                raise ValueError(f"prior {name} is not positive definite")
        if self.ident_var <= 0 or self.h0_var <= 0 or self.q_shape <= 0:
            raise ValueError("prior variances and shapes must be positive")
        if np.any(np.asarray(self.q_scale) <= 0):
            raise ValueError("prior Q scale must be positive")

    def without_h(self, lay: Layout) -> "Priors":
        """Restrict the coefficient prior to the non-volatility regressors."""
        nzf = Layout(lay.k, lay.k_star, lay.lags, True).nz
        keep = np.concatenate([j * nzf + np.arange(lay.n_base) for j in range(lay.k)])
        return Priors(self.coef_mean[keep], self.coef_cov[np.ix_(keep, keep)], self.ident_mean,
                      self.ident_var, self.vol_mean, self.vol_cov, self.q_shape, self.q_scale,
                      self.h0_mean, self.h0_var, self.n_training)


def ldl(sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """sigma = A~ diag(d) A~' with A~ unit lower-triangular."""
    c = np.linalg.cholesky(sigma)
    dg = np.diag(c)
    return c / dg, dg ** 2


def priors_from_arrays(x: np.ndarray, xstar: np.ndarray, spec: CountrySpec, *,
                       coef_scale: float = 4.0, psi_var: float = 1.0, ident_var: float = 10.0,
                       vol_persistence: float = 0.8, vol_intercept_var: float = 1.0,
                       vol_lag_var: float = 0.25, vol_x_var: float = 0.01,
                       q_shape: float = 3.0, q_mean: float = 0.05, h0_var: float = 10.0,
                       n_training: int | None = None) -> Priors:
    """Training-sample priors: level coefficients centred on OLS, volatility on log residual variances."""
    lay = Layout(spec.k, spec.k_star, spec.lags)
    L = spec.lags
    lag_x = max(L.p, L.q)
    n = x.shape[0] - lag_x
    if n < MIN_TRAINING:
        raise EstimationError(
            f"{spec.id}: training window has {n} usable quarters after lags; need >= {MIN_TRAINING}")
    # start = max(p, q): no volatility lags in the training regression
    Z = base_regressors(CountryData(x, xstar), Layout(spec.k, spec.k_star, LagOrders(L.p, L.q, 0, 1), False))
    Y = x[lag_x:]
    B, *_ = np.linalg.lstsq(Z, Y, rcond=None)
    U = Y - Z @ B
    dof = max(n - Z.shape[1], 1)
    sigma = U.T @ U / dof
    var = np.diag(sigma)
    if np.any(var <= 1e-12 * max(1.0, float(np.abs(Y).max()) ** 2)):
        raise EstimationError(f"{spec.id}: zero residual variance in training sample")
    a_tilde, d = ldl(sigma)
    A0 = np.linalg.inv(a_tilde)
    ident_mean = np.concatenate([-A0[j, :j] for j in range(1, spec.k)]) if spec.k > 1 else np.zeros(0)

    nb, nz = lay.n_base, lay.nz
    zz_inv = np.linalg.pinv(Z.T @ Z)
    mean = np.zeros((spec.k, nz))
    mean[:, :nb] = B.T
    cov = np.zeros((spec.k * nz, spec.k * nz))
    for i in range(spec.k):
        for j in range(spec.k):
            cov[i * nz:i * nz + nb, j * nz:j * nz + nb] = coef_scale * sigma[i, j] * zz_inv
        cov[i * nz + nb:(i + 1) * nz, i * nz + nb:(i + 1) * nz] = psi_var * np.eye(nz - nb)
    cov = (cov + cov.T) / 2
    # guard against a near-singular training design
    w = np.linalg.eigvalsh(cov)
    if w.min() <= 1e-10 * w.max():
        cov += np.eye(cov.shape[0]) * 1e-8 * w.max()

    logd = np.log(d)
    vm = np.zeros((spec.k, lay.nw))
    vm[:, 0] = (1 - vol_persistence) * logd
    vm[:, 1:1 + spec.k] = vol_persistence * np.eye(spec.k)
    vdiag = np.concatenate([[vol_intercept_var], np.full(spec.k * L.m, vol_lag_var),
                            np.full(spec.k * L.q, vol_x_var)])
    return Priors(mean.ravel(), cov, ident_mean, ident_var, vm, np.diag(vdiag), q_shape,
                  np.full(spec.k, q_mean * (q_shape - 1)), logd, h0_var,
                  x.shape[0] if n_training is None else n_training)


def build_priors(training: Panel, W: WeightMatrix, spec: CountrySpec, **kw) -> Priors:
    """Priors from the training window of a transformed panel (up to its split quarter)."""
    stop = training.training_split if training.training_split is not None else None
    data = country_data(training, W, spec, stop=stop)
    return priors_from_arrays(data.x, data.xstar, spec, n_training=data.T, **kw)


# ------------------------------------------------------------------- config

@dataclass(frozen=True)
class McmcConfig:
    draws: int = 10_000          # total sweeps
    burn_in: int = 2_000
    thin: int = 1
    seed: int = 0
    sign_retry_cap: int = 1_000
    h_step: float = 0.5          # initial random-walk scale for h sites
    h_sweeps: int = 1
    adapt: bool = True
    scale_moves: bool = True     # extra Q update with standardized h innovations held fixed
    h_update: str = "single"     # "block" adds chunked h moves from a local Gaussian approximation
    h_block: int = 8             # chunk length (periods) for h_update = "block"
    fixed_volatility: bool = False   # homoskedastic reduction: h fixed, Psi = Xi = 0

    def __post_init__(self):
        if not (self.draws > self.burn_in >= 0):
            raise ValueError("need draws > burn_in >= 0")
        if self.thin < 1 or self.sign_retry_cap < 1 or self.h_sweeps < 1:
            raise ValueError("thin, sign_retry_cap and h_sweeps must be >= 1")
        if self.h_block < 1:
            raise ValueError("h_block must be >= 1")
        if self.h_update not in ("single", "block"):
            raise ValueError(f"h_update must be 'single' or 'block', got {self.h_update!r}")
        if self.retained < 1:
            raise ValueError("configuration retains no draws")

    @property
    def retained(self) -> int:
        return (self.draws - self.burn_in) // self.thin


# ------------------------------------------------------------------- blocks

def _chol_draw(prec: np.ndarray, rhs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    c = linalg.cholesky(prec, lower=True)
    mean = linalg.cho_solve((c, True), rhs)
    return mean + linalg.solve_triangular(c.T, rng.standard_normal(rhs.shape[0]), lower=False)


def _chol_solve(C: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched solve of (C C') x = b for lower-triangular C of shape (n, m, m)."""
    y = np.linalg.solve(C, b[..., None])
    return np.linalg.solve(np.swapaxes(C, 1, 2), y)[..., 0]


def draw_coefficients(Y, Z, A, h_obs, prior_prec, prior_rhs, rng) -> np.ndarray:
    """Level coefficients (k x nz) given A and the observation-period h."""
    k, nz = A.shape[0], Z.shape[1]
    w = np.exp(-h_obs)                                   # (n, k)
    S = np.einsum("tj,ta,tb->jab", w, Z, Z, optimize=True)
    Yt = Y @ A.T                                          # structural-form data
    r = np.einsum("tj,ta->ja", w * Yt, Z)
    G = np.kron(A, np.eye(nz))
    prec = prior_prec + G.T @ linalg.block_diag(*S) @ G
    rhs = prior_rhs + G.T @ r.ravel()
    return _chol_draw(prec, rhs, rng).reshape(k, nz)


def draw_identification(U: np.ndarray, h_obs: np.ndarray, priors: Priors, *,
                        ordering=(), restricted: bool = False, cap: int = 1000,
                        rng: np.random.Generator | None = None) -> IdentificationMatrix:
    """Unit lower-triangular A~ given residuals U (n, k) and log-variances h (n, k).

    Rows of A = A~^-1 are conditionally independent Gaussian regressions; the
    shock-origin restrictions on A~ are enforced by redrawing the whole matrix.
    """
    rng = rng if rng is not None else np.random.default_rng()
    k = U.shape[1]
    ordering = tuple(ordering) if ordering else ()
    if k == 1:
        return IdentificationMatrix(np.ones((1, 1)), ordering or ("ShortRate",))
    posts = []
    off = 0
    for j in range(1, k):
        X = U[:, :j]
        w = np.exp(-h_obs[:, j])
        prec = np.eye(j) / priors.ident_var + (X * w[:, None]).T @ X
        rhs = priors.ident_mean[off:off + j] / priors.ident_var + (X * w[:, None]).T @ U[:, j]
        c = linalg.cholesky(prec, lower=True)
        posts.append((c, linalg.cho_solve((c, True), rhs)))
        off += j
    cells = restricted_cells(ordering) if restricted else []
    for _ in range(cap):
        A = np.eye(k)
        for j, (c, mean) in enumerate(posts, start=1):
            alpha = mean + linalg.solve_triangular(c.T, rng.standard_normal(j), lower=False)
            A[j, :j] = -alpha
        a_tilde = linalg.solve_triangular(A, np.eye(k), lower=True, unit_diagonal=True)
        a_tilde = np.tril(a_tilde, -1) + np.eye(k)
        if all(a_tilde[i, jj] <= 0.0 for i, jj in cells):
            return IdentificationMatrix(a_tilde, ordering, sign_restricted=bool(cells))
    raise SignRestrictionError(
        f"sign restrictions not met after {cap} redraws; loosen the identification prior "
        "or revisit the specification")


def loglik_path(params: CountryParameters, path: LatentVolPath, data: CountryData,
                lags: LagOrders) -> float:
    """Gaussian log-likelihood of the level residuals given an h path (same index as data)."""
    lay = Layout(params.k, data.xstar.shape[1], lags)
    if path.h.shape != data.x.shape:
        raise ValueError("h path and data are not conformable")
    with np.errstate(over="ignore", under="ignore"):
        var = np.exp(path.h)
    bad = np.flatnonzero(~np.all(np.isfinite(var) & (var > 0), axis=1))
    bad = bad[bad >= lay.start]
    if bad.size:
        raise EstimationError(f"Omega not positive definite at t={int(bad[0])}")
    B = np.hstack([params.intercept[:, None], *params.phi, *params.lam, *params.psi])
    Z = np.hstack([base_regressors(data, lay), h_regressors(path.h, lay)])
    U = data.x[lay.start:] - Z @ B.T
    eps = linalg.solve_triangular(params.ident.a_tilde, U.T, lower=True, unit_diagonal=True).T
    h = path.h[lay.start:]
    n, k = U.shape
    return float(-0.5 * (n * k * np.log(2 * np.pi) + h.sum() + (eps ** 2 * np.exp(-h)).sum()))


# ------------------------------------------------------------------ draws

@dataclass
class PosteriorDraws:
    """Retained draws for one country plus the data they were estimated on."""

    spec: CountrySpec
    data: CountryData
    intercept: np.ndarray   # (D, k)
    phi: np.ndarray         # (D, p, k, k)
    lam: np.ndarray         # (D, q+1, k, k*)
    psi: np.ndarray         # (D, s+1, k, k)
    a_tilde: np.ndarray     # (D, k, k)
    vol_intercept: np.ndarray  # (D, k)
    ups: np.ndarray         # (D, m, k, k)
    xi: np.ndarray          # (D, q, k, k)
    q_diag: np.ndarray      # (D, k)
    h: np.ndarray           # (D, T, k)
    diagnostics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.intercept.shape[0]

    def country_params(self, d: int) -> CountryParameters:
        ident = IdentificationMatrix(self.a_tilde[d], self.spec.domestic_vars,
                                     sign_restricted=self.spec.is_shock_origin)
        return CountryParameters(self.intercept[d], self.phi[d], self.lam[d], self.psi[d], ident)

    def vol_params(self, d: int) -> VolatilityParameters:
        return VolatilityParameters(self.vol_intercept[d], self.ups[d], self.xi[d], self.q_diag[d])

    def path(self, d: int) -> LatentVolPath:
        return LatentVolPath(self.h[d])

    _ARRAYS = ("intercept", "phi", "lam", "psi", "a_tilde", "vol_intercept", "ups", "xi",
               "q_diag", "h")

    def save(self, path) -> None:
        arrays = {n: getattr(self, n) for n in self._ARRAYS}
        arrays["data_x"], arrays["data_xstar"] = self.data.x, self.data.xstar
        arrays["data_quarters"] = np.asarray(self.data.quarters, dtype=np.int64)
        s = self.spec
        meta = {
            "spec": {"id": s.id, "domestic_vars": [v.value for v in s.domestic_vars],
                     "foreign_vars": [v.value for v in s.foreign_vars],
                     "lags": asdict(s.lags), "is_shock_origin": s.is_shock_origin},
            "config": self.config,
            "config_hash": config_hash(self.config),
            "seed": self.config.get("seed"),
            "diagnostics": self.diagnostics,
            "software_version": __version__,
        }
        save_bundle(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "PosteriorDraws":
        arrays, meta = load_bundle(path)
        s = meta["spec"]
        spec = CountrySpec(s["id"], tuple(s["domestic_vars"]), tuple(s["foreign_vars"]),
                           LagOrders(**s["lags"]), s["is_shock_origin"])
        data = CountryData(arrays.pop("data_x"), arrays.pop("data_xstar"),
                           tuple(int(q) for q in arrays.pop("data_quarters")))
        return cls(spec, data, **{n: arrays[n] for n in cls._ARRAYS},
                   diagnostics=meta["diagnostics"], config=meta["config"])


# ------------------------------------------------------------------ sampler

class _HSampler:
    """Metropolis updates of the log-volatility path: single-site, chunked, and
    two non-centred moves for the volatility scale and persistence."""

    def __init__(self, lay: Layout, data: CountryData, priors: Priors):
        self.lay = lay
        self.L = lay.start
        self.T = data.T
        self.d = max(lay.lags.s, lay.lags.m)
        self.x = data.x

    def terms(self, h, r0, A, psi, c, ups, xi_x, qd, h0m, h0v):
        """Per-period log-density terms that involve h (length T)."""
        L, T = self.L, self.T
        out = np.zeros(T)
        hh = h[L:]
        u = r0.copy()
        for l in range(psi.shape[0]):
            u -= h[L - l:T - l] @ psi[l].T
        eps = u @ A.T
        out[L:] = -0.5 * (hh + eps ** 2 * np.exp(-hh)).sum(axis=1)
        mean = c + xi_x
        for l in range(1, ups.shape[0] + 1):
            mean = mean + h[L - l:T - l] @ ups[l - 1].T
        out[L:] += -0.5 * ((hh - mean) ** 2 / qd).sum(axis=1)
        out[:L] = -0.5 * ((h[:L] - h0m) ** 2 / h0v).sum(axis=1)
        return out

    def level_terms(self, h, r0, A, psi) -> float:
        """Level-equation log density (structural shocks) along h, summed over t >= L."""
        L, T = self.L, self.T
        u = r0.copy()
        for l in range(psi.shape[0]):
            u -= h[L - l:T - l] @ psi[l].T
        eps = u @ A.T
        hh = h[L:]
        return float(-0.5 * (hh + eps ** 2 * np.exp(-hh)).sum())

    def innovations(self, h, c, ups, xi_x) -> np.ndarray:
        L, T = self.L, self.T
        mean = c + xi_x
        for l in range(1, ups.shape[0] + 1):
            mean = mean + h[L - l:T - l] @ ups[l - 1].T
        return h[L:] - mean

    def rebuild(self, h, innov, c, ups, xi_x) -> np.ndarray:
        """h path implied by given innovations (initial rows kept)."""
        L, T = self.L, self.T
        out = h.copy()
        base = c + xi_x + innov
        m = ups.shape[0]
        if m == 1:
            # diagonalize the VAR(1) and filter each mode; falls back to the loop if ill-posed
            lam, V = np.linalg.eig(ups[0])
            if np.linalg.cond(V) < 1e6:
                Vinv = np.linalg.inv(V)
                z = base @ Vinv.T
                z[0] = z[0] + Vinv @ out[L - 1] * lam
                zf = np.empty_like(z)
                for i in range(lam.size):
                    zf[:, i] = signal.lfilter([1.0], [1.0, -lam[i]], z[:, i])
                out[L:] = (zf @ V.T).real
                return out
        for t in range(L, T):
            v = base[t - L].copy()
            for l in range(1, m + 1):
                v += ups[l - 1] @ out[t - l]
            out[t] = v
        return out

    def scale_move(self, h, qd, level_args, vol_args, q_shape, q_scale, step, rng):
        """Metropolis on log Q_j in the non-centred form: eta = innov / sqrt(Q) fixed,
        h rebuilt. Improves mixing when h is weakly identified. Returns accept flags."""
        c, ups, xi_x = vol_args
        eta = self.innovations(h, c, ups, xi_x) / np.sqrt(qd)
        cur = self.level_terms(h, *level_args)
        k = h.shape[1]
        acc = np.zeros(k)

        def log_prior(q, j):  # inverse gamma density on Q plus log-Jacobian of s = log Q
            return -(q_shape + 1) * np.log(q) - q_scale[j] / q + np.log(q)

        for j in range(k):
            qn = qd.copy()
            qn[j] = qd[j] * np.exp(step[j] * rng.standard_normal())
            hn = self.rebuild(h, eta * np.sqrt(qn), c, ups, xi_x)
            if not np.all(np.isfinite(hn)) or np.abs(hn).max() > 50:
                continue
            new = self.level_terms(hn, *level_args)
            log_r = new - cur + log_prior(qn[j], j) - log_prior(qd[j], j)
            if np.log(rng.uniform()) < log_r:
                h[:] = hn
                qd[j] = qn[j]
                cur = new
                acc[j] = 1.0
        return acc

    def persistence_move(self, h, G, qd, level_args, xi_x, vol_mean, vol_prec, anchor, step,
                         rng, lay):
        """Metropolis on the own first-lag persistence of each h component with the
        standardized innovations held fixed; the intercept shifts by delta * anchor so the
        level of h stays put (a unit-Jacobian map). Returns accept flags."""
        k = h.shape[1]
        acc = np.zeros(k)
        c, ups, _ = unpack_vol(G, lay)
        eta = self.innovations(h, c, ups, xi_x) / np.sqrt(qd)
        cur = self.level_terms(h, *level_args)
        for j in range(k):
            delta = step[j] * rng.standard_normal()
            Gn = G.copy()
            Gn[j, 1 + j] += delta
            Gn[j, 0] -= delta * anchor[j]
            cn, un, _ = unpack_vol(Gn, lay)
            hn = self.rebuild(h, eta * np.sqrt(qd), cn, un, xi_x)
            if not np.all(np.isfinite(hn)) or np.abs(hn).max() > 50:
                continue
            new = self.level_terms(hn, *level_args)
            dn, do = Gn[j] - vol_mean[j], G[j] - vol_mean[j]
            log_r = new - cur - 0.5 * (dn @ vol_prec @ dn - do @ vol_prec @ do)
            if np.log(rng.uniform()) < log_r:
                h[:] = hn
                G[j] = Gn[j]
                c, ups = cn, un
                cur = new
                acc[j] = 1.0
        return acc

    # -- chunk moves -------------------------------------------------------------

    def _grad_blocks(self, h, r0, A, psi, c, ups, xi_x, qd, h0m, h0v, exact):
        """Gradient of the log density of h and its negative Hessian as k x k blocks,
        ``blk[t, delta]`` holding the block between periods t and t - delta.

        Without ``exact`` the cross terms between h_t and the structural shocks are
        dropped, which leaves a positive definite matrix (used for the Newton steps)."""
        L, T, d = self.L, self.T, self.d
        k = h.shape[1]
        M = [A @ p for p in psi]
        Dv = [np.eye(k)] + [-u for u in ups]
        u = r0.copy()
        for l, p in enumerate(psi):
            u -= h[L - l:T - l] @ p.T
        eps = u @ A.T
        e = np.exp(-h[L:])
        w = eps * e
        g = np.zeros_like(h)
        g[L:] += 0.5 * (eps * w - 1.0)
        for l, m_ in enumerate(M):
            g[L - l:T - l] += w @ m_
        v = self.innovations(h, c, ups, xi_x) / qd
        for l, dm in enumerate(Dv):
            g[L - l:T - l] -= v @ dm
        g[:L] -= (h[:L] - h0m) / h0v

        blk = np.zeros((T, d + 1, k, k))
        for l in range(len(M)):
            for m_ in range(l, len(M)):
                blk[L - l:T - l, m_ - l] += (M[l].T[None] * e[:, None, :]) @ M[m_]
        qinv = np.diag(1.0 / qd)
        for l in range(len(Dv)):
            for m_ in range(l, len(Dv)):
                blk[L - l:T - l, m_ - l] += Dv[l].T @ qinv @ Dv[m_]
        own = np.arange(k)
        blk[L:, 0, own, own] += 0.5 * eps * w
        blk[:L, 0, own, own] += 1.0 / h0v
        if exact:
            for l, m_ in enumerate(M):
                cross = w[:, :, None] * m_[None]          # diag(w_t) M_l, block (t, t - l)
                blk[L:, l] += cross
                if l == 0:
                    blk[L:, 0] += np.swapaxes(cross, 1, 2)
        return g, blk

    def _chunk_system(self, g, blk, times, valid):
        """Batched gradient and dense precision for chunks of consecutive periods.
        Padding slots (outside the sample) get an identity block and zero gradient."""
        nc, n = times.shape
        k = g.shape[1]
        tc = np.clip(times, 0, self.T - 1)
        G = np.where(valid[..., None], g[tc], 0.0).reshape(nc, n * k)
        P = np.zeros((nc, n, n, k, k))
        for i in range(n):
            for dl in range(min(i, self.d) + 1):
                b = np.where(valid[:, i, None, None], blk[tc[:, i], dl], 0.0)
                P[:, i, i - dl] = b
                if dl:
                    P[:, i - dl, i] = np.swapaxes(b, 1, 2)
        ci, ii = np.nonzero(~valid)
        P[ci, ii, ii] = np.eye(k)
        P = P.transpose(0, 1, 3, 2, 4).reshape(nc, n * k, n * k)
        return G, P

    def _newton_system(self, x, args, times, valid):
        """Chunk gradients, precisions and their Cholesky factors; the exact curvature
        where it is positive definite for every chunk, the safe one otherwise."""
        for exact in (True, False):
            G, P = self._chunk_system(*self._grad_blocks(x, *args, exact=exact), times, valid)
            try:
                return G, P, np.linalg.cholesky(P)
            except np.linalg.LinAlgError:
                if not exact:
                    raise
        raise AssertionError("unreachable")

    def chunk_move(self, h, args, length, rng, tol=1e-8, max_iter=50):
        """Metropolis-Hastings on chunks of ``length`` consecutive periods (all
        variables together) with a Gaussian proposal at the chunk's conditional
        mode. Chunk boundaries start at a random offset; alternate chunks share no
        likelihood term and are updated together. Returns the acceptance rate."""
        T, d = self.T, self.d
        if length < max(d, 1):
            raise ValueError(f"h_block must be at least the volatility lag order {d}")
        k = h.shape[1]
        off = int(rng.integers(length))
        starts = np.arange(-off, T, length)
        acc, tried = 0.0, 0
        for parity in (0, 1):
            a = starts[parity::2]
            times = a[:, None] + np.arange(length)
            valid = (times >= 0) & (times < T)
            hi = np.minimum(a + length + d, T)
            lo = np.maximum(a, 0)
            tc = np.clip(times, 0, T - 1)

            def chunk_logp(z):
                f = self.terms(z, *args)
                csum = np.concatenate([[0.0], np.cumsum(f)])
                return csum[hi] - csum[lo]

            def place(base, delta):
                out = base.copy()
                out[tc[valid]] += delta.reshape(times.shape + (k,))[valid]
                return out

            x, fx = h.copy(), chunk_logp(h)
            for _ in range(max_iter):
                G, P, C = self._newton_system(x, args, times, valid)
                dx = _chol_solve(C, G)
                t = np.ones(len(a))
                while True:
                    xn = place(x, t[:, None] * dx)
                    fn = chunk_logp(xn) if np.abs(xn).max() < 50 else np.full(len(a), -np.inf)
                    bad = fn < fx - 1e-12
                    if not bad.any() or t.max() < 1e-4:
                        break
                    t[bad] *= 0.5
                t[bad] = 0.0
                x = place(x, t[:, None] * dx)
                fx = chunk_logp(x)
                if np.abs(t[:, None] * dx).max() < tol:
                    break
            G, P, C = self._newton_system(x, args, times, valid)
            z = rng.standard_normal(G.shape)
            dp = _chol_solve(C, np.einsum("cij,cj->ci", C, z))    # C^-T z
            mask = np.repeat(valid, k, axis=1)
            dp = np.where(mask, dp, 0.0)
            dc = np.where(mask, (h - x)[tc].reshape(dp.shape), 0.0)
            prop = place(x, dp)
            if not np.all(np.isfinite(prop)) or np.abs(prop).max() > 50:
                continue
            quad = lambda v: np.einsum("ci,cij,cj->c", v, P, v)
            log_r = chunk_logp(prop) - chunk_logp(h) - 0.5 * quad(dc) + 0.5 * quad(dp)
            ok = np.log(rng.uniform(size=len(a))) < log_r
            keep = valid & ok[:, None]
            h[tc[keep]] = prop[tc[keep]]
            acc += ok.sum()
            tried += len(a)
        return acc / max(tried, 1)

    def sweep(self, h, args, step, rng):
        T, d = self.T, self.d
        k = h.shape[1]
        acc = np.zeros(k)
        f = self.terms(h, *args)
        for j in range(k):
            for r in range(d + 1):
                idx = np.arange(r, T, d + 1)
                prop = h.copy()
                prop[idx, j] += step[j] * rng.standard_normal(idx.size)
                fp = self.terms(prop, *args)
                csum = np.concatenate([[0.0], np.cumsum(fp - f)])
                hi = np.minimum(idx + d + 1, T)
                delta = csum[hi] - csum[idx]
                ok = np.log(rng.uniform(size=idx.size)) < delta
                if ok.any():
                    h[idx[ok], j] = prop[idx[ok], j]
                    f = self.terms(h, *args)
                acc[j] += ok.sum()
        return acc / T


def run_chain(data: CountryData, spec: CountrySpec, priors: Priors, cfg: McmcConfig, *,
              fixed_h: np.ndarray | None = None, init_h: np.ndarray | None = None,
              seed=None) -> PosteriorDraws:
    """Run one Metropolis-within-Gibbs chain on aligned country data.

    With ``cfg.fixed_volatility`` the log-variances are held at ``fixed_h``
    (defaults to the prior h0 mean), volatility-in-mean terms are dropped and
    only the level coefficients and A~ are sampled.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    fixed = cfg.fixed_volatility
    lay = Layout(spec.k, spec.k_star, spec.lags, with_h=not fixed)
    if fixed:
        priors = priors.without_h(lay)
    k, T, L0 = spec.k, data.T, lay.start
    n = T - L0
    if n < 1:
        raise EstimationError(f"{spec.id}: sample too short for lag orders {spec.lags}")
    x = data.x
    Y = x[L0:]
    Zb = base_regressors(data, lay)
    Xv_x = np.hstack([x[L0 - l:T - l] for l in range(1, spec.lags.q + 1)]) if spec.lags.q else np.zeros((n, 0))
    restricted = spec.is_shock_origin
    ordering = spec.domestic_vars

    prior_prec = np.linalg.inv(priors.coef_cov)
    prior_prec = (prior_prec + prior_prec.T) / 2
    prior_rhs = prior_prec @ priors.coef_mean
    vol_prec = np.linalg.inv(priors.vol_cov)

    # state
    if fixed:
        hc = priors.h0_mean if fixed_h is None else np.asarray(fixed_h, float)
        h = np.tile(hc, (T, 1))
    elif init_h is not None:
        h = np.array(init_h, float).reshape(T, k)
    else:
        h = np.tile(priors.h0_mean, (T, 1))
    B = priors.coef_mean.reshape(k, lay.nz).copy()
    A = np.eye(k)
    for j in range(1, k):
        off = j * (j - 1) // 2
        A[j, :j] = -priors.ident_mean[off:off + j]
    G = priors.vol_mean.copy()
    qd = priors.q_scale / (priors.q_shape - 1) if priors.q_shape > 1 else priors.q_scale.copy()
    qd = np.asarray(qd, float).copy()
    a_tilde = np.linalg.inv(A)

    hs = _HSampler(lay, data, priors)
    step = np.full(k, cfg.h_step)
    q_step, q_acc = np.full(k, 0.3), np.zeros(k)
    p_step, p_acc = np.full(k, 0.05), np.zeros(k)
    D = cfg.retained
    L = spec.lags
    out = {
        "intercept": np.empty((D, k)), "phi": np.empty((D, L.p, k, k)),
        "lam": np.empty((D, L.q + 1, k, spec.k_star)), "psi": np.empty((D, L.s + 1, k, k)),
        "a_tilde": np.empty((D, k, k)), "vol_intercept": np.empty((D, k)),
        "ups": np.empty((D, L.m, k, k)), "xi": np.empty((D, L.q, k, k)),
        "q_diag": np.empty((D, k)), "h": np.empty((D, T, k)),
    }
    acc_sum, acc_n, rejections = np.zeros(k), 0, 0
    b_acc = 0.0
    stored = 0
    for it in range(cfg.draws):
        # (i) level coefficients
        Z = Zb if fixed else np.hstack([Zb, h_regressors(h, lay)])
        B = draw_coefficients(Y, Z, A, h[L0:], prior_prec, prior_rhs, rng)
        U = Y - Z @ B.T
        # (ii) identification
        ident = draw_identification(U, h[L0:], priors, ordering=ordering, restricted=restricted,
                                    cap=cfg.sign_retry_cap, rng=rng)
        a_tilde = ident.a_tilde
        A = linalg.solve_triangular(a_tilde, np.eye(k), lower=True, unit_diagonal=True)
        A = np.tril(A, -1) + np.eye(k)
        if not fixed:
            # (iii) latent log-volatilities
            _, _, _, psi = unpack_coefficients(B, lay)
            r0 = Y - Zb @ B[:, :lay.n_base].T
            c, ups, xi = unpack_vol(G, lay)
            xi_x = Xv_x @ np.hstack(list(xi)).T if L.q else 0.0
            args = (r0, A, psi, c, ups, xi_x, qd, priors.h0_mean, priors.h0_var)
            if cfg.h_update == "block":
                b_acc += hs.chunk_move(h, args, cfg.h_block, rng)
            for _ in range(cfg.h_sweeps):
                acc = hs.sweep(h, args, step, rng)
                if cfg.adapt and it < cfg.burn_in:
                    step *= np.exp((acc - 0.44) / np.sqrt(it + 1.0))
                acc_sum += acc
                acc_n += 1
            # (iv) volatility equation
            Wv = vol_regressors(h, x, lay)
            hy = h[L0:]
            WtW = Wv.T @ Wv
            shape = priors.q_shape + n / 2.0
            for j in range(k):
                prec = vol_prec + WtW / qd[j]
                rhs = vol_prec @ priors.vol_mean[j] + Wv.T @ hy[:, j] / qd[j]
                G[j] = _chol_draw(prec, rhs, rng)
                ssr = float(((hy[:, j] - Wv @ G[j]) ** 2).sum())
                qd[j] = 1.0 / rng.gamma(shape, 1.0 / (priors.q_scale[j] + ssr / 2.0))
            if cfg.scale_moves:
                c, ups, xi = unpack_vol(G, lay)
                xi_x = Xv_x @ np.hstack(list(xi)).T if L.q else 0.0
                sacc = hs.scale_move(h, qd, (r0, A, psi), (c, ups, xi_x), priors.q_shape,
                                     priors.q_scale, q_step, rng)
                if cfg.adapt and it < cfg.burn_in:
                    q_step *= np.exp((sacc - 0.3) / np.sqrt(it + 1.0))
                q_acc += sacc
                pacc = hs.persistence_move(h, G, qd, (r0, A, psi), xi_x, priors.vol_mean, vol_prec,
                                           priors.h0_mean, p_step, rng, lay)
                if cfg.adapt and it < cfg.burn_in:
                    p_step *= np.exp((pacc - 0.3) / np.sqrt(it + 1.0))
                p_acc += pacc
        if not (np.all(np.isfinite(B)) and np.all(np.isfinite(h)) and np.all(np.isfinite(G))
                and np.all(np.isfinite(qd))):
            raise EstimationError(f"{spec.id}: non-finite state at draw {it}")
        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0 and stored < D:
            a, phi, lam, psi = unpack_coefficients(B, lay)
            out["intercept"][stored], out["phi"][stored] = a, phi
            out["lam"][stored], out["psi"][stored] = lam, psi
            out["a_tilde"][stored] = a_tilde
            if fixed:
                out["vol_intercept"][stored] = h[0]
                out["ups"][stored] = 0.0
                out["xi"][stored] = 0.0
                out["q_diag"][stored] = 1e-12
            else:
                c, ups, xi = unpack_vol(G, lay)
                out["vol_intercept"][stored], out["ups"][stored], out["xi"][stored] = c, ups, xi
                out["q_diag"][stored] = qd
            out["h"][stored] = h
            stored += 1
    diag = {
        "h_acceptance": (acc_sum / max(acc_n, 1)).tolist(),
        "h_step": step.tolist(),
        "q_scale_acceptance": (q_acc / cfg.draws).tolist(),
        "persistence_acceptance": (p_acc / cfg.draws).tolist(),
        "block_acceptance": b_acc / cfg.draws if cfg.h_update == "block" else None,
        "retained": D,
    }
    conf = asdict(cfg)
    if seed is not None:
        conf["derived_seed"] = seed if isinstance(seed, int) else str(seed)
    return PosteriorDraws(spec, data, diagnostics=diag, config=conf, **out)


def sample_posterior(panel: Panel, W: WeightMatrix, spec: CountrySpec, priors: Priors,
                     cfg: McmcConfig, *, seed=None) -> PosteriorDraws:
    """Estimate on the window after the panel's training split.

    The last ``max_lag`` training quarters serve as initial conditions.
    """
    data = country_data(panel, W, spec)
    if panel.training_split is not None:
        q = np.asarray(data.quarters)
        first = int(np.searchsorted(q, panel.training_split, side="right"))
        first = max(first - spec.lags.max_lag, 0)
        data = CountryData(data.x[first:], data.xstar[first:], data.quarters[first:])
    return run_chain(data, spec, priors, cfg, seed=seed)


def country_seed(seed: int, country: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), zlib.crc32(country.encode())])


def _estimate_one(args):
    panel, W, spec, priors, cfg = args
    try:
        return spec.id, sample_posterior(panel, W, spec, priors, cfg,
                                         seed=country_seed(cfg.seed, spec.id)), None
    except Exception as exc:  # one failed chain must not sink the others
        return spec.id, None, f"{type(exc).__name__}: {exc}"


def estimate_all(panel: Panel, W: WeightMatrix, specs: Sequence[CountrySpec],
                 priors: dict[str, Priors], cfg: McmcConfig, jobs: int = 1):
    """Per-country chains with independent derived seeds; returns (draws, failures)."""
    tasks = [(panel, W, s, priors[s.id], cfg) for s in specs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_estimate_one, tasks))
    else:
        results = [_estimate_one(t) for t in tasks]
    draws = {c: d for c, d, err in results if d is not None}
    failures = {c: err for c, _, err in results if err is not None}
    for c, err in failures.items():
        log.error("chain for %s failed: %s", c, err)
    return draws, failures
