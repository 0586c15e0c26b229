"""Shared domain types for the GVAR-SV toolkit.

Every quantity of the country model and the global linkage lives in exactly
one field below:

==================  ==============================================
symbol              home
==================  ==============================================
x_it, k_i           ``CountrySpec.domestic_vars`` (k_i = its length)
x*_it, k*_i         ``CountrySpec.foreign_vars``
p_i, q_i, s_i, m_i  ``LagOrders.p / q / s / m``
a_i                 ``CountryParameters.intercept``
Phi_il              ``CountryParameters.phi[l-1]``  (l = 1..p)
Lambda_il           ``CountryParameters.lam[l]``    (l = 0..q)
Psi_il              ``CountryParameters.psi[l]``    (l = 0..s)
A_i, A~_i = A_i^-1  ``IdentificationMatrix.a_tilde`` (``.a`` gives A_i)
c_i                 ``VolatilityParameters.intercept``
Upsilon_il          ``VolatilityParameters.ups[l-1]`` (l = 1..m)
Xi_il               ``VolatilityParameters.xi[l-1]``  (l = 1..q)
Q_i                 ``VolatilityParameters.q_diag`` (``.Q`` as matrix)
h_it, H_it          ``LatentVolPath.h`` (``.H(t)`` = diag(exp h_t))
e_it, eps_it, u_it  ``LatentVolPath`` helpers ``structural`` / ``residuals``
Omega_it            ``LatentVolPath.omega(t, ident)``
eta_it              ``LatentVolPath.vol_innovations``
w_ij, W~_i, N       ``WeightMatrix.w`` (N + 1 = number of rows)
x_t, k              ``GlobalModel`` (stack order; ``k_total``)
==================  ==============================================
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


class InvariantError(ValueError):
    """A domain object was constructed in violation of one of its invariants."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise InvariantError(msg)


class VariableKind(str, enum.Enum):
    """Observed macro variable. Growth rates are 100 x annual log differences."""

    SHORT_RATE = "ShortRate"
    OUTPUT_GROWTH = "OutputGrowth"
    INFLATION = "Inflation"
    REAL_FX_GROWTH = "RealFxGrowth"
    EQUITY_PRICE_GROWTH = "EquityPriceGrowth"

    def __str__(self) -> str:
        return self.value


# canonical within-country ordering
CANONICAL_ORDER = (
    VariableKind.SHORT_RATE,
    VariableKind.OUTPUT_GROWTH,
    VariableKind.INFLATION,
    VariableKind.REAL_FX_GROWTH,
    VariableKind.EQUITY_PRICE_GROWTH,
)

ORIGIN_FOREIGN = (VariableKind.OUTPUT_GROWTH, VariableKind.INFLATION, VariableKind.REAL_FX_GROWTH)
PARTNER_FOREIGN = (VariableKind.OUTPUT_GROWTH, VariableKind.INFLATION, VariableKind.SHORT_RATE)


def as_kinds(names: Sequence) -> tuple[VariableKind, ...]:
    return tuple(VariableKind(n) for n in names)


@dataclass(frozen=True)
class LagOrders:
    p: int = 2
    q: int = 1
    s: int = 1
    m: int = 1

    def __post_init__(self):
        for name in ("p", "q", "s", "m"):
            _require(int(getattr(self, name)) >= 0, f"lag order {name} must be >= 0")
        _require(self.p >= 1, "lag order p must be >= 1")
        _require(self.m >= 1, "lag order m must be >= 1")

    @property
    def max_lag(self) -> int:
        return max(self.p, self.q, self.s, self.m)


@dataclass(frozen=True)
class CountrySpec:
    id: str
    domestic_vars: tuple[VariableKind, ...]
    foreign_vars: tuple[VariableKind, ...]
    lags: LagOrders = field(default_factory=LagOrders)
    is_shock_origin: bool = False

    def __post_init__(self):
        object.__setattr__(self, "domestic_vars", as_kinds(self.domestic_vars))
        object.__setattr__(self, "foreign_vars", as_kinds(self.foreign_vars))
        _require(len(self.domestic_vars) >= 1, f"{self.id}: no domestic variables")
        for label, vs in (("domestic", self.domestic_vars), ("foreign", self.foreign_vars)):
            _require(len(set(vs)) == len(vs), f"{self.id}: duplicate {label} variable")
        if self.is_shock_origin:
            _require(
                VariableKind.REAL_FX_GROWTH not in self.domestic_vars,
                f"{self.id}: the numeraire country cannot carry RealFxGrowth as a domestic variable",
            )

    @property
    def k(self) -> int:
        return len(self.domestic_vars)

    @property
    def k_star(self) -> int:
        return len(self.foreign_vars)

    def index(self, kind) -> int:
        return self.domestic_vars.index(VariableKind(kind))

    @classmethod
    def standard(cls, id: str, *, origin: bool = False, equity: bool = False,
                 lags: LagOrders | None = None) -> "CountrySpec":
        """Country with the default variable layout (equity last when enabled)."""
        dom = [VariableKind.SHORT_RATE, VariableKind.OUTPUT_GROWTH, VariableKind.INFLATION]
        if not origin:
            dom.append(VariableKind.REAL_FX_GROWTH)
        if equity:
            dom.append(VariableKind.EQUITY_PRICE_GROWTH)
        return cls(id, tuple(dom), ORIGIN_FOREIGN if origin else PARTNER_FOREIGN,
                   lags or LagOrders(), origin)


def check_model_set(specs: Sequence[CountrySpec], *, standard_layout: bool = False) -> None:
    """Validate a set of country specs that will be estimated together."""
    ids = [s.id for s in specs]
    _require(len(set(ids)) == len(ids), "duplicate country id in model set")
    n_origin = sum(s.is_shock_origin for s in specs)
    _require(n_origin == 1, f"exactly one shock-origin country required, got {n_origin}")
    if standard_layout:
        for s in specs:
            want = ORIGIN_FOREIGN if s.is_shock_origin else PARTNER_FOREIGN
            _require(
                set(s.foreign_vars) == set(want),
                f"{s.id}: foreign variables must be {[str(v) for v in want]}",
            )


_QUARTER = re.compile(r"^\s*(\d{4})\s*[Qq:\-]?\s*Q?([1-4])\s*$")


def parse_quarter(text: str) -> int:
    """'1979Q2' -> ordinal quarter count (year * 4 + quarter - 1)."""
    m = _QUARTER.match(str(text))
    if not m:
        raise ValueError(f"malformed quarter {text!r}")
    return int(m.group(1)) * 4 + int(m.group(2)) - 1


def format_quarter(ordinal: int) -> str:
    return f"{ordinal // 4}Q{ordinal % 4 + 1}"


@dataclass(frozen=True)
class Panel:
    """Country x variable x quarter data on a common quarterly index.

    ``values[c]`` has shape (T, len(variables[c])); NaN marks gaps. Variable
    names are raw series names (gdp, cpi, ...) until ``transformed`` is set,
    after which they are ``VariableKind`` values.
    """

    countries: tuple[str, ...]
    variables: Mapping[str, tuple[str, ...]]
    quarters: tuple[int, ...]
    values: Mapping[str, np.ndarray]
    training_split: int | None = None
    transformed: bool = False
    gaps: tuple[tuple[str, str, int], ...] = ()

    def __post_init__(self):
        q = np.asarray(self.quarters)
        _require(q.size > 0, "panel has no quarters")
        _require(bool(np.all(np.diff(q) == 1)), "panel quarters must be consecutive")
        object.__setattr__(self, "countries", tuple(self.countries))
        object.__setattr__(self, "quarters", tuple(int(x) for x in q))
        object.__setattr__(self, "variables", {c: tuple(str(v) for v in self.variables[c])
                                               for c in self.countries})
        vals = {}
        for c in self.countries:
            arr = _frozen(self.values[c])
            _require(arr.shape == (q.size, len(self.variables[c])),
                     f"{c}: values shape {arr.shape} does not match index")
            vals[c] = arr
        object.__setattr__(self, "values", vals)
        if self.training_split is not None:
            _require(q[0] < self.training_split < q[-1],
                     "training_split must lie strictly inside the time range")

    @property
    def time_range(self) -> tuple[int, int]:
        return self.quarters[0], self.quarters[-1]

    @property
    def T(self) -> int:
        return len(self.quarters)

    def series(self, country: str, variable) -> np.ndarray:
        return self.values[country][:, self.variables[country].index(str(variable))]

    def matrix(self, country: str, variables: Sequence) -> np.ndarray:
        cols = [self.variables[country].index(str(v)) for v in variables]
        return self.values[country][:, cols]

    def row(self, quarter: int) -> int:
        return self.quarters.index(int(quarter))

    def window(self, start: int | None = None, stop: int | None = None) -> "Panel":
        """Sub-panel for quarters in [start, stop] (inclusive ordinals)."""
        q = np.asarray(self.quarters)
        mask = np.ones(q.size, bool)
        if start is not None:
            mask &= q >= start
        if stop is not None:
            mask &= q <= stop
        split = self.training_split
        if split is not None and not (q[mask][0] < split < q[mask][-1]):
            split = None
        return Panel(self.countries, self.variables, tuple(q[mask]),
                     {c: self.values[c][mask] for c in self.countries}, split,
                     self.transformed, self.gaps)


@dataclass(frozen=True)
class WeightMatrix:
    order: tuple[str, ...]
    w: np.ndarray

    def __post_init__(self):
        w = _frozen(self.w)
        n = len(self.order)
        _require(w.shape == (n, n), f"weight matrix shape {w.shape} does not match {n} countries")
        _require(bool(np.all(np.diag(w) == 0.0)), "weight matrix diagonal must be zero")
        _require(bool(np.all((w >= 0) & (w <= 1))), "weights must lie in [0, 1]")
        if n > 1:
            dev = np.abs(w.sum(axis=1) - 1.0)
            bad = np.flatnonzero(dev > 1e-12)
            _require(bad.size == 0,
                     f"rows {[self.order[i] for i in bad]} do not sum to 1 (within 1e-12)")
        object.__setattr__(self, "order", tuple(self.order))
        object.__setattr__(self, "w", w)

    def weight(self, i: str, j: str) -> float:
        return float(self.w[self.order.index(i), self.order.index(j)])

    def row(self, country: str) -> np.ndarray:
        return self.w[self.order.index(country)]


def _unit_lower(a: np.ndarray) -> bool:
    return bool(np.all(np.diag(a) == 1.0) and np.all(np.triu(a, 1) == 0.0))


@dataclass(frozen=True)
class IdentificationMatrix:
    """Unit lower-triangular impact matrix A~ = A^-1 (u_t = A~ eps_t)."""

    a_tilde: np.ndarray
    ordering: tuple[VariableKind, ...]
    sign_restricted: bool = False

    def __post_init__(self):
        a = _frozen(self.a_tilde)
        k = len(self.ordering)
        _require(a.shape == (k, k), f"A~ shape {a.shape} does not match {k} variables")
        _require(_unit_lower(a), "A~ must be unit lower-triangular")
        object.__setattr__(self, "a_tilde", a)
        object.__setattr__(self, "ordering", as_kinds(self.ordering))
        if self.sign_restricted:
            _require(satisfies_sign_restrictions(a, self.ordering),
                     "sign restriction violated: output/inflation must not rise on impact of a rate shock")

    @property
    def a(self) -> np.ndarray:
        return np.linalg.inv(self.a_tilde)


def restricted_cells(ordering: Sequence[VariableKind]) -> list[tuple[int, int]]:
    """(row, col) cells of A~ that must be <= 0 for the shock-origin country."""
    ordering = list(as_kinds(ordering))
    if VariableKind.SHORT_RATE not in ordering:
        return []
    r = ordering.index(VariableKind.SHORT_RATE)
    cells = []
    for kind in (VariableKind.OUTPUT_GROWTH, VariableKind.INFLATION):
        if kind in ordering and ordering.index(kind) > r:
            cells.append((ordering.index(kind), r))
    return cells


def satisfies_sign_restrictions(a_tilde: np.ndarray, ordering) -> bool:
    return all(a_tilde[i, j] <= 0.0 for i, j in restricted_cells(ordering))


@dataclass(frozen=True)
class CountryParameters:
    intercept: np.ndarray   # (k,)
    phi: np.ndarray         # (p, k, k)
    lam: np.ndarray         # (q + 1, k, k*)
    psi: np.ndarray         # (s + 1, k, k)
    ident: IdentificationMatrix

    def __post_init__(self):
        a = _frozen(self.intercept)
        phi, lam, psi = _frozen(self.phi), _frozen(self.lam), _frozen(self.psi)
        k = a.shape[0]
        _require(a.ndim == 1, "intercept must be a vector")
        _require(phi.ndim == 3 and phi.shape[1:] == (k, k) and phi.shape[0] >= 1,
                 f"phi must be (p, {k}, {k}), got {phi.shape}")
        _require(lam.ndim == 3 and lam.shape[1] == k and lam.shape[0] >= 1,
                 f"lam must be (q+1, {k}, k*), got {lam.shape}")
        _require(psi.ndim == 3 and psi.shape[1:] == (k, k) and psi.shape[0] >= 1,
                 f"psi must be (s+1, {k}, {k}), got {psi.shape}")
        _require(self.ident.a_tilde.shape == (k, k), "identification matrix dimension mismatch")
        for name, v in (("intercept", a), ("phi", phi), ("lam", lam), ("psi", psi)):
            _require(bool(np.all(np.isfinite(v))), f"{name} has non-finite entries")
        for name, v in (("intercept", a), ("phi", phi), ("lam", lam), ("psi", psi)):
            object.__setattr__(self, name, v)

    @property
    def k(self) -> int:
        return self.intercept.shape[0]

    def check_against(self, spec: CountrySpec) -> None:
        L = spec.lags
        _require(self.phi.shape == (L.p, spec.k, spec.k), f"{spec.id}: phi shape mismatch")
        _require(self.lam.shape == (L.q + 1, spec.k, spec.k_star), f"{spec.id}: lam shape mismatch")
        _require(self.psi.shape == (L.s + 1, spec.k, spec.k), f"{spec.id}: psi shape mismatch")


@dataclass(frozen=True)
class VolatilityParameters:
    intercept: np.ndarray   # (k,)
    ups: np.ndarray         # (m, k, k)
    xi: np.ndarray          # (q, k, k); q may be 0
    q_diag: np.ndarray      # (k,) strictly positive

    def __post_init__(self):
        c = _frozen(self.intercept)
        ups, xi, qd = _frozen(self.ups), _frozen(self.xi), _frozen(self.q_diag)
        k = c.shape[0]
        _require(ups.ndim == 3 and ups.shape[1:] == (k, k) and ups.shape[0] >= 1,
                 f"ups must be (m, {k}, {k}), got {ups.shape}")
        _require(xi.ndim == 3 and xi.shape[1:] == (k, k), f"xi must be (q, {k}, {k}), got {xi.shape}")
        _require(qd.shape == (k,), "Q diagonal dimension mismatch")
        _require(bool(np.all(qd > 0)) and bool(np.all(np.isfinite(qd))),
                 "Q must be diagonal with strictly positive entries")
        for name, v in (("intercept", c), ("ups", ups), ("xi", xi), ("q_diag", qd)):
            object.__setattr__(self, name, v)

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.q_diag)

    def unconditional_mean(self, x_mean: np.ndarray | None = None) -> np.ndarray:
        """Mean of h with x held at ``x_mean`` (zero when omitted)."""
        k = self.intercept.shape[0]
        rhs = self.intercept.copy()
        if x_mean is not None and self.xi.shape[0]:
            rhs = rhs + self.xi.sum(axis=0) @ x_mean
        return np.linalg.solve(np.eye(k) - self.ups.sum(axis=0), rhs)


@dataclass(frozen=True)
class LatentVolPath:
    h: np.ndarray   # (T, k)

    def __post_init__(self):
        h = _frozen(self.h)
        _require(h.ndim == 2, "h must be (T, k)")
        _require(bool(np.all(np.isfinite(h))), "h path has non-finite values")
        object.__setattr__(self, "h", h)

    def H(self, t: int) -> np.ndarray:
        return np.diag(np.exp(self.h[t]))

    def omega(self, t: int, ident: IdentificationMatrix) -> np.ndarray:
        a = ident.a_tilde
        return a @ self.H(t) @ a.T

    def structural(self, e: np.ndarray) -> np.ndarray:
        """eps_t = H_t^{1/2} e_t for standardized shocks e (T, k)."""
        return np.exp(self.h / 2.0) * e

    def residuals(self, e: np.ndarray, ident: IdentificationMatrix) -> np.ndarray:
        """u_t = A~ eps_t."""
        return self.structural(e) @ ident.a_tilde.T

    def vol_innovations(self, vol: VolatilityParameters, x: np.ndarray) -> np.ndarray:
        """eta_t implied by the path and data x (same time index), NaN where lags are missing."""
        T, k = self.h.shape
        m, q = vol.ups.shape[0], vol.xi.shape[0]
        out = np.full((T, k), np.nan)
        for t in range(max(m, q), T):
            mean = vol.intercept.copy()
            for l in range(1, m + 1):
                mean += vol.ups[l - 1] @ self.h[t - l]
            for l in range(1, q + 1):
                mean += vol.xi[l - 1] @ x[t - l]
            out[t] = self.h[t] - mean
        return out
