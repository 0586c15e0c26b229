"""Generalized impulse responses, direct/total spillover decomposition and bands.

Random numbers follow one fixed layout so independent implementations can
reproduce a run: for model ``d`` the generator is
``numpy.random.default_rng([seed, d])`` and it draws, in this order,
``e = standard_normal((reps, H+1, k))`` then ``eta = standard_normal((reps, H+1, k))``
with columns in stacked-country order. Baseline and shocked paths share them.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import VariableKind
from .stack import GlobalModel, simulate, simulate_country

LEVEL = "level"
LEVEL_VOL = "level+vol"
DIRECT, TOTAL, INDIRECT = "direct", "total", "indirect"
VOL_PREFIX = "h:"

EM = ("ARG", "CHL", "IND", "KOR", "MYS", "PHL", "ZAF", "THA")
PAPER_GROUPS = {
    "EM": EM,
    "China": ("CHN",),
    "EM Asia ex-China": ("IND", "KOR", "MYS", "PHL", "THA"),
    "EM Latin America": ("ARG", "CHL"),
}


class ShockError(ValueError):
    pass


@dataclass(frozen=True)
class ShockSpec:
    """Structural rate shock of ``level_size`` x ``sd_unit`` at t = 0.

    ``vol_shock`` (in standard deviations of the rate-volatility innovation)
    adds a simultaneous shock to the origin's rate volatility equation.
    """

    origin: str
    target: VariableKind = VariableKind.SHORT_RATE
    level_size: float = 1.0
    vol_shock: float | None = None
    horizon: int = 20
    sd_unit: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "target", VariableKind(self.target))
        if not math.isfinite(self.level_size) or not math.isfinite(self.sd_unit):
            raise ShockError("level_size and sd_unit must be finite")
        if self.vol_shock is not None and not math.isfinite(self.vol_shock):
            raise ShockError("vol_shock must be finite")
        if self.horizon < 1:
            raise ShockError("horizon must be >= 1")

    @property
    def regime(self) -> str:
        return LEVEL_VOL if self.vol_shock else LEVEL


def shock_size_level(draws, variable=VariableKind.SHORT_RATE) -> float:
    """Average standard deviation of the rate structural shock: mean of exp(h_t/2)
    over the observation window, then over draws."""
    j = draws.spec.index(variable)
    start = draws.spec.lags.max_lag
    return float(np.exp(draws.h[:, start:, j] / 2.0).mean(axis=1).mean())


def common_shocks(seed: int, d: int, reps: int, horizon: int, k: int):
    rng = np.random.default_rng([int(seed), int(d)])
    e = rng.standard_normal((reps, horizon + 1, k))
    eta = rng.standard_normal((reps, horizon + 1, k))
    return e, eta


def _impulses(model: GlobalModel, spec: ShockSpec):
    k = model.k_total
    lvl = np.zeros(k)
    j = model.index(spec.origin, spec.target)
    lvl[j] = spec.level_size * spec.sd_unit
    vol = None
    if spec.vol_shock:
        vol = np.zeros(k)
        vol[j] = spec.vol_shock * model.sqrt_q[j]
    return lvl, vol


# ------------------------------------------------------------------ IrfSet

@dataclass
class IrfSet:
    """Per-draw responses for each regime: ``responses[regime]`` is (D, H+1, n_series).

    Series are (country, variable); volatility responses use variable names
    prefixed with ``h:``.
    """

    labels: tuple[tuple[str, str], ...]
    responses: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return next(iter(self.responses.values())).shape[1] - 1

    def series(self, regime: str, country: str, variable) -> np.ndarray:
        return self.responses[regime][:, :, self.labels.index((country, str(variable)))]

    def merge(self, other: "IrfSet") -> "IrfSet":
        if other.labels != self.labels:
            raise ShockError("cannot merge IRF sets with different series")
        return IrfSet(self.labels, {**self.responses, **other.responses}, {**self.meta, **other.meta})

    def summary(self, coverage: float = 0.68, min_draws: int = 30) -> list[dict]:
        rows = []
        for regime in sorted(self.responses):
            lo, med, hi = bands(self.responses[regime], coverage, min_draws=min_draws)
            for s, (c, v) in enumerate(self.labels):
                for h in range(med.shape[0]):
                    rows.append({"country": c, "variable": v, "regime": regime, "horizon": h,
                                 "median": float(med[h, s]), "lo": float(lo[h, s]),
                                 "hi": float(hi[h, s])})
        return rows

    def to_csv(self, path, **kw) -> None:
        rows = self.summary(**kw)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["country", "variable", "regime", "horizon", "median", "lo", "hi"])
            for r in rows:
                wr.writerow([r["country"], r["variable"], r["regime"], r["horizon"],
                             repr(r["median"]), repr(r["lo"]), repr(r["hi"])])

    def to_json(self, path, **kw) -> None:
        doc = {"meta": self.meta, "rows": self.summary(**kw)}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")


def bands(per_draw: np.ndarray, coverage: float = 0.68, *, min_draws: int = 30):
    """Pointwise (lower, median, upper) quantiles over axis 0."""
    per_draw = np.asarray(per_draw, float)
    if per_draw.shape[0] < min_draws:
        raise ShockError(f"need at least {min_draws} draws for bands, got {per_draw.shape[0]}")
    if not 0.0 <= coverage < 1.0:
        raise ShockError("coverage must be in [0, 1)")
    lo, med, hi = np.quantile(per_draw, [(1 - coverage) / 2, 0.5, (1 + coverage) / 2], axis=0)
    return lo, med, hi


def _labels(model: GlobalModel) -> tuple[tuple[str, str], ...]:
    lv = model.links.labels
    return tuple(lv) + tuple((c, VOL_PREFIX + v) for c, v in lv)


# -------------------------------------------------------------------- GIRF

def _diverged(on_diverge: str, d: int, exc: Exception, diverged: list[int]) -> None:
    if on_diverge not in ("raise", "drop", "keep"):
        raise ValueError(f"unknown on_diverge {on_diverge!r}")
    if on_diverge == "raise":
        raise ShockError(f"draw {d}: {exc}") from None
    diverged.append(d)


def drop_diverged(irfs: IrfSet) -> IrfSet:
    """Remove the draws listed in ``meta['diverged']`` from every regime."""
    bad = set(irfs.meta.get("diverged", ()))
    if not bad:
        return irfs
    n = len(next(iter(irfs.responses.values())))
    keep = [d for d in range(n) if d not in bad]
    return IrfSet(irfs.labels, {r: a[keep] for r, a in irfs.responses.items()}, irfs.meta)


def girf(models: Sequence[GlobalModel], spec: ShockSpec, reps: int = 200, seed: int = 0, *,
         on_diverge: str = "raise") -> IrfSet:
    """Paired-path generalized IRF (total spillovers), one regime.

    A draw whose simulated paths overflow raises ``ShockError`` naming the draw
    and replication; with ``on_diverge="drop"`` it is left out and listed in
    ``meta["diverged"]`` (``"keep"`` leaves a NaN row in place).
    """
    if not models:
        raise ShockError("no models")
    out, diverged = [], []
    for d, m in enumerate(models):
        e, eta = common_shocks(seed, d, reps, spec.horizon, m.k_total)
        lvl, vol = _impulses(m, spec)
        try:
            Xb, Hb = simulate(m, e, eta)
            Xs, Hs = simulate(m, e, eta, level_impulse=lvl, vol_impulse=vol)
        except FloatingPointError as exc:
            _diverged(on_diverge, d, exc, diverged)
            out.append(np.full((spec.horizon + 1, 2 * m.k_total), np.nan))
            continue
        L = m.n_hist
        out.append(np.concatenate([(Xs - Xb)[:, L:].mean(axis=0), (Hs - Hb)[:, L:].mean(axis=0)],
                                  axis=1))
    regime = f"{spec.regime}/{TOTAL}"
    irfs = IrfSet(_labels(models[0]), {regime: np.stack(out)},
                  {"reps": reps, "seed": seed, "origin": spec.origin,
                   "sd_unit": spec.sd_unit, "level_size": spec.level_size,
                   "vol_shock": spec.vol_shock, "diverged": diverged})
    return drop_diverged(irfs) if on_diverge == "drop" else irfs


def decompose_direct_total(models: Sequence[GlobalModel], spec: ShockSpec, reps: int = 200,
                           seed: int = 0, *, on_diverge: str = "raise") -> IrfSet:
    """TOTAL, DIRECT and INDIRECT = TOTAL - DIRECT responses for one regime.

    DIRECT for a partner j re-simulates j alone with its foreign variables
    rebuilt from the baseline paths of every third country plus the origin's
    deviation in a no-spillback run (origin simulated with its own foreign
    variables frozen at baseline). DIRECT for the origin is that no-spillback
    response itself. ``on_diverge`` works as in :func:`girf`.
    """
    if not models:
        raise ShockError("no models")
    tot, dirs, diverged = [], [], []
    for d, m in enumerate(models):
        e, eta = common_shocks(seed, d, reps, spec.horizon, m.k_total)
        lvl, vol = _impulses(m, spec)
        L = m.n_hist
        try:
            Xb, Hb = simulate(m, e, eta)
            Xs, Hs = simulate(m, e, eta, level_impulse=lvl, vol_impulse=vol)
            dx, dh = _direct(m, spec, e, eta, lvl, vol, Xb)
        except FloatingPointError as exc:
            _diverged(on_diverge, d, exc, diverged)
            tot.append(np.full((spec.horizon + 1, 2 * m.k_total), np.nan))
            dirs.append(tot[-1])
            continue
        tot.append(np.concatenate([(Xs - Xb)[:, L:].mean(axis=0), (Hs - Hb)[:, L:].mean(axis=0)],
                                  axis=1))
        dirs.append(np.concatenate([dx[:, L:].mean(axis=0), dh[:, L:].mean(axis=0)], axis=1))
    tot, dirs = np.stack(tot), np.stack(dirs)
    r = spec.regime
    irfs = IrfSet(_labels(models[0]),
                  {f"{r}/{TOTAL}": tot, f"{r}/{DIRECT}": dirs, f"{r}/{INDIRECT}": tot - dirs},
                  {"reps": reps, "seed": seed, "origin": spec.origin, "sd_unit": spec.sd_unit,
                   "level_size": spec.level_size, "vol_shock": spec.vol_shock,
                   "diverged": diverged})
    return drop_diverged(irfs) if on_diverge == "drop" else irfs


def _direct(m: GlobalModel, spec: ShockSpec, e, eta, lvl, vol, Xb):
    links = m.links
    o = m.order.index(spec.origin)
    so = links.block(o)
    dx = np.zeros_like(Xb)
    dh = np.zeros_like(Xb)
    xs_o = links.foreign(Xb, o)
    Xo_s, Ho_s = simulate_country(m, o, xs_o, e[..., so], eta[..., so], level_impulse=lvl[so],
                                  vol_impulse=None if vol is None else vol[so])
    Xo_b, Ho_b = simulate_country(m, o, xs_o, e[..., so], eta[..., so])
    dx[..., so] = Xo_s - Xo_b
    dh[..., so] = Ho_s - Ho_b
    Xmix = Xb.copy()
    Xmix[..., so] = Xb[..., so] + dx[..., so]
    for j in range(len(m.order)):
        if j == o:
            continue
        sj = links.block(j)
        xs_b = links.foreign(Xb, j)
        xs_d = links.foreign(Xmix, j)
        if np.array_equal(xs_b, xs_d):
            continue
        Xj_d, Hj_d = simulate_country(m, j, xs_d, e[..., sj], eta[..., sj])
        Xj_b, Hj_b = simulate_country(m, j, xs_b, e[..., sj], eta[..., sj])
        dx[..., sj] = Xj_d - Xj_b
        dh[..., sj] = Hj_d - Hj_b
    return dx, dh


def run_regimes(models: Sequence[GlobalModel], spec: ShockSpec, *, reps: int = 200, seed: int = 0,
                vol_shock: float = 1.0, regimes: Iterable[str] = (LEVEL, LEVEL_VOL),
                direct: bool = True, on_diverge: str = "raise") -> IrfSet:
    """All requested {level, level+vol} x {direct, total} regimes with shared randomness.

    With ``on_diverge="drop"`` a draw that diverges in any regime is removed
    from all of them, so regimes stay aligned draw by draw.
    """
    out, diverged = None, set()
    mode = "raise" if on_diverge == "raise" else "keep"
    for r in regimes:
        s = ShockSpec(spec.origin, spec.target, spec.level_size,
                      vol_shock if r == LEVEL_VOL else None, spec.horizon, spec.sd_unit)
        fn = decompose_direct_total if direct else girf
        part = fn(models, s, reps, seed, on_diverge=mode)
        diverged.update(part.meta["diverged"])
        out = part if out is None else out.merge(part)
    out.meta["diverged"] = sorted(diverged)
    return drop_diverged(out) if on_diverge == "drop" else out


# --------------------------------------------------------------- groups

def aggregate_groups(irfs: IrfSet, groups: Mapping[str, Mapping[str, float]]) -> IrfSet:
    """Weighted average of member responses per draw; one series per (group, variable)."""
    labels, cols = [], []
    for g, weights in groups.items():
        members = list(weights)
        w = np.array([float(weights[c]) for c in members])
        if abs(w.sum() - 1.0) > 1e-10:
            raise ShockError(f"group {g}: weights sum to {w.sum()!r}, not 1")
        absent = [c for c in members if not any(lc == c for lc, _ in irfs.labels)]
        if absent:
            raise ShockError(f"group {g}: members {absent} not in the IRF set")
        first = [v for c, v in irfs.labels if c == members[0]]
        common = [v for v in first if all((c, v) in irfs.labels for c in members)]
        for v in common:
            labels.append((g, v))
            cols.append([(irfs.labels.index((c, v)), wi) for c, wi in zip(members, w)])
    out = {}
    for regime, arr in irfs.responses.items():
        res = np.zeros(arr.shape[:2] + (len(labels),))
        for s, terms in enumerate(cols):
            for idx, wi in terms:
                res[:, :, s] += wi * arr[:, :, idx]
        out[regime] = res
    return IrfSet(tuple(labels), out, dict(irfs.meta))


def group_weights(members: Sequence[str], ppp: Mapping[str, float]) -> dict[str, float]:
    """Normalize PPP-GDP weights over a group's members."""
    missing = [c for c in members if c not in ppp]
    if missing:
        raise ShockError(f"no PPP weight for {missing}")
    tot = sum(float(ppp[c]) for c in members)
    return {c: float(ppp[c]) / tot for c in members}


def paper_groups(ppp: Mapping[str, float], available: Sequence[str] | None = None):
    """The four reported groups, restricted to modelled countries."""
    out = {}
    for name, members in PAPER_GROUPS.items():
        ms = [c for c in members if available is None or c in available]
        if ms:
            out[name] = group_weights(ms, ppp)
    return out


# ------------------------------------------------------- headline magnitudes

HEADLINES = (
    # (label, country/group, variable, regime, statistic, target)
    ("US rate on impact", "USA", "ShortRate", "level/total", "impact", 0.4),
    ("US output on impact", "USA", "OutputGrowth", "level/total", "impact", -0.2),
    ("US inflation on impact", "USA", "Inflation", "level/total", "impact", -0.02),
    ("EM output on impact, direct", "EM", "OutputGrowth", "level/direct", "impact", -0.02),
    ("EM output on impact, total", "EM", "OutputGrowth", "level/total", "impact", -0.05),
    ("EM inflation, direct bound", "EM", "Inflation", "level/direct", "peak", -0.02),
    ("EM inflation, total with uncertainty", "EM", "Inflation", "level+vol/total", "peak", -0.08),
)


def headline_checks(irfs: IrfSet, *, factor: float = 2.0) -> list[dict]:
    """Sign and order-of-magnitude (within ``factor``) checks of median responses,
    plus widening of responses when the volatility co-shock is on."""
    rows = []
    for label, who, var, regime, stat, target in HEADLINES:
        med = np.median(irfs.series(regime, who, var), axis=0)
        val = float(med[0]) if stat == "impact" else float(med[np.argmax(np.abs(med))])
        ok = np.sign(val) == np.sign(target) and abs(target) / factor <= abs(val) <= abs(target) * factor
        rows.append({"check": label, "value": val, "target": target, "pass": bool(ok)})
    for who, var in (("USA", "OutputGrowth"), ("USA", "Inflation"), ("EM", "OutputGrowth")):
        a = np.abs(np.median(irfs.series("level/total", who, var), axis=0)).max()
        b = np.abs(np.median(irfs.series("level+vol/total", who, var), axis=0)).max()
        rows.append({"check": f"{who} {var} widens with uncertainty shock", "value": float(b),
                     "target": float(a), "pass": bool(b > a)})
    return rows
