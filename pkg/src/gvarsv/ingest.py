"""Raw series and trade-flow ingestion, transformations and foreign variables."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import (
    CANONICAL_ORDER,
    CountrySpec,
    Panel,
    VariableKind,
    WeightMatrix,
    format_quarter,
    parse_quarter,
)

# raw series names in the input CSV
GDP, CPI, RATE, FX, EQUITY = "gdp", "cpi", "rate", "fx", "equity"
RAW_NAMES = (RATE, GDP, CPI, FX, EQUITY)

EA_MEMBERS = ("AUT", "BEL", "FIN", "FRA", "DEU", "ITA", "NLD", "ESP")

# raw inputs needed per transformed variable (the numeraire CPI is added for FX)
_NEEDS = {
    VariableKind.SHORT_RATE: (RATE,),
    VariableKind.OUTPUT_GROWTH: (GDP,),
    VariableKind.INFLATION: (CPI,),
    VariableKind.REAL_FX_GROWTH: (FX, CPI),
    VariableKind.EQUITY_PRICE_GROWTH: (EQUITY,),
}


class IngestError(ValueError):
    pass


def _read_rows(path: Path, required: Sequence[str]):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise IngestError(f"{path}: no rows")
        header = [h.strip() for h in reader.fieldnames]
        missing = [c for c in required if c not in header]
        if missing:
            raise IngestError(f"{path}: missing columns {missing}")
        reader.fieldnames = header
        rows = [(i + 2, row) for i, row in enumerate(reader)]
    if not rows:
        raise IngestError(f"{path}: no rows")
    return rows


def required_raw(specs: Sequence[CountrySpec]) -> dict[str, set[str]]:
    """Raw series each country must supply for its domestic variables."""
    need: dict[str, set[str]] = {}
    origin = [s.id for s in specs if s.is_shock_origin]
    for s in specs:
        need.setdefault(s.id, set())
        for v in s.domestic_vars:
            need[s.id].update(_NEEDS[v])
            if v is VariableKind.REAL_FX_GROWTH and origin:
                need.setdefault(origin[0], set()).add(CPI)
    return need


def load_panel(path, specs: Sequence[CountrySpec], *, training_split: str | None = None,
               shadow_rates=None) -> Panel:
    """Load a tidy (country, variable, quarter, value) CSV of raw levels.

    ``shadow_rates`` optionally points at a (country, quarter, value) CSV whose
    values replace the policy rate where given.
    """
    rows = _read_rows(path, ("country", "variable", "quarter", "value"))
    need = required_raw(specs)
    cells: dict[tuple[str, str, int], float] = {}
    for line, row in rows:
        c, v = row["country"].strip(), row["variable"].strip().lower()
        try:
            q = parse_quarter(row["quarter"])
        except ValueError as exc:
            raise IngestError(f"{path}:{line}: {exc}") from None
        try:
            val = float(row["value"]) if row["value"].strip() not in ("", "NA", "nan") else math.nan
        except ValueError:
            raise IngestError(f"{path}:{line}: non-numeric value {row['value']!r}") from None
        key = (c, v, q)
        if key in cells:
            raise IngestError(f"{path}:{line}: duplicate row for {c}/{v}/{format_quarter(q)}")
        cells[key] = val
    if shadow_rates is not None:
        for line, row in _read_rows(shadow_rates, ("country", "quarter", "value")):
            try:
                q = parse_quarter(row["quarter"])
            except ValueError as exc:
                raise IngestError(f"{shadow_rates}:{line}: {exc}") from None
            cells[(row["country"].strip(), RATE, q)] = float(row["value"])

    present: dict[str, set[str]] = {}
    for c, v, _ in cells:
        present.setdefault(c, set()).add(v)
    omissions = []
    for c, vs in need.items():
        if c not in present:
            omissions.append(f"{c} (country)")
            continue
        omissions += [f"{c}/{v}" for v in sorted(vs - present[c])]
    if omissions:
        raise IngestError(f"{path}: missing series: {', '.join(omissions)}")

    countries = [s.id for s in specs]
    for c in need:
        if c not in countries:
            countries.append(c)
    qs = sorted({q for (c, v, q) in cells if c in need and v in need[c]})
    quarters = tuple(range(qs[0], qs[-1] + 1))
    pos = {q: i for i, q in enumerate(quarters)}
    variables, values, gaps = {}, {}, []
    for c in countries:
        names = tuple(v for v in RAW_NAMES if v in need[c])
        arr = np.full((len(quarters), len(names)), np.nan)
        for j, v in enumerate(names):
            for q in quarters:
                val = cells.get((c, v, q), math.nan)
                arr[pos[q], j] = val
            col = arr[:, j]
            ok = np.flatnonzero(np.isfinite(col))
            if ok.size:
                for i in np.flatnonzero(~np.isfinite(col[ok[0]:ok[-1] + 1])):
                    gaps.append((c, v, quarters[ok[0] + i]))
        variables[c], values[c] = names, arr
    split = parse_quarter(training_split) if training_split else None
    return Panel(tuple(countries), variables, quarters, values, split, False, tuple(gaps))


def _log_level(panel: Panel, c: str, v: str) -> np.ndarray:
    x = panel.series(c, v)
    bad = np.flatnonzero(np.isfinite(x) & (x <= 0))
    if bad.size:
        i = bad[0]
        raise IngestError(
            f"nonpositive level {x[i]!r} for {c}/{v} at {format_quarter(panel.quarters[i])}")
    return np.log(x)


def _annual_diff(logx: np.ndarray) -> np.ndarray:
    return 100.0 * (logx[4:] - logx[:-4])


def transform(panel: Panel, *, numeraire: str | None = None) -> Panel:
    """Raw levels -> annual growth rates (100 x 4-quarter log difference), rates passed through.

    The real exchange rate is fx * CPI_numeraire / CPI_local with fx quoted in
    local currency per numeraire unit, so a positive growth is a real
    depreciation of the local currency.
    """
    if panel.transformed:
        raise IngestError("panel is already transformed")
    if panel.T < 5:
        raise IngestError(f"need at least 5 quarters of levels, got {panel.T}")
    if numeraire is None:
        no_fx = [c for c in panel.countries if FX not in panel.variables[c]]
        numeraire = no_fx[0] if len(no_fx) == 1 else None
    variables, values = {}, {}
    for c in panel.countries:
        have = set(panel.variables[c])
        cols, names = [], []
        for kind in CANONICAL_ORDER:
            if kind is VariableKind.SHORT_RATE and RATE in have:
                cols.append(panel.series(c, RATE)[4:])
            elif kind is VariableKind.OUTPUT_GROWTH and GDP in have:
                cols.append(_annual_diff(_log_level(panel, c, GDP)))
            elif kind is VariableKind.INFLATION and CPI in have:
                cols.append(_annual_diff(_log_level(panel, c, CPI)))
            elif kind is VariableKind.REAL_FX_GROWTH and FX in have:
                if numeraire is None or CPI not in panel.variables.get(numeraire, ()):
                    raise IngestError(f"{c}: real exchange rate needs the numeraire CPI")
                if CPI not in have:
                    raise IngestError(f"{c}: real exchange rate needs the local CPI")
                log_rer = (_log_level(panel, c, FX) + _log_level(panel, numeraire, CPI)
                           - _log_level(panel, c, CPI))
                cols.append(_annual_diff(log_rer))
            elif kind is VariableKind.EQUITY_PRICE_GROWTH and EQUITY in have:
                cols.append(_annual_diff(_log_level(panel, c, EQUITY)))
            else:
                continue
            names.append(kind.value)
        variables[c] = tuple(names)
        values[c] = np.column_stack(cols) if cols else np.empty((panel.T - 4, 0))
    quarters = panel.quarters[4:]
    split = panel.training_split
    if split is not None and not (quarters[0] < split < quarters[-1]):
        raise IngestError("training split falls outside the transformed sample")
    return Panel(panel.countries, variables, quarters, values, split, True, panel.gaps)


def _check_weights(weights: Mapping[str, float], members: Sequence[str], what: str) -> np.ndarray:
    missing = [m for m in members if m not in weights]
    if missing:
        raise IngestError(f"{what}: no weight for {missing}")
    w = np.array([float(weights[m]) for m in members])
    if np.any(w < 0):
        raise IngestError(f"{what}: negative weight")
    if abs(w.sum() - 1.0) > 1e-10:
        raise IngestError(f"{what}: weights sum to {w.sum()!r}, not 1 (tolerance 1e-10)")
    return w


def aggregate_euro_area(panel: Panel, ppp_weights: Mapping[str, float], *,
                        members: Sequence[str] = EA_MEMBERS, name: str = "EA") -> Panel:
    """Replace the member countries by one PPP-GDP-weighted aggregate."""
    absent = [m for m in members if m not in panel.countries]
    if absent:
        raise IngestError(f"euro-area members missing from panel: {absent}")
    w = _check_weights(ppp_weights, members, "euro-area PPP weights")
    common = [v for v in panel.variables[members[0]]
              if all(v in panel.variables[m] for m in members)]
    agg = np.zeros((panel.T, len(common)))
    for wi, m in zip(w, members):
        agg += wi * panel.matrix(m, common)
    first = min(panel.countries.index(m) for m in members)
    countries = [c for c in panel.countries if c not in members]
    countries.insert(first, name)
    variables = {c: panel.variables[c] for c in countries if c != name}
    values = {c: panel.values[c] for c in countries if c != name}
    variables[name], values[name] = tuple(common), agg
    return Panel(tuple(countries), variables, panel.quarters, values, panel.training_split,
                 panel.transformed, panel.gaps)


@dataclass(frozen=True)
class TradeFlows:
    order: tuple[str, ...]
    flows: np.ndarray
    window: str = ""

    def __post_init__(self):
        f = np.array(self.flows, dtype=float)
        n = len(self.order)
        if f.shape != (n, n):
            raise IngestError(f"trade flow matrix shape {f.shape} does not match {n} countries")
        if np.any(f < 0) or not np.all(np.isfinite(f)):
            raise IngestError("trade flows must be finite and non-negative")
        if np.any(np.diag(f) != 0):
            raise IngestError("trade flow matrix must have a zero diagonal")
        f.flags.writeable = False
        object.__setattr__(self, "order", tuple(self.order))
        object.__setattr__(self, "flows", f)


def load_trade_flows(path, *, basis: str = "total", window: str = "") -> TradeFlows:
    """Read a (reporter, partner, exports, imports) CSV.

    ``basis`` picks exports, imports or their sum; a single ``flow`` column is
    taken as already-combined trade.
    """
    rows = _read_rows(path, ("reporter", "partner"))
    fields = set(rows[0][1])
    if basis not in ("total", "exports", "imports"):
        raise IngestError(f"unknown trade weight basis {basis!r}")
    order: list[str] = []
    vals: dict[tuple[str, str], float] = {}
    for line, row in rows:
        r, p = row["reporter"].strip(), row["partner"].strip()
        try:
            if "flow" in fields:
                v = float(row["flow"])
            elif basis == "total":
                v = float(row["exports"]) + float(row["imports"])
            else:
                v = float(row[basis])
        except (KeyError, TypeError, ValueError):
            raise IngestError(f"{path}:{line}: bad trade value") from None
        if r == p:
            if v != 0:
                raise IngestError(f"{path}:{line}: nonzero own-trade entry for {r}")
            continue
        for c in (r, p):
            if c not in order:
                order.append(c)
        vals[(r, p)] = vals.get((r, p), 0.0) + v
    n = len(order)
    f = np.zeros((n, n))
    for (r, p), v in vals.items():
        f[order.index(r), order.index(p)] = v
    return TradeFlows(tuple(order), f, window)


def aggregate_trade_flows(flows: TradeFlows, members: Sequence[str] = EA_MEMBERS,
                          name: str = "EA") -> TradeFlows:
    """Sum member rows/columns into one region; intra-region trade is dropped."""
    idx = [flows.order.index(m) for m in members]
    keep = [i for i, c in enumerate(flows.order) if c not in members]
    first = min(idx)
    order = [flows.order[i] for i in keep]
    pos = sum(1 for i in keep if i < first)
    order.insert(pos, name)
    f = flows.flows
    n = len(order)
    out = np.zeros((n, n))
    src = {c: i for i, c in enumerate(flows.order)}
    for a, ca in enumerate(order):
        for b, cb in enumerate(order):
            if a == b:
                continue
            ra = idx if ca == name else [src[ca]]
            rb = idx if cb == name else [src[cb]]
            out[a, b] = f[np.ix_(ra, rb)].sum()
    return TradeFlows(tuple(order), out, flows.window)


def build_weight_matrix(flows: TradeFlows, order: Sequence[str] | None = None) -> WeightMatrix:
    """Row-normalize trade flows; ``order`` optionally selects/reorders countries."""
    if order is not None:
        missing = [c for c in order if c not in flows.order]
        if missing:
            raise IngestError(f"trade flows missing countries {missing}")
        ix = [flows.order.index(c) for c in order]
        f = flows.flows[np.ix_(ix, ix)]
        order = tuple(order)
    else:
        f, order = flows.flows, flows.order
    sums = f.sum(axis=1)
    if len(order) > 1:
        iso = [order[i] for i in np.flatnonzero(sums == 0)]
        if iso:
            raise IngestError(f"isolated country (all-zero trade row): {iso}")
        w = f / sums[:, None]
    else:
        w = np.zeros((1, 1))
    return WeightMatrix(order, w)


def foreign_variables(panel: Panel, W: WeightMatrix, spec: CountrySpec) -> np.ndarray:
    """x*_it = sum_j w_ij x_jt for each foreign variable kind, shape (T, k*)."""
    i = W.order.index(spec.id)
    out = np.zeros((panel.T, spec.k_star))
    for col, kind in enumerate(spec.foreign_vars):
        for j, partner in enumerate(W.order):
            wij = W.w[i, j]
            if wij == 0.0:
                continue
            if partner not in panel.countries or kind.value not in panel.variables[partner]:
                raise IngestError(
                    f"{spec.id}: partner {partner} (weight {wij:.4g}) lacks foreign variable {kind}")
            out[:, col] += wij * panel.series(partner, kind.value)
    return out


def load_weights(path, key: str = "country", value: str = "weight") -> dict[str, float]:
    """Read a two-column (country, weight) CSV."""
    return {row[key].strip(): float(row[value]) for _, row in _read_rows(path, (key, value))}


def write_panel_csv(panel: Panel, path) -> None:
    """Canonical tidy serialization; floats in shortest round-trip form."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["country", "variable", "quarter", "value"])
        for c in panel.countries:
            for j, v in enumerate(panel.variables[c]):
                for t, q in enumerate(panel.quarters):
                    x = panel.values[c][t, j]
                    wr.writerow([c, v, format_quarter(q), "" if math.isnan(x) else repr(float(x))])


def read_panel_csv(path, *, training_split: int | None = None) -> Panel:
    """Inverse of ``write_panel_csv``."""
    rows = _read_rows(path, ("country", "variable", "quarter", "value"))
    countries: list[str] = []
    variables: dict[str, list[str]] = {}
    cells = {}
    for line, row in rows:
        c, v = row["country"], row["variable"]
        if c not in variables:
            countries.append(c)
            variables[c] = []
        if v not in variables[c]:
            variables[c].append(v)
        try:
            q = parse_quarter(row["quarter"])
        except ValueError as exc:
            raise IngestError(f"{path}:{line}: {exc}") from None
        cells[(c, v, q)] = float(row["value"]) if row["value"] else math.nan
    qs = sorted({q for _, _, q in cells})
    quarters = tuple(range(qs[0], qs[-1] + 1))
    values = {c: np.array([[cells.get((c, v, q), math.nan) for v in variables[c]]
                           for q in quarters]) for c in countries}
    kinds = {k.value for k in VariableKind}
    transformed = all(v in kinds for c in countries for v in variables[c])
    return Panel(tuple(countries), {c: tuple(v) for c, v in variables.items()}, quarters, values,
                 training_split, transformed)


def write_weight_matrix(W: WeightMatrix, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["country", *W.order])
        for c, row in zip(W.order, W.w):
            wr.writerow([c, *(repr(float(v)) for v in row)])


def read_weight_matrix(path) -> WeightMatrix:
    """Square CSV: header ``country,<ids...>``, one row per country in the same order."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise IngestError(f"{path}: no rows")
    order = tuple(h.strip() for h in rows[0][1:])
    if tuple(r[0].strip() for r in rows[1:]) != order:
        raise IngestError(f"{path}: row labels must match the header order")
    try:
        w = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    except ValueError as exc:
        raise IngestError(f"{path}: {exc}") from None
    return WeightMatrix(order, w)
