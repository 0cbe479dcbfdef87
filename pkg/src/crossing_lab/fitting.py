"""Polynomial response surfaces metric(vc, cAV), one per obstacle height.

Each surface is a linear model over a fixed monomial basis in the approach
speed and the damping coefficient.  Fits are ordinary least squares solved
with an orthogonal factorisation (SVD via ``numpy.linalg.lstsq``), which
also yields the minimum-norm solution when the design is rank deficient.

Because vc (a few m/s) and cAV (thousands of N s/m) differ by orders of
magnitude, the default fit centres and scales both regressors first and
maps the coefficients back to raw units afterwards.  That back-transform
is exact for bases that contain every lower-order monomial of each term,
which all three built-in bases do.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from math import comb
from pathlib import Path

import numpy as np

__all__ = [
    "SurfaceSpec",
    "FittedSurface",
    "FitReport",
    "FitError",
    "UnderdeterminedError",
    "RankError",
    "DELTA_EC",
    "PITCH_RATE",
    "CDWO",
    "SPECS",
    "METRIC_FIELD",
    "design_matrix",
    "fit_arrays",
    "fit_surface",
    "evaluate_surface",
    "fit_report",
    "surfaces_to_json",
    "surfaces_from_json",
    "plot_data_csv",
]


class FitError(ValueError):
    pass


class UnderdeterminedError(FitError):
    pass


class RankError(FitError):
    pass


@dataclass(frozen=True)
class SurfaceSpec:
    """Metric name and ordered basis of (power of vc, power of cAV) pairs."""

    metric: str
    basis: tuple[tuple[int, int], ...]

    def __post_init__(self):
        basis = tuple((int(a), int(b)) for a, b in self.basis)
        if not basis:
            raise ValueError("basis must not be empty")
        if len(set(basis)) != len(basis):
            raise ValueError("basis terms must be distinct")
        if any(a < 0 or b < 0 for a, b in basis):
            raise ValueError("basis powers must be >= 0")
        object.__setattr__(self, "basis", basis)

    @property
    def size(self) -> int:
        return len(self.basis)

    @property
    def downward_closed(self) -> bool:
        terms = set(self.basis)
        return all((i, j) in terms for a, b in self.basis for i in range(a + 1) for j in range(b + 1))


DELTA_EC = SurfaceSpec("delta_Ec", ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1)))
PITCH_RATE = SurfaceSpec("pitch_rate", ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2),
                                        (3, 0), (2, 1), (1, 2)))
CDWO = SurfaceSpec("cdwo", ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2),
                            (2, 1), (1, 2), (0, 3)))
SPECS = {s.metric: s for s in (DELTA_EC, PITCH_RATE, CDWO)}

#: record attribute holding each metric
METRIC_FIELD = {"delta_Ec": "delta_Ec", "pitch_rate": "pitch_rate_t2", "cdwo": "cdwo"}


@dataclass(frozen=True)
class FittedSurface:
    spec: SurfaceSpec
    hO: float
    coefficients: tuple[float, ...]
    r_squared: float
    rmse: float
    condition_number: float
    n_points: int
    rank: int = -1

    def __post_init__(self):
        if len(self.coefficients) != self.spec.size:
            raise ValueError("one coefficient per basis term is required")

    def __call__(self, vc, cAV):
        return evaluate_surface(self, vc, cAV)


def design_matrix(vc, cAV, basis) -> np.ndarray:
    vc = np.asarray(vc, dtype=float)
    cAV = np.asarray(cAV, dtype=float)
    return np.column_stack([vc ** a * cAV ** b for a, b in basis])


def _standardized_to_raw(beta, basis, mv, sv, mc, sc):
    """Raw-unit coefficients of sum beta_k ((vc-mv)/sv)^a ((cAV-mc)/sc)^b."""
    pos = {t: k for k, t in enumerate(basis)}
    raw = np.zeros(len(basis))
    for k, (a, b) in enumerate(basis):
        scale = beta[k] / (sv ** a * sc ** b)
        for i in range(a + 1):
            ci = comb(a, i) * (-mv) ** (a - i)
            for j in range(b + 1):
                raw[pos[(i, j)]] += scale * ci * comb(b, j) * (-mc) ** (b - j)
    return raw


def _solve(X, y):
    coef, _, rank, sv = np.linalg.lstsq(X, y, rcond=None)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    return coef, int(rank), cond


def fit_arrays(vc, cAV, y, spec: SurfaceSpec, hO: float = math.nan,
               scaling: str = "standardized") -> FittedSurface:
    """Least-squares fit of ``y`` on the basis of ``spec``."""
    if scaling not in ("raw", "standardized"):
        raise ValueError("scaling must be 'raw' or 'standardized'")
    vc = np.asarray(vc, dtype=float).ravel()
    cAV = np.asarray(cAV, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if not vc.size == cAV.size == y.size:
        raise ValueError("vc, cAV and y must have the same length")
    n, p = y.size, spec.size
    if n < p:
        raise UnderdeterminedError(f"{spec.metric}: {n} points for {p} coefficients")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(vc)) or not np.all(np.isfinite(cAV)):
        raise FitError(f"{spec.metric}: non-finite data")
    if np.ptp(vc) == 0 and np.ptp(cAV) == 0 and p > 1:
        raise RankError(f"{spec.metric}: all regressor rows are identical")

    if scaling == "standardized" and spec.downward_closed:
        mv, mc = vc.mean(), cAV.mean()
        sv = vc.std() or 1.0
        sc = cAV.std() or 1.0
        Xs = design_matrix((vc - mv) / sv, (cAV - mc) / sc, spec.basis)
        beta, rank, cond = _solve(Xs, y)
        coef = _standardized_to_raw(beta, spec.basis, mv, sv, mc, sc)
        fitted = Xs @ beta
    else:
        X = design_matrix(vc, cAV, spec.basis)
        coef, rank, cond = _solve(X, y)
        fitted = X @ coef

    resid = y - fitted
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res <= 1e-30 * max(1.0, float(y @ y)) else 0.0
    return FittedSurface(spec, float(hO), tuple(float(c) for c in coef), float(r2),
                         math.sqrt(ss_res / n), cond, n, rank)


def fit_surface(records, spec: SurfaceSpec, scaling: str = "standardized") -> FittedSurface:
    """Fit one surface to campaign records that share an obstacle height."""
    records = list(records)
    if not records:
        raise UnderdeterminedError(f"{spec.metric}: no records")
    heights = {r.hO for r in records}
    if len(heights) != 1:
        raise FitError(f"records span several obstacle heights: {sorted(heights)}")
    attr = METRIC_FIELD.get(spec.metric, spec.metric)
    return fit_arrays([r.vc for r in records], [r.cAV for r in records],
                      [getattr(r, attr) for r in records], spec, hO=records[0].hO,
                      scaling=scaling)


def evaluate_surface(surface: FittedSurface, vc, cAV):
    """sum_k c_k vc^a_k cAV^b_k; scalar in, float out."""
    vc_a = np.asarray(vc, dtype=float)
    cav_a = np.asarray(cAV, dtype=float)
    out = np.zeros(np.broadcast(vc_a, cav_a).shape)
    for c, (a, b) in zip(surface.coefficients, surface.spec.basis):
        out = out + c * vc_a ** a * cav_a ** b
    return float(out) if out.ndim == 0 else out


# --- whole-campaign report -------------------------------------------------------------


@dataclass
class FitReport:
    surfaces: dict = field(default_factory=dict)  # (metric, hO) -> FittedSurface
    errors: dict = field(default_factory=dict)  # (metric, hO) -> message
    flagged: list = field(default_factory=list)  # (hO, vc, cAV) with dx_w over the limit
    excluded: bool = False

    def surface(self, metric: str, hO: float) -> FittedSurface:
        return self.surfaces[(metric, hO)]

    def by_metric(self, metric: str) -> list[FittedSurface]:
        return sorted((s for (m, _), s in self.surfaces.items() if m == metric), key=lambda s: s.hO)


def fit_report(campaign, specs=(DELTA_EC, PITCH_RATE, CDWO), scaling: str = "standardized",
               stroke_limit: float | None = None, exclude_flagged: bool = False) -> FitReport:
    """Fit every metric at every obstacle height of ``campaign``.

    Trials whose excursion reaches (8/3) * ``stroke_limit``, the wheel
    travel produced by the full mechanism stroke, are listed in
    ``flagged``; they are dropped from the fits only when
    ``exclude_flagged`` is set.  A failing cell is recorded in ``errors``
    and the report carries on.
    """
    report = FitReport(excluded=exclude_flagged)
    limit = math.inf if stroke_limit is None else 8.0 / 3.0 * stroke_limit
    for hO in campaign.plan.hO_levels:
        recs = campaign.at(hO)
        bad = [r for r in recs if not r.dx_w_max < limit]
        report.flagged.extend((r.hO, r.vc, r.cAV) for r in bad)
        if exclude_flagged:
            recs = [r for r in recs if r.dx_w_max < limit]
        for spec in specs:
            try:
                report.surfaces[(spec.metric, hO)] = fit_surface(recs, spec, scaling)
            except FitError as exc:
                report.errors[(spec.metric, hO)] = str(exc)
    return report


# --- export ----------------------------------------------------------------------------


def surfaces_to_json(surfaces) -> str:
    items = []
    for s in sorted(surfaces, key=lambda s: (s.spec.metric, s.hO)):
        items.append({
            "metric": s.spec.metric,
            "hO_m": s.hO,
            "basis": [list(t) for t in s.spec.basis],
            "coefficients": list(s.coefficients),
            "r2": s.r_squared,
            "rmse": s.rmse,
            "n": s.n_points,
            "condition_number": s.condition_number if math.isfinite(s.condition_number) else None,
            "rank": s.rank,
        })
    return json.dumps(items, indent=2) + "\n"


def surfaces_from_json(text_or_path) -> list[FittedSurface]:
    """Inverse of :func:`surfaces_to_json`; accepts JSON text or a file path."""
    if isinstance(text_or_path, Path) or (isinstance(text_or_path, str)
                                          and not text_or_path.lstrip().startswith("[")):
        path = Path(text_or_path)
        if not path.exists():
            raise FileNotFoundError(f"surfaces file not found: {path}")
        text = path.read_text()
    else:
        text = text_or_path
    try:
        items = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FitError(f"surfaces file is not valid JSON: {exc}") from None
    if not isinstance(items, list):
        raise FitError("surfaces file must hold a JSON array")
    out = []
    for k, d in enumerate(items):
        for key in ("metric", "hO_m", "basis", "coefficients", "r2", "rmse", "n"):
            if key not in d:
                raise FitError(f"surface [{k}] is missing field '{key}'")
        cond = d.get("condition_number")
        out.append(FittedSurface(SurfaceSpec(d["metric"], tuple(tuple(t) for t in d["basis"])),
                                 float(d["hO_m"]), tuple(float(c) for c in d["coefficients"]),
                                 float(d["r2"]), float(d["rmse"]),
                                 math.inf if cond is None else float(cond), int(d["n"]),
                                 int(d.get("rank", -1))))
    return out


def plot_data_csv(surface: FittedSurface, records, n_grid: int = 21) -> str:
    """Grid of (vc, cAV, predicted, observed) for external plotting.

    The grid is the union of the training levels and ``n_grid`` evenly
    spaced values per axis; ``observed`` is empty off the training points.
    """
    attr = METRIC_FIELD.get(surface.spec.metric, surface.spec.metric)
    observed = {(r.vc, r.cAV): getattr(r, attr) for r in records if r.hO == surface.hO}
    vcs = sorted({k[0] for k in observed})
    cavs = sorted({k[1] for k in observed})
    if vcs and cavs:
        vcs = sorted(set(vcs) | set(np.linspace(vcs[0], vcs[-1], n_grid).tolist()))
        cavs = sorted(set(cavs) | set(np.linspace(cavs[0], cavs[-1], n_grid).tolist()))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("vc_mps", "cAV_Nspm", "predicted", "observed"))
    for v in vcs:
        for c in cavs:
            obs = observed.get((v, c))
            w.writerow((repr(float(v)), repr(float(c)), repr(float(evaluate_surface(surface, v, c))),
                        "" if obs is None else repr(float(obs))))
    return buf.getvalue()
