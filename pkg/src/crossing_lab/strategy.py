"""Anticipatory choice of the front longitudinal damping before a crossing.

Once an obstacle of height hO is detected at speed vc, the damping cAV is
picked from a grid over its admissible range.  Candidates whose predicted
wheel excursion reaches the lever-amplified mechanism stroke,
(8/3) * ``stroke_limit``, would hit the end stops and are infeasible.  The
rest are ranked by a weighted sum of the three fitted metrics, each normalised to
[0, 1] over the feasible candidates::

    score = w_E * E_hat + w_d * |pitch_rate|_hat - w_C * CDWO_hat

The lowest score wins; exact ties go to the smaller cAV.  The surfaces have
no torque term, so the torque command is simply the speed-hold demand
clamped to the drive limits.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field

import numpy as np

from .fitting import FitReport, FittedSurface, evaluate_surface
from .vehicle import LEVER_RATIO, VehicleParams

__all__ = [
    "ExtrapolationWarning",
    "DxwEstimate",
    "DxwTable",
    "StrategyProblem",
    "StrategyDecision",
    "anticipation_budget",
    "predict_dxw",
    "feasible_set",
    "optimize",
    "pareto_front",
    "decision_to_json",
]

METRICS = ("delta_Ec", "pitch_rate", "cdwo")


class ExtrapolationWarning(UserWarning):
    pass


def anticipation_budget(detection_distance: float, vc: float) -> float:
    """Time between detecting the obstacle and reaching it, s."""
    if not vc > 0:
        raise ValueError("vc must be > 0")
    if not detection_distance >= 0:
        raise ValueError("detection_distance must be >= 0")
    return detection_distance / vc


# --- excursion lookup ------------------------------------------------------------------


def _bracket(levels: np.ndarray, x):
    """Lower index, upper index, weight and out-of-range mask along one axis.

    Queries outside the levels are clamped to the nearest edge.
    """
    x = np.asarray(x, dtype=float)
    if levels.size == 1:
        zero = np.zeros(x.shape, dtype=int)
        return zero, zero, np.zeros(x.shape), x != levels[0]
    outside = (x < levels[0]) | (x > levels[-1])
    xc = np.clip(x, levels[0], levels[-1])
    i1 = np.clip(np.searchsorted(levels, xc, side="right"), 1, levels.size - 1)
    i0 = i1 - 1
    w = (xc - levels[i0]) / (levels[i1] - levels[i0])
    return i0, i1, w, outside


@dataclass(frozen=True)
class DxwEstimate:
    value: float
    extrapolated: bool


class DxwTable:
    """Recorded dx_w_max on the campaign grid, trilinear in (hO, vc, cAV).

    Replicates are averaged; cells without a record are NaN.
    """

    def __init__(self, campaign):
        plan = campaign.plan
        self.hO = np.asarray(plan.hO_levels, dtype=float)
        self.vc = np.asarray(plan.vc_levels, dtype=float)
        self.cAV = np.asarray(plan.cAV_levels, dtype=float)
        total = np.zeros((self.hO.size, self.vc.size, self.cAV.size))
        count = np.zeros_like(total)
        index = [{v: i for i, v in enumerate(ax)} for ax in (plan.hO_levels, plan.vc_levels,
                                                            plan.cAV_levels)]
        for r in campaign.records:
            try:
                k = (index[0][r.hO], index[1][r.vc], index[2][r.cAV])
            except KeyError:
                continue
            total[k] += r.dx_w_max
            count[k] += 1
        with np.errstate(invalid="ignore"):
            self.values = np.where(count > 0, total / np.maximum(count, 1), np.nan)

    def __call__(self, hO, vc, cAV):
        """Interpolated excursion (array over ``cAV``) and an any-extrapolated flag."""
        h0, h1, wh, oh = _bracket(self.hO, hO)
        v0, v1, wv, ov = _bracket(self.vc, vc)
        c0, c1, wc, oc = _bracket(self.cAV, cAV)
        V = self.values
        out = 0.0
        for hi, fh in ((h0, 1 - wh), (h1, wh)):
            for vi, fv in ((v0, 1 - wv), (v1, wv)):
                out = out + fh * fv * ((1 - wc) * V[hi, vi, c0] + wc * V[hi, vi, c1])
        return out, bool(np.any(oh) or np.any(ov) or np.any(oc))


def predict_dxw(hO: float, vc: float, cAV: float, campaign) -> DxwEstimate:
    """Maximum longitudinal wheel excursion interpolated from a campaign, m.

    ``campaign`` may be a campaign result or a prebuilt :class:`DxwTable`.
    Outside the campaign grid the nearest edge value is used and an
    :class:`ExtrapolationWarning` is issued.
    """
    table = campaign if isinstance(campaign, DxwTable) else DxwTable(campaign)
    value, extra = table(hO, vc, cAV)
    if extra:
        warnings.warn(f"dx_w query (hO={hO}, vc={vc}, cAV={cAV}) lies outside the campaign grid",
                      ExtrapolationWarning, stacklevel=2)
    return DxwEstimate(float(value), extra)


# --- problem and decision ------------------------------------------------------------------


def _group_surfaces(surfaces) -> dict:
    if isinstance(surfaces, FitReport):
        surfaces = surfaces.surfaces.values()
    elif isinstance(surfaces, dict):
        surfaces = [s for v in surfaces.values() for s in (v if isinstance(v, (list, tuple)) else [v])]
    grouped = {m: [] for m in METRICS}
    for s in surfaces:
        if not isinstance(s, FittedSurface):
            raise TypeError("surfaces must be FittedSurface objects")
        if s.spec.metric in grouped:
            grouped[s.spec.metric].append(s)
    for m, lst in grouped.items():
        if not lst:
            raise ValueError(f"no fitted surface for metric '{m}'")
        lst.sort(key=lambda s: s.hO)
        if len({s.hO for s in lst}) != len(lst):
            raise ValueError(f"duplicate obstacle heights among '{m}' surfaces")
    return grouped


@dataclass
class StrategyProblem:
    """One damping decision.  SI units; ``weights`` are (w_E, w_pitch, w_CDWO)."""

    surfaces: object
    hO: float
    vc: float
    cAV_bounds: tuple[float, float] = (400.0, 6400.0)
    torque_bounds: tuple[float, float] = (-6.0, 6.0)
    stroke_limit: float = VehicleParams().mechanism_stroke  # m, mechanism stroke
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    detection_distance: float = 1.0
    torque_demand: float = 0.0  # current speed-hold output, N m
    grid_points: int = 1000

    def __post_init__(self):
        self.surfaces = _group_surfaces(self.surfaces)
        self.weights = tuple(float(w) for w in self.weights)
        if len(self.weights) != 3 or any(not (w >= 0 and math.isfinite(w)) for w in self.weights):
            raise ValueError("weights must be three finite values >= 0")
        if sum(self.weights) == 0:
            raise ValueError("weights must not all be zero")
        lo, hi = self.cAV_bounds
        if not 0 < lo < hi:
            raise ValueError("cAV_bounds must satisfy 0 < min < max")
        tlo, thi = self.torque_bounds
        if not tlo <= thi:
            raise ValueError("torque_bounds must satisfy min <= max")
        if not self.vc > 0:
            raise ValueError("vc must be > 0")
        if not self.hO >= 0:
            raise ValueError("hO must be >= 0")
        if not self.stroke_limit >= 0:
            raise ValueError("stroke_limit must be >= 0")
        if int(self.grid_points) != self.grid_points or self.grid_points < 2:
            raise ValueError("grid_points must be an integer >= 2")
        if not self.detection_distance >= 0:
            raise ValueError("detection_distance must be >= 0")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.cAV_bounds[0], self.cAV_bounds[1], int(self.grid_points))

    @property
    def excursion_limit(self) -> float:
        return LEVER_RATIO * self.stroke_limit


@dataclass
class StrategyDecision:
    cAV_star: float
    tau_command: float
    predicted: tuple[float, float, float]  # (delta_Ec, pitch_rate, cdwo)
    feasible: bool
    pareto_set: list = field(default_factory=list)  # [(cAV, (delta_Ec, pitch_rate, cdwo))]
    time_budget: float = math.inf
    decision_latency: float = 0.0
    dx_w: float = math.nan
    extrapolated: bool = False

    @property
    def within_budget(self) -> bool:
        return self.decision_latency < self.time_budget


def _cav_polynomial(surface: FittedSurface, vc: float) -> np.ndarray:
    """Coefficients of the surface at fixed ``vc`` as a polynomial in cAV, highest first."""
    deg = max(b for _, b in surface.spec.basis)
    poly = np.zeros(deg + 1)
    for c, (a, b) in zip(surface.coefficients, surface.spec.basis):
        poly[deg - b] += c * vc ** a
    return poly


def _predict(group: list[FittedSurface], hO: float, vc: float, cav: np.ndarray) -> np.ndarray:
    """One metric over ``cav``, linear in hO between the bracketing surfaces."""
    levels = [s.hO for s in group]
    tol = 1e-12 * max(1.0, abs(hO))
    if hO < levels[0] - tol or hO > levels[-1] + tol:
        raise ValueError(f"hO = {hO} m is outside the fitted heights "
                         f"[{levels[0]}, {levels[-1]}] for '{group[0].spec.metric}'")
    k = bisect_left(levels, hO - tol)
    if abs(levels[k] - hO) <= tol:
        poly = _cav_polynomial(group[k], vc)
    else:
        a, b = group[k - 1], group[k]
        w = (hO - a.hO) / (b.hO - a.hO)
        pa, pb = _cav_polynomial(a, vc), _cav_polynomial(b, vc)
        n = max(pa.size, pb.size)
        pa = np.pad(pa, (n - pa.size, 0))
        pb = np.pad(pb, (n - pb.size, 0))
        poly = (1 - w) * pa + w * pb
    return np.polyval(poly, cav)


def _normalise(f: np.ndarray, mask: np.ndarray) -> np.ndarray:
    lo, hi = f[mask].min(), f[mask].max()
    if hi > lo:
        return (f - lo) / (hi - lo)
    return np.zeros_like(f)


def feasible_set(problem: StrategyProblem, campaign) -> np.ndarray:
    """Grid values of cAV whose interpolated excursion is under the limit."""
    table = campaign if isinstance(campaign, DxwTable) else DxwTable(campaign)
    grid = problem.grid
    dxw, _ = table(problem.hO, problem.vc, grid)
    return grid[dxw < problem.excursion_limit]


def pareto_front(F) -> np.ndarray:
    """Indices (ascending) of the rows of ``F`` not dominated under minimisation.

    Three objectives; a sweep in lexicographic order keeps a staircase of
    the (f2, f3) pairs seen so far.  Identical rows are all kept.
    """
    F = np.asarray(F, dtype=float)
    if F.size == 0:
        return np.zeros(0, dtype=int)
    uniq, inverse = np.unique(F, axis=0, return_inverse=True)  # sorted lexicographically
    inverse = np.ravel(inverse)
    keep = np.zeros(len(uniq), dtype=bool)
    stair2: list[float] = []  # ascending
    stair3: list[float] = []  # strictly descending
    for i, (_, f2, f3) in enumerate(uniq):
        k = bisect_right(stair2, f2)
        if k and stair3[k - 1] <= f3:
            continue
        keep[i] = True
        pos = bisect_left(stair2, f2)
        end = pos
        while end < len(stair2) and stair3[end] >= f3:
            end += 1
        stair2[pos:end] = [f2]
        stair3[pos:end] = [f3]
    return np.nonzero(keep[inverse])[0]


def optimize(problem: StrategyProblem, campaign) -> StrategyDecision:
    """Pick the damping for ``problem``; see the module docstring for the rule.

    ``decision_latency`` times the choice itself (prediction, feasibility,
    scalarisation).  The Pareto set is enumerated afterwards for reporting.
    If no candidate is feasible the one with the smallest predicted
    excursion is returned with ``feasible = False``.
    """
    start = time.perf_counter()
    table = campaign if isinstance(campaign, DxwTable) else DxwTable(campaign)
    grid = problem.grid
    hO, vc = problem.hO, problem.vc
    dxw, extra = table(hO, vc, grid)
    E = _predict(problem.surfaces["delta_Ec"], hO, vc, grid)
    D = _predict(problem.surfaces["pitch_rate"], hO, vc, grid)
    C = _predict(problem.surfaces["cdwo"], hO, vc, grid)
    ok = dxw < problem.excursion_limit
    feasible = bool(ok.any())
    if feasible:
        wE, wD, wC = problem.weights
        # CDWO is maximised: normalise its negation
        score = (wE * _normalise(E, ok) + wD * _normalise(np.abs(D), ok)
                 + wC * _normalise(-C, ok))
        score = np.where(ok, score, np.inf)
        best = int(np.argmin(score))  # first minimum is the smallest cAV
    else:
        best = int(np.nanargmin(np.where(np.isnan(dxw), np.inf, dxw))) if np.any(~np.isnan(dxw)) else 0
    tlo, thi = problem.torque_bounds
    tau = float(min(max(problem.torque_demand, tlo), thi))
    latency = time.perf_counter() - start

    pareto = []
    if feasible:
        idx = np.nonzero(ok)[0]
        F = np.column_stack((E[idx], np.abs(D[idx]), -C[idx]))
        pareto = [(float(grid[i]), (float(E[i]), float(D[i]), float(C[i])))
                  for i in idx[pareto_front(F)]]
    if extra:
        warnings.warn("excursion constraint extrapolated beyond the campaign grid",
                      ExtrapolationWarning, stacklevel=2)
    return StrategyDecision(
        cAV_star=float(grid[best]),
        tau_command=tau,
        predicted=(float(E[best]), float(D[best]), float(C[best])),
        feasible=feasible,
        pareto_set=pareto,
        time_budget=anticipation_budget(problem.detection_distance, vc),
        decision_latency=latency,
        dx_w=float(dxw[best]),
        extrapolated=extra,
    )


def decision_to_json(decision: StrategyDecision, include_latency: bool = False) -> str:
    """JSON form of a decision.

    The measured latency varies from run to run, so it is left out unless
    asked for; that keeps repeated runs byte-identical.
    """
    d = {
        "cAV_star": decision.cAV_star,
        "tau_command": decision.tau_command,
        "predicted": dict(zip(METRICS, decision.predicted)),
        "feasible": decision.feasible,
        "dx_w": decision.dx_w,
        "extrapolated": decision.extrapolated,
        "time_budget": decision.time_budget,
        "pareto_set": [{"cAV": c, **dict(zip(METRICS, p))} for c, p in decision.pareto_set],
    }
    if include_latency:
        d["decision_latency"] = decision.decision_latency
        d["within_budget"] = decision.within_budget
    return json.dumps(d, indent=2) + "\n"
