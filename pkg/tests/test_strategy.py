import math
import warnings

import numpy as np
import pytest

from crossing_lab.campaign import CampaignResult, DoePlan, TrialRecord
from crossing_lab.contact import ContactParams
from crossing_lab.fitting import FittedSurface, SurfaceSpec, fit_report
from crossing_lab.scenario import run_trial
from crossing_lab.strategy import (
    DxwTable,
    ExtrapolationWarning,
    StrategyProblem,
    anticipation_budget,
    decision_to_json,
    feasible_set,
    optimize,
    pareto_front,
    predict_dxw,
)
from crossing_lab.vehicle import VehicleParams

V = VehicleParams()
WR = V.wheel_radius
HEIGHTS = (0.02, 0.04)
CAV_LEVELS = (400.0, 800.0, 1600.0, 3200.0, 6400.0)


def cubic_in_cav(metric, coefs, hO):
    """A surface c0 + c1 cAV + c2 cAV^2 + c3 cAV^3, independent of vc."""
    basis = tuple((0, k) for k in range(len(coefs)))
    return FittedSurface(SurfaceSpec(metric, basis), hO, tuple(coefs), 1.0, 0.0, 1.0, 25)


def surfaces(E, D, C):
    return [cubic_in_cav(m, c, h) for h in HEIGHTS
            for m, c in (("delta_Ec", E), ("pitch_rate", D), ("cdwo", C))]


def synthetic_campaign(dxw):
    """Excursion depends on cAV only, through ``dxw(cAV)``."""
    plan = DoePlan(HEIGHTS, (3.0, 15.0), CAV_LEVELS)
    recs = [TrialRecord(h, v, c, 1.0, 0.0, 0.01, dxw(c), 0.0, 0.1, 0.2, "cleared")
            for h, v, c, _ in plan.cells()]
    return CampaignResult(plan, recs)


LINEAR_DXW = synthetic_campaign(lambda c: 0.08 - 1e-5 * c)  # feasible above 3000 N s/m


def brute_force(problem, E, D, C, dxw):
    """Independent enumeration of the scalarised problem on the same grid."""
    grid = np.linspace(*problem.cAV_bounds, problem.grid_points)
    f = [np.polynomial.polynomial.polyval(grid, c) for c in (E, D, C)]
    cons = np.interp(grid, CAV_LEVELS, [dxw(c) for c in CAV_LEVELS])
    ok = cons < problem.excursion_limit
    objs = [f[0], np.abs(f[1]), -f[2]]
    score = np.zeros_like(grid)
    for w, g in zip(problem.weights, objs):
        lo, hi = g[ok].min(), g[ok].max()
        score += w * ((g - lo) / (hi - lo) if hi > lo else 0.0)
    score[~ok] = np.inf
    best = min(range(grid.size), key=lambda i: (score[i], i))
    return grid[best]


class TestBudget:
    @pytest.mark.parametrize("d,vc,expected", [(1.0, 15.0, 0.0667), (1.0, 3.0, 0.3333),
                                               (2.0, 15.0, 0.1333)])
    def test_values(self, d, vc, expected):
        assert anticipation_budget(d, vc) == pytest.approx(expected, abs=5e-5)

    def test_invalid(self):
        with pytest.raises(ValueError):
            anticipation_budget(1.0, 0.0)
        with pytest.raises(ValueError):
            anticipation_budget(-1.0, 3.0)


class TestDxw:
    def test_grid_identity(self, default_campaign):
        camp = default_campaign["result"]
        table = DxwTable(camp)
        for r in camp.records[::7]:
            assert predict_dxw(r.hO, r.vc, r.cAV, table).value == pytest.approx(r.dx_w_max, rel=1e-12)

    def test_midpoint_mean(self, default_campaign):
        camp = default_campaign["result"]
        h = camp.plan.hO_levels[1]
        a, b = camp.lookup(h, 6.0, 1600.0), camp.lookup(h, 6.0, 3200.0)
        got = predict_dxw(h, 6.0, 2400.0, camp).value
        assert got == pytest.approx((a.dx_w_max + b.dx_w_max) / 2, rel=1e-12)

    def test_within_hull(self, default_campaign):
        camp = default_campaign["result"]
        lo = min(r.dx_w_max for r in camp.records)
        hi = max(r.dx_w_max for r in camp.records)
        rng = np.random.default_rng(0)
        table = DxwTable(camp)
        for _ in range(200):
            q = (rng.uniform(0.25, 1.0) * WR, rng.uniform(3, 15), rng.uniform(400, 6400))
            assert lo - 1e-15 <= predict_dxw(*q, table).value <= hi + 1e-15

    def test_extrapolation_warns_and_clamps(self):
        with pytest.warns(ExtrapolationWarning):
            est = predict_dxw(0.02, 6.0, 10000.0, LINEAR_DXW)
        assert est.extrapolated and est.value == pytest.approx(0.08 - 0.064)


class TestProblem:
    @pytest.mark.parametrize("kwargs", [
        {"weights": (0, 0, 0)}, {"weights": (1, -1, 1)}, {"cAV_bounds": (500, 400)},
        {"torque_bounds": (1, -1)}, {"vc": 0.0}, {"stroke_limit": -1.0}, {"grid_points": 1},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            StrategyProblem(surfaces((1, 0), (0,), (0,)), **{"hO": 0.02, "vc": 6.0, **kwargs})

    def test_missing_metric(self):
        with pytest.raises(ValueError):
            StrategyProblem([cubic_in_cav("delta_Ec", (1,), 0.02)], 0.02, 6.0)

    def test_out_of_range_height(self):
        p = StrategyProblem(surfaces((1, 0), (0,), (0,)), 0.05, 6.0)
        with pytest.raises(ValueError):
            optimize(p, LINEAR_DXW)

    def test_default_limit_is_the_end_stop(self):
        p = StrategyProblem(surfaces((1,), (0,), (0,)), 0.02, 6.0)
        assert p.excursion_limit == pytest.approx(V.stroke_limit)


class TestFeasibility:
    def test_unbounded_stroke_keeps_grid(self):
        p = StrategyProblem(surfaces((1,), (0,), (0,)), 0.02, 6.0, stroke_limit=math.inf)
        np.testing.assert_array_equal(feasible_set(p, LINEAR_DXW), p.grid)

    def test_zero_stroke_infeasible(self):
        p = StrategyProblem(surfaces((1,), (0,), (0,)), 0.02, 6.0, stroke_limit=0.0)
        assert feasible_set(p, LINEAR_DXW).size == 0
        d = optimize(p, LINEAR_DXW)
        assert not d.feasible and d.pareto_set == []
        assert d.cAV_star == 6400.0  # least excursion

    def test_high_step_fast_excludes_soft_damping(self, default_campaign):
        camp = default_campaign["result"]
        rep = fit_report(camp)
        p = StrategyProblem(rep, camp.plan.hO_levels[3], 15.0)
        feas = feasible_set(p, camp)
        assert feas.size and feas.min() > 800.0


class TestOptimize:
    def test_monotone_objectives_pick_lower_bound(self):
        p = StrategyProblem(surfaces((1, 1e-3), (0, 1e-4), (1, -1e-5)), 0.03, 6.0,
                            stroke_limit=math.inf)
        assert optimize(p, LINEAR_DXW).cAV_star == 400.0

    def test_ties_go_to_smaller_damping(self):
        p = StrategyProblem(surfaces((2,), (1,), (0.01,)), 0.02, 6.0, stroke_limit=math.inf)
        assert optimize(p, LINEAR_DXW).cAV_star == 400.0

    def test_constraint_binds(self):
        """E is smallest at 2000 N s/m but only cAV > 3000 is feasible."""
        E = (4.0, -4e-3, 1e-6)
        p = StrategyProblem(surfaces(E, (0,), (0,)), 0.02, 6.0, weights=(1, 0, 0))
        d = optimize(p, LINEAR_DXW)
        grid = p.grid
        assert d.cAV_star == grid[grid > 3000.0][0]
        assert d.dx_w < p.excursion_limit

    def test_interior_optimum_matches_enumeration(self):
        E, D, C = (4.0, -4e-3, 1e-6), (0.5, -1e-4, 2e-8), (0.01, 2e-6, -4e-10)
        dxw = lambda c: 0.08 - 1e-5 * c
        for weights in [(1, 1, 1), (1, 0, 0), (0.2, 1, 0.5), (0, 0, 1)]:
            p = StrategyProblem(surfaces(E, D, C), 0.02, 6.0, weights=weights)
            assert optimize(p, LINEAR_DXW).cAV_star == brute_force(p, E, D, C, dxw)

    def test_height_interpolation(self):
        group = [cubic_in_cav(m, c, h) for h, c in ((0.02, (1.0,)), (0.04, (3.0,)))
                 for m in ("delta_Ec", "pitch_rate", "cdwo")]
        d = optimize(StrategyProblem(group, 0.025, 6.0, stroke_limit=math.inf), LINEAR_DXW)
        assert d.predicted == pytest.approx((1.5, 1.5, 1.5))

    def test_random_problems(self, default_campaign):
        camp = default_campaign["result"]
        rep = fit_report(camp)
        table = DxwTable(camp)
        rng = np.random.default_rng(7)
        hs = camp.plan.hO_levels
        for _ in range(1000):
            kw = dict(hO=rng.uniform(hs[0], hs[-1]), vc=rng.uniform(3, 15),
                      weights=tuple(rng.uniform(0.01, 1, 3)), torque_demand=rng.uniform(-20, 20),
                      stroke_limit=rng.uniform(0.005, 0.03), grid_points=200)
            p = StrategyProblem(rep, **kw)
            d = optimize(p, table)
            assert p.cAV_bounds[0] <= d.cAV_star <= p.cAV_bounds[1]
            assert d.tau_command == min(max(kw["torque_demand"], -6.0), 6.0)
            if d.feasible:
                assert d.dx_w < p.excursion_limit
                assert d.cAV_star in [c for c, _ in d.pareto_set]
            else:
                assert feasible_set(p, table).size == 0
            doubled = StrategyProblem(rep, **{**kw, "weights": tuple(2 * w for w in kw["weights"])})
            assert optimize(doubled, table).cAV_star == d.cAV_star

    def test_latency(self, default_campaign):
        camp = default_campaign["result"]
        rep = fit_report(camp)
        table = DxwTable(camp)
        p = StrategyProblem(rep, 0.9 * WR, 15.0)
        lat = [optimize(p, table).decision_latency for _ in range(50)]
        d = optimize(p, table)
        assert np.median(lat) < 1e-3
        assert d.time_budget == pytest.approx(1 / 15)
        assert d.within_budget

    def test_json(self):
        p = StrategyProblem(surfaces((1, 1e-3), (0,), (0,)), 0.02, 6.0)
        d = optimize(p, LINEAR_DXW)
        text = decision_to_json(d)
        assert text == decision_to_json(optimize(p, LINEAR_DXW))
        assert "decision_latency" not in text
        assert "decision_latency" in decision_to_json(d, include_latency=True)

    @pytest.mark.parametrize("fraction", [0.25, 0.5])
    def test_closed_loop_energy(self, default_campaign, fraction):
        """Simulating the chosen damping reproduces the predicted energy variation."""
        camp = default_campaign["result"]
        rep = fit_report(camp)
        hO = fraction * WR
        with warnings.catch_warnings():
            warnings.simplefilter("error", ExtrapolationWarning)
            d = optimize(StrategyProblem(rep, hO, 9.0), camp)
        surface = rep.surface("delta_Ec", hO)
        got = run_trial(V, ContactParams(), hO, 9.0, d.cAV_star, keep_series=False)
        assert abs(got.metrics.delta_Ec - d.predicted[0]) <= 3 * surface.rmse


class TestPareto:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            F = rng.integers(0, 6, size=(60, 3)).astype(float)
            dominated = [any(np.all(F[j] <= F[i]) and np.any(F[j] < F[i]) for j in range(len(F)))
                         for i in range(len(F))]
            expected = [i for i, d in enumerate(dominated) if not d]
            assert pareto_front(F).tolist() == expected

    def test_empty(self):
        assert pareto_front(np.zeros((0, 3))).size == 0
