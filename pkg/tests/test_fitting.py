import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossing_lab.campaign import TABLE_CAV, TABLE_VC
from crossing_lab.fitting import (
    CDWO,
    DELTA_EC,
    PITCH_RATE,
    FitError,
    RankError,
    SurfaceSpec,
    UnderdeterminedError,
    design_matrix,
    evaluate_surface,
    fit_arrays,
    fit_report,
    fit_surface,
    plot_data_csv,
    surfaces_from_json,
    surfaces_to_json,
)

VC, CAV = (a.ravel() for a in np.meshgrid(TABLE_VC, TABLE_CAV, indexing="ij"))


def normal_equations(vc, cAV, y, basis):
    """Independent oracle: solve X'X b = X'y in float64 on column-normalised X."""
    X = design_matrix(vc, cAV, basis)
    norms = np.linalg.norm(X, axis=0)
    Xn = X / norms
    return np.linalg.solve(Xn.T @ Xn, Xn.T @ y) / norms


class TestSpec:
    def test_sizes(self):
        assert (DELTA_EC.size, PITCH_RATE.size, CDWO.size) == (5, 9, 9)
        assert DELTA_EC.downward_closed and PITCH_RATE.downward_closed and CDWO.downward_closed
        assert not SurfaceSpec("m", ((0, 0), (2, 0))).downward_closed

    @pytest.mark.parametrize("basis", [(), ((0, 0), (0, 0)), ((-1, 0),)])
    def test_invalid(self, basis):
        with pytest.raises(ValueError):
            SurfaceSpec("m", basis)


class TestExact:
    @pytest.mark.parametrize("scaling", ["raw", "standardized"])
    def test_recovers_known_coefficients(self, scaling):
        beta = np.array([1.0, 2.0, -3.0, 0.5, 0.1])
        y = design_matrix(VC, CAV, DELTA_EC.basis) @ beta
        s = fit_arrays(VC, CAV, y, DELTA_EC, scaling=scaling)
        np.testing.assert_allclose(s.coefficients, beta, rtol=1e-8, atol=1e-10)
        assert s.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_constant(self):
        s = fit_arrays(VC, CAV, np.full(VC.size, 7.0), PITCH_RATE)
        assert s.coefficients[0] == pytest.approx(7.0, abs=1e-9)
        np.testing.assert_allclose(s.coefficients[1:], 0.0, atol=1e-9)
        assert s.r_squared == 1.0 and s.rmse == pytest.approx(0.0, abs=1e-12)

    def test_scaling_does_not_change_the_fit(self):
        rng = np.random.default_rng(3)
        y = rng.normal(size=VC.size)
        raw = fit_arrays(VC, CAV, y, CDWO, scaling="raw")
        std = fit_arrays(VC, CAV, y, CDWO, scaling="standardized")
        # the raw cubic in cAV loses a few digits; the standardised fit does not
        np.testing.assert_allclose(raw(VC, CAV), std(VC, CAV), atol=1e-4)
        assert std.condition_number < raw.condition_number


class TestErrors:
    def test_underdetermined(self):
        with pytest.raises(UnderdeterminedError):
            fit_arrays(VC[:8], CAV[:8], np.ones(8), PITCH_RATE)

    def test_identical_rows(self):
        with pytest.raises(RankError):
            fit_arrays(np.full(10, 3.0), np.full(10, 400.0), np.arange(10.0), DELTA_EC)

    def test_non_finite(self):
        y = np.ones(VC.size)
        y[4] = math.nan
        with pytest.raises(FitError):
            fit_arrays(VC, CAV, y, DELTA_EC)

    def test_rank_deficient_reports_rank(self):
        # only two speeds: the vc^2 column is a combination of 1 and vc
        vc = np.repeat([3.0, 6.0], 5)
        cav = np.tile(TABLE_CAV, 2)
        s = fit_arrays(vc, cav, vc + cav / 1000, DELTA_EC)
        assert s.rank < DELTA_EC.size

    def test_mixed_heights(self, default_campaign):
        with pytest.raises(FitError):
            fit_surface(default_campaign["result"].records[:30], DELTA_EC)


@pytest.fixture(scope="module")
def half(default_campaign):
    """Campaign records at half a wheel radius."""
    camp = default_campaign["result"]
    return camp.at(camp.plan.hO_levels[1])


class TestCampaignData:
    @pytest.mark.parametrize("spec,attr", [(DELTA_EC, "delta_Ec"), (PITCH_RATE, "pitch_rate_t2"),
                                           (CDWO, "cdwo")])
    def test_matches_normal_equations(self, half, spec, attr):
        vc = np.array([r.vc for r in half])
        cav = np.array([r.cAV for r in half])
        y = np.array([getattr(r, attr) for r in half])
        oracle = normal_equations(vc, cav, y, spec.basis)
        s = fit_surface(half, spec)
        np.testing.assert_allclose(s(vc, cav), design_matrix(vc, cav, spec.basis) @ oracle,
                                   rtol=1e-6, atol=1e-9 * np.abs(y).max())

    def test_residuals_orthogonal(self, half):
        vc = np.array([r.vc for r in half])
        cav = np.array([r.cAV for r in half])
        y = np.array([r.cdwo for r in half])
        s = fit_surface(half, CDWO)
        X = design_matrix(vc, cav, CDWO.basis)
        Xn = X / np.linalg.norm(X, axis=0)
        resid = y - s(vc, cav)
        assert np.max(np.abs(Xn.T @ resid)) < 1e-8 * np.linalg.norm(y)

    def test_training_points_within_three_rmse(self, half):
        s = fit_surface(half, DELTA_EC)
        err = np.array([s(r.vc, r.cAV) - r.delta_Ec for r in half])
        assert np.sqrt(np.mean(err ** 2)) == pytest.approx(s.rmse, rel=1e-9)
        assert np.all(np.abs(err) <= 3 * s.rmse)

    def test_report(self, default_campaign):
        camp = default_campaign["result"]
        rep = fit_report(camp)
        assert not rep.errors and len(rep.surfaces) == 15
        assert [s.hO for s in rep.by_metric("cdwo")] == list(camp.plan.hO_levels)
        assert rep.flagged == []
        strict = fit_report(camp, stroke_limit=0.01, exclude_flagged=True)
        assert strict.flagged and strict.excluded

    def test_report_records_cell_errors(self, default_campaign):
        from crossing_lab.campaign import CampaignResult
        camp = default_campaign["result"]
        small = CampaignResult(camp.plan, [r for r in camp.records if r.vc == 3.0])
        rep = fit_report(small)
        assert len(rep.errors) == 10
        assert all("5 points for 9" in m for m in rep.errors.values())
        # one speed level: the delta_Ec design is square but rank deficient
        assert all(s.rank < DELTA_EC.size for s in rep.by_metric("delta_Ec"))


class TestEvaluate:
    def test_scalar_and_array(self):
        s = fit_arrays(VC, CAV, VC * 2 + CAV / 100, DELTA_EC)
        assert isinstance(evaluate_surface(s, 6.0, 1600.0), float)
        assert evaluate_surface(s, 6.0, 1600.0) == pytest.approx(28.0)
        assert evaluate_surface(s, VC, CAV).shape == VC.shape

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=9, max_size=9))
    def test_json_round_trip(self, coefs):
        y = design_matrix(VC, CAV, PITCH_RATE.basis) @ np.array(coefs) * 1e-6
        s = fit_arrays(VC, CAV, y, PITCH_RATE, hO=0.0373)
        (back,) = surfaces_from_json(surfaces_to_json([s]))
        assert back == s

    def test_json_file_and_errors(self, tmp_path):
        s = fit_arrays(VC, CAV, VC, DELTA_EC, hO=0.01)
        p = tmp_path / "surfaces.json"
        p.write_text(surfaces_to_json([s]))
        assert surfaces_from_json(p) == [s]
        with pytest.raises(FileNotFoundError):
            surfaces_from_json(tmp_path / "missing.json")
        with pytest.raises(FitError):
            surfaces_from_json("[{\"metric\": \"cdwo\"}]")

    def test_plot_data(self, default_campaign):
        camp = default_campaign["result"]
        hO = camp.plan.hO_levels[0]
        s = fit_surface(camp.at(hO), CDWO)
        lines = plot_data_csv(s, camp.records, n_grid=5).splitlines()
        assert lines[0] == "vc_mps,cAV_Nspm,predicted,observed"
        observed = [ln for ln in lines[1:] if not ln.endswith(",")]
        assert len(observed) == 25
