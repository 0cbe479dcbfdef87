"""
A small campaign and its response surfaces
==========================================

Run a reduced factorial grid, save it, and fit the three polynomial
surfaces at each obstacle height.
"""

from crossing_lab import VehicleParams, fit_report, load_campaign, run_campaign, save_campaign
from crossing_lab.campaign import DoePlan

wr = VehicleParams().wheel_radius

# two heights on the full 5 x 5 speed/damping grid: 50 trials.  The cubic
# terms of the 9-term bases need at least four levels per factor, fewer
# leaves the fit rank deficient
plan = DoePlan(hO_levels=(0.25 * wr, 0.5 * wr))
campaign = run_campaign(plan, workers=1)
print(f"{len(campaign.records)} trials, {len(campaign.failures)} failures")

# the CSV and its sidecar round-trip exactly
path = save_campaign(campaign, "small_campaign.csv", wr)
assert load_campaign(path).records == campaign.records

for r in campaign.at(plan.hO_levels[1])[::4]:
    print(f"vc={r.vc:4.1f}  cAV={r.cAV:6.0f}  {r.outcome:12s} dEc={r.delta_Ec:7.3f} J")

report = fit_report(campaign)
for (metric, hO), s in sorted(report.surfaces.items()):
    print(f"{metric:10s} hO={hO * 1e3:5.1f} mm  R2={s.r_squared:.3f}  "
          f"cond={s.condition_number:6.1f}  rmse={s.rmse:.3g}")

# a surface is callable in (vc, cAV)
s = report.surface("delta_Ec", plan.hO_levels[1])
print("predicted dEc at 12 m/s, 1000 N s/m:", round(s(12.0, 1000.0), 3), "J")
