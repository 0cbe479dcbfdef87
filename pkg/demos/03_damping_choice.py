"""
Choosing the damping before the crossing
========================================

Fit surfaces on a coarse grid over all five heights, then pick the front
damping for a few detected obstacles and check one choice in simulation.
"""

from crossing_lab import ContactParams, VehicleParams, fit_report, run_campaign, run_trial
from crossing_lab.campaign import DoePlan
from crossing_lab.strategy import DxwTable, StrategyProblem, anticipation_budget, optimize

vehicle = VehicleParams()
wr = vehicle.wheel_radius

# four levels per factor is the least that keeps the cubic fits full rank
plan = DoePlan(tuple(f * wr for f in (0.25, 0.5, 0.8, 0.9, 1.0)), (3.0, 7.0, 11.0, 15.0),
               (400.0, 1600.0, 3200.0, 6400.0))
campaign = run_campaign(plan)
report = fit_report(campaign)
table = DxwTable(campaign)  # excursion lookup, built once

# a sensor one metre ahead leaves little time at speed
print(f"time budget at 15 m/s: {anticipation_budget(1.0, 15.0) * 1e3:.1f} ms")

for frac, vc in ((0.25, 6.0), (0.5, 12.0), (0.9, 15.0)):
    problem = StrategyProblem(report, hO=frac * wr, vc=vc)
    d = optimize(problem, table)
    print(f"hO={frac:4.0%} wr  vc={vc:4.1f}  cAV*={d.cAV_star:7.1f}  "
          f"feasible={d.feasible}  Pareto points={len(d.pareto_set)}  "
          f"latency={d.decision_latency * 1e3:.3f} ms")

# weights shift the choice: energy only versus contact duration only
for w in ((1, 0, 0), (0, 0, 1)):
    d = optimize(StrategyProblem(report, hO=0.5 * wr, vc=9.0, weights=w), table)
    print("weights", w, "->", round(d.cAV_star, 1))

# close the loop: simulate the chosen damping
d = optimize(StrategyProblem(report, hO=0.5 * wr, vc=9.0), table)
r = run_trial(vehicle, ContactParams(), 0.5 * wr, 9.0, d.cAV_star, keep_series=False)
print(f"predicted dEc {d.predicted[0]:.3f} J, simulated {r.metrics.delta_Ec:.3f} J")
