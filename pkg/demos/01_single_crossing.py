"""
One step crossing
=================

Drive the reference vehicle into a step half as high as its wheel radius and
look at the events and metrics of the crossing.
"""

import numpy as np

from crossing_lab import ContactParams, VehicleParams, run_trial

vehicle = VehicleParams()
contact = ContactParams()
hO = 0.5 * vehicle.wheel_radius

# speed hold at 6 m/s up to the step, front longitudinal damping 1600 N s/m
result = run_trial(vehicle, contact, hO, vc=6.0, cAV=1600.0)
print("outcome:", result.outcome)

# t1: front wheel touches the step, t2: rear wheel done with it, t3: apex
e = result.events
print(f"t1 = {e.t1:.4f} s   t2 = {e.t2:.4f} s   t3 = {e.t3:.4f} s")

m = result.metrics
print(f"kinetic energy variation  {m.delta_Ec:8.3f} J")
print(f"pitch rate at t2          {m.pitch_rate_t2:8.3f} rad/s")
print(f"contact duration (CDWO)   {m.cdwo * 1e3:8.2f} ms")
print(f"peak wheel excursion      {m.max_longitudinal_excursion * 1e3:8.2f} mm")

# the full time series is a column-named array
s = result.series
window = (s["t"] >= e.t1) & (s["t"] <= e.t2)
print(f"speed dips to {s['v_x'][window].min():.3f} m/s during the crossing")
print(f"largest pitch angle {np.degrees(np.abs(s['theta']).max()):.1f} deg")

# softer damping lets the wheel give way for longer
for cAV in (400.0, 1600.0, 6400.0):
    r = run_trial(vehicle, contact, hO, 6.0, cAV, keep_series=False)
    print(f"cAV = {cAV:6.0f}  CDWO = {r.metrics.cdwo * 1e3:6.2f} ms  "
          f"dEc = {r.metrics.delta_Ec:6.3f} J")

s.to_csv("single_crossing.csv")
