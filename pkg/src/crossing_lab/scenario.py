"""One obstacle-crossing trial: simulation, event detection and metrics.

A trial starts on flat ground at the requested speed with the speed hold
engaged.  ``t1`` is the first front-wheel contact with the step, ``t2`` the
end of the crossing (rear wheel releases the step face or flies past it)
and ``t3`` the apex of the chassis after ``t2``.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernel as K
from .contact import ContactParams
from .vehicle import (
    DIVERGENCE_BOUND,
    DT_MAX,
    IntegrationError,
    Obstacle,
    VehicleParams,
    initialize_equilibrium,
    pack_params,
)

OUTCOMES = ("cleared", "stalled", "tipped", "rear-contact", "rear-flyover")
#: outcome label of a trial that produced no metrics
FAILED = "failed"

#: columns of the per-trial CSV, in order
SERIES_COLUMNS = (
    "t", "x_c", "z_c", "theta", "v_x", "v_z", "theta_dot", "s_fx", "s_fz", "s_rz", "tau", "E_c",
    "contact_front_ground", "contact_front_step", "contact_rear_ground", "contact_rear_step",
    "E_c_chassis", "E_mech", "s_fx_dot", "s_fz_dot", "s_rz_dot", "omega_f", "omega_r",
    "gap_front_step", "gap_front_ground", "gap_rear_step", "gap_rear_ground",
    "gap_rear_face", "gap_front_face", "x_front", "z_front", "x_rear", "z_rear",
    "slip_front", "slip_rear", "fx_external",
)

RECORD_FIELDS = ("hO", "vc", "cAV", "delta_Ec", "pitch_rate_t2", "cdwo", "dx_w_max",
                 "t1", "t2", "t3", "outcome")


class NoCrossingError(RuntimeError):
    """The front wheel never touched the obstacle."""


class MetricError(ValueError):
    pass


class TimeSeries:
    """Column-named view over a 2-D float array (one row per sample)."""

    def __init__(self, columns, data):
        self.columns = tuple(columns)
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[1] != len(self.columns):
            raise ValueError("data must be (n_samples, n_columns)")
        self._index = {c: i for i, c in enumerate(self.columns)}

    def __getitem__(self, name) -> np.ndarray:
        return self.data[:, self._index[name]]

    def __contains__(self, name):
        return name in self._index

    def __len__(self):
        return self.data.shape[0]

    def to_csv(self, path_or_buf=None) -> str | None:
        buf = io.StringIO()
        buf.write(",".join(self.columns) + "\n")
        np.savetxt(buf, self.data, delimiter=",", fmt="%.17g")
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        with open(path_or_buf, "w", newline="") as fh:
            fh.write(text)
        return None

    @classmethod
    def from_csv(cls, path) -> TimeSeries:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(header, data)


@dataclass(frozen=True)
class CrossingEvents:
    t1: float
    t2: float
    t3: float
    crossing_outcome: str
    contact_end: float | None = None  # end of the first front face contact


@dataclass(frozen=True)
class CrossingMetrics:
    delta_Ec: float  # J
    pitch_rate_t2: float  # rad/s, signed (positive nose-up)
    cdwo: float  # s
    max_longitudinal_excursion: float  # m
    min_speed: float  # m/s
    apex_height: float  # m
    contact_duration: float = 0.0  # s, first front face contact interval


@dataclass
class TrialResult:
    hO: float
    vc: float
    cAV: float
    series: TimeSeries | None
    events: CrossingEvents | None
    metrics: CrossingMetrics | None
    outcome: str
    failed: bool = False
    diagnostic: str = ""
    obstacle_x: float = 0.0

    def record(self) -> dict:
        """Per-trial metric record with the fixed field names."""
        m, e = self.metrics, self.events
        nan = float("nan")
        return {
            "hO": self.hO,
            "vc": self.vc,
            "cAV": self.cAV,
            "delta_Ec": m.delta_Ec if m else nan,
            "pitch_rate_t2": m.pitch_rate_t2 if m else nan,
            "cdwo": m.cdwo if m else nan,
            "dx_w_max": m.max_longitudinal_excursion if m else nan,
            "t1": e.t1 if e else nan,
            "t2": e.t2 if e else nan,
            "t3": e.t3 if e else nan,
            "outcome": FAILED if self.failed else self.outcome,
        }

    def to_json(self) -> str:
        rec = self.record()
        if self.failed:
            rec["diagnostic"] = self.diagnostic
        return json.dumps(rec, indent=2, allow_nan=True)


CROSSING_TORQUE_MODES = ("hold", "speed-hold")


@dataclass(frozen=True)
class SimulationSettings:
    dt: float = 2.0e-5  # s
    horizon: float = 3.0  # s
    post_apex: float = 1.0  # s simulated after t3
    approach_gap: float = 0.3  # m between front tyre and step face at t = 0
    chunk: float = 0.05  # s between stop-condition checks
    chassis_only_energy: bool = False
    crossing_torque: str = "speed-hold"  # or "hold": freeze the torque at t1

    def __post_init__(self):
        if self.crossing_torque not in CROSSING_TORQUE_MODES:
            raise ValueError(f"solver.crossing_torque must be one of {CROSSING_TORQUE_MODES}")
        if not 0 < self.dt <= DT_MAX:
            raise ValueError(f"solver.dt must lie in (0, {DT_MAX}]")
        if not self.horizon > 0:
            raise ValueError("solver.horizon must be > 0")


# --- event detection -----------------------------------------------------------


def _falling_crossings(t, g):
    """Interpolated times where g goes from >= 0 to < 0."""
    idx = np.nonzero((g[:-1] >= 0) & (g[1:] < 0))[0]
    return [t[i] + (t[i + 1] - t[i]) * g[i] / (g[i] - g[i + 1]) for i in idx], idx + 1


def _rising_crossings(t, g):
    idx = np.nonzero((g[:-1] < 0) & (g[1:] >= 0))[0]
    return [t[i] + (t[i + 1] - t[i]) * g[i] / (g[i] - g[i + 1]) for i in idx], idx + 1


def _interp(ts: TimeSeries, name, time):
    return float(np.interp(time, ts["t"], ts[name]))


def detect_events(series: TimeSeries, obstacle_x: float, tip_angle: float = math.pi / 2
                  ) -> CrossingEvents:
    """Locate t1, t2, t3 and classify the crossing.

    ``t2`` is the release of the last rear-wheel collision with the step face
    or corner that started left of the face; if the rear wheel never collides,
    it is the moment the rear axle passes the face plane.  Event times are
    linearly interpolated between samples.
    """
    t = series["t"]
    if len(t) < 2:
        raise NoCrossingError("series too short")
    hits, _ = _falling_crossings(t, series["gap_front_step"])
    if series["gap_front_step"][0] < 0:
        hits = [t[0]] + hits
    if not hits:
        raise NoCrossingError("front wheel never touched the obstacle")
    t1 = hits[0]

    tipped = np.abs(series["theta"]) > tip_angle
    gap_rf = series["gap_rear_face"]
    x_rear = series["x_rear"]
    after = t >= t1

    # the rear axle has to finish beyond the face for the crossing to count
    over = x_rear[-1] >= obstacle_x
    # rear collisions that begin while the rear axle is still short of the face
    starts, start_idx = _falling_crossings(t, gap_rf)
    starts = [(s, i) for s, i in zip(starts, start_idx) if s >= t1 and x_rear[i] < obstacle_x]
    t2 = None
    if starts:
        last_start = starts[-1][0]
        ends, _ = _rising_crossings(t, gap_rf)
        ends = [e for e in ends if e > last_start]
        if ends:
            t2 = ends[0]
            outcome = "cleared" if over else "stalled"
        else:
            outcome = "rear-contact"
    else:
        passes = np.nonzero(after[1:] & (x_rear[:-1] < obstacle_x) & (x_rear[1:] >= obstacle_x))[0]
        if passes.size and over:
            i = passes[0]
            t2 = t[i] + (t[i + 1] - t[i]) * (obstacle_x - x_rear[i]) / (x_rear[i + 1] - x_rear[i])
            outcome = "rear-flyover"
        else:
            outcome = "stalled"

    if np.any(tipped & after):
        outcome = "tipped"
    if t2 is None:
        t2 = float(t[-1])
    window = t >= t2
    t3 = float(t[window][np.argmax(series["z_c"][window])]) if np.any(window) else float(t[-1])

    # raw contact duration: first front face/corner contact interval
    contact_end = None
    ends, _ = _rising_crossings(t, series["gap_front_face"])
    ends = [e for e in ends if e > t1]
    if ends:
        contact_end = ends[0]
    return CrossingEvents(float(t1), float(t2), float(t3), outcome, contact_end)


def _window(series: TimeSeries, name, t1, t2):
    """Samples of ``name`` on [t1, t2] with interpolated endpoints."""
    t = series["t"]
    inner = (t > t1) & (t < t2)
    vals = np.concatenate(([_interp(series, name, t1)], series[name][inner],
                           [_interp(series, name, t2)]))
    times = np.concatenate(([t1], t[inner], [t2]))
    return times, vals


def _first_shortening_peak(times, sfx, creep_fraction=0.01) -> int:
    """Index of maximum shortening within the first shortening stroke.

    The stroke starts at the first sample whose shortening speed exceeds
    ``creep_fraction`` of the window's peak speed.  It ends at the first
    later sample where the deflection stops decreasing or the shortening
    speed falls below ``creep_fraction`` of its running peak.  The second condition
    covers heavily damped strokes, which creep instead of rebounding.
    """
    if sfx.size < 2:
        return 0
    rate = -np.gradient(sfx, times)
    top = rate.max()
    if top <= 0.0:
        return 0
    # round-off level motion before the impact does not start the stroke
    start = int(np.argmax(rate > creep_fraction * top))
    peak = np.maximum.accumulate(np.maximum(rate, 0.0))
    done = (rate <= creep_fraction * peak) & (np.arange(sfx.size) > start)
    end = int(np.argmax(done)) if done.any() else sfx.size - 1
    return int(np.argmin(sfx[: end + 1]))


def extract_metrics(series: TimeSeries, events: CrossingEvents,
                    energy_column: str = "E_c") -> CrossingMetrics:
    """Crossing metrics over the window [t1, t2]."""
    if not events.t2 > events.t1:
        raise MetricError("empty crossing window")
    t1, t2 = events.t1, events.t2
    _, ec = _window(series, energy_column, t1, t2)
    times, sfx = _window(series, "s_fx", t1, t2)
    _, vx = _window(series, "v_x", t1, t2)
    cdwo = float(times[_first_shortening_peak(times, sfx)] - t1)
    contact = (events.contact_end - t1) if events.contact_end is not None else t2 - t1
    return CrossingMetrics(
        delta_Ec=float(np.max(ec) - np.min(ec)),
        pitch_rate_t2=_interp(series, "theta_dot", t2),
        cdwo=max(cdwo, 0.0),
        max_longitudinal_excursion=float(np.max(np.abs(sfx))),
        min_speed=float(np.min(vx)),
        apex_height=_interp(series, "z_c", events.t3),
        contact_duration=float(contact),
    )


# --- trial orchestration ---------------------------------------------------------


def _to_series(rec: np.ndarray) -> TimeSeries:
    cols = {c: i for i, c in enumerate(K.RECORD_COLUMNS)}
    n = rec.shape[0]
    out = np.empty((n, len(SERIES_COLUMNS)))
    flags = {
        "contact_front_ground": "gap_front_ground",
        "contact_front_step": "gap_front_step",
        "contact_rear_ground": "gap_rear_ground",
        "contact_rear_step": "gap_rear_step",
    }
    for j, name in enumerate(SERIES_COLUMNS):
        if name in flags:
            out[:, j] = rec[:, cols[flags[name]]] <= 0.0
        else:
            out[:, j] = rec[:, cols[name]]
    return TimeSeries(SERIES_COLUMNS, out)


def _torque_schedule(schedule):
    if schedule is None:
        return np.zeros(0), np.zeros(0)
    pts = sorted((float(a), float(b)) for a, b in schedule)
    return np.array([p[0] for p in pts]), np.array([p[1] for p in pts])


def _flat_ground_events(series: TimeSeries, obstacle_x: float) -> CrossingEvents:
    """Degenerate zero-height step: events are the axles passing the marker."""
    t = series["t"]

    def passing(col):
        x = series[col]
        i = np.nonzero((x[:-1] < obstacle_x) & (x[1:] >= obstacle_x))[0]
        if not i.size:
            raise NoCrossingError("vehicle never reached the obstacle position")
        i = i[0]
        return t[i] + (t[i + 1] - t[i]) * (obstacle_x - x[i]) / (x[i + 1] - x[i])

    t1 = passing("x_front")
    t2 = passing("x_rear")
    return CrossingEvents(float(t1), float(t2), float(t2), "cleared", None)


def run_trial(vehicle: VehicleParams, contact: ContactParams, hO: float, vc: float, cAV: float,
              torque_schedule=None, settings: SimulationSettings | None = None,
              keep_series: bool = True) -> TrialResult:
    """Simulate one crossing of a step of height ``hO`` at speed ``vc`` with
    front longitudinal damping ``cAV`` (per wheel, N s/m).

    From t1 on the torque follows ``settings.crossing_torque``: the speed
    hold keeps running by default, or the torque is frozen at its t1 value.
    ``torque_schedule``, an optional list of ``(time after t1, torque)``
    breakpoints, overrides both.
    """
    settings = settings or SimulationSettings()
    wr = vehicle.wheel_radius
    if not 0 <= hO <= 1.5 * wr:
        raise ValueError(f"hO must lie in [0, {1.5 * wr:.4g}] m")
    if not 0 < vc <= 20:
        raise ValueError("vc must lie in (0, 20] m/s")
    if not cAV > 0:
        raise ValueError("cAV must be > 0")

    params = vehicle.with_damping(cAV)
    state = initialize_equilibrium(params, vc, contact)
    front_x0 = state.x_c + params.wheelbase - params.cog_from_rear
    obstacle = Obstacle(hO, front_x0 + wr + settings.approach_gap)
    P = pack_params(params, contact, obstacle)
    sched_t, sched_v = _torque_schedule(torque_schedule)
    if torque_schedule is not None:
        post_mode = K.MODE_CROSSING_COMMAND
    elif settings.crossing_torque == "speed-hold":
        post_mode = K.MODE_SPEED_HOLD
    else:
        post_mode = K.MODE_TORQUE_HOLD
    ctrl = np.zeros(K.N_CTRL)
    ctrl[K.C_MODE] = K.MODE_SPEED_HOLD
    ctrl[K.C_TARGET] = vc
    ctrl[K.C_POST_MODE] = post_mode
    if hO == 0.0:
        ctrl[K.C_CROSSED] = 1.0  # nothing to hit: stay in speed hold

    y = state.as_vector()
    dt = settings.dt
    chunk = max(1, int(round(settings.chunk / dt)))
    n_max = int(round(settings.horizon / dt))
    rec = np.empty((n_max, K.N_REC))
    done = 0
    failed = ""
    while done < n_max:
        n = min(chunk, n_max - done)
        k = K.advance(y, done * dt, ctrl, P, sched_t, sched_v, dt, n, rec[done:], DIVERGENCE_BOUND)
        done += k
        if k < n:
            failed = str(IntegrationError("state diverged", done * dt))
            break
        if abs(y[2]) > math.pi / 2:
            break
        if _finished(rec[:done], obstacle, settings, hO):
            break

    series = _to_series(rec[:done])
    energy_col = "E_c_chassis" if settings.chassis_only_energy else "E_c"
    result = TrialResult(hO, vc, cAV, series if keep_series else None, None, None,
                         "stalled", obstacle_x=obstacle.x)
    if failed:
        result.failed = True
        result.diagnostic = failed
        result.outcome = FAILED
        return result
    try:
        if hO == 0.0:
            events = _flat_ground_events(series, obstacle.x)
            m = extract_metrics(series, events, energy_col)
            metrics = CrossingMetrics(m.delta_Ec, m.pitch_rate_t2, 0.0, m.max_longitudinal_excursion,
                                      m.min_speed, m.apex_height, 0.0)
        else:
            events = detect_events(series, obstacle.x)
            metrics = extract_metrics(series, events, energy_col)
    except (NoCrossingError, MetricError) as exc:
        result.failed = True
        result.diagnostic = f"{type(exc).__name__}: {exc}"
        result.outcome = FAILED
        return result
    result.events = events
    result.metrics = metrics
    result.outcome = events.crossing_outcome
    return result


def _finished(rec, obstacle, settings, hO) -> bool:
    """Stop once the rear axle is past the step and the apex is post_apex old."""
    cols = K.RECORD_COLUMNS
    t = rec[:, 0]
    x_rear = rec[:, cols.index("x_rear")]
    gap = rec[:, cols.index("gap_rear_face")]
    if x_rear[-1] < obstacle.x + 2 * settings.approach_gap or gap[-1] < 0:
        return False
    # apex of z_c after the rear axle passed the face
    passed = np.nonzero(x_rear >= obstacle.x)[0]
    if not passed.size:
        return False
    z = rec[passed[0]:, cols.index("z_c")]
    t_apex = t[passed[0] + int(np.argmax(z))]
    return t[-1] - t_apex >= settings.post_apex
