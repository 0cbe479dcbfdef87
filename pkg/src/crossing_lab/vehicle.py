"""Planar 4WD vehicle with a 2-DoF front suspension.

The chassis moves in the sagittal plane (x forward, z up, pitch positive
nose-up).  The front axle rides on a suspension that lets the wheel move
both longitudinally and vertically relative to the chassis; the rear axle
only moves vertically.  Left and right wheels of an axle are merged into a
single body, so per-wheel stiffness, damping and contact constants are
multiplied by ``wheels_per_axle`` when the model is assembled.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import _kernel as K
from .contact import ContactParams

GRAVITY = 9.81

#: any state component above this magnitude is treated as divergence
DIVERGENCE_BOUND = 1.0e5
#: largest step the defaults are stable at (contact and damper limits)
DT_MAX = 1.0e-4
#: wheel-centre travel per unit of longitudinal mechanism stroke
LEVER_RATIO = 8.0 / 3.0

__all__ = [
    "GRAVITY",
    "DT_MAX",
    "LEVER_RATIO",
    "IntegrationError",
    "ConfigurationError",
    "VehicleParams",
    "Obstacle",
    "VehicleState",
    "ControllerState",
    "Assembly",
    "pack_params",
    "assemble_forces",
    "integrate_step",
    "run_speed_hold",
    "RECORD_COLUMNS",
    "speed_controller_step",
    "initialize_equilibrium",
    "kinetic_energy",
    "mechanical_energy",
]


class IntegrationError(RuntimeError):
    """Raised when the state becomes non-finite or leaves the divergence bound."""

    def __init__(self, message, time=None):
        super().__init__(message if time is None else f"{message} (t = {time:.6g} s)")
        self.time = time


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class VehicleParams:
    """Mass, geometry and actuator data for one vehicle configuration.

    Only ``wheel_radius``, ``z_cog`` and the 2.26 N/mm suspension spring come
    from the reference vehicle; the remaining defaults describe a generic
    RC-scale 4WD with hub-motor wheels and are engineering choices.  Spring
    and damper values are per wheel, torques per axle.
    """

    chassis_mass: float = 12.0  # kg
    chassis_pitch_inertia: float = 0.4  # kg m^2
    axle_mass: float = 3.0  # kg, both wheels + hub motors of one axle
    wheel_spin_inertia: float = 0.0025  # kg m^2 per axle
    wheel_radius: float = 0.0745  # m
    wheelbase: float = 0.50  # m
    cog_from_rear: float = 0.25  # m, longitudinal CoG position
    z_cog: float = 0.13  # m, static CoG height
    susp_stiffness: float = 2260.0  # N/m
    susp_vertical_damping: float = 250.0  # N s/m, about 1.5x critical for the sprung share
    front_longitudinal_damping: float = 1600.0  # N s/m (c_AV)
    stroke_limit: float = 0.05  # m, longitudinal wheel-centre travel +- before the end stop
    vertical_stroke_limit: float = 0.07  # m, vertical +-
    endstop_stiffness: float = 2.0e5  # N/m
    endstop_damping: float = 2000.0  # N s/m
    torque_limits: tuple[float, float] = (-6.0, 6.0)  # N m per axle
    speed_gain_p: float = 4.0  # N m per m/s
    speed_gain_i: float = 20.0  # N m per m
    speed_feedback: str = "wheel"  # "wheel" rim speed or "chassis" velocity
    wheels_per_axle: int = 2
    gravity: float = GRAVITY

    def __post_init__(self):
        object.__setattr__(self, "torque_limits", tuple(float(v) for v in self.torque_limits))
        positive = ("chassis_mass", "chassis_pitch_inertia", "axle_mass", "wheel_spin_inertia",
                    "wheel_radius", "wheelbase", "z_cog", "susp_stiffness", "stroke_limit",
                    "vertical_stroke_limit", "endstop_stiffness", "gravity")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"vehicle.{name} must be > 0")
        if not 0 < self.cog_from_rear < self.wheelbase:
            raise ConfigurationError("vehicle.cog_from_rear must lie between the axles")
        if not self.front_longitudinal_damping > 0:
            raise ConfigurationError("vehicle.front_longitudinal_damping must be > 0")
        if self.susp_vertical_damping < 0 or self.endstop_damping < 0:
            raise ConfigurationError("damping must be >= 0")
        lo, hi = self.torque_limits
        if lo > hi:
            raise ConfigurationError("vehicle.torque_limits must satisfy min <= max")
        if self.speed_feedback not in ("wheel", "chassis"):
            raise ConfigurationError("vehicle.speed_feedback must be 'wheel' or 'chassis'")
        if self.wheels_per_axle < 1:
            raise ConfigurationError("vehicle.wheels_per_axle must be >= 1")

    @property
    def mechanism_stroke(self) -> float:
        """Longitudinal mechanism stroke whose lever output is ``stroke_limit``, m."""
        return self.stroke_limit / LEVER_RATIO

    @property
    def total_mass(self) -> float:
        return self.chassis_mass + 2 * self.axle_mass

    def static_compression(self, axle: str) -> float:
        """Spring compression carrying the chassis share of one axle."""
        share = self.cog_from_rear / self.wheelbase
        if axle == "rear":
            share = 1.0 - share
        return self.chassis_mass * self.gravity * share / (self.wheels_per_axle * self.susp_stiffness)

    def with_damping(self, c_av: float) -> VehicleParams:
        return dataclasses.replace(self, front_longitudinal_damping=c_av)


@dataclass(frozen=True)
class Obstacle:
    """Rectangular step of ``height`` whose face sits at ``x``."""

    height: float
    x: float

    def __post_init__(self):
        if self.height < 0:
            raise ConfigurationError("obstacle height must be >= 0")


#: column names of the per-step record arrays
RECORD_COLUMNS = K.RECORD_COLUMNS

#: an obstacle that is never reached
NO_OBSTACLE = Obstacle(0.0, 1.0e9)


@dataclass
class VehicleState:
    x_c: float = 0.0
    z_c: float = 0.0
    theta: float = 0.0
    s_fx: float = 0.0
    s_fz: float = 0.0
    s_rz: float = 0.0
    phi_f: float = 0.0
    phi_r: float = 0.0
    v_x: float = 0.0
    v_z: float = 0.0
    theta_dot: float = 0.0
    s_fx_dot: float = 0.0
    s_fz_dot: float = 0.0
    s_rz_dot: float = 0.0
    omega_f: float = 0.0
    omega_r: float = 0.0
    t: float = 0.0

    _ORDER = ("x_c", "z_c", "theta", "s_fx", "s_fz", "s_rz", "phi_f", "phi_r",
              "v_x", "v_z", "theta_dot", "s_fx_dot", "s_fz_dot", "s_rz_dot", "omega_f", "omega_r")

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self._ORDER], dtype=np.float64)

    @classmethod
    def from_vector(cls, y, t=0.0) -> VehicleState:
        return cls(**{n: float(v) for n, v in zip(cls._ORDER, y)}, t=float(t))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.as_vector()))) and math.isfinite(self.t)


@dataclass
class ControllerState:
    target_speed: float
    integral_error: float = 0.0  # m
    commanded_torque: float = 0.0  # N m per axle
    mode: str = "speed-hold"

    MODES = ("speed-hold", "torque-hold", "crossing-command")

    def __post_init__(self):
        if self.mode not in self.MODES:
            raise ValueError(f"unknown controller mode {self.mode!r}")


@dataclass(frozen=True)
class Assembly:
    """Equations of motion evaluated at one state: ``mass_matrix @ qdd = forces``."""

    mass_matrix: np.ndarray
    forces: np.ndarray  # generalised forces incl. velocity-product terms
    contact_front: np.ndarray  # world contact force on the front axle, N
    contact_rear: np.ndarray
    suspension: np.ndarray  # (front longitudinal, front vertical, rear vertical), N
    kinetic_energy: float
    kinetic_energy_chassis: float
    potential_energy: float
    gaps: dict = field(default_factory=dict)  # separation minus radius per probe


def pack_params(params: VehicleParams, contact: ContactParams, obstacle: Obstacle) -> np.ndarray:
    """Flatten the configuration into the kernel's parameter vector (per-axle units)."""
    n = params.wheels_per_axle
    P = np.zeros(K.N_PARAMS)
    P[K.P_MC] = params.chassis_mass
    P[K.P_IC] = params.chassis_pitch_inertia
    P[K.P_MA] = params.axle_mass
    P[K.P_JW] = params.wheel_spin_inertia
    P[K.P_WR] = params.wheel_radius
    P[K.P_AF] = params.wheelbase - params.cog_from_rear
    P[K.P_AR] = params.cog_from_rear
    P[K.P_HF] = params.z_cog - params.wheel_radius + params.static_compression("front")
    P[K.P_HR] = params.z_cog - params.wheel_radius + params.static_compression("rear")
    P[K.P_KS] = n * params.susp_stiffness
    P[K.P_CV] = n * params.susp_vertical_damping
    P[K.P_CAV] = n * params.front_longitudinal_damping
    P[K.P_DL] = params.stroke_limit
    P[K.P_DLV] = params.vertical_stroke_limit
    P[K.P_KEND] = n * params.endstop_stiffness
    P[K.P_CEND] = n * params.endstop_damping
    P[K.P_G] = params.gravity
    P[K.P_KC] = n * contact.stiffness
    P[K.P_EC] = contact.force_exponent
    P[K.P_CMAX] = n * contact.damping_max
    P[K.P_DPEN] = contact.penetration_depth
    P[K.P_MUS] = contact.mu_static
    P[K.P_MUD] = contact.mu_dynamic
    P[K.P_VST] = contact.stiction_vel
    P[K.P_VFR] = contact.friction_vel
    P[K.P_HO] = obstacle.height
    P[K.P_OX] = obstacle.x
    P[K.P_TMIN], P[K.P_TMAX] = params.torque_limits
    P[K.P_KP] = params.speed_gain_p
    P[K.P_KI] = params.speed_gain_i
    P[K.P_FB] = 1.0 if params.speed_feedback == "wheel" else 0.0
    return P


def assemble_forces(state: VehicleState, params: VehicleParams, contact: ContactParams,
                    obstacle: Obstacle = NO_OBSTACLE, torque: float = 0.0) -> Assembly:
    """Mass matrix, generalised forces and force breakdown at ``state``."""
    if not state.is_finite():
        raise IntegrationError("non-finite state", state.t)
    P = pack_params(params, contact, obstacle)
    M, Q, d = K.generalized_system(state.as_vector(), float(torque), P)
    return Assembly(
        mass_matrix=M,
        forces=Q,
        contact_front=np.array([d[K.D_FCX_F], d[K.D_FCZ_F]]),
        contact_rear=np.array([d[K.D_FCX_R], d[K.D_FCZ_R]]),
        suspension=np.array([d[K.D_FS_X], d[K.D_FS_ZF], d[K.D_FS_ZR]]),
        kinetic_energy=float(d[K.D_KE]),
        kinetic_energy_chassis=float(d[K.D_KE_CHASSIS]),
        potential_energy=float(d[K.D_PE]),
        gaps={
            "front_step": float(d[K.D_GAP_FS]),
            "front_ground": float(d[K.D_GAP_FG]),
            "rear_step": float(d[K.D_GAP_RS]),
            "rear_ground": float(d[K.D_GAP_RG]),
        },
    )


def kinetic_energy(state, params, contact=None, obstacle=NO_OBSTACLE) -> float:
    """Total kinetic energy, translation + pitch + wheel spin, all bodies."""
    return assemble_forces(state, params, contact or ContactParams(), obstacle).kinetic_energy


def mechanical_energy(state, params, contact=None, obstacle=NO_OBSTACLE) -> float:
    a = assemble_forces(state, params, contact or ContactParams(), obstacle)
    return a.kinetic_energy + a.potential_energy


_MODE_CODES = {"speed-hold": K.MODE_SPEED_HOLD, "torque-hold": K.MODE_TORQUE_HOLD,
               "crossing-command": K.MODE_CROSSING_COMMAND}


def integrate_step(state: VehicleState, dt: float, params: VehicleParams,
                   contact: ContactParams, obstacle: Obstacle = NO_OBSTACLE,
                   torque: float = 0.0, n_steps: int = 1) -> VehicleState:
    """Advance ``n_steps`` semi-implicit Euler steps of size ``dt`` at fixed torque.

    Bit-for-bit deterministic.  Raises :class:`IntegrationError` on divergence.
    """
    if not 0 < dt <= DT_MAX:
        raise ValueError(f"dt must lie in (0, {DT_MAX}]")
    P = pack_params(params, contact, obstacle)
    # freeze torque: torque-hold mode never runs the PI law
    ctrl = np.array([K.MODE_TORQUE_HOLD, 0.0, 0.0, torque, 1.0, 0.0, K.MODE_TORQUE_HOLD])
    y = state.as_vector()
    rec = np.empty((n_steps, K.N_REC))
    empty = np.zeros(0)
    done = K.advance(y, state.t, ctrl, P, empty, empty, dt, n_steps, rec, DIVERGENCE_BOUND)
    t = state.t + done * dt
    if done < n_steps or not np.all(np.isfinite(y)):
        raise IntegrationError("state diverged", t)
    return VehicleState.from_vector(y, t)


def speed_controller_step(ctrl: ControllerState, measured_speed: float, dt: float,
                          limits: tuple[float, float], gains: tuple[float, float] = (4.0, 20.0)
                          ) -> ControllerState:
    """One PI update of the approach-phase speed hold.

    Outside ``speed-hold`` mode the commanded torque passes through, clamped
    to ``limits``.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    P = np.zeros(K.N_PARAMS)
    P[K.P_TMIN], P[K.P_TMAX] = limits
    P[K.P_KP], P[K.P_KI] = gains
    arr = np.array([_MODE_CODES[ctrl.mode], ctrl.target_speed, ctrl.integral_error,
                    ctrl.commanded_torque, 0.0, 0.0, _MODE_CODES[ctrl.mode]])
    K._controller(arr, float(measured_speed), float(dt), P)
    tau = min(max(arr[K.C_TAU], limits[0]), limits[1])
    return ControllerState(ctrl.target_speed, float(arr[K.C_INTEGRAL]), float(tau), ctrl.mode)


def run_speed_hold(state: VehicleState, target_speed: float, duration: float,
                   params: VehicleParams, contact: ContactParams,
                   obstacle: Obstacle = NO_OBSTACLE, dt: float = 2.0e-5,
                   ctrl: ControllerState | None = None):
    """Drive on the PI speed hold for ``duration`` seconds.

    Returns the final state, the final controller state and a record array
    whose columns follow ``RECORD_COLUMNS`` (one row per step).  The hold
    stays on through any obstacle contact.
    """
    if not 0 < dt <= DT_MAX:
        raise ValueError(f"dt must lie in (0, {DT_MAX}]")
    ctrl = ctrl or ControllerState(target_speed)
    P = pack_params(params, contact, obstacle)
    arr = np.array([K.MODE_SPEED_HOLD, target_speed, ctrl.integral_error, ctrl.commanded_torque,
                    1.0, 0.0, K.MODE_SPEED_HOLD])
    n = int(round(duration / dt))
    y = state.as_vector()
    rec = np.empty((n, K.N_REC))
    empty = np.zeros(0)
    done = K.advance(y, state.t, arr, P, empty, empty, dt, n, rec, DIVERGENCE_BOUND)
    t = state.t + done * dt
    if done < n:
        raise IntegrationError("state diverged", t)
    out_ctrl = ControllerState(target_speed, float(arr[K.C_INTEGRAL]), float(arr[K.C_TAU]))
    return VehicleState.from_vector(y, t), out_ctrl, rec


def _static_residual(x, y0, P):
    y = y0.copy()
    y[1:6] = x
    M, Q, d = K.generalized_system(y, 0.0, P)
    return Q[1:6]


def initialize_equilibrium(params: VehicleParams, target_speed: float,
                           contact: ContactParams | None = None, x_c: float = 0.0) -> VehicleState:
    """Rolling state on flat ground with the suspensions in static balance.

    The chassis moves at ``target_speed`` and both axles spin at the
    rolling-without-slipping rate ``v / wheel_radius``.
    """
    contact = contact or ContactParams()
    P = pack_params(params, contact, NO_OBSTACLE)
    wr = params.wheel_radius
    omega = target_speed / wr
    y0 = np.zeros(2 * K.NQ)
    y0[0] = x_c
    y0[K.NQ] = target_speed
    y0[K.NQ + 6] = omega
    y0[K.NQ + 7] = omega
    # seed with the flat-ground penetration so every wheel starts in contact
    n = params.wheels_per_axle
    load = params.total_mass * params.gravity / 2.0
    pen = (load / (n * contact.stiffness)) ** (1.0 / contact.force_exponent)
    guess = np.array([params.z_cog - pen, 0.0, 0.0,
                      params.static_compression("front"), params.static_compression("rear")])
    sol = optimize.root(_static_residual, guess, args=(y0, P), method="hybr",
                        options={"xtol": 1e-14})
    x = sol.x
    # Newton polish with a central-difference Jacobian
    for _ in range(8):
        r = _static_residual(x, y0, P)
        if np.max(np.abs(r)) < 1e-9:
            break
        Jm = np.empty((5, 5))
        for j in range(5):
            h = 1e-9
            xp = x.copy()
            xm = x.copy()
            xp[j] += h
            xm[j] -= h
            Jm[:, j] = (_static_residual(xp, y0, P) - _static_residual(xm, y0, P)) / (2 * h)
        x = x - np.linalg.solve(Jm, r)
    r = _static_residual(x, y0, P)
    if np.max(np.abs(r)) > 1e-6:
        raise ConfigurationError(f"no static equilibrium found (residual {np.max(np.abs(r)):.3g} N)")
    if abs(x[2]) > params.stroke_limit or max(abs(x[3]), abs(x[4])) > params.vertical_stroke_limit:
        raise ConfigurationError("static equilibrium lies outside the suspension strokes")
    y0[1:6] = x
    return VehicleState.from_vector(y0, 0.0)
