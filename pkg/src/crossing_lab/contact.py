"""Penalty contact between a wheel disc and a ground/step profile.

The force law is the Adams-style IMPACT function: a nonlinear stiffness
term ``k * delta**e`` plus a damping term that is ramped in over the first
``d`` metres of penetration with a cubic STEP blend.  Friction is a
velocity-smoothed Coulomb law.

The scalar kernels (``_impact_force``, ``_friction_coefficient``,
``_probe_step`` ...) are compiled with numba so the multibody kernel can
call them; the public wrappers take and return the dataclasses below.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "ContactParams",
    "Feature",
    "ContactProbe",
    "ContactForce",
    "step_smooth",
    "impact_force",
    "friction_coefficient",
    "probe_wheel_vs_step",
    "contact_force",
]


@dataclass(frozen=True)
class ContactParams:
    """Wheel/ground penalty and friction constants, SI units.

    Defaults are the tabulated Adams values converted from the N-mm-s
    system: 1000 N/mm, 10 N.s/mm, 0.01 mm, 1500 mm/s and 4000 mm/s.
    """

    stiffness: float = 1.0e6  # N/m
    force_exponent: float = 1.1
    damping_max: float = 1.0e4  # N.s/m
    penetration_depth: float = 1.0e-5  # m
    mu_static: float = 1.0
    mu_dynamic: float = 0.95
    stiction_vel: float = 1.5  # m/s
    friction_vel: float = 4.0  # m/s

    def __post_init__(self):
        if not self.stiffness > 0:
            raise ValueError("stiffness must be > 0")
        if not self.force_exponent >= 1:
            raise ValueError("force_exponent must be >= 1")
        if not self.damping_max >= 0:
            raise ValueError("damping_max must be >= 0")
        if not self.penetration_depth > 0:
            raise ValueError("penetration_depth must be > 0")
        if not 0 <= self.mu_dynamic <= self.mu_static:
            raise ValueError("need 0 <= mu_dynamic <= mu_static")
        if not 0 < self.stiction_vel < self.friction_vel:
            raise ValueError("need 0 < stiction_vel < friction_vel")

    @classmethod
    def from_mm_units(cls, stiffness, force_exponent, damping_max, penetration_depth,
                      mu_static, mu_dynamic, stiction_vel, friction_vel):
        """Build from values expressed in N/mm, N.s/mm, mm and mm/s."""
        return cls(
            stiffness=stiffness * 1e3,
            force_exponent=force_exponent,
            damping_max=damping_max * 1e3,
            penetration_depth=penetration_depth * 1e-3,
            mu_static=mu_static,
            mu_dynamic=mu_dynamic,
            stiction_vel=stiction_vel * 1e-3,
            friction_vel=friction_vel * 1e-3,
        )


class Feature(enum.IntEnum):
    GROUND_PLANE = 0
    STEP_FACE = 1
    STEP_CORNER = 2
    STEP_TOP = 3

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", "-")


@dataclass(frozen=True)
class ContactProbe:
    separation: float  # wr1, centre to nearest surface point
    separation_rate: float
    normal: np.ndarray  # surface -> centre
    tangent: np.ndarray
    surface_point: np.ndarray
    feature: Feature


@dataclass(frozen=True)
class ContactForce:
    normal_magnitude: float
    tangential_magnitude: float
    world_force: np.ndarray
    penetration: float


# --- compiled scalar kernels -------------------------------------------------


@njit(cache=True)
def step_smooth(x, x0, h0, x1, h1):
    """Cubic STEP blend from ``h0`` at ``x0`` to ``h1`` at ``x1``.

    Clamped outside the interval, C1 with zero slope at both ends.
    ``x0 > x1`` is allowed and mirrors the blend.
    """
    if x0 == x1:
        raise ValueError("step_smooth: x0 and x1 must differ")
    u = (x - x0) / (x1 - x0)
    if u <= 0.0:
        return h0
    if u >= 1.0:
        return h1
    return h0 + (h1 - h0) * u * u * (3.0 - 2.0 * u)


@njit(cache=True)
def _impact_force(wr, wr1, wr1_dot, k, e, cmax, d):
    if wr1 > wr:
        return 0.0
    pen = wr - wr1
    f = k * pen ** e - cmax * wr1_dot * step_smooth(wr1, wr - d, 1.0, wr, 0.0)
    # no adhesion
    return f if f > 0.0 else 0.0


@njit(cache=True)
def _friction_coefficient(v, mus, mud, vst, vfr):
    if v >= vfr:
        return mud
    if v <= vst:
        # Adams blends -mus..mus over [-vst, vst]; the odd extension gives a
        # finite slope through the origin
        return step_smooth(v, -vst, -mus, vst, mus)
    return step_smooth(v, vst, mus, vfr, mud)


@njit(cache=True)
def _probe_ground(cx, cz):
    """Separation and normal to the ground line z = 0."""
    return cz, 0.0, 1.0, cx, 0.0


@njit(cache=True)
def _probe_step(cx, cz, h, ox):
    """Nearest point of the quarter-plane {x >= ox, z <= h}.

    Returns (separation, nx, nz, px, pz, feature).  A centre inside the
    block gets zero separation and the shallower escape direction.
    """
    if cx <= ox:
        if cz > h:
            dx = cx - ox
            dz = cz - h
            r = math.sqrt(dx * dx + dz * dz)
            return r, dx / r, dz / r, ox, h, 2
        return ox - cx, -1.0, 0.0, ox, cz, 1
    if cz >= h:
        return cz - h, 0.0, 1.0, cx, h, 3
    # inside the block
    if cx - ox < h - cz:
        return 0.0, -1.0, 0.0, ox, cz, 1
    return 0.0, 0.0, 1.0, cx, h, 3


@njit(cache=True)
def _segment_gap(cx, cz, h, ox):
    """Distance from a centre to the face segment x = ox, 0 <= z <= h."""
    zc = min(max(cz, 0.0), h)
    dx = cx - ox
    dz = cz - zc
    return math.sqrt(dx * dx + dz * dz)


# --- public wrappers ---------------------------------------------------------


def impact_force(wr: float, wr1: float, wr1_dot: float, p: ContactParams) -> float:
    """Normal IMPACT force magnitude (N) for separation ``wr1`` from a wheel of radius ``wr``."""
    if not wr > 0:
        raise ValueError("wheel radius must be positive")
    return float(_impact_force(wr, wr1, wr1_dot, p.stiffness, p.force_exponent,
                               p.damping_max, p.penetration_depth))


def friction_coefficient(slip_speed: float, p: ContactParams) -> float:
    if slip_speed < 0:
        raise ValueError("slip_speed must be >= 0")
    return float(_friction_coefficient(slip_speed, p.mu_static, p.mu_dynamic,
                                       p.stiction_vel, p.friction_vel))


def _make_probe(sep, nx, nz, px, pz, feature, velocity):
    n = np.array([nx, nz])
    rate = 0.0 if velocity is None else float(n @ np.asarray(velocity, dtype=float))
    return ContactProbe(
        separation=float(sep),
        separation_rate=rate,
        normal=n,
        tangent=np.array([nz, -nx]),
        surface_point=np.array([px, pz]),
        feature=Feature(feature),
    )


def probe_wheel_vs_step(center, wheel_radius: float, obstacle_height: float,
                        obstacle_x: float, velocity=None) -> list[ContactProbe]:
    """Closest-point probes of a wheel against ground and step.

    Only features within ``wheel_radius`` of the centre are returned, so the
    list holds at most one ground probe and one step probe.  ``velocity`` of
    the wheel centre, if given, fills in ``separation_rate``.
    """
    if obstacle_height < 0:
        raise ValueError("obstacle height must be >= 0")
    if not wheel_radius > 0:
        raise ValueError("wheel radius must be positive")
    cx, cz = float(center[0]), float(center[1])
    probes = []
    if cx <= obstacle_x or obstacle_height == 0.0:
        sep, nx, nz, px, pz = _probe_ground(cx, cz)
        if sep <= wheel_radius:
            probes.append(_make_probe(sep, nx, nz, px, pz, Feature.GROUND_PLANE, velocity))
    if obstacle_height > 0.0:
        sep, nx, nz, px, pz, feat = _probe_step(cx, cz, obstacle_height, obstacle_x)
        if sep <= wheel_radius:
            probes.append(_make_probe(sep, nx, nz, px, pz, feat, velocity))
    return probes


def contact_force(probe: ContactProbe, wheel_radius: float, contact_point_velocity,
                  p: ContactParams) -> ContactForce:
    """Normal + friction force on the wheel for one probe."""
    n = np.asarray(probe.normal, dtype=float)
    t = np.asarray(probe.tangent, dtype=float)
    if probe.separation > wheel_radius:
        return ContactForce(0.0, 0.0, np.zeros(2), 0.0)
    fn = impact_force(wheel_radius, probe.separation, probe.separation_rate, p)
    slip = float(t @ np.asarray(contact_point_velocity, dtype=float))
    ft = -math.copysign(1.0, slip) * friction_coefficient(abs(slip), p) * fn if slip != 0 else 0.0
    return ContactForce(
        normal_magnitude=fn,
        tangential_magnitude=ft,
        world_force=n * fn + t * ft,
        penetration=wheel_radius - probe.separation,
    )
