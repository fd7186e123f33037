"""Kinematic bicycle model with yaw-rate control, and finite-difference chains.

The forward model advances position with the pre-update speed and heading,
then integrates heading and speed. Because every update is explicit it can
be inverted exactly, which is what expert-action extraction relies on.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError, InsufficientHistory
from .geometry import wrap_angle

ACCEL_MIN = -10.0
ACCEL_MAX = 8.0
YAW_RATE_MAX = 1.0
DT = 0.1
# rounding slack before an extracted action counts as clipped
CLIP_TOL = 1e-9


@dataclass(frozen=True)
class KinState:
    x: float
    y: float
    yaw: float
    v: float


@dataclass(frozen=True)
class Action:
    accel: float
    yaw_rate: float
    clipped: bool = field(default=False, compare=False)

    def as_array(self):
        return np.array([self.accel, self.yaw_rate])


def in_bounds(accel, yaw_rate):
    return ACCEL_MIN <= accel <= ACCEL_MAX and -YAW_RATE_MAX <= yaw_rate <= YAW_RATE_MAX


def clip_action(accel, yaw_rate):
    return (float(np.clip(accel, ACCEL_MIN, ACCEL_MAX)),
            float(np.clip(yaw_rate, -YAW_RATE_MAX, YAW_RATE_MAX)))


def forward_step(s: KinState, a: Action, dt: float = DT) -> KinState:
    if not in_bounds(a.accel, a.yaw_rate):
        raise BoundsError(f"action ({a.accel}, {a.yaw_rate}) outside the action space")
    return KinState(
        x=s.x + s.v * np.cos(s.yaw) * dt,
        y=s.y + s.v * np.sin(s.yaw) * dt,
        yaw=float(wrap_angle(s.yaw + a.yaw_rate * dt)),
        v=max(0.0, s.v + a.accel * dt),
    )


def inverse_action(s: KinState, s_next: KinState, dt: float = DT) -> Action:
    accel = (s_next.v - s.v) / dt
    yaw_rate = float(wrap_angle(s_next.yaw - s.yaw)) / dt
    ca, cy = clip_action(accel, yaw_rate)
    return Action(ca, cy, clipped=(abs(ca - accel) > CLIP_TOL or abs(cy - yaw_rate) > CLIP_TOL))


def simulate(s0: KinState, actions, dt: float = DT):
    """Roll an (n, 2) action array forward; returns an (n + 1, 4) state array."""
    states = [s0]
    for accel, yaw_rate in np.asarray(actions, dtype=float):
        states.append(forward_step(states[-1], Action(accel, yaw_rate), dt))
    return np.array([[s.x, s.y, s.yaw, s.v] for s in states])


def inverse_actions(yaw, speed, dt: float = DT):
    """Vectorized inverse_action over a state sequence.

    Returns ((n - 1, 2) actions, (n - 1,) clipped flags).
    """
    yaw = np.asarray(yaw, dtype=float)
    speed = np.asarray(speed, dtype=float)
    accel = np.diff(speed) / dt
    yaw_rate = wrap_angle(np.diff(yaw)) / dt
    ca = np.clip(accel, ACCEL_MIN, ACCEL_MAX)
    cy = np.clip(yaw_rate, -YAW_RATE_MAX, YAW_RATE_MAX)
    return np.stack([ca, cy], axis=1), (np.abs(ca - accel) > CLIP_TOL) | (np.abs(cy - yaw_rate) > CLIP_TOL)


@dataclass
class KinematicChain:
    """Per-timestep derivatives; NaN marks slots lacking history."""

    speed: np.ndarray
    accel: np.ndarray
    jerk: np.ndarray
    yaw_rate: np.ndarray
    yaw_accel: np.ndarray

    @property
    def defined(self):
        return ~(np.isnan(self.jerk) | np.isnan(self.yaw_accel))


def kinematic_chain(speed, yaw, dt: float = DT, valid=None) -> KinematicChain:
    speed = np.asarray(speed, dtype=float)
    yaw = np.asarray(yaw, dtype=float)
    n = len(speed)
    if n < 3:
        raise InsufficientHistory(f"need at least 3 timesteps, got {n}")
    valid = np.ones(n, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)

    pair = np.zeros(n, dtype=bool)
    pair[1:] = valid[1:] & valid[:-1]
    accel = np.full(n, np.nan)
    yaw_rate = np.full(n, np.nan)
    accel[1:] = np.diff(speed) / dt
    # consecutive-difference wrapping is the same as differencing the unwrapped yaw
    yaw_rate[1:] = wrap_angle(np.diff(yaw)) / dt
    accel[~pair] = np.nan
    yaw_rate[~pair] = np.nan

    jerk = np.full(n, np.nan)
    yaw_accel = np.full(n, np.nan)
    jerk[1:] = np.diff(accel) / dt
    yaw_accel[1:] = np.diff(yaw_rate) / dt
    return KinematicChain(speed.copy(), accel, jerk, yaw_rate, yaw_accel)
