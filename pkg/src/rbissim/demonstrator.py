"""Two-carriage linear-axis model: trapezoidal motion and position deltas.

Each carriage runs the same point-to-point move, triggered when its station's
estimated network clock crosses the scheduled instant. Any residual sync
error between the two stations skews the triggers, and during the constant-
velocity phase the position gap is exactly cruise speed times trigger skew,
which is what makes the mechanical offset a readable proxy for clock error.

Kinematics are float SI units (meters, seconds); conversions from the ns
time base happen at this module's boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from random import Random
from typing import Optional

from .simclock import NS_PER_S, SimTime

NS = 1.0e-9


class MotionError(ValueError):
    pass


@dataclass(frozen=True)
class MotionProfile:
    p1: float            # start position, m
    p2: float            # end position, m
    v_max: float         # m/s
    a_max: float         # m/s^2

    def __post_init__(self) -> None:
        if self.v_max <= 0 or self.a_max <= 0:
            raise MotionError(f"v_max and a_max must be positive, got {self.v_max}, {self.a_max}")

    @property
    def distance(self) -> float:
        return abs(self.p2 - self.p1)

    @property
    def direction(self) -> float:
        return 1.0 if self.p2 >= self.p1 else -1.0

    def phases(self) -> tuple[float, float, float]:
        """(accel time, cruise time, peak speed). Short moves never reach
        v_max and degenerate to a triangular profile with zero cruise."""
        d = self.distance
        t_acc = self.v_max / self.a_max
        if self.a_max * t_acc * t_acc <= d:  # ramp up + down fits inside d
            t_cruise = (d - self.a_max * t_acc * t_acc) / self.v_max
            return t_acc, t_cruise, self.v_max
        t_acc = math.sqrt(d / self.a_max)
        return t_acc, 0.0, self.a_max * t_acc

    @property
    def total_time(self) -> float:
        t_acc, t_cruise, _ = self.phases()
        return 2.0 * t_acc + t_cruise

    def cruise_window(self) -> tuple[float, float]:
        t_acc, t_cruise, _ = self.phases()
        return t_acc, t_acc + t_cruise


def motion_position(profile: MotionProfile, dt: float) -> float:
    """Position dt seconds after the trigger; clamps to the endpoints."""
    if dt < 0:
        raise MotionError(f"dt must be >= 0, got {dt}")
    t_acc, t_cruise, v_peak = profile.phases()
    a = profile.a_max
    if dt <= t_acc:
        s = 0.5 * a * dt * dt
    elif dt <= t_acc + t_cruise:
        s = 0.5 * a * t_acc * t_acc + v_peak * (dt - t_acc)
    elif dt <= 2.0 * t_acc + t_cruise:
        remaining = 2.0 * t_acc + t_cruise - dt
        s = profile.distance - 0.5 * a * remaining * remaining
    else:
        s = profile.distance
    return profile.p1 + profile.direction * s


@dataclass(frozen=True)
class SensorModel:
    """Axis position sensing: position-dependent noise band, optional ADC grid.

    The noise bound interpolates linearly from ``noise_lo_m`` at ``axis_min_m``
    to ``noise_hi_m`` at ``axis_max_m`` (the high-precision mode's filtered
    resolution band). When ``adc_bits`` is set, readings additionally snap to
    a 2^bits grid over the axis span.
    """

    axis_min_m: float = 0.0
    axis_max_m: float = 2.0
    noise_lo_m: float = 3.0e-6
    noise_hi_m: float = 63.0e-6
    adc_bits: Optional[int] = None

    def resolution_at(self, pos: float) -> float:
        span = self.axis_max_m - self.axis_min_m
        if span <= 0:
            return self.noise_lo_m
        frac = min(1.0, max(0.0, (pos - self.axis_min_m) / span))
        return self.noise_lo_m + frac * (self.noise_hi_m - self.noise_lo_m)

    def quantum(self) -> float:
        if self.adc_bits is None:
            return 0.0
        return (self.axis_max_m - self.axis_min_m) / (2**self.adc_bits)

    def read(self, true_pos: float, rng: Random) -> float:
        res = self.resolution_at(true_pos)
        reading = true_pos + rng.uniform(-res, res)
        q = self.quantum()
        if q > 0:
            reading = self.axis_min_m + round((reading - self.axis_min_m) / q) * q
        return reading


@dataclass(frozen=True)
class CarriageRun:
    profile: MotionProfile
    trigger_true_time: SimTime   # ns

    def position_at(self, t_ns: SimTime) -> float:
        if t_ns < self.trigger_true_time:
            return self.profile.p1
        return motion_position(self.profile, (t_ns - self.trigger_true_time) * NS)


def delta_s(
    run1: CarriageRun,
    run2: CarriageRun,
    t_ns: SimTime,
    sensor: Optional[SensorModel] = None,
    rng: Optional[Random] = None,
) -> float:
    """Signed position gap s1(t) - s2(t), optionally through the sensor model."""
    s1 = run1.position_at(t_ns)
    s2 = run2.position_at(t_ns)
    if sensor is not None:
        if rng is None:
            raise MotionError("sensor noise requires an rng")
        s1 = sensor.read(s1, rng)
        s2 = sensor.read(s2, rng)
    return s1 - s2


def infer_time_offset(delta_s_max: float, v_max: float) -> float:
    """Trigger skew (s) recoverable from a peak position gap at cruise speed."""
    if v_max <= 0:
        raise MotionError(f"v_max must be positive, got {v_max}")
    return delta_s_max / v_max


def sample_run_pair(
    run1: CarriageRun,
    run2: CarriageRun,
    sample_dt_ns: int,
    sensor: Optional[SensorModel] = None,
    rng: Optional[Random] = None,
) -> list[tuple[SimTime, float, float, float]]:
    """Sample both runs on a shared grid from first trigger to last stop.

    Returns (t_ns, s1, s2, delta) rows; the grid covers the whole overlap so
    the cruise-phase plateau (where |delta| peaks) is always sampled.
    """
    if sample_dt_ns <= 0:
        raise MotionError(f"sample_dt_ns must be positive, got {sample_dt_ns}")
    start = min(run1.trigger_true_time, run2.trigger_true_time)
    end = max(
        run1.trigger_true_time + round(run1.profile.total_time * NS_PER_S),
        run2.trigger_true_time + round(run2.profile.total_time * NS_PER_S),
    )
    rows = []
    t = start
    while t <= end + sample_dt_ns:
        s1 = run1.position_at(t)
        s2 = run2.position_at(t)
        if sensor is not None:
            if rng is None:
                raise MotionError("sensor noise requires an rng")
            s1 = sensor.read(s1, rng)
            s2 = sensor.read(s2, rng)
        rows.append((t, s1, s2, s1 - s2))
        t += sample_dt_ns
    return rows


def positions_csv(rows: list[tuple[SimTime, float, float, float]]) -> str:
    lines = ["t_ns,s1_m,s2_m,delta_m"]
    for t, s1, s2, d in rows:
        lines.append(f"{t},{s1!r},{s2!r},{d!r}")
    return "\n".join(lines) + "\n"
