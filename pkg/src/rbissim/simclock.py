"""Simulated device clocks over an integer-nanosecond time base.

All timestamps are plain Python ints (nanoseconds since the scenario epoch).
Drift arithmetic uses exact rational math (``fractions.Fraction``), so long
runs never accumulate float error and golden values are stable across
platforms. Quantization is floor, matching hardware counters that truncate.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from fractions import Fraction
from random import Random
from typing import Union

SimTime = int        # ns since the scenario epoch
SimDuration = int    # signed ns

NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000

PPM = 10**6

# Sanity bound for oscillator quality; crystal oscillators in consumer gear
# sit well inside +/-1000 ppm.
DEFAULT_MAX_ABS_DRIFT_PPM = 1000


class ClockConfigError(ValueError):
    """Raised for clock or jitter parameters outside their valid domain."""


def quantize(value: Union[int, Fraction], granularity: int) -> int:
    """Floor ``value`` (ns, int or Fraction) to a multiple of ``granularity``."""
    if granularity < 1:
        raise ClockConfigError(f"granularity must be >= 1 ns, got {granularity}")
    return int(value // granularity) * granularity


@dataclass(frozen=True)
class JitterSpec:
    """Distribution of a timestamping/delay perturbation, in integer ns.

    ``kind`` is one of ``none``, ``uniform`` or ``normal``. Uniform draws are
    integers in [lo, hi]; normal draws are rounded to ns and resampled until
    they fall within mean +/- 4 sigma, which keeps every draw hard-bounded.
    """

    kind: str = "none"
    lo: SimDuration = 0
    hi: SimDuration = 0
    mean: SimDuration = 0
    sigma: SimDuration = 0

    def __post_init__(self) -> None:
        if self.kind not in ("none", "uniform", "normal"):
            raise ClockConfigError(f"unknown jitter kind {self.kind!r}")
        if self.kind == "uniform" and self.lo > self.hi:
            raise ClockConfigError(f"uniform jitter needs lo <= hi, got [{self.lo}, {self.hi}]")
        if self.kind == "normal" and self.sigma < 0:
            raise ClockConfigError(f"normal jitter needs sigma >= 0, got {self.sigma}")

    @classmethod
    def none(cls) -> "JitterSpec":
        return cls(kind="none")

    @classmethod
    def uniform(cls, lo: SimDuration, hi: SimDuration) -> "JitterSpec":
        return cls(kind="uniform", lo=lo, hi=hi)

    @classmethod
    def normal(cls, mean: SimDuration, sigma: SimDuration) -> "JitterSpec":
        return cls(kind="normal", mean=mean, sigma=sigma)

    def support(self) -> tuple[SimDuration, SimDuration]:
        """Hard bounds every sample is guaranteed to stay within."""
        if self.kind == "none":
            return (0, 0)
        if self.kind == "uniform":
            return (self.lo, self.hi)
        return (self.mean - 4 * self.sigma, self.mean + 4 * self.sigma)


def jitter_sample(spec: JitterSpec, rng: Random) -> SimDuration:
    """Draw one perturbation; deterministic given the rng state."""
    if spec.kind == "none":
        return 0
    if spec.kind == "uniform":
        return rng.randint(spec.lo, spec.hi)
    if spec.sigma == 0:
        return spec.mean
    bound = 4 * spec.sigma
    while True:
        x = rng.gauss(spec.mean, spec.sigma)
        if abs(x - spec.mean) <= bound:
            return round(x)


def _as_ppm_fraction(value: Union[int, float, str, Fraction]) -> Fraction:
    # Route floats through str() so e.g. 10.5 ppm means exactly 21/2.
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(str(value))
    return Fraction(value)


@dataclass(frozen=True)
class ClockModel:
    """A local clock: fixed offset, linear drift, floor quantization, read jitter.

    ``drift_ppm`` is held as an exact rational; +10 ppm means the clock gains
    10 us per second of true time. The sync layer never steps this clock;
    corrections live in station state, and every reading is computed on
    demand from true time.
    """

    initial_offset: SimDuration = 0
    drift_ppm: Fraction = Fraction(0)
    granularity: SimDuration = 1
    read_jitter: JitterSpec = JitterSpec.none()
    max_abs_drift_ppm: int = DEFAULT_MAX_ABS_DRIFT_PPM

    def __post_init__(self) -> None:
        object.__setattr__(self, "drift_ppm", _as_ppm_fraction(self.drift_ppm))
        if self.granularity < 1:
            raise ClockConfigError(f"granularity must be >= 1 ns, got {self.granularity}")
        if abs(self.drift_ppm) > self.max_abs_drift_ppm:
            raise ClockConfigError(
                f"|drift_ppm| = {self.drift_ppm} exceeds sanity bound {self.max_abs_drift_ppm}"
            )

    @classmethod
    def ideal(cls) -> "ClockModel":
        return cls()

    def rate(self) -> Fraction:
        return 1 + self.drift_ppm / PPM


def clock_value_exact(model: ClockModel, true_time: SimTime) -> Fraction:
    """Noise-free clock value before quantization, as an exact rational."""
    return model.initial_offset + true_time + true_time * model.drift_ppm / PPM


def clock_read(model: ClockModel, true_time: SimTime, rng: Random) -> SimTime:
    """Read the clock at ``true_time``: offset + drift + jitter, floored."""
    if true_time < 0:
        raise ValueError(f"true_time must be >= 0, got {true_time}")
    value = clock_value_exact(model, true_time) + jitter_sample(model.read_jitter, rng)
    return quantize(value, model.granularity)


def invert_clock_value(model: ClockModel, reading: SimTime) -> SimTime:
    """True time at which the noise-free clock value reaches ``reading``.

    Exact rational inverse of the offset+drift map, floored to ns. Jitter and
    quantization are ignored; callers use this to convert a local-clock
    deadline into a true-time instant.
    """
    return int((reading - model.initial_offset) / model.rate())


def derive_rng(master_seed: int, label: str) -> Random:
    """Independent deterministic stream for one (node, purpose) label.

    Streams are keyed by label rather than draw order, so adding a node to a
    scenario never perturbs another node's sequence.
    """
    digest = hashlib.sha256(f"{master_seed}:{label}".encode("utf-8")).digest()
    return Random(int.from_bytes(digest[:8], "little"))


def derive_seed(master_seed: int, label: str) -> int:
    """Child integer seed for a named sub-run (used by parameter sweeps)."""
    digest = hashlib.sha256(f"{master_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
