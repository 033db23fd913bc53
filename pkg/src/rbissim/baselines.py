"""Comparison synchronization methods: wired gPTP and PTP carried over Wi-Fi.

Both baselines are modeled as one two-way timestamp exchange per sync
interval against an ideal grandmaster; full 802.1AS/1588 state machines
(BMCA, pdelay, servos) are out of scope. The offset estimator is the
standard two-way formula, whose error is exactly half the forward/backward
delay asymmetry of that exchange. On a wire the delays are constant and the
residual error is timestamping noise; over a contended wireless channel each
direction draws an independent access delay, so the asymmetry term dominates
and produces the heavy-tailed, multi-millisecond outliers that make this
transplant unsuitable for tightly synchronized use cases.

Shipped configurations are calibrated to reproduce published error scales of
commodity hardware, not to model any specific device.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from random import Random
from typing import Callable

from .netsim import TraceLog
from .simclock import (
    ClockModel,
    JitterSpec,
    SimDuration,
    SimTime,
    clock_value_exact,
    derive_rng,
    jitter_sample,
    quantize,
)


@dataclass(frozen=True)
class TwoWayExchange:
    """Timestamps of one request/response round trip.

    t1: master tx (master clock), t2: slave rx (slave clock),
    t3: slave tx (slave clock), t4: master rx (master clock).
    """

    t1: SimTime
    t2: SimTime
    t3: SimTime
    t4: SimTime


def ptp_offset_estimate(x: TwoWayExchange) -> SimDuration:
    """Two-way offset estimate ((t2-t1) - (t4-t3)) / 2, floored to ns.

    Exact when the two one-way delays are equal; otherwise off by half their
    difference, which no two-way exchange can observe.
    """
    return ((x.t2 - x.t1) - (x.t4 - x.t3)) // 2


@dataclass
class BaselineConfig:
    """One slave's exchange parameters; wireless contention optional."""

    sync_interval_ns: int = 125_000_000
    turnaround_ns: int = 1_000_000
    link_delay_ns: int = 500
    asymmetry_ns: int = 0                      # extra delay on the master->slave leg
    timestamp_granularity_ns: int = 1
    timestamp_jitter: JitterSpec = field(default_factory=JitterSpec.none)
    contention: JitterSpec = field(default_factory=JitterSpec.none)  # per direction
    slave_clock: ClockModel = field(default_factory=ClockModel.ideal)


def _timestamp(clock_exact: int, cfg: BaselineConfig, rng: Random) -> int:
    value = clock_exact + jitter_sample(cfg.timestamp_jitter, rng)
    return quantize(value, cfg.timestamp_granularity_ns)


def _slave_value(cfg: BaselineConfig, t: SimTime) -> int:
    # Noise-free slave clock value; timestamp noise is applied separately so
    # the true offset used for the error series matches what the slave reads.
    return math.floor(clock_value_exact(cfg.slave_clock, t))


def run_exchanges(
    cfg: BaselineConfig,
    master_seed: int,
    node: str,
    duration_ns: int,
    trace: TraceLog,
    forward_delay: Callable[[Random], int],
    backward_delay: Callable[[Random], int],
) -> list[tuple[SimTime, SimDuration]]:
    """Run periodic two-way exchanges; returns (time, sync error) samples.

    The sample is the slave's estimated-TSN-minus-true-TSN error after
    applying the exchange's offset estimate: the negated estimation error,
    which for asymmetric paths is minus half the (forward - backward) delay
    difference.
    """
    rng_ts = derive_rng(master_seed, f"ts:{node}")
    rng_fwd = derive_rng(master_seed, f"fwd:{node}")
    rng_bwd = derive_rng(master_seed, f"bwd:{node}")
    samples: list[tuple[SimTime, SimDuration]] = []
    t = cfg.sync_interval_ns
    while t <= duration_ns:
        fwd = cfg.link_delay_ns + cfg.asymmetry_ns + forward_delay(rng_fwd)
        bwd = cfg.link_delay_ns + backward_delay(rng_bwd)
        t_arrive = t + fwd
        t_depart = t_arrive + cfg.turnaround_ns
        x = TwoWayExchange(
            t1=_timestamp(t, cfg, rng_ts),
            t2=_timestamp(_slave_value(cfg, t_arrive), cfg, rng_ts),
            t3=_timestamp(_slave_value(cfg, t_depart), cfg, rng_ts),
            t4=_timestamp(t_depart + bwd, cfg, rng_ts),
        )
        true_offset = _slave_value(cfg, t_arrive) - t_arrive
        err = true_offset - ptp_offset_estimate(x)
        trace.append(t_arrive, "sample", node, err_ns=err, est_offset_ns=ptp_offset_estimate(x))
        samples.append((t_arrive, err))
        t += cfg.sync_interval_ns
    return samples


def run_gptp_wired(
    cfg: BaselineConfig, master_seed: int, node: str, duration_ns: int, trace: TraceLog
) -> list[tuple[SimTime, SimDuration]]:
    """Constant-delay cable both ways; residual error is timestamp noise plus
    half of any configured link asymmetry."""
    zero = lambda rng: 0
    return run_exchanges(cfg, master_seed, node, duration_ns, trace, zero, zero)


def run_ptp_over_wifi(
    cfg: BaselineConfig, master_seed: int, node: str, duration_ns: int, trace: TraceLog
) -> list[tuple[SimTime, SimDuration]]:
    """Each direction draws an independent channel-access delay, so every
    exchange carries an unobservable asymmetry of order the contention spread."""
    contend = lambda rng: jitter_sample(cfg.contention, rng)
    return run_exchanges(cfg, master_seed, node, duration_ns, trace, contend, contend)
