"""Deterministic simulator and protocol library for beacon-timestamp
(receiver/receiver) time synchronization over infrastructure Wi-Fi, with a
multi-AP offset database, wired-gPTP and PTP-over-Wi-Fi baselines, and a
two-carriage motion demonstrator."""

from .simclock import ClockModel, JitterSpec, SimDuration, SimTime, clock_read
from .beacon import ApState, BeaconFrame, decode_beacon, encode_beacon, make_beacon
from .rbis import (
    ApPairOffset,
    BeaconTuple,
    CorrectionRecord,
    StationSyncState,
    estimate_tsn_time,
)
from .scenario import Scenario, load_scenario
from .runner import RunResult, run_scenario

__version__ = "0.1.0"

__all__ = [
    "ApPairOffset",
    "ApState",
    "BeaconFrame",
    "BeaconTuple",
    "ClockModel",
    "CorrectionRecord",
    "JitterSpec",
    "RunResult",
    "Scenario",
    "SimDuration",
    "SimTime",
    "StationSyncState",
    "clock_read",
    "decode_beacon",
    "encode_beacon",
    "estimate_tsn_time",
    "load_scenario",
    "make_beacon",
    "run_scenario",
    "__version__",
]
