"""Beacon frames: TSF timestamp semantics and a bit-exact binary codec.

The codec covers the management-frame subset the sync protocol actually
reads. Layout (all multi-byte integers little-endian)::

    [ 0: 2)  frame control 0x80 0x00 (management / beacon)
    [ 2: 4)  duration = 0
    [ 4:10)  DA  = ff:ff:ff:ff:ff:ff (broadcast)
    [10:16)  SA  = bssid
    [16:22)  BSSID = bssid
    [22:24)  sequence control = 0
    [24:32)  TSF timestamp, unsigned us since AP power-on
    [32:34)  beacon interval in TU (1 TU = 1024 us)
    [34:36)  capability = 0x01 0x00
    [36]     element id 0 (SSID)
    [37]     SSID length
    [38:.. ) SSID bytes

Real beacons carry more tagged elements after the SSID; the decoder ignores
trailing bytes so captures of this subset still parse.

The (bssid, tsf_timestamp) pair is the beacon identity the protocol keys on:
TSF is a us counter since power-on, so successive beacons of one AP carry
strictly increasing, never-repeating timestamps.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from random import Random
from typing import BinaryIO, Iterable, Iterator

from .simclock import ClockModel, NS_PER_US, SimTime, clock_read

BROADCAST = b"\xff" * 6
FRAME_CONTROL_BEACON = b"\x80\x00"
FIXED_LEN = 38  # bytes before the SSID payload
MAX_SSID_LEN = 32
TU_NS = 1024 * NS_PER_US

_FIXED = struct.Struct("<2sH6s6s6sHQHH")
_REPLAY_HEADER = struct.Struct("<qI")  # rx timestamp (ns, signed), frame length


class BeaconCodecError(ValueError):
    """Malformed beacon bytes or out-of-domain frame fields."""


def format_bssid(bssid: bytes) -> str:
    return ":".join(f"{b:02x}" for b in bssid)


def parse_bssid(text: str) -> bytes:
    parts = text.split(":")
    if len(parts) != 6:
        raise BeaconCodecError(f"bad bssid {text!r}")
    try:
        raw = bytes(int(p, 16) for p in parts)
    except ValueError as exc:
        raise BeaconCodecError(f"bad bssid {text!r}") from exc
    return raw


@dataclass(frozen=True)
class BeaconFrame:
    bssid: bytes
    tsf_timestamp: int           # us since AP power-on
    beacon_interval_tu: int
    ssid: bytes = b""

    def __post_init__(self) -> None:
        if len(self.bssid) != 6:
            raise BeaconCodecError(f"bssid must be 6 bytes, got {len(self.bssid)}")
        if not 0 <= self.tsf_timestamp < 2**64:
            raise BeaconCodecError(f"tsf_timestamp out of u64 range: {self.tsf_timestamp}")
        if not 1 <= self.beacon_interval_tu < 2**16:
            raise BeaconCodecError(
                f"beacon_interval_tu must be in [1, 65535], got {self.beacon_interval_tu}"
            )
        if len(self.ssid) > MAX_SSID_LEN:
            raise BeaconCodecError(f"ssid longer than {MAX_SSID_LEN} bytes: {len(self.ssid)}")

    @property
    def tsf_ns(self) -> int:
        """TSF timestamp expressed in ns (exact, TSF is a us counter)."""
        return self.tsf_timestamp * NS_PER_US

    def beacon_interval_ns(self) -> int:
        return self.beacon_interval_tu * TU_NS


@dataclass
class ApState:
    """An access point's identity plus the clock driving its TSF counter."""

    bssid: bytes
    tsf_epoch: SimTime                      # true time of power-on
    tsf_clock: ClockModel = field(default_factory=ClockModel.ideal)
    beacon_interval_tu: int = 100           # 802.11 default, 102.4 ms
    ssid: bytes = b""
    last_tsf: int | None = None


def make_beacon(ap: ApState, true_time: SimTime, rng: Random) -> BeaconFrame:
    """Build the beacon an AP transmits at ``true_time``.

    The TSF field is the AP's local clock since power-on, floored to us; that
    flooring is itself a modeled error source. Enforces the never-repeating
    TSF invariant the protocol relies on.
    """
    if true_time < ap.tsf_epoch:
        raise ValueError(
            f"beacon at t={true_time} precedes AP power-on at {ap.tsf_epoch}"
        )
    tsf_us = clock_read(ap.tsf_clock, true_time - ap.tsf_epoch, rng) // NS_PER_US
    if ap.last_tsf is not None and tsf_us <= ap.last_tsf:
        raise ValueError(
            f"TSF not strictly increasing for {format_bssid(ap.bssid)}: "
            f"{tsf_us} after {ap.last_tsf}"
        )
    ap.last_tsf = tsf_us
    return BeaconFrame(
        bssid=ap.bssid,
        tsf_timestamp=tsf_us,
        beacon_interval_tu=ap.beacon_interval_tu,
        ssid=ap.ssid,
    )


def encode_beacon(frame: BeaconFrame) -> bytes:
    header = _FIXED.pack(
        FRAME_CONTROL_BEACON,
        0,                       # duration
        BROADCAST,
        frame.bssid,             # SA
        frame.bssid,             # BSSID
        0,                       # sequence control
        frame.tsf_timestamp,
        frame.beacon_interval_tu,
        0x0001,                  # capability: ESS
    )
    return header + bytes([0, len(frame.ssid)]) + frame.ssid


def decode_beacon(buf: bytes) -> BeaconFrame:
    """Strict parse of the layout above; trailing tagged elements are ignored."""
    if len(buf) < FIXED_LEN:
        raise BeaconCodecError(f"truncated frame: {len(buf)} bytes, need >= {FIXED_LEN}")
    (fc, _dur, da, sa, bssid, _seq, tsf, interval, _cap) = _FIXED.unpack_from(buf, 0)
    if fc != FRAME_CONTROL_BEACON:
        raise BeaconCodecError(f"not a beacon frame (frame control {fc.hex()})")
    if da != BROADCAST:
        raise BeaconCodecError(f"beacon DA must be broadcast, got {format_bssid(da)}")
    if sa != bssid:
        raise BeaconCodecError("SA and BSSID fields disagree")
    tag, ssid_len = buf[36], buf[37]
    if tag != 0:
        raise BeaconCodecError(f"expected SSID element (id 0) first, got id {tag}")
    if ssid_len > MAX_SSID_LEN:
        raise BeaconCodecError(f"SSID length {ssid_len} exceeds {MAX_SSID_LEN}")
    if FIXED_LEN + ssid_len > len(buf):
        raise BeaconCodecError("SSID element overruns buffer")
    ssid = bytes(buf[FIXED_LEN : FIXED_LEN + ssid_len])
    return BeaconFrame(
        bssid=bytes(bssid),
        tsf_timestamp=tsf,
        beacon_interval_tu=interval,
        ssid=ssid,
    )


# --- beacon replay files ----------------------------------------------------
#
# On-disk capture format consumed by `rbissim analyze-replay`: a flat sequence
# of records, each an 8-byte little-endian signed receive timestamp in ns
# followed by a 4-byte little-endian frame length and the frame bytes.


def write_replay(stream: BinaryIO, records: Iterable[tuple[SimTime, BeaconFrame]]) -> None:
    for rx_ns, frame in records:
        raw = encode_beacon(frame)
        stream.write(_REPLAY_HEADER.pack(rx_ns, len(raw)))
        stream.write(raw)


def read_replay(stream: BinaryIO) -> Iterator[tuple[SimTime, BeaconFrame]]:
    while True:
        head = stream.read(_REPLAY_HEADER.size)
        if not head:
            return
        if len(head) < _REPLAY_HEADER.size:
            raise BeaconCodecError("truncated replay record header")
        rx_ns, length = _REPLAY_HEADER.unpack(head)
        raw = stream.read(length)
        if len(raw) < length:
            raise BeaconCodecError("truncated replay record body")
        yield rx_ns, decode_beacon(raw)
