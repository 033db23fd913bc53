"""Receiver/receiver synchronization over beacon broadcasts.

The mechanism: every receiver of the same beacon timestamps it with its own
clock. The wired, grandmaster-synchronized reference station timestamps each
beacon in TSN time and disseminates (bssid, beacon TSF, TSN rx time)
correction records. A station that received the same beacon subtracts its own
rx timestamp from the record's TSN timestamp; that difference is its clock
offset, and the sender-side access delay cancels because it shifted both
receivers' rx times identically.

Cross-AP coverage: a station in range of two APs (a "bridge") already knows
TSN time through one AP's chain, so it can assign TSN times to the other AP's
beacons from its own rx timestamps, re-publish them as derived correction
records, and report the pairwise AP offset (difference of the two APs'
TSN-minus-TSF anchors) to the offset database. A station that only hears an
uncovered AP combines its newest tuple for that AP, any correction record's
anchor, and the database entry to synthesize the missing pairing.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional

from .beacon import BeaconFrame, format_bssid
from .simclock import NS_PER_US, SimDuration, SimTime

DEFAULT_RING_CAPACITY = 16

_CORRECTION_WIRE = struct.Struct("<6sQq")  # bssid, beacon tsf (us), tsn rx (ns)


class UnsynchronizedError(RuntimeError):
    """Estimate requested before any (tuple, correction) pair matched."""


class BridgeError(RuntimeError):
    """Station lacks the state to relate the requested AP pair."""


@dataclass(frozen=True)
class CorrectionRecord:
    """TSN timestamp for one identified beacon, as observed by a reference.

    ``beacon_tsf`` identifies the beacon within its AP; ``tsn_rx_time`` is
    the TSN-synchronized clock reading taken at that beacon's reception.
    """

    bssid: bytes
    beacon_tsf: int          # us, beacon identity within the AP
    tsn_rx_time: SimTime     # ns

    @property
    def anchor(self) -> SimDuration:
        """TSN-minus-TSF offset of this record's AP, in ns.

        Subtracting the beacon's TSF (a pure AP-clock quantity) from its TSN
        arrival time yields a per-AP constant, independent of which receiver
        computed it; differences of anchors are the pairwise AP offsets.
        """
        return self.tsn_rx_time - self.beacon_tsf * NS_PER_US


def encode_correction(rec: CorrectionRecord) -> bytes:
    return _CORRECTION_WIRE.pack(rec.bssid, rec.beacon_tsf, rec.tsn_rx_time)


def decode_correction(raw: bytes) -> CorrectionRecord:
    if len(raw) != _CORRECTION_WIRE.size:
        raise ValueError(
            f"correction record must be {_CORRECTION_WIRE.size} bytes, got {len(raw)}"
        )
    bssid, tsf, tsn = _CORRECTION_WIRE.unpack(raw)
    return CorrectionRecord(bytes(bssid), tsf, tsn)


@dataclass(frozen=True)
class BeaconTuple:
    """A station's local rx timestamp coupled to one beacon's identity."""

    bssid: bytes
    beacon_tsf: int          # us
    local_rx_time: SimTime   # ns, station clock


@dataclass(frozen=True)
class MatchedPair:
    """A beacon observed by both the reference chain and this station."""

    bssid: bytes
    beacon_tsf: int
    tsn_rx_time: SimTime
    local_rx_time: SimTime

    @property
    def offset(self) -> SimDuration:
        """Station-clock-to-TSN offset implied by this pair."""
        return self.tsn_rx_time - self.local_rx_time


@dataclass(frozen=True)
class ApPairOffset:
    """One signed entry of the pairwise AP offset matrix.

    ``delta`` is anchor(ap_i) - anchor(ap_j); reversing the pair flips the
    sign, and delta(i, i) is identically zero.
    """

    ap_i: bytes
    ap_j: bytes
    delta: SimDuration
    measured_at: SimTime
    reporter: str

    def reversed(self) -> "ApPairOffset":
        return ApPairOffset(self.ap_j, self.ap_i, -self.delta, self.measured_at, self.reporter)


@dataclass
class ReferenceState:
    """Dedup/monotonicity guard for the reference's correction generation."""

    last_tsf: dict[bytes, int] = field(default_factory=dict)


def reference_on_beacon(
    ref: ReferenceState, frame: BeaconFrame, tsn_rx: SimTime
) -> CorrectionRecord:
    """Timestamp one received beacon in TSN time.

    One record per (bssid, beacon_tsf); TSF monotonicity per AP guarantees
    the identity never repeats.
    """
    prev = ref.last_tsf.get(frame.bssid)
    if prev is not None and frame.tsf_timestamp <= prev:
        raise ValueError(
            f"beacon TSF went backwards for {format_bssid(frame.bssid)}: "
            f"{frame.tsf_timestamp} after {prev}"
        )
    ref.last_tsf[frame.bssid] = frame.tsf_timestamp
    return CorrectionRecord(frame.bssid, frame.tsf_timestamp, tsn_rx)


class StationSyncState:
    """Per-station protocol state: tuple rings, correction rings, matched pairs.

    Rings hold the last ``ring_capacity`` unmatched tuples/records per AP,
    oldest evicted first. Matching is order-independent: a tuple arriving
    before or after its correction record produces the same pair. Offsets are
    tracked, never applied to the clock; estimates are computed on demand.
    """

    def __init__(self, associated_ap: bytes, ring_capacity: int = DEFAULT_RING_CAPACITY):
        self.associated_ap = associated_ap
        self.ring_capacity = ring_capacity
        # per-AP rings keyed (bssid -> OrderedDict[beacon_tsf -> entry])
        self.tuples: dict[bytes, "OrderedDict[int, BeaconTuple]"] = {}
        self.pending_corrections: dict[bytes, "OrderedDict[int, CorrectionRecord]"] = {}
        self.pairs: dict[bytes, MatchedPair] = {}          # freshest matched pair per AP
        self.latest_correction: dict[bytes, CorrectionRecord] = {}
        self.last_pair: Optional[MatchedPair] = None        # freshest match overall
        self.matched: dict[bytes, set[int]] = {}            # dedup of matched identities

    # -- state transitions ---------------------------------------------------

    def on_beacon(self, frame: BeaconFrame, local_rx: SimTime) -> Optional[MatchedPair]:
        """Couple the local rx timestamp with the beacon identity; try to match."""
        tup = BeaconTuple(frame.bssid, frame.tsf_timestamp, local_rx)
        ring = self.tuples.setdefault(frame.bssid, OrderedDict())
        ring[tup.beacon_tsf] = tup
        while len(ring) > self.ring_capacity:
            ring.popitem(last=False)
        pending = self.pending_corrections.get(frame.bssid)
        if pending is not None and tup.beacon_tsf in pending:
            rec = pending.pop(tup.beacon_tsf)
            return self._store_pair(rec, tup)
        return None

    def on_correction(self, rec: CorrectionRecord) -> Optional[MatchedPair]:
        """Ingest a correction record; match it against buffered tuples."""
        prev = self.latest_correction.get(rec.bssid)
        if prev is None or rec.tsn_rx_time >= prev.tsn_rx_time:
            self.latest_correction[rec.bssid] = rec
        if rec.beacon_tsf in self.matched.get(rec.bssid, ()):
            return None  # duplicate record, already matched
        ring = self.tuples.get(rec.bssid)
        if ring is not None and rec.beacon_tsf in ring:
            return self._store_pair(rec, ring[rec.beacon_tsf])
        pending = self.pending_corrections.setdefault(rec.bssid, OrderedDict())
        pending[rec.beacon_tsf] = rec
        while len(pending) > self.ring_capacity:
            pending.popitem(last=False)
        return None

    def _store_pair(self, rec: CorrectionRecord, tup: BeaconTuple) -> MatchedPair:
        pair = MatchedPair(rec.bssid, rec.beacon_tsf, rec.tsn_rx_time, tup.local_rx_time)
        self.matched.setdefault(rec.bssid, set()).add(rec.beacon_tsf)
        # recency is by local receive time, so a late-arriving correction for
        # an old beacon never displaces a fresher pair
        current = self.pairs.get(rec.bssid)
        if current is None or pair.local_rx_time >= current.local_rx_time:
            self.pairs[rec.bssid] = pair
        if self.last_pair is None or pair.local_rx_time >= self.last_pair.local_rx_time:
            self.last_pair = pair
        return pair

    # -- queries ---------------------------------------------------------------

    @property
    def current_offset(self) -> Optional[SimDuration]:
        return None if self.last_pair is None else self.last_pair.offset

    def latest_tuple(self, bssid: bytes) -> Optional[BeaconTuple]:
        ring = self.tuples.get(bssid)
        if not ring:
            return None
        return next(reversed(ring.values()))


def station_on_beacon(
    st: StationSyncState, frame: BeaconFrame, local_rx: SimTime
) -> StationSyncState:
    st.on_beacon(frame, local_rx)
    return st


def station_on_correction(st: StationSyncState, rec: CorrectionRecord) -> StationSyncState:
    st.on_correction(rec)
    return st


def estimate_tsn_time(
    st: StationSyncState,
    local_now: SimTime,
    dt_ap: SimDuration = 0,
    bssid: Optional[bytes] = None,
) -> SimTime:
    """TSN-time estimate from the most recent matched pair.

    estimate = tsn_rx - local_rx + local_now + dt_ap. ``dt_ap`` is 0 when the
    pair's AP chain is itself TSN-anchored; for a chain anchored through a
    different AP it is the database offset of (this pair's AP, anchor AP).
    ``bssid`` pins the pair to one AP's chain; by default the most recent
    pair across all APs is used, which minimizes drift-induced age error.
    """
    pair = st.last_pair if bssid is None else st.pairs.get(bssid)
    if pair is None:
        raise UnsynchronizedError(
            "no matched (beacon, correction) pair"
            + ("" if bssid is None else f" for {format_bssid(bssid)}")
        )
    return pair.tsn_rx_time - pair.local_rx_time + local_now + dt_ap


def bridge_compute_ap_offset(
    st: StationSyncState,
    ap_i: bytes,
    ap_j: bytes,
    measured_at: SimTime,
    reporter: str = "",
) -> tuple[ApPairOffset, CorrectionRecord]:
    """Relate two APs from one dual-range station's state.

    Requires a TSN-anchored matched pair for ``ap_i`` and at least one tuple
    for ``ap_j``. The bridge assigns a TSN time to ap_j's newest beacon by
    adding its own clock offset (from the ap_i pair) to the local rx
    timestamp, yielding a derived correction record for ap_j, and reports
    delta(i, j) = anchor_i - anchor_j.
    """
    if ap_i == ap_j:
        return (
            ApPairOffset(ap_i, ap_j, 0, measured_at, reporter),
            _derived_identity(st, ap_i, measured_at),
        )
    pair_i = st.pairs.get(ap_i)
    if pair_i is None:
        raise BridgeError(f"not a bridge for ({format_bssid(ap_i)}, {format_bssid(ap_j)}): "
                          f"no matched pair for {format_bssid(ap_i)}")
    tup_j = st.latest_tuple(ap_j)
    if tup_j is None:
        raise BridgeError(f"not a bridge for ({format_bssid(ap_i)}, {format_bssid(ap_j)}): "
                          f"no beacon tuple for {format_bssid(ap_j)}")
    derived = CorrectionRecord(
        bssid=ap_j,
        beacon_tsf=tup_j.beacon_tsf,
        tsn_rx_time=tup_j.local_rx_time + pair_i.offset,
    )
    anchor_i = CorrectionRecord(ap_i, pair_i.beacon_tsf, pair_i.tsn_rx_time).anchor
    delta = anchor_i - derived.anchor
    return ApPairOffset(ap_i, ap_j, delta, measured_at, reporter), derived


def _derived_identity(
    st: StationSyncState, ap: bytes, measured_at: SimTime
) -> CorrectionRecord:
    pair = st.pairs.get(ap)
    if pair is None:
        raise BridgeError(f"no matched pair for {format_bssid(ap)}")
    return CorrectionRecord(ap, pair.beacon_tsf, pair.tsn_rx_time)


# -- station-side chain selection ---------------------------------------------

DeltaLookup = Callable[[bytes, bytes], Optional[SimDuration]]


@dataclass(frozen=True)
class EstimateInfo:
    estimate: SimTime
    chain: str              # "assoc_pair" | "db_path" | "fallback_pair"
    bssid: bytes            # AP whose beacon supplied the local rx timestamp
    beacon_tsf: int
    pair_local_rx: SimTime


def best_estimate(
    st: StationSyncState,
    local_now: SimTime,
    delta_lookup: Optional[DeltaLookup] = None,
) -> EstimateInfo:
    """Estimate TSN time using the best chain currently available.

    Preference order: a matched pair for the associated AP; else a synthetic
    pair for the associated AP built from its newest tuple, the freshest
    correction anchor of another AP, and the database offset between the two;
    else the most recent matched pair of any AP. Raises UnsynchronizedError
    when none applies.
    """
    assoc = st.associated_ap
    pair = st.pairs.get(assoc)
    if pair is not None:
        est = estimate_tsn_time(st, local_now, 0, bssid=assoc)
        return EstimateInfo(est, "assoc_pair", assoc, pair.beacon_tsf, pair.local_rx_time)

    if delta_lookup is not None:
        tup = st.latest_tuple(assoc)
        if tup is not None:
            anchor_rec = None
            for rec in st.latest_correction.values():
                if rec.bssid == assoc:
                    continue
                if delta_lookup(assoc, rec.bssid) is None:
                    continue
                if anchor_rec is None or rec.tsn_rx_time > anchor_rec.tsn_rx_time:
                    anchor_rec = rec
            if anchor_rec is not None:
                dt_ap = delta_lookup(assoc, anchor_rec.bssid)
                assert dt_ap is not None
                # TSN time of the tuple's beacon in the anchor AP's frame,
                # shifted into the associated AP's frame by dt_ap.
                tsn_rx = tup.beacon_tsf * NS_PER_US + anchor_rec.anchor
                est = tsn_rx - tup.local_rx_time + local_now + dt_ap
                return EstimateInfo(est, "db_path", assoc, tup.beacon_tsf, tup.local_rx_time)

    if st.last_pair is not None:
        pair = st.last_pair
        est = estimate_tsn_time(st, local_now, 0)
        return EstimateInfo(est, "fallback_pair", pair.bssid, pair.beacon_tsf, pair.local_rx_time)

    raise UnsynchronizedError("station has no usable synchronization chain")
