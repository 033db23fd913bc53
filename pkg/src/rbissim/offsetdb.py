"""Pairwise AP offset database.

Stores the signed offset matrix as its upper triangle only (the diagonal is
identically zero and the lower triangle is the negation), which caps the
publishable payload at m(m-1)/2 entries for m APs. Publishing strategy is a
trade-off between freshness under frequent handovers (cyclic) and bandwidth
on a busy channel (on request).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

from .beacon import format_bssid, parse_bssid
from .rbis import ApPairOffset
from .simclock import SimDuration


class OffsetDbError(ValueError):
    pass


@dataclass
class OffsetMatrix:
    """Signed pairwise offsets keyed by canonical (lexicographically ordered) pair."""

    aps: tuple[bytes, ...] = ()
    entries: dict[tuple[bytes, bytes], ApPairOffset] = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.aps)

    def known_pairs(self) -> int:
        return len(self.entries)


def n_entries(m: int) -> int:
    """Database size for m APs: the upper triangle of an m x m matrix
    minus its diagonal, m(m-1)/2."""
    if m < 1:
        raise OffsetDbError(f"AP count must be >= 1, got {m}")
    return m * (m - 1) // 2


def db_upsert(db: OffsetMatrix, off: ApPairOffset) -> OffsetMatrix:
    """Insert or refresh one pair, canonicalized; newest measured_at wins."""
    if off.ap_i == off.ap_j:
        raise OffsetDbError(
            f"diagonal entry rejected: {format_bssid(off.ap_i)} with delta {off.delta}"
        )
    canonical = off if off.ap_i < off.ap_j else off.reversed()
    key = (canonical.ap_i, canonical.ap_j)
    existing = db.entries.get(key)
    if existing is not None and existing.measured_at > canonical.measured_at:
        return db  # stale report
    db.entries[key] = canonical
    return db


def db_query(db: OffsetMatrix, ap_i: bytes, ap_j: bytes) -> Optional[SimDuration]:
    """Signed offset anchor(ap_i) - anchor(ap_j), or None when unknown.

    Falls back to a single transitive hop (i -> k -> j) when both legs are
    directly known; longer paths compound measurement noise and are not
    composed.
    """
    if ap_i == ap_j:
        return 0
    direct = _direct(db, ap_i, ap_j)
    if direct is not None:
        return direct
    mids: set[bytes] = set()
    for (a, b) in db.entries:
        if ap_i in (a, b):
            mids.add(b if a == ap_i else a)
    for k in sorted(mids):
        if k == ap_j:
            continue
        leg1 = _direct(db, ap_i, k)
        leg2 = _direct(db, k, ap_j)
        if leg1 is not None and leg2 is not None:
            return leg1 + leg2
    return None


def _direct(db: OffsetMatrix, ap_i: bytes, ap_j: bytes) -> Optional[SimDuration]:
    if ap_i < ap_j:
        entry = db.entries.get((ap_i, ap_j))
        return None if entry is None else entry.delta
    entry = db.entries.get((ap_j, ap_i))
    return None if entry is None else -entry.delta


# -- publishing strategy -------------------------------------------------------


@dataclass(frozen=True)
class PublishPolicy:
    """Tunables for choosing between cyclic and on-request publishing.

    None of these come from measurements; they are config-exposed defaults.
    entry_size covers two AP ids, the delta and its measurement time.
    """

    cyclic_handover_rate_threshold: float = 0.1   # handovers per second
    payload_budget_bytes: int = 1400              # fits one unfragmented frame
    entry_size_bytes: int = 20
    cyclic_period_ns: int = 1_000_000_000


@dataclass(frozen=True)
class PublishPlan:
    mode: str                       # "cyclic" | "on_request"
    payload_entries: int
    period_ns: Optional[int] = None


def plan_publishing(
    m: int,
    handover_rate: float,
    channel_busy: float = 0.0,
    policy: PublishPolicy = PublishPolicy(),
) -> PublishPlan:
    """Pick cyclic publishing for mobile deployments whose full matrix fits
    the payload budget; fall back to on-request otherwise.

    A busy channel shrinks the effective budget proportionally, trading
    publication freshness for bandwidth.
    """
    if handover_rate < 0 or not 0.0 <= channel_busy <= 1.0:
        raise OffsetDbError(
            f"need handover_rate >= 0 and channel_busy in [0, 1], "
            f"got {handover_rate}, {channel_busy}"
        )
    entries = n_entries(m)
    budget = policy.payload_budget_bytes * (1.0 - channel_busy)
    fits = entries * policy.entry_size_bytes <= budget
    if handover_rate >= policy.cyclic_handover_rate_threshold and fits:
        return PublishPlan("cyclic", entries, policy.cyclic_period_ns)
    return PublishPlan("on_request", entries)


# -- CSV dump ------------------------------------------------------------------

CSV_HEADER = ["ap_i", "ap_j", "delta_ns", "measured_at_ns", "reporter"]


def dump_csv(db: OffsetMatrix) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for key in sorted(db.entries):
        e = db.entries[key]
        writer.writerow(
            [format_bssid(e.ap_i), format_bssid(e.ap_j), e.delta, e.measured_at, e.reporter]
        )
    return out.getvalue()


def load_csv(text: str) -> OffsetMatrix:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != CSV_HEADER:
        raise OffsetDbError(f"bad offset CSV header: {header}")
    db = OffsetMatrix()
    aps: set[bytes] = set()
    for row in reader:
        if not row:
            continue
        ap_i, ap_j = parse_bssid(row[0]), parse_bssid(row[1])
        db_upsert(db, ApPairOffset(ap_i, ap_j, int(row[2]), int(row[3]), row[4]))
        aps.update((ap_i, ap_j))
    db.aps = tuple(sorted(aps))
    return db
