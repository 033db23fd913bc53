"""Seeded deterministic discrete-event engine with broadcast wireless links.

Events execute in (fire_time, insertion order) order, so ties are FIFO and a
run is a pure function of (scenario, master seed). Every random draw comes
from a stream derived from the master seed and a (node, purpose) label;
streams never interleave, so adding a node cannot perturb another node's
sequence.

A wireless broadcast samples ONE sender-side access delay shared by all
receivers of that frame, plus per-receiver propagation and timestamping
jitter. Differences between receivers' delivery times are therefore
independent of sender-side queueing/contention, which is the physical basis
of receiver/receiver synchronization. Wired links are constant-delay.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from fractions import Fraction
from random import Random
from typing import Any, Iterable, Iterator, Protocol, Union

from .simclock import JitterSpec, SimDuration, SimTime, derive_rng, jitter_sample

NodeId = str


class TopologyError(ValueError):
    pass


class EngineError(RuntimeError):
    """A handler failed; carries the offending event."""


# -- event payloads -----------------------------------------------------------


@dataclass(frozen=True)
class BeaconTx:
    ap: NodeId


@dataclass(frozen=True)
class FrameDelivery:
    node: NodeId
    frame: Any  # BeaconFrame, CorrectionRecord, or a db message


@dataclass(frozen=True)
class TimerExpiry:
    node: NodeId
    tag: str


@dataclass(frozen=True)
class MotionTrigger:
    carriage: str


Payload = Union[BeaconTx, FrameDelivery, TimerExpiry, MotionTrigger]


@dataclass(frozen=True, order=True)
class Event:
    fire_time: SimTime
    seq: int
    payload: Payload = field(compare=False)


# -- link models / topology -----------------------------------------------------


@dataclass
class WirelessLinkModel:
    """Broadcast medium: shared sender delay, per-receiver path and jitter."""

    propagation_ns: SimDuration = 500
    propagation_overrides: dict[tuple[NodeId, NodeId], SimDuration] = field(default_factory=dict)
    sender_access_delay: JitterSpec = field(default_factory=JitterSpec.none)
    receiver_jitter: JitterSpec = field(default_factory=JitterSpec.none)
    receiver_jitter_overrides: dict[NodeId, JitterSpec] = field(default_factory=dict)
    loss_probability: Fraction = Fraction(0)
    loss_overrides: dict[tuple[NodeId, NodeId], Fraction] = field(default_factory=dict)

    def propagation(self, sender: NodeId, receiver: NodeId) -> SimDuration:
        return self.propagation_overrides.get((sender, receiver), self.propagation_ns)

    def jitter_for(self, receiver: NodeId) -> JitterSpec:
        return self.receiver_jitter_overrides.get(receiver, self.receiver_jitter)

    def loss(self, sender: NodeId, receiver: NodeId) -> Fraction:
        return self.loss_overrides.get((sender, receiver), self.loss_probability)


@dataclass
class WiredLinkModel:
    """Deterministic cable segment; no loss."""

    delay_ns: SimDuration = 500


@dataclass
class Topology:
    aps: list[NodeId]
    stations: list[NodeId]
    association: dict[NodeId, NodeId]
    in_range: dict[NodeId, tuple[NodeId, ...]]
    reference_station: NodeId
    wireless: WirelessLinkModel = field(default_factory=WirelessLinkModel)
    wired: WiredLinkModel = field(default_factory=WiredLinkModel)

    def validate(self) -> None:
        errors = []
        ap_set = set(self.aps)
        for st in self.stations:
            if st not in self.in_range:
                errors.append(f"station {st!r} has no in_range set")
                continue
            unknown = [a for a in self.in_range[st] if a not in ap_set]
            if unknown:
                errors.append(f"station {st!r} in_range references unknown APs {unknown}")
            assoc = self.association.get(st)
            if assoc is None:
                errors.append(f"station {st!r} has no association")
            elif assoc not in self.in_range[st]:
                errors.append(f"station {st!r} associated to {assoc!r} outside its range")
        if self.reference_station not in self.stations:
            errors.append(f"reference station {self.reference_station!r} is not a station")
        if errors:
            raise TopologyError("; ".join(errors))

    def receivers_of(self, ap: NodeId) -> list[NodeId]:
        return [st for st in self.stations if ap in self.in_range.get(st, ())]


def handover(topology: Topology, station: NodeId, to_ap: NodeId) -> Topology:
    """Re-associate a station. Its beacon tuples for other APs live in station
    sync state and survive the move."""
    if station not in topology.stations:
        raise TopologyError(f"unknown station {station!r}")
    if to_ap not in topology.in_range.get(station, ()):
        raise TopologyError(f"handover target {to_ap!r} not in range of {station!r}")
    topology.association[station] = to_ap
    return topology


def set_in_range(topology: Topology, station: NodeId, aps: Iterable[NodeId]) -> Topology:
    aps = tuple(aps)
    unknown = [a for a in aps if a not in topology.aps]
    if unknown:
        raise TopologyError(f"unknown APs in range update for {station!r}: {unknown}")
    topology.in_range[station] = aps
    return topology


# -- trace log ------------------------------------------------------------------


class TraceLog:
    """Append-only run record; one dict per entry, serializable as JSON lines."""

    def __init__(self) -> None:
        self.records: list[dict[str, Any]] = []

    def append(self, t: SimTime, kind: str, node: NodeId = "", **fields: Any) -> None:
        self.records.append({"t": t, "kind": kind, "node": node, **fields})

    def of_kind(self, kind: str) -> list[dict[str, Any]]:
        return [r for r in self.records if r["kind"] == kind]

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(rec, separators=(",", ":")) + "\n" for rec in self.records
        )

    @classmethod
    def from_jsonl(cls, text: str) -> "TraceLog":
        log = cls()
        for line in text.splitlines():
            if line.strip():
                log.records.append(json.loads(line))
        return log

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[dict[str, Any]]:
        return iter(self.records)


# -- engine ---------------------------------------------------------------------


class Dispatcher(Protocol):
    def handle(self, engine: "Engine", payload: Payload) -> None: ...


class Engine:
    """Single-threaded deterministic event loop.

    The dispatcher owns all protocol logic; the engine provides time, the
    event queue, named RNG streams and the trace. Engines are self-contained
    values: nothing here touches global state.
    """

    def __init__(self, master_seed: int, topology: Topology, dispatcher: Dispatcher):
        self.master_seed = master_seed
        self.topology = topology
        self.dispatcher = dispatcher
        self.now: SimTime = 0
        self.trace = TraceLog()
        self._queue: list[Event] = []
        self._seq = 0
        self._rngs: dict[str, Random] = {}

    def rng(self, label: str) -> Random:
        stream = self._rngs.get(label)
        if stream is None:
            stream = derive_rng(self.master_seed, label)
            self._rngs[label] = stream
        return stream

    def schedule(self, fire_time: SimTime, payload: Payload) -> Event:
        if fire_time < self.now:
            raise EngineError(
                f"cannot schedule {payload!r} at t={fire_time} before now={self.now}"
            )
        event = Event(fire_time, self._seq, payload)
        self._seq += 1
        heapq.heappush(self._queue, event)
        return event

    def run_until(self, t_end: SimTime) -> TraceLog:
        """Execute all events with fire_time <= t_end in (fire_time, seq) order."""
        if t_end < self.now:
            raise EngineError(f"t_end={t_end} is before current time {self.now}")
        while self._queue and self._queue[0].fire_time <= t_end:
            event = heapq.heappop(self._queue)
            self.now = event.fire_time
            try:
                self.dispatcher.handle(self, event.payload)
            except Exception as exc:
                raise EngineError(
                    f"handler failed at t={event.fire_time} for {event.payload!r}: {exc}"
                ) from exc
        self.now = t_end
        return self.trace

    def broadcast(self, sender: NodeId, frame: Any, t_tx: SimTime) -> list[tuple[NodeId, SimTime]]:
        """Schedule one wireless broadcast.

        Samples a single sender access delay for the frame, then per receiver:
        an independent loss draw, the pair's propagation delay and a receiver
        timestamping jitter draw. Returns the scheduled (receiver, time) list.
        """
        if sender not in self.topology.aps:
            raise TopologyError(f"unknown broadcast sender {sender!r}")
        if t_tx < self.now:
            raise EngineError(f"broadcast at t={t_tx} before now={self.now}")
        link = self.topology.wireless
        access_delay = jitter_sample(link.sender_access_delay, self.rng(f"txdelay:{sender}"))
        scheduled: list[tuple[NodeId, SimTime]] = []
        for receiver in self.topology.receivers_of(sender):
            loss = link.loss(sender, receiver)
            if loss > 0 and self.rng(f"loss:{sender}:{receiver}").random() < loss:
                continue
            jitter = jitter_sample(link.jitter_for(receiver), self.rng(f"rxjit:{receiver}"))
            t_rx = t_tx + access_delay + link.propagation(sender, receiver) + jitter
            self.schedule(t_rx, FrameDelivery(receiver, frame))
            scheduled.append((receiver, t_rx))
        return scheduled


def run_until(engine: Engine, t_end: SimTime) -> TraceLog:
    return engine.run_until(t_end)


def broadcast(engine: Engine, sender: NodeId, frame: Any, t_tx: SimTime):
    return engine.broadcast(sender, frame, t_tx)
