"""Scenario execution: wires clocks, beacons, the sync protocol and the
offset database onto the event engine, and runs the baseline loops.

Station sampling reports the sync error (estimated TSN time minus true time)
at each sampling instant; matched-pair offsets are traced separately so the
receiver/receiver cancellation can be checked record for record. Carriage
triggers fire when a station's estimated clock crosses the scheduled
instant; the crossing is computed from the smooth (jitter-free) clock
component, so trigger placement is exact up to clock granularity, and the
configured GPIO latency draw is added on top.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

from . import baselines
from .beacon import ApState, BeaconFrame, format_bssid, make_beacon
from .demonstrator import CarriageRun, MotionProfile, SensorModel, sample_run_pair
from .metrics import build_report
from .netsim import (
    BeaconTx,
    Engine,
    FrameDelivery,
    MotionTrigger,
    TimerExpiry,
    Topology,
    TraceLog,
    WiredLinkModel,
    WirelessLinkModel,
    handover,
    set_in_range,
)
from .offsetdb import OffsetMatrix, PublishPolicy, db_query, db_upsert, plan_publishing
from .rbis import (
    ApPairOffset,
    BridgeError,
    CorrectionRecord,
    ReferenceState,
    StationSyncState,
    UnsynchronizedError,
    best_estimate,
    bridge_compute_ap_offset,
    reference_on_beacon,
)
from .scenario import Scenario, StationConfig, scenario_hash
from .simclock import (
    ClockModel,
    SimTime,
    clock_read,
    derive_rng,
    invert_clock_value,
    jitter_sample,
)

DB_NODE = "db"


# -- internal message types (wired segment) ------------------------------------


@dataclass(frozen=True)
class DbPublish:
    offset: ApPairOffset


@dataclass(frozen=True)
class DbRequest:
    station: str


@dataclass(frozen=True)
class DbSnapshot:
    entries: tuple[ApPairOffset, ...]


@dataclass
class RunResult:
    scenario: Scenario
    seed: int
    trace: TraceLog
    series_by_node: dict[str, list[tuple[SimTime, int]]]
    report: dict
    db: Optional[OffsetMatrix] = None
    demo: Optional[dict] = None
    positions: Optional[list[tuple[SimTime, float, float, float]]] = None
    replay: dict[str, list[tuple[SimTime, BeaconFrame]]] = field(default_factory=dict)

    def errors_of(self, node: str) -> list[int]:
        return [err for _, err in self.series_by_node.get(node, [])]


@dataclass
class _StationRt:
    cfg: StationConfig
    clock: ClockModel
    sync: StationSyncState
    cache: OffsetMatrix = field(default_factory=OffsetMatrix)
    db_pending: bool = False
    last_derived_tsf: Optional[int] = None


class RbisWorld:
    """Dispatcher holding all protocol state for one rbis scenario run."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        self.ap_states: dict[str, ApState] = {}
        self.bssid_to_ap: dict[bytes, str] = {}
        for ap in sc.aps:
            self.ap_states[ap.name] = ApState(
                bssid=ap.bssid,
                tsf_epoch=ap.tsf_epoch_ns,
                tsf_clock=ap.tsf_clock,
                beacon_interval_tu=ap.beacon_interval_tu,
                ssid=ap.ssid,
            )
            self.bssid_to_ap[ap.bssid] = ap.name
        self.ap_bssid = {name: st.bssid for name, st in self.ap_states.items()}
        ref = sc.reference_station
        assert ref is not None
        self.reference = ref.name
        self.ref_state = ReferenceState()
        self.stations: dict[str, _StationRt] = {}
        for st in sc.stations:
            self.stations[st.name] = _StationRt(
                cfg=st,
                clock=st.clock,
                sync=StationSyncState(associated_ap=self.ap_bssid[st.association]),
            )
        self.db = OffsetMatrix(aps=tuple(sorted(self.ap_bssid.values())))
        self.replay: dict[str, list[tuple[SimTime, BeaconFrame]]] = {
            name: [] for name in self.stations
        }
        self.demo_triggers: dict[str, SimTime] = {}

    # -- event dispatch ---------------------------------------------------------

    def handle(self, engine: Engine, payload: Any) -> None:
        if isinstance(payload, BeaconTx):
            self._on_beacon_tx(engine, payload.ap)
        elif isinstance(payload, FrameDelivery):
            self._on_delivery(engine, payload.node, payload.frame)
        elif isinstance(payload, TimerExpiry):
            self._on_timer(engine, payload.node, payload.tag)
        elif isinstance(payload, MotionTrigger):
            self._on_motion_trigger(engine, payload.carriage)
        else:
            raise TypeError(f"unhandled payload {payload!r}")

    def _on_beacon_tx(self, engine: Engine, ap_name: str) -> None:
        ap = self.ap_states[ap_name]
        frame = make_beacon(ap, engine.now, engine.rng(f"tsf:{ap_name}"))
        engine.trace.append(
            engine.now,
            "beacon_tx",
            ap_name,
            bssid=format_bssid(frame.bssid),
            tsf=frame.tsf_timestamp,
        )
        engine.broadcast(ap_name, frame, engine.now)
        engine.schedule(engine.now + frame.beacon_interval_ns(), BeaconTx(ap_name))

    def _on_delivery(self, engine: Engine, node: str, frame: Any) -> None:
        if isinstance(frame, BeaconFrame):
            self._on_beacon_rx(engine, node, frame)
        elif isinstance(frame, CorrectionRecord):
            self._on_correction_rx(engine, node, frame)
        elif isinstance(frame, DbPublish):
            db_upsert(self.db, frame.offset)
            engine.trace.append(
                engine.now,
                "db_upsert",
                DB_NODE,
                ap_i=format_bssid(frame.offset.ap_i),
                ap_j=format_bssid(frame.offset.ap_j),
                delta_ns=frame.offset.delta,
                reporter=frame.offset.reporter,
            )
        elif isinstance(frame, DbRequest):
            snapshot = DbSnapshot(tuple(self.db.entries[k] for k in sorted(self.db.entries)))
            reply_at = engine.now + max(1, self.sc.db.query_latency_ns // 2)
            engine.schedule(reply_at, FrameDelivery(frame.station, snapshot))
        elif isinstance(frame, DbSnapshot):
            rt = self.stations[node]
            rt.db_pending = False
            rt.cache = OffsetMatrix(aps=self.db.aps)
            for off in frame.entries:
                db_upsert(rt.cache, off)
            engine.trace.append(engine.now, "db_snapshot", node, entries=len(frame.entries))
        else:
            raise TypeError(f"unhandled frame {frame!r} for {node!r}")

    def _on_beacon_rx(self, engine: Engine, node: str, frame: BeaconFrame) -> None:
        engine.trace.append(
            engine.now,
            "delivery",
            node,
            bssid=format_bssid(frame.bssid),
            tsf=frame.tsf_timestamp,
        )
        rt = self.stations[node]
        local_rx = clock_read(rt.clock, engine.now, engine.rng(f"read:{node}"))
        self.replay[node].append((local_rx, frame))
        if node == self.reference:
            record = reference_on_beacon(self.ref_state, frame, local_rx)
            engine.trace.append(
                engine.now,
                "correction",
                node,
                bssid=format_bssid(record.bssid),
                tsf=record.beacon_tsf,
                tsn_rx=record.tsn_rx_time,
                derived=False,
            )
            self._disseminate(engine, record, origin=node)
            return
        pair = rt.sync.on_beacon(frame, local_rx)
        if pair is not None:
            engine.trace.append(
                engine.now,
                "pair",
                node,
                bssid=format_bssid(pair.bssid),
                tsf=pair.beacon_tsf,
                offset_ns=pair.offset,
            )
        self._bridge_try(engine, node)

    def _on_correction_rx(self, engine: Engine, node: str, record: CorrectionRecord) -> None:
        rt = self.stations[node]
        pair = rt.sync.on_correction(record)
        if pair is not None:
            engine.trace.append(
                engine.now,
                "pair",
                node,
                bssid=format_bssid(pair.bssid),
                tsf=pair.beacon_tsf,
                offset_ns=pair.offset,
            )
        self._bridge_try(engine, node)

    def _disseminate(self, engine: Engine, record: CorrectionRecord, origin: str) -> None:
        """Fan the correction out to every other station.

        Unicast mode draws an independent latency jitter per destination;
        broadcast mode shares one draw. Latency shifts availability, never
        the offsets themselves, which are pure timestamp algebra.
        """
        cfg = self.sc.correction
        shared = None
        if cfg.mode == "broadcast":
            shared = jitter_sample(cfg.latency_jitter, engine.rng("dissem:broadcast"))
        for name in sorted(self.stations):
            if name == origin or name == self.reference:
                continue
            extra = (
                shared
                if shared is not None
                else jitter_sample(cfg.latency_jitter, engine.rng(f"dissem:{name}"))
            )
            engine.schedule(
                engine.now + cfg.latency_ns + extra, FrameDelivery(name, record)
            )

    def _bridge_try(self, engine: Engine, node: str) -> None:
        rt = self.stations[node]
        bridge = rt.cfg.bridge
        if bridge is None:
            return
        from_bssid = self.ap_bssid[bridge.from_ap]
        to_bssid = self.ap_bssid[bridge.to_ap]
        latest = rt.sync.latest_tuple(to_bssid)
        if latest is not None and latest.beacon_tsf == rt.last_derived_tsf:
            return
        try:
            off, derived = bridge_compute_ap_offset(
                rt.sync, from_bssid, to_bssid, measured_at=engine.now, reporter=node
            )
        except BridgeError:
            return
        rt.last_derived_tsf = derived.beacon_tsf
        engine.trace.append(
            engine.now,
            "correction",
            node,
            bssid=format_bssid(derived.bssid),
            tsf=derived.beacon_tsf,
            tsn_rx=derived.tsn_rx_time,
            derived=True,
        )
        engine.schedule(
            engine.now + self.sc.wired_delay_ns, FrameDelivery(DB_NODE, DbPublish(off))
        )
        if bridge.publish_corrections:
            self._disseminate(engine, derived, origin=node)

    # -- timers -------------------------------------------------------------------

    def _on_timer(self, engine: Engine, node: str, tag: str) -> None:
        if tag == "sample":
            self._sample(engine, node)
            engine.schedule(engine.now + self.sc.sampling.interval_ns, TimerExpiry(node, tag))
        elif tag.startswith("handover:"):
            self._apply_handover(engine, int(tag.split(":", 1)[1]))
        elif tag == "db_publish":
            snapshot = DbSnapshot(tuple(self.db.entries[k] for k in sorted(self.db.entries)))
            for name in sorted(self.stations):
                if name == self.reference:
                    continue
                engine.schedule(
                    engine.now + self.sc.db.query_latency_ns // 2,
                    FrameDelivery(name, snapshot),
                )
            engine.schedule(engine.now + self.sc.db.cyclic_period_ns, TimerExpiry(node, tag))
        elif tag == "demo_eval":
            self._demo_eval(engine)
        else:
            raise ValueError(f"unknown timer tag {tag!r}")

    def _delta_lookup(self, rt: _StationRt):
        def lookup(ap_i: bytes, ap_j: bytes) -> Optional[int]:
            return db_query(rt.cache, ap_i, ap_j)

        return lookup

    def _sample(self, engine: Engine, node: str) -> None:
        rt = self.stations[node]
        local_now = clock_read(rt.clock, engine.now, engine.rng(f"read:{node}"))
        try:
            info = best_estimate(rt.sync, local_now, self._delta_lookup(rt))
        except UnsynchronizedError:
            engine.trace.append(engine.now, "sample", node, synced=False)
            self._maybe_request_db(engine, rt, node)
            return
        if info.chain != "assoc_pair":
            self._maybe_request_db(engine, rt, node)
        engine.trace.append(
            engine.now,
            "sample",
            node,
            synced=True,
            est=info.estimate,
            err_ns=info.estimate - engine.now,
            chain=info.chain,
            bssid=format_bssid(info.bssid),
            tsf=info.beacon_tsf,
        )

    def _maybe_request_db(self, engine: Engine, rt: _StationRt, node: str) -> None:
        if self.sc.db.publish != "on_request" or rt.db_pending:
            return
        if rt.sync.latest_tuple(rt.sync.associated_ap) is None:
            return  # nothing a database entry could anchor yet
        rt.db_pending = True
        engine.trace.append(engine.now, "db_request", node)
        engine.schedule(
            engine.now + max(1, self.sc.db.query_latency_ns // 2),
            FrameDelivery(DB_NODE, DbRequest(node)),
        )

    def _apply_handover(self, engine: Engine, index: int) -> None:
        ho = self.sc.handovers[index]
        rt = self.stations[ho.station]
        from_ap = self.bssid_to_ap[rt.sync.associated_ap]
        if ho.in_range is not None:
            set_in_range(engine.topology, ho.station, ho.in_range)
        handover(engine.topology, ho.station, ho.to_ap)
        rt.sync.associated_ap = self.ap_bssid[ho.to_ap]
        engine.trace.append(
            engine.now, "handover", ho.station, from_ap=from_ap, to_ap=ho.to_ap
        )

    # -- demonstrator -----------------------------------------------------------------

    def _demo_eval(self, engine: Engine) -> None:
        demo = self.sc.demonstrator
        assert demo is not None
        for carriage, name in (("a", demo.station_a), ("b", demo.station_b)):
            rt = self.stations[name]
            try:
                info = best_estimate(rt.sync, 0, self._delta_lookup(rt))
                chain_offset = info.estimate  # estimate at local reading 0
            except UnsynchronizedError:
                chain_offset = 0  # fall back to the raw local clock
            target_local = demo.trigger_at_ns - chain_offset
            fire = invert_clock_value(rt.clock, target_local)
            gpio = jitter_sample(demo.gpio_latency, engine.rng(f"gpio:{name}"))
            fire = max(engine.now, fire) + gpio
            engine.schedule(fire, MotionTrigger(carriage))
            engine.trace.append(
                engine.now,
                "demo_armed",
                name,
                carriage=carriage,
                fire_ns=fire,
                gpio_ns=gpio,
                scheduled_ns=demo.trigger_at_ns,
            )

    def _on_motion_trigger(self, engine: Engine, carriage: str) -> None:
        demo = self.sc.demonstrator
        assert demo is not None
        station = demo.station_a if carriage == "a" else demo.station_b
        self.demo_triggers[carriage] = engine.now
        engine.trace.append(
            engine.now,
            "motion_trigger",
            station,
            carriage=carriage,
            scheduled_ns=demo.trigger_at_ns,
        )


# -- scenario -> engine ----------------------------------------------------------------


def build_topology(sc: Scenario) -> Topology:
    wireless = WirelessLinkModel(
        propagation_ns=sc.wireless.propagation_ns,
        propagation_overrides={
            (ap, st): ns for ap, st, ns in sc.wireless.propagation_overrides
        },
        sender_access_delay=sc.wireless.sender_access_delay,
        receiver_jitter=sc.wireless.receiver_jitter,
        receiver_jitter_overrides={
            st.name: st.receiver_jitter
            for st in sc.stations
            if st.receiver_jitter is not None
        },
        loss_probability=sc.wireless.loss,
        loss_overrides={(ap, st): p for ap, st, p in sc.wireless.loss_overrides},
    )
    ref = sc.reference_station
    assert ref is not None
    topology = Topology(
        aps=[ap.name for ap in sc.aps],
        stations=[st.name for st in sc.stations],
        association={st.name: st.association for st in sc.stations},
        in_range={st.name: tuple(st.in_range) for st in sc.stations},
        reference_station=ref.name,
        wireless=wireless,
        wired=WiredLinkModel(delay_ns=sc.wired_delay_ns),
    )
    topology.validate()
    return topology


def build_rbis_engine(sc: Scenario, seed: int) -> tuple[Engine, RbisWorld]:
    world = RbisWorld(sc)
    engine = Engine(seed, build_topology(sc), world)
    for ap in sc.aps:
        first = max(0, ap.tsf_epoch_ns)
        engine.schedule(first, BeaconTx(ap.name))
    for name in sorted(world.stations):
        if name != world.reference:
            engine.schedule(sc.sampling.start_ns, TimerExpiry(name, "sample"))
    for i, ho in enumerate(sc.handovers):
        engine.schedule(ho.at_ns, TimerExpiry(ho.station, f"handover:{i}"))
    if sc.db.publish == "cyclic":
        engine.schedule(sc.db.cyclic_period_ns, TimerExpiry(DB_NODE, "db_publish"))
    if sc.demonstrator is not None:
        eval_at = max(0, sc.demonstrator.trigger_at_ns - sc.demonstrator.trigger_guard_ns)
        engine.schedule(eval_at, TimerExpiry("", "demo_eval"))
    return engine, world


def _series_from_trace(trace: TraceLog, nodes: list[str]) -> dict[str, list[tuple[int, int]]]:
    series: dict[str, list[tuple[int, int]]] = {n: [] for n in nodes}
    for rec in trace.of_kind("sample"):
        if rec.get("synced"):
            series[rec["node"]].append((rec["t"], rec["err_ns"]))
    return series


def _demo_result(
    sc: Scenario, triggers: dict[str, SimTime], seed: int
) -> tuple[dict, list[tuple[SimTime, float, float, float]]]:
    demo = sc.demonstrator
    assert demo is not None
    profile = MotionProfile(demo.p1_m, demo.p2_m, demo.v_max_mps, demo.a_max_mps2)
    run_a = CarriageRun(profile, triggers["a"])
    run_b = CarriageRun(profile, triggers["b"])
    sensor = None
    rng = None
    if demo.sensor.enabled:
        sensor = SensorModel(
            axis_min_m=demo.sensor.axis_min_m,
            axis_max_m=demo.sensor.axis_max_m,
            noise_lo_m=demo.sensor.noise_lo_um * 1e-6,
            noise_hi_m=demo.sensor.noise_hi_um * 1e-6,
            adc_bits=demo.sensor.adc_bits,
        )
        rng = derive_rng(seed, "sensor")
    rows = sample_run_pair(run_a, run_b, demo.sample_dt_ns, sensor, rng)
    delta_max = max(abs(r[3]) for r in rows) if rows else 0.0
    skew_ns = triggers["a"] - triggers["b"]
    summary = {
        "trigger_a_ns": triggers["a"],
        "trigger_b_ns": triggers["b"],
        "skew_ns": skew_ns,
        "delta_s_max_m": delta_max,
        "class_ii_limit_m": demo.v_max_mps * 1e-3,
        "within_class_ii_limit": delta_max <= demo.v_max_mps * 1e-3,
    }
    return summary, rows


def run_scenario(sc: Scenario, seed: Optional[int] = None) -> RunResult:
    """Execute one scenario with the given (or configured) master seed."""
    seed = sc.seed if seed is None else seed
    if sc.method == "rbis":
        return _run_rbis(sc, seed)
    return _run_baseline(sc, seed)


def _run_rbis(sc: Scenario, seed: int) -> RunResult:
    engine, world = build_rbis_engine(sc, seed)
    trace = engine.run_until(sc.duration_ns)
    nodes = sorted(n for n in world.stations if n != world.reference)
    series = _series_from_trace(trace, nodes)
    plan = plan_publishing(
        m=len(sc.aps),
        handover_rate=sc.publish_planning.handover_rate_per_s,
        channel_busy=sc.publish_planning.channel_busy,
        policy=PublishPolicy(
            cyclic_handover_rate_threshold=sc.publish_planning.cyclic_rate_threshold_per_s,
            payload_budget_bytes=sc.publish_planning.payload_budget_bytes,
            entry_size_bytes=sc.publish_planning.entry_size_bytes,
            cyclic_period_ns=sc.db.cyclic_period_ns,
        ),
    )
    extras: dict[str, Any] = {
        "publish_plan": {"mode": plan.mode, "payload_entries": plan.payload_entries},
    }
    demo_summary = None
    positions = None
    if sc.demonstrator is not None and len(world.demo_triggers) == 2:
        demo_summary, positions = _demo_result(sc, world.demo_triggers, seed)
        extras["demonstrator"] = demo_summary
    report = build_report(
        sc.name,
        sc.method,
        seed,
        scenario_hash(sc),
        {n: [e for _, e in s] for n, s in series.items()},
        extras,
    )
    return RunResult(
        scenario=sc,
        seed=seed,
        trace=trace,
        series_by_node=series,
        report=report,
        db=world.db,
        demo=demo_summary,
        positions=positions,
        replay=world.replay,
    )


def _run_baseline(sc: Scenario, seed: int) -> RunResult:
    cfg_section = sc.baseline
    assert cfg_section is not None
    cfg = baselines.BaselineConfig(
        sync_interval_ns=cfg_section.sync_interval_ns,
        turnaround_ns=cfg_section.turnaround_ns,
        link_delay_ns=cfg_section.link_delay_ns,
        asymmetry_ns=cfg_section.asymmetry_ns,
        timestamp_granularity_ns=cfg_section.timestamp_granularity_ns,
        timestamp_jitter=cfg_section.timestamp_jitter,
        contention=cfg_section.contention,
        slave_clock=cfg_section.slave_clock,
    )
    trace = TraceLog()
    series: dict[str, list[tuple[int, int]]] = {}
    for node in cfg_section.slaves:
        if sc.method == "gptp_wired":
            samples = baselines.run_gptp_wired(cfg, seed, node, sc.duration_ns, trace)
        else:
            samples = baselines.run_ptp_over_wifi(cfg, seed, node, sc.duration_ns, trace)
        series[node] = samples
    extras: dict[str, Any] = {}
    demo_summary = None
    positions = None
    if sc.demonstrator is not None:
        demo = sc.demonstrator
        triggers: dict[str, SimTime] = {}
        for carriage, name in (("a", demo.station_a), ("b", demo.station_b)):
            err = 0
            for t, e in series.get(name, []):
                if t <= demo.trigger_at_ns:
                    err = e
                else:
                    break
            gpio = jitter_sample(demo.gpio_latency, derive_rng(seed, f"gpio:{name}"))
            fire = demo.trigger_at_ns - err + gpio
            triggers[carriage] = fire
            trace.append(fire, "motion_trigger", name, carriage=carriage,
                         scheduled_ns=demo.trigger_at_ns)
        demo_summary, positions = _demo_result(sc, triggers, seed)
        extras["demonstrator"] = demo_summary
    report = build_report(
        sc.name,
        sc.method,
        seed,
        scenario_hash(sc),
        {n: [e for _, e in s] for n, s in series.items()},
        extras,
    )
    return RunResult(
        scenario=sc,
        seed=seed,
        trace=trace,
        series_by_node=series,
        report=report,
        demo=demo_summary,
        positions=positions,
    )


# -- offline replay analysis --------------------------------------------------------


class ReplayError(ValueError):
    pass


def pair_replay_offsets(
    reference_records: list[tuple[SimTime, BeaconFrame]],
    station_records: list[tuple[SimTime, BeaconFrame]],
) -> list[tuple[str, int, SimTime, SimTime, int]]:
    """Match two capture files by beacon identity and compute per-beacon offsets.

    Returns (bssid, tsf, reference_rx, station_rx, offset) rows sorted by
    (bssid, tsf); offset = reference rx time - station rx time, exactly the
    quantity the online protocol derives from a correction record.
    """

    def index(records, label):
        seen: dict[tuple[bytes, int], SimTime] = {}
        for rx, frame in records:
            key = (frame.bssid, frame.tsf_timestamp)
            if key in seen:
                raise ReplayError(
                    f"duplicate beacon identity in {label} capture: "
                    f"{format_bssid(key[0])}/{key[1]}"
                )
            seen[key] = rx
        return seen

    ref_idx = index(reference_records, "reference")
    st_idx = index(station_records, "station")
    common = sorted(set(ref_idx) & set(st_idx))
    if not common:
        raise ReplayError("no overlapping beacon identities between the two captures")
    return [
        (format_bssid(b), tsf, ref_idx[(b, tsf)], st_idx[(b, tsf)],
         ref_idx[(b, tsf)] - st_idx[(b, tsf)])
        for b, tsf in common
    ]
