"""Scenario configuration: strict TOML loading, validation, serialization.

Parsing is strict: unknown keys are fatal and every semantic violation in a
file is reported, not just the first. A typo like ``becon_interval`` would
otherwise silently fall back to a default and skew calibrated results.

Every duration field accepts exactly one of ``<name>_s`` (float seconds) or
``<name>_ns`` (integer nanoseconds); the serializer always emits ``_ns`` so
a load/serialize/load round trip is exact.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .beacon import BeaconCodecError, parse_bssid
from .simclock import ClockConfigError, ClockModel, JitterSpec, NS_PER_S

METHODS = ("rbis", "gptp_wired", "ptp_wifi")


class ScenarioError(ValueError):
    """Carries every problem found in a scenario file."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid scenario:\n  - " + "\n  - ".join(problems))


# -- config dataclasses ----------------------------------------------------------


@dataclass(frozen=True)
class ApConfig:
    name: str
    bssid: bytes
    ssid: bytes
    beacon_interval_tu: int = 100
    tsf_epoch_ns: int = 0
    tsf_clock: ClockModel = field(default_factory=ClockModel.ideal)


@dataclass(frozen=True)
class BridgeConfig:
    from_ap: str
    to_ap: str
    publish_corrections: bool = True


@dataclass(frozen=True)
class StationConfig:
    name: str
    in_range: tuple[str, ...]
    association: str
    reference: bool = False
    clock: ClockModel = field(default_factory=ClockModel.ideal)
    receiver_jitter: Optional[JitterSpec] = None
    bridge: Optional[BridgeConfig] = None


@dataclass(frozen=True)
class WirelessConfig:
    propagation_ns: int = 500
    loss: Fraction = Fraction(0)
    sender_access_delay: JitterSpec = field(default_factory=JitterSpec.none)
    receiver_jitter: JitterSpec = field(default_factory=JitterSpec.none)
    propagation_overrides: tuple[tuple[str, str, int], ...] = ()
    loss_overrides: tuple[tuple[str, str, Fraction], ...] = ()


@dataclass(frozen=True)
class CorrectionConfig:
    mode: str = "unicast"          # unicast | broadcast
    latency_ns: int = 200_000
    latency_jitter: JitterSpec = field(default_factory=JitterSpec.none)


@dataclass(frozen=True)
class DbConfig:
    publish: str = "on_request"    # on_request | cyclic
    cyclic_period_ns: int = 1_000_000_000
    query_latency_ns: int = 1_000_000


@dataclass(frozen=True)
class PublishPlanningConfig:
    handover_rate_per_s: float = 0.0
    channel_busy: float = 0.0
    payload_budget_bytes: int = 1400
    entry_size_bytes: int = 20
    cyclic_rate_threshold_per_s: float = 0.1


@dataclass(frozen=True)
class SamplingConfig:
    interval_ns: int = 102_400_000
    start_ns: int = 250_000_000


@dataclass(frozen=True)
class HandoverEvent:
    at_ns: int
    station: str
    to_ap: str
    in_range: Optional[tuple[str, ...]] = None


@dataclass(frozen=True)
class SensorConfig:
    enabled: bool = False
    axis_min_m: float = 0.0
    axis_max_m: float = 2.0
    noise_lo_um: float = 3.0
    noise_hi_um: float = 63.0
    adc_bits: int = 12


@dataclass(frozen=True)
class DemonstratorConfig:
    station_a: str
    station_b: str
    p1_m: float = 0.0
    p2_m: float = 2.0
    v_max_mps: float = 4.0
    a_max_mps2: float = 30.0
    trigger_at_ns: int = 1_000_000_000
    trigger_guard_ns: int = 50_000_000
    sample_dt_ns: int = 1_000_000
    gpio_latency: JitterSpec = field(default_factory=lambda: JitterSpec.uniform(0, 250_000))
    sensor: SensorConfig = field(default_factory=SensorConfig)


@dataclass(frozen=True)
class BaselineSection:
    slaves: tuple[str, ...] = ("slave_a",)
    sync_interval_ns: int = 125_000_000
    turnaround_ns: int = 1_000_000
    link_delay_ns: int = 500
    asymmetry_ns: int = 0
    timestamp_granularity_ns: int = 1
    timestamp_jitter: JitterSpec = field(default_factory=JitterSpec.none)
    contention: JitterSpec = field(default_factory=JitterSpec.none)
    slave_clock: ClockModel = field(default_factory=ClockModel.ideal)


@dataclass(frozen=True)
class OutputConfig:
    export_replay: bool = False


@dataclass(frozen=True)
class Scenario:
    name: str
    method: str
    duration_ns: int
    seed: int
    description: str = ""
    aps: tuple[ApConfig, ...] = ()
    stations: tuple[StationConfig, ...] = ()
    wireless: WirelessConfig = field(default_factory=WirelessConfig)
    wired_delay_ns: int = 500
    correction: CorrectionConfig = field(default_factory=CorrectionConfig)
    db: DbConfig = field(default_factory=DbConfig)
    publish_planning: PublishPlanningConfig = field(default_factory=PublishPlanningConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    handovers: tuple[HandoverEvent, ...] = ()
    demonstrator: Optional[DemonstratorConfig] = None
    baseline: Optional[BaselineSection] = None
    output: OutputConfig = field(default_factory=OutputConfig)

    def station(self, name: str) -> StationConfig:
        for st in self.stations:
            if st.name == name:
                return st
        raise KeyError(name)

    def ap(self, name: str) -> ApConfig:
        for ap in self.aps:
            if ap.name == name:
                return ap
        raise KeyError(name)

    @property
    def reference_station(self) -> Optional[StationConfig]:
        for st in self.stations:
            if st.reference:
                return st
        return None


# -- strict reader -----------------------------------------------------------------


class _Reader:
    def __init__(self, data: dict, path: str, errors: list[str]):
        self.data = data
        self.path = path
        self.errors = errors
        self.seen: set[str] = set()

    def _label(self, key: str) -> str:
        return f"[{self.path}] {key}" if self.path else key

    def error(self, message: str) -> None:
        self.errors.append(message)

    def get(self, key: str, types, default=None, required: bool = False):
        self.seen.add(key)
        if key not in self.data:
            if required:
                self.error(f"missing required key {self._label(key)}")
            return default
        value = self.data[key]
        if not isinstance(value, types) or isinstance(value, bool) and bool not in (
            types if isinstance(types, tuple) else (types,)
        ):
            wanted = (
                "/".join(t.__name__ for t in types)
                if isinstance(types, tuple)
                else types.__name__
            )
            self.error(f"{self._label(key)} must be {wanted}, got {type(value).__name__}")
            return default
        return value

    def time_ns(self, base: str, default: Optional[int] = None, required: bool = False):
        """Read `<base>_ns` (int) or `<base>_s` (number), exactly one."""
        key_ns, key_s = f"{base}_ns", f"{base}_s"
        self.seen.update((key_ns, key_s))
        has_ns, has_s = key_ns in self.data, key_s in self.data
        if has_ns and has_s:
            self.error(f"{self._label(base)}: give {key_ns} or {key_s}, not both")
            return default
        if has_ns:
            value = self.data[key_ns]
            if not isinstance(value, int) or isinstance(value, bool):
                self.error(f"{self._label(key_ns)} must be int, got {type(value).__name__}")
                return default
            return value
        if has_s:
            value = self.data[key_s]
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                self.error(f"{self._label(key_s)} must be a number, got {type(value).__name__}")
                return default
            return round(value * NS_PER_S)
        if required:
            self.error(f"missing required key {self._label(key_ns)} (or {key_s})")
        return default

    def str_list(self, key: str, required: bool = False) -> Optional[tuple[str, ...]]:
        value = self.get(key, list, required=required)
        if value is None:
            return None
        if not all(isinstance(v, str) for v in value):
            self.error(f"{self._label(key)} must be a list of strings")
            return None
        return tuple(value)

    def table(self, key: str) -> Optional["_Reader"]:
        self.seen.add(key)
        if key not in self.data:
            return None
        value = self.data[key]
        if not isinstance(value, dict):
            self.error(f"{self._label(key)} must be a table")
            return None
        sub = f"{self.path}.{key}" if self.path else key
        return _Reader(value, sub, self.errors)

    def table_array(self, key: str) -> list["_Reader"]:
        self.seen.add(key)
        if key not in self.data:
            return []
        value = self.data[key]
        if not isinstance(value, list) or not all(isinstance(v, dict) for v in value):
            self.error(f"{self._label(key)} must be an array of tables")
            return []
        sub = f"{self.path}.{key}" if self.path else key
        return [_Reader(v, f"{sub}[{i}]", self.errors) for i, v in enumerate(value)]

    def finish(self) -> None:
        for key in self.data:
            if key not in self.seen:
                self.error(f"unknown key {self._label(key)}")


# -- section parsers -----------------------------------------------------------------


def _read_jitter(r: Optional[_Reader], default: JitterSpec) -> JitterSpec:
    if r is None:
        return default
    kind = r.get("kind", str, default="none")
    lo = r.time_ns("lo", 0)
    hi = r.time_ns("hi", 0)
    mean = r.time_ns("mean", 0)
    sigma = r.time_ns("sigma", 0)
    r.finish()
    try:
        return JitterSpec(kind=kind, lo=lo, hi=hi, mean=mean, sigma=sigma)
    except ClockConfigError as exc:
        r.error(f"[{r.path}] {exc}")
        return default


def _read_clock(r: Optional[_Reader]) -> ClockModel:
    if r is None:
        return ClockModel.ideal()
    offset = r.time_ns("initial_offset", 0)
    drift = r.get("drift_ppm", (int, float, str), default=0)
    granularity = r.time_ns("granularity", 1)
    jitter = _read_jitter(r.table("read_jitter"), JitterSpec.none())
    r.finish()
    try:
        return ClockModel(
            initial_offset=offset,
            drift_ppm=drift,
            granularity=granularity,
            read_jitter=jitter,
        )
    except (ClockConfigError, ValueError) as exc:
        r.error(f"[{r.path}] {exc}")
        return ClockModel.ideal()


def _read_fraction(r: _Reader, key: str, default: Fraction) -> Fraction:
    value = r.get(key, (int, float, str))
    if value is None:
        return default
    try:
        frac = Fraction(str(value)) if isinstance(value, float) else Fraction(value)
    except (ValueError, ZeroDivisionError):
        r.error(f"[{r.path}] {key} is not a valid probability: {value!r}")
        return default
    if not 0 <= frac <= 1:
        r.error(f"[{r.path}] {key} must be in [0, 1], got {value}")
        return default
    return frac


def _read_scenario_table(root: _Reader) -> dict[str, Any]:
    r = root.table("scenario")
    out: dict[str, Any] = {}
    if r is None:
        root.error("missing required table [scenario]")
        return out
    out["name"] = r.get("name", str, required=True, default="unnamed")
    out["method"] = r.get("method", str, required=True, default="rbis")
    if out["method"] not in METHODS:
        r.error(f"[scenario] method must be one of {METHODS}, got {out['method']!r}")
        out["method"] = "rbis"
    out["duration_ns"] = r.time_ns("duration", required=True, default=NS_PER_S)
    out["seed"] = r.get("seed", int, required=True, default=0)
    out["description"] = r.get("description", str, default="")
    r.finish()
    return out


def _read_aps(root: _Reader) -> tuple[ApConfig, ...]:
    r = root.table("aps")
    if r is None:
        return ()
    aps = []
    for name in r.data:
        sub = r.table(name)
        if sub is None:
            continue
        bssid_text = sub.get("bssid", str, required=True, default="00:00:00:00:00:00")
        try:
            bssid = parse_bssid(bssid_text)
        except BeaconCodecError as exc:
            sub.error(f"[aps.{name}] {exc}")
            bssid = b"\x00" * 6
        ssid = sub.get("ssid", str, default=name)
        interval = sub.get("beacon_interval_tu", int, default=100)
        if interval is not None and not 1 <= interval < 2**16:
            sub.error(f"[aps.{name}] beacon_interval_tu must be in [1, 65535], got {interval}")
            interval = 100
        epoch = sub.time_ns("tsf_epoch", 0)
        clock = _read_clock(sub.table("tsf_clock"))
        sub.finish()
        aps.append(
            ApConfig(
                name=name,
                bssid=bssid,
                ssid=ssid.encode("utf-8"),
                beacon_interval_tu=interval,
                tsf_epoch_ns=epoch,
                tsf_clock=clock,
            )
        )
    r.finish()
    return tuple(aps)


def _read_stations(root: _Reader) -> tuple[StationConfig, ...]:
    r = root.table("stations")
    if r is None:
        return ()
    stations = []
    for name in r.data:
        sub = r.table(name)
        if sub is None:
            continue
        in_range = sub.str_list("in_range", required=True) or ()
        association = sub.get("association", str, required=True, default="")
        reference = sub.get("reference", bool, default=False)
        clock = _read_clock(sub.table("clock"))
        rx_jitter_table = sub.table("receiver_jitter")
        rx_jitter = (
            None if rx_jitter_table is None else _read_jitter(rx_jitter_table, JitterSpec.none())
        )
        bridge = None
        bridge_table = sub.table("bridge")
        if bridge_table is not None:
            bridge = BridgeConfig(
                from_ap=bridge_table.get("from_ap", str, required=True, default=""),
                to_ap=bridge_table.get("to_ap", str, required=True, default=""),
                publish_corrections=bridge_table.get("publish_corrections", bool, default=True),
            )
            bridge_table.finish()
        sub.finish()
        stations.append(
            StationConfig(
                name=name,
                in_range=in_range,
                association=association,
                reference=reference,
                clock=clock,
                receiver_jitter=rx_jitter,
                bridge=bridge,
            )
        )
    r.finish()
    return tuple(stations)


def _read_wireless(root: _Reader) -> WirelessConfig:
    r = root.table("wireless")
    if r is None:
        return WirelessConfig()
    propagation = r.time_ns("propagation", 500)
    loss = _read_fraction(r, "loss", Fraction(0))
    sender = _read_jitter(r.table("sender_access_delay"), JitterSpec.none())
    receiver = _read_jitter(r.table("receiver_jitter"), JitterSpec.none())
    prop_over = []
    for o in r.table_array("propagation_overrides"):
        ap = o.get("ap", str, required=True, default="")
        station = o.get("station", str, required=True, default="")
        ns = o.time_ns("delay", required=True, default=0)
        o.finish()
        prop_over.append((ap, station, ns))
    loss_over = []
    for o in r.table_array("loss_overrides"):
        ap = o.get("ap", str, required=True, default="")
        station = o.get("station", str, required=True, default="")
        p = _read_fraction(o, "p", Fraction(0))
        o.seen.add("p")
        o.finish()
        loss_over.append((ap, station, p))
    r.finish()
    return WirelessConfig(
        propagation_ns=propagation,
        loss=loss,
        sender_access_delay=sender,
        receiver_jitter=receiver,
        propagation_overrides=tuple(prop_over),
        loss_overrides=tuple(loss_over),
    )


def _read_correction(root: _Reader) -> CorrectionConfig:
    r = root.table("correction")
    if r is None:
        return CorrectionConfig()
    mode = r.get("mode", str, default="unicast")
    if mode not in ("unicast", "broadcast"):
        r.error(f"[correction] mode must be unicast or broadcast, got {mode!r}")
        mode = "unicast"
    latency = r.time_ns("latency", 200_000)
    jitter = _read_jitter(r.table("latency_jitter"), JitterSpec.none())
    r.finish()
    return CorrectionConfig(mode=mode, latency_ns=latency, latency_jitter=jitter)


def _read_db(root: _Reader) -> DbConfig:
    r = root.table("db")
    if r is None:
        return DbConfig()
    publish = r.get("publish", str, default="on_request")
    if publish not in ("on_request", "cyclic"):
        r.error(f"[db] publish must be on_request or cyclic, got {publish!r}")
        publish = "on_request"
    period = r.time_ns("cyclic_period", 1_000_000_000)
    latency = r.time_ns("query_latency", 1_000_000)
    r.finish()
    return DbConfig(publish=publish, cyclic_period_ns=period, query_latency_ns=latency)


def _read_publish_planning(root: _Reader) -> PublishPlanningConfig:
    r = root.table("publish_planning")
    if r is None:
        return PublishPlanningConfig()
    cfg = PublishPlanningConfig(
        handover_rate_per_s=float(r.get("handover_rate_per_s", (int, float), default=0.0)),
        channel_busy=float(r.get("channel_busy", (int, float), default=0.0)),
        payload_budget_bytes=r.get("payload_budget_bytes", int, default=1400),
        entry_size_bytes=r.get("entry_size_bytes", int, default=20),
        cyclic_rate_threshold_per_s=float(
            r.get("cyclic_rate_threshold_per_s", (int, float), default=0.1)
        ),
    )
    r.finish()
    return cfg


def _read_sampling(root: _Reader) -> SamplingConfig:
    r = root.table("sampling")
    if r is None:
        return SamplingConfig()
    interval = r.time_ns("interval", 102_400_000)
    start = r.time_ns("start", 250_000_000)
    r.finish()
    return SamplingConfig(interval_ns=interval, start_ns=start)


def _read_handovers(root: _Reader) -> tuple[HandoverEvent, ...]:
    events = []
    for r in root.table_array("handover"):
        at = r.time_ns("at", required=True, default=0)
        station = r.get("station", str, required=True, default="")
        to_ap = r.get("to_ap", str, required=True, default="")
        in_range = r.str_list("in_range")
        r.finish()
        events.append(HandoverEvent(at_ns=at, station=station, to_ap=to_ap, in_range=in_range))
    return tuple(events)


def _read_demonstrator(root: _Reader) -> Optional[DemonstratorConfig]:
    r = root.table("demonstrator")
    if r is None:
        return None
    station_a = r.get("station_a", str, required=True, default="")
    station_b = r.get("station_b", str, required=True, default="")
    p1 = float(r.get("p1_m", (int, float), default=0.0))
    p2 = float(r.get("p2_m", (int, float), default=2.0))
    v_max = float(r.get("v_max_mps", (int, float), default=4.0))
    a_max = float(r.get("a_max_mps2", (int, float), default=30.0))
    trigger_at = r.time_ns("trigger_at", 1_000_000_000)
    guard = r.time_ns("trigger_guard", 50_000_000)
    sample_dt = r.time_ns("sample_dt", 1_000_000)
    gpio = _read_jitter(r.table("gpio_latency"), JitterSpec.uniform(0, 250_000))
    sensor = _read_sensor(r.table("sensor"), p1, p2)
    r.finish()
    return DemonstratorConfig(
        station_a=station_a,
        station_b=station_b,
        p1_m=p1,
        p2_m=p2,
        v_max_mps=v_max,
        a_max_mps2=a_max,
        trigger_at_ns=trigger_at,
        trigger_guard_ns=guard,
        sample_dt_ns=sample_dt,
        gpio_latency=gpio,
        sensor=sensor,
    )


def _read_sensor(r: Optional[_Reader], p1: float, p2: float) -> SensorConfig:
    if r is None:
        return SensorConfig(axis_min_m=min(p1, p2), axis_max_m=max(p1, p2))
    cfg = SensorConfig(
        enabled=r.get("enabled", bool, default=False),
        axis_min_m=float(r.get("axis_min_m", (int, float), default=min(p1, p2))),
        axis_max_m=float(r.get("axis_max_m", (int, float), default=max(p1, p2))),
        noise_lo_um=float(r.get("noise_lo_um", (int, float), default=3.0)),
        noise_hi_um=float(r.get("noise_hi_um", (int, float), default=63.0)),
        adc_bits=r.get("adc_bits", int, default=12),
    )
    r.finish()
    return cfg


def _read_baseline(root: _Reader) -> Optional[BaselineSection]:
    r = root.table("baseline")
    if r is None:
        return None
    slaves = r.str_list("slaves") or ("slave_a",)
    cfg = BaselineSection(
        slaves=slaves,
        sync_interval_ns=r.time_ns("sync_interval", 125_000_000),
        turnaround_ns=r.time_ns("turnaround", 1_000_000),
        link_delay_ns=r.time_ns("link_delay", 500),
        asymmetry_ns=r.time_ns("asymmetry", 0),
        timestamp_granularity_ns=r.time_ns("timestamp_granularity", 1),
        timestamp_jitter=_read_jitter(r.table("timestamp_jitter"), JitterSpec.none()),
        contention=_read_jitter(r.table("contention"), JitterSpec.none()),
        slave_clock=_read_clock(r.table("slave_clock")),
    )
    r.finish()
    return cfg


def _read_output(root: _Reader) -> OutputConfig:
    r = root.table("output")
    if r is None:
        return OutputConfig()
    cfg = OutputConfig(export_replay=r.get("export_replay", bool, default=False))
    r.finish()
    return cfg


# -- semantic validation --------------------------------------------------------------


def _validate(sc: Scenario, errors: list[str]) -> None:
    if sc.duration_ns is None or sc.duration_ns <= 0:
        errors.append(f"duration must be positive, got {sc.duration_ns}")
    if sc.method == "rbis":
        _validate_rbis(sc, errors)
    else:
        if sc.baseline is None:
            errors.append(f"method {sc.method!r} requires a [baseline] table")
        if sc.method == "gptp_wired" and sc.baseline and sc.baseline.contention.kind != "none":
            errors.append("[baseline] contention is only meaningful for ptp_wifi")
    if sc.demonstrator is not None:
        _validate_demo(sc, errors)


def _validate_rbis(sc: Scenario, errors: list[str]) -> None:
    if not sc.aps:
        errors.append("rbis method requires at least one [aps.<name>] table")
    if not sc.stations:
        errors.append("rbis method requires at least one [stations.<name>] table")
    ap_names = {ap.name for ap in sc.aps}
    bssids: dict[bytes, str] = {}
    for ap in sc.aps:
        if ap.bssid in bssids:
            errors.append(f"duplicate bssid for APs {bssids[ap.bssid]!r} and {ap.name!r}")
        bssids[ap.bssid] = ap.name
    refs = [st.name for st in sc.stations if st.reference]
    if len(refs) != 1:
        errors.append(f"exactly one station must set reference = true, found {refs or 'none'}")
    for st in sc.stations:
        if st.reference and st.bridge is not None:
            errors.append(f"reference station {st.name!r} cannot also be a bridge")
    for st in sc.stations:
        unknown = [a for a in st.in_range if a not in ap_names]
        if unknown:
            errors.append(f"station {st.name!r} in_range references unknown APs {unknown}")
        if st.association not in st.in_range:
            errors.append(
                f"station {st.name!r} associated to {st.association!r} outside its in_range"
            )
        if st.bridge is not None:
            for leg in (st.bridge.from_ap, st.bridge.to_ap):
                if leg not in st.in_range:
                    errors.append(
                        f"bridge station {st.name!r} must have {leg!r} in range"
                    )
            if st.bridge.from_ap == st.bridge.to_ap:
                errors.append(f"bridge station {st.name!r} relates an AP to itself")
    station_names = {st.name for st in sc.stations}
    for ho in sc.handovers:
        if ho.station not in station_names:
            errors.append(f"handover references unknown station {ho.station!r}")
        elif ho.station in refs:
            errors.append(f"the wired reference station {ho.station!r} cannot hand over")
        if ho.to_ap not in ap_names:
            errors.append(f"handover references unknown AP {ho.to_ap!r}")
        if ho.in_range is not None:
            unknown = [a for a in ho.in_range if a not in ap_names]
            if unknown:
                errors.append(f"handover in_range references unknown APs {unknown}")
            if ho.to_ap not in ho.in_range:
                errors.append(
                    f"handover of {ho.station!r} to {ho.to_ap!r} not inside its new in_range"
                )
    for ap, station, _ in sc.wireless.propagation_overrides:
        if ap not in ap_names or station not in station_names:
            errors.append(f"propagation override references unknown pair ({ap!r}, {station!r})")
    for ap, station, _ in sc.wireless.loss_overrides:
        if ap not in ap_names or station not in station_names:
            errors.append(f"loss override references unknown pair ({ap!r}, {station!r})")


def _validate_demo(sc: Scenario, errors: list[str]) -> None:
    demo = sc.demonstrator
    assert demo is not None
    if demo.p1_m == demo.p2_m:
        errors.append("[demonstrator] p1_m and p2_m must differ")
    if sc.method == "rbis":
        names = {st.name for st in sc.stations}
    else:
        names = set(sc.baseline.slaves) if sc.baseline else set()
    for who in (demo.station_a, demo.station_b):
        if who not in names:
            errors.append(f"[demonstrator] unknown station {who!r}")
    if demo.trigger_at_ns >= sc.duration_ns:
        errors.append("[demonstrator] trigger_at must fall inside the scenario duration")


# -- public API ----------------------------------------------------------------------


def scenario_from_raw(raw: dict) -> Scenario:
    errors: list[str] = []
    root = _Reader(raw, "", errors)
    head = _read_scenario_table(root)
    sc = Scenario(
        name=head.get("name", "unnamed"),
        method=head.get("method", "rbis"),
        duration_ns=head.get("duration_ns") or 0,
        seed=head.get("seed") or 0,
        description=head.get("description", ""),
        aps=_read_aps(root),
        stations=_read_stations(root),
        wireless=_read_wireless(root),
        wired_delay_ns=_read_wired(root),
        correction=_read_correction(root),
        db=_read_db(root),
        publish_planning=_read_publish_planning(root),
        sampling=_read_sampling(root),
        handovers=_read_handovers(root),
        demonstrator=_read_demonstrator(root),
        baseline=_read_baseline(root),
        output=_read_output(root),
    )
    root.finish()
    if not errors:
        _validate(sc, errors)
    if errors:
        raise ScenarioError(errors)
    return sc


def _read_wired(root: _Reader) -> int:
    r = root.table("wired")
    if r is None:
        return 500
    delay = r.time_ns("delay", 500)
    r.finish()
    return delay


def load_raw(path: Union[str, Path]) -> dict:
    text = Path(path).read_bytes()
    try:
        return tomllib.loads(text.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError([f"TOML parse error in {path}: {exc}"]) from exc


def load_scenario(path: Union[str, Path]) -> Scenario:
    return scenario_from_raw(load_raw(path))


# -- serialization ---------------------------------------------------------------------


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, Fraction):
        return repr(float(value))
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {value!r}")


class _TomlWriter:
    def __init__(self) -> None:
        self.lines: list[str] = []

    def kv(self, key: str, value: Any) -> None:
        self.lines.append(f"{key} = {_toml_value(value)}")

    def table(self, name: str) -> None:
        if self.lines:
            self.lines.append("")
        self.lines.append(f"[{name}]")

    def array_table(self, name: str) -> None:
        if self.lines:
            self.lines.append("")
        self.lines.append(f"[[{name}]]")

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def _write_jitter(w: _TomlWriter, name: str, spec: JitterSpec) -> None:
    w.table(name)
    w.kv("kind", spec.kind)
    if spec.kind == "uniform":
        w.kv("lo_ns", spec.lo)
        w.kv("hi_ns", spec.hi)
    elif spec.kind == "normal":
        w.kv("mean_ns", spec.mean)
        w.kv("sigma_ns", spec.sigma)


def _write_clock(w: _TomlWriter, name: str, clock: ClockModel) -> None:
    w.table(name)
    w.kv("initial_offset_ns", clock.initial_offset)
    w.kv("drift_ppm", str(clock.drift_ppm))
    w.kv("granularity_ns", clock.granularity)
    _write_jitter(w, f"{name}.read_jitter", clock.read_jitter)


def scenario_to_toml(sc: Scenario) -> str:
    """Canonical serialization; reloading it reproduces an equal Scenario."""
    w = _TomlWriter()
    w.table("scenario")
    w.kv("name", sc.name)
    w.kv("method", sc.method)
    w.kv("duration_ns", sc.duration_ns)
    w.kv("seed", sc.seed)
    if sc.description:
        w.kv("description", sc.description)

    for ap in sc.aps:
        w.table(f"aps.{ap.name}")
        w.kv("bssid", ":".join(f"{b:02x}" for b in ap.bssid))
        w.kv("ssid", ap.ssid.decode("utf-8"))
        w.kv("beacon_interval_tu", ap.beacon_interval_tu)
        w.kv("tsf_epoch_ns", ap.tsf_epoch_ns)
        _write_clock(w, f"aps.{ap.name}.tsf_clock", ap.tsf_clock)

    for st in sc.stations:
        w.table(f"stations.{st.name}")
        w.kv("in_range", list(st.in_range))
        w.kv("association", st.association)
        w.kv("reference", st.reference)
        _write_clock(w, f"stations.{st.name}.clock", st.clock)
        if st.receiver_jitter is not None:
            _write_jitter(w, f"stations.{st.name}.receiver_jitter", st.receiver_jitter)
        if st.bridge is not None:
            w.table(f"stations.{st.name}.bridge")
            w.kv("from_ap", st.bridge.from_ap)
            w.kv("to_ap", st.bridge.to_ap)
            w.kv("publish_corrections", st.bridge.publish_corrections)

    w.table("wireless")
    w.kv("propagation_ns", sc.wireless.propagation_ns)
    w.kv("loss", sc.wireless.loss)
    _write_jitter(w, "wireless.sender_access_delay", sc.wireless.sender_access_delay)
    _write_jitter(w, "wireless.receiver_jitter", sc.wireless.receiver_jitter)
    for ap, station, ns in sc.wireless.propagation_overrides:
        w.array_table("wireless.propagation_overrides")
        w.kv("ap", ap)
        w.kv("station", station)
        w.kv("delay_ns", ns)
    for ap, station, p in sc.wireless.loss_overrides:
        w.array_table("wireless.loss_overrides")
        w.kv("ap", ap)
        w.kv("station", station)
        w.kv("p", p)

    w.table("wired")
    w.kv("delay_ns", sc.wired_delay_ns)

    w.table("correction")
    w.kv("mode", sc.correction.mode)
    w.kv("latency_ns", sc.correction.latency_ns)
    _write_jitter(w, "correction.latency_jitter", sc.correction.latency_jitter)

    w.table("db")
    w.kv("publish", sc.db.publish)
    w.kv("cyclic_period_ns", sc.db.cyclic_period_ns)
    w.kv("query_latency_ns", sc.db.query_latency_ns)

    w.table("publish_planning")
    w.kv("handover_rate_per_s", sc.publish_planning.handover_rate_per_s)
    w.kv("channel_busy", sc.publish_planning.channel_busy)
    w.kv("payload_budget_bytes", sc.publish_planning.payload_budget_bytes)
    w.kv("entry_size_bytes", sc.publish_planning.entry_size_bytes)
    w.kv("cyclic_rate_threshold_per_s", sc.publish_planning.cyclic_rate_threshold_per_s)

    w.table("sampling")
    w.kv("interval_ns", sc.sampling.interval_ns)
    w.kv("start_ns", sc.sampling.start_ns)

    for ho in sc.handovers:
        w.array_table("handover")
        w.kv("at_ns", ho.at_ns)
        w.kv("station", ho.station)
        w.kv("to_ap", ho.to_ap)
        if ho.in_range is not None:
            w.kv("in_range", list(ho.in_range))

    if sc.demonstrator is not None:
        d = sc.demonstrator
        w.table("demonstrator")
        w.kv("station_a", d.station_a)
        w.kv("station_b", d.station_b)
        w.kv("p1_m", d.p1_m)
        w.kv("p2_m", d.p2_m)
        w.kv("v_max_mps", d.v_max_mps)
        w.kv("a_max_mps2", d.a_max_mps2)
        w.kv("trigger_at_ns", d.trigger_at_ns)
        w.kv("trigger_guard_ns", d.trigger_guard_ns)
        w.kv("sample_dt_ns", d.sample_dt_ns)
        _write_jitter(w, "demonstrator.gpio_latency", d.gpio_latency)
        w.table("demonstrator.sensor")
        w.kv("enabled", d.sensor.enabled)
        w.kv("axis_min_m", d.sensor.axis_min_m)
        w.kv("axis_max_m", d.sensor.axis_max_m)
        w.kv("noise_lo_um", d.sensor.noise_lo_um)
        w.kv("noise_hi_um", d.sensor.noise_hi_um)
        w.kv("adc_bits", d.sensor.adc_bits)

    if sc.baseline is not None:
        b = sc.baseline
        w.table("baseline")
        w.kv("slaves", list(b.slaves))
        w.kv("sync_interval_ns", b.sync_interval_ns)
        w.kv("turnaround_ns", b.turnaround_ns)
        w.kv("link_delay_ns", b.link_delay_ns)
        w.kv("asymmetry_ns", b.asymmetry_ns)
        w.kv("timestamp_granularity_ns", b.timestamp_granularity_ns)
        _write_jitter(w, "baseline.timestamp_jitter", b.timestamp_jitter)
        _write_jitter(w, "baseline.contention", b.contention)
        _write_clock(w, "baseline.slave_clock", b.slave_clock)

    w.table("output")
    w.kv("export_replay", sc.output.export_replay)
    return w.text()


def scenario_hash(sc: Scenario) -> str:
    from .metrics import text_hash

    return text_hash(scenario_to_toml(sc))


def set_by_path(raw: dict, dotted: str, value: Any) -> None:
    """Assign into a raw scenario dict by dotted path; '*' fans out over a table.

    Used by parameter sweeps, so the addressed leaf must already exist and be
    numeric.
    """
    parts = dotted.split(".")
    targets: list[dict] = [raw]
    for part in parts[:-1]:
        next_targets: list[dict] = []
        for t in targets:
            if part == "*":
                next_targets.extend(v for v in t.values() if isinstance(v, dict))
                continue
            child = t.get(part)
            if not isinstance(child, dict):
                raise ScenarioError([f"sweep path {dotted!r}: {part!r} is not a table"])
            next_targets.append(child)
        targets = next_targets
        if not targets:
            raise ScenarioError([f"sweep path {dotted!r} matches nothing"])
    leaf = parts[-1]
    for t in targets:
        if leaf not in t:
            raise ScenarioError([f"sweep path {dotted!r}: key {leaf!r} not present"])
        if isinstance(t[leaf], bool) or not isinstance(t[leaf], (int, float)):
            raise ScenarioError([f"sweep path {dotted!r} does not address a numeric field"])
        t[leaf] = value
