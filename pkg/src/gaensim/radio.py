"""Distance-based reception and the discrete-event world loop."""

from __future__ import annotations

import bisect
import heapq
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .crypto import DEFAULT_TX_POWER
from .device import AdvertisementPacket, Device
from .trace import TraceLog

DEFAULT_SCAN_PERIOD = 240.0
IOS_SCAN_PERIOD = 210.0
SCAN_WINDOW = 4.0
MIN_DISTANCE = 0.1


@dataclass(frozen=True)
class Position:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("position coordinates must be finite")

    def distance(self, other: "Position") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class PathLossModel:
    """Log-distance path loss with a logistic reception curve.

    Reception probability is ``1 / (1 + exp((att - midpoint_db) / slope_db))``
    for attenuation below ``reception_floor_db`` and zero beyond it. The
    defaults give p >= 0.99 inside a metre, p < 0.01 past 20 m and no
    reception past about 23 m.
    """

    reference_loss_db: float = 40.0
    exponent: float = 2.2
    reception_floor_db: float = 70.0
    midpoint_db: float = 54.0
    slope_db: float = 2.5
    reference_tx_power: float = DEFAULT_TX_POWER

    def __post_init__(self):
        if self.exponent <= 0:
            raise ValueError("path loss exponent must be positive")
        if self.slope_db <= 0:
            raise ValueError("slope_db must be positive")

    def attenuation(self, distance: float, tx_power: float | None = None) -> float:
        if not distance > 0:
            raise ValueError(f"distance must be positive, got {distance}")
        offset = 0.0 if tx_power is None else tx_power - self.reference_tx_power
        return self.reference_loss_db + 10.0 * self.exponent * math.log10(distance) - offset

    def attenuation_array(self, distance: np.ndarray, tx_power: float | None = None) -> np.ndarray:
        offset = 0.0 if tx_power is None else tx_power - self.reference_tx_power
        return self.reference_loss_db + 10.0 * self.exponent * np.log10(distance) - offset

    def probability_array(self, att: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            p = 1.0 / (1.0 + np.exp((att - self.midpoint_db) / self.slope_db))
        return np.where(att >= self.reception_floor_db, 0.0, p)

    def probability_for_attenuation(self, att: float) -> float:
        if att >= self.reception_floor_db:
            return 0.0
        z = (att - self.midpoint_db) / self.slope_db
        return 1.0 / (1.0 + math.exp(z))

    def reception_probability(
        self, distance: float, tx_power: float | None = None, extra_db: float = 0.0
    ) -> float:
        return self.probability_for_attenuation(self.attenuation(distance, tx_power) + extra_db)


@dataclass
class Placement:
    """Static position or piecewise-linear path through ``(t, x, y)`` waypoints."""

    position: Position
    waypoints: list[tuple[float, float, float]] = field(default_factory=list)

    def __post_init__(self):
        self.waypoints = sorted(self.waypoints, key=lambda w: w[0])
        self._times = [w[0] for w in self.waypoints]

    @property
    def mobile(self) -> bool:
        return bool(self.waypoints)

    def at(self, t: float) -> Position:
        wps = self.waypoints
        if not wps:
            return self.position
        i = bisect.bisect_right(self._times, t)
        if i == 0:
            return Position(wps[0][1], wps[0][2])
        if i == len(wps):
            return Position(wps[-1][1], wps[-1][2])
        t0, x0, y0 = wps[i - 1]
        t1, x1, y1 = wps[i]
        f = (t - t0) / (t1 - t0)
        return Position(x0 + f * (x1 - x0), y0 + f * (y1 - y0))

    def xy(self, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised :meth:`at` returning coordinate arrays."""
        if not self.waypoints:
            n = len(times)
            return np.full(n, self.position.x), np.full(n, self.position.y)
        if not hasattr(self, "_wx"):
            arr = np.array(self.waypoints, dtype=float)
            # np.interp needs increasing abscissae; duplicated times keep the later point
            self._wt, self._wx, self._wy = arr[:, 0], arr[:, 1], arr[:, 2]
        return (np.interp(times, self._wt, self._wx),
                np.interp(times, self._wt, self._wy))


@dataclass
class DeviceNode:
    device: Device
    placement: Placement
    scan_period: float | None = DEFAULT_SCAN_PERIOD
    extra_attenuation: float = 0.0
    next_scan: float = math.inf

    @property
    def name(self) -> str:
        return self.device.device_id


@dataclass
class SnifferNode:
    """Receive-only attacker radio. It never transmits."""

    name: str
    placement: Placement
    scan_period: float = 10.0
    scan_window: float = 2.0
    location_label: str | None = None
    log: list[tuple[float, bytes, bytes, float]] = field(default_factory=list)
    next_scan: float = math.inf


class World:
    """Owns devices, sniffers and the clock; delivers advertisements during scans.

    Advertisements are materialised only while some scanner is listening;
    the rest are counted in ``trace.emission_count``.
    """

    def __init__(
        self,
        model: PathLossModel | None = None,
        seed: int = 0,
        *,
        scan_window: float = SCAN_WINDOW,
        trace: TraceLog | None = None,
        trace_emissions: bool = False,
        log_deliveries: bool = True,
    ):
        self.model = model or PathLossModel()
        self.seed = seed
        self.scan_window = scan_window
        self.trace = trace if trace is not None else TraceLog()
        self.trace_emissions = trace_emissions
        self.log_deliveries = log_deliveries
        self.clock = 0.0
        self.devices: list[DeviceNode] = []
        self.sniffers: list[SnifferNode] = []
        self._seq = np.random.SeedSequence(seed)
        self.rng = np.random.default_rng(self._seq.spawn(1)[0])
        self._buffers: dict[str, list[AdvertisementPacket]] = {}
        self._actions: list[tuple[float, int, Callable[[], None]]] = []
        self._action_seq = 0
        self.scan_events: dict[str, list[float]] = {}

    # -- construction ---------------------------------------------------

    def device_rng(self) -> np.random.Generator:
        return np.random.default_rng(self._seq.spawn(1)[0])

    def _hook(self, kind, t, src, address, payload):
        self.trace.record(kind, t, src, "", address, payload)

    def add_device(
        self,
        device_id: str,
        position: Position | tuple[float, float] = (0.0, 0.0),
        *,
        waypoints=None,
        scan_period: float | None = DEFAULT_SCAN_PERIOD,
        extra_attenuation: float = 0.0,
        **device_kwargs,
    ) -> DeviceNode:
        if any(n.name == device_id for n in self.devices):
            raise ValueError(f"duplicate device id {device_id!r}")
        if not isinstance(position, Position):
            position = Position(*position)
        device = Device(
            device_id,
            self.device_rng(),
            start_time=self.clock,
            event_hook=self._hook,
            scan_period=scan_period or DEFAULT_SCAN_PERIOD,
            **device_kwargs,
        )
        node = DeviceNode(device, Placement(position, list(waypoints or [])), scan_period,
                          extra_attenuation)
        if scan_period:
            node.next_scan = self.clock + float(self.rng.uniform(0.0, scan_period))
        self.devices.append(node)
        self._buffers[device_id] = []
        self.scan_events[device_id] = []
        return node

    def add_sniffer(
        self,
        name: str,
        position: Position | tuple[float, float],
        *,
        waypoints=None,
        scan_period: float = 10.0,
        scan_window: float = 2.0,
        location_label: str | None = None,
    ) -> SnifferNode:
        if not isinstance(position, Position):
            position = Position(*position)
        node = SnifferNode(name, Placement(position, list(waypoints or [])), scan_period,
                           scan_window, location_label)
        node.next_scan = self.clock + float(self.rng.uniform(0.0, scan_period))
        self.sniffers.append(node)
        self.scan_events[name] = []
        return node

    def device(self, device_id: str) -> Device:
        for n in self.devices:
            if n.name == device_id:
                return n.device
        raise KeyError(device_id)

    def schedule(self, time: float, action: Callable[[], None]) -> None:
        """Run ``action`` when the clock reaches ``time``."""
        heapq.heappush(self._actions, (time, self._action_seq, action))
        self._action_seq += 1

    # -- event loop -----------------------------------------------------

    def _next_event(self):
        best_t, best = math.inf, None
        if self._actions:
            best_t, best = self._actions[0][0], ("action", None)
        for node in self.devices:
            if node.next_scan < best_t:
                best_t, best = node.next_scan, ("scan", node)
            dt = node.device.next_event_time()
            if dt < best_t:
                best_t, best = dt, ("device", node)
        for sn in self.sniffers:
            if sn.next_scan < best_t:
                best_t, best = sn.next_scan, ("sniff", sn)
        return best_t, best

    def step(self, dt: float) -> int:
        """Advance the clock by ``dt`` seconds; returns packets delivered."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        t_end = self.clock + dt
        delivered = 0
        while True:
            te, event = self._next_event()
            if te >= t_end:
                break
            kind, obj = event
            if kind == "action":
                _, _, action = heapq.heappop(self._actions)
                self.clock = max(self.clock, te)
                action()
            elif kind == "device":
                obj.device.advance(te)
            elif kind == "scan":
                obj.next_scan = te + obj.scan_period
                if obj.device.enabled:
                    delivered += self._scan(obj, obj.placement, te, te + self.scan_window)
            else:
                obj.next_scan = te + obj.scan_period
                delivered += self._scan(obj, obj.placement, te, te + obj.scan_window)
        for node in self.devices:
            node.device.advance(t_end)
            cursor = node.device.emit_cursor
            if cursor < t_end:
                n = math.ceil((t_end - cursor) / node.device.advertising_interval)
                if node.device.enabled:
                    self.trace.emission_count += n
                node.device.skip_to(t_end)
        self.clock = t_end
        return delivered

    def _packets(self, node: DeviceNode, a: float, b: float) -> list[AdvertisementPacket]:
        dev = node.device
        buf = self._buffers[node.name]
        if dev.emit_cursor < a:
            skipped = math.ceil((a - dev.emit_cursor) / dev.advertising_interval)
            if dev.enabled:
                self.trace.emission_count += skipped
            dev.skip_to(a)
            buf.clear()
        else:
            while buf and buf[0].emit_time < a:
                buf.pop(0)
        for pkt in dev.emit_until(b):
            self.trace.emission_count += 1
            buf.append(pkt)
            if self.trace_emissions:
                self.trace.record("emit", pkt.emit_time, node.name, "", pkt.address, pkt.payload)
        return [p for p in buf if a <= p.emit_time < b]

    def _scan(self, scanner, placement: Placement, a: float, b: float) -> int:
        self.scan_events[scanner.name].append(a)
        is_sniffer = isinstance(scanner, SnifferNode)
        model = self.model
        received = []
        for node in self.devices:
            if node is scanner:
                continue
            tx_power = node.device.metadata.tx_power
            extra = node.extra_attenuation + (0.0 if is_sniffer else scanner.extra_attenuation)
            static = not (placement.mobile or node.placement.mobile)
            if static:
                d = max(MIN_DISTANCE, placement.at(a).distance(node.placement.at(a)))
                att = model.attenuation(d, tx_power) + extra
                p = model.probability_for_attenuation(att)
                if p == 0.0:
                    # out of range: leave the emitter's cursor for the next scan to skip
                    continue
            packets = self._packets(node, a, b)
            if not packets:
                continue
            draws = self.rng.random(len(packets))
            if static:
                for pkt, u in zip(packets, draws):
                    if u < p:
                        received.append((pkt.emit_time, node.name, pkt, att))
                continue
            ts = np.fromiter((pkt.emit_time for pkt in packets), float, len(packets))
            x0, y0 = placement.xy(ts)
            x1, y1 = node.placement.xy(ts)
            d = np.maximum(MIN_DISTANCE, np.hypot(x0 - x1, y0 - y1))
            atts = model.attenuation_array(d, tx_power) + extra
            hit = draws < model.probability_array(atts)
            for i in np.flatnonzero(hit):
                received.append((packets[i].emit_time, node.name, packets[i], float(atts[i])))
        received.sort(key=lambda r: (r[0], r[1]))
        for t, src, pkt, att in received:
            if is_sniffer:
                scanner.log.append((t, pkt.address, pkt.payload, att))
            else:
                scanner.device.on_receive(pkt, t, att)
            if self.log_deliveries:
                self.trace.record("deliver", t, src, scanner.name, pkt.address, pkt.payload, att)
        return len(received)

    def run_until(self, t: float) -> int:
        if t <= self.clock:
            return 0
        return self.step(t - self.clock)


def attenuation(distance: float, tx_power: float | None = None,
                model: PathLossModel | None = None) -> float:
    return (model or PathLossModel()).attenuation(distance, tx_power)


def reception_probability(distance: float, model: PathLossModel | None = None) -> float:
    return (model or PathLossModel()).reception_probability(distance)


def run(scenario) -> TraceLog:
    """Build the world described by ``scenario`` and run it to completion."""
    world = scenario.build_world()
    if scenario.duration > 0:
        world.run_until(scenario.duration)
    return world.trace
