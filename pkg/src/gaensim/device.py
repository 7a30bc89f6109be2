"""Simulated handset running the exposure notification service."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import crypto
from .errors import AuthorizationError

DAY_SECONDS = 86_400
RETENTION_DAYS = 14
MAX_TEKS = 14
ROTATION_MIN = 600.0
ROTATION_MAX = 1200.0
ASYNC_DELAY_MIN = 30.0
ASYNC_DELAY_MAX = 120.0
ADVERTISING_INTERVAL = 0.25
PAYLOAD_LENGTH = 20
ADDRESS_LENGTH = 6
# 2020-10-01T00:00:00Z; day aligned so simulation day boundaries fall on TEK boundaries.
DEFAULT_EPOCH_UNIX = 1_601_510_400

# Storage accounting. One stored sighting row costs RPI + AEM + two timestamps
# + count + attenuation + overhead. The overhead is calibrated so a full day
# of continuous proximity to one neighbour lands in the 0.59-0.63 MB band.
RECORD_FIELD_BYTES = 16 + 4 + 2 * 8 + 4 + 2
STORAGE_OVERHEAD_BYTES = 64
TEK_STORAGE_BYTES = 16 + 8

EventHook = Callable[[str, float, str, bytes, bytes], None]


@dataclass(frozen=True)
class AdvertisementPacket:
    address: bytes
    payload: bytes
    emit_time: float

    @property
    def rpi(self) -> bytes:
        return self.payload[:16]

    @property
    def aem(self) -> bytes:
        return self.payload[16:]


@dataclass
class ObservationRecord:
    rpi: bytes
    aem: bytes
    first_seen: float
    last_seen: float
    scan_count: int
    min_attenuation: float


@dataclass(frozen=True)
class ConsentToken:
    """Stand-in for platform app approval plus the user's upload consent."""

    app_id: str
    user_consented: bool = True
    platform_approved: bool = True

    @property
    def valid(self) -> bool:
        return bool(self.app_id) and self.user_consented and self.platform_approved


class Device:
    """One phone. ``device_id`` is a simulation label and is never broadcast.

    Times are simulation seconds; ``epoch_unix`` maps simulation time zero to
    wall-clock time for interval-number computation.
    """

    def __init__(
        self,
        device_id: str,
        rng: np.random.Generator,
        *,
        start_time: float = 0.0,
        epoch_unix: int = DEFAULT_EPOCH_UNIX,
        enabled: bool = True,
        async_fault: bool = False,
        metadata: crypto.Metadata | None = None,
        advertising_interval: float = ADVERTISING_INTERVAL,
        storage_overhead: int = STORAGE_OVERHEAD_BYTES,
        event_hook: EventHook | None = None,
        snoop: bool = False,
        scan_period: float = 240.0,
    ):
        if epoch_unix % DAY_SECONDS:
            raise ValueError("epoch_unix must be day aligned")
        self.device_id = device_id
        self.rng = rng
        self.epoch_unix = epoch_unix
        self.async_fault = async_fault
        self.metadata = metadata or crypto.Metadata()
        self.advertising_interval = advertising_interval
        self.storage_overhead = storage_overhead
        self.event_hook = event_hook
        self.snoop: list[tuple[float, bytes, bytes, float]] | None = [] if snoop else None

        self.scan_period = scan_period
        self.infected = False
        # Diagnosis keys staged by provide_diagnosis_keys, keyed by (key bytes, start).
        self.diagnosis_keys: dict = {}
        self.enabled = enabled
        self.observations: dict[bytes, ObservationRecord] = {}
        self.malformed_count = 0
        self.teks: list[crypto.TemporaryExposureKey] = []
        self.address = b""
        self.rpi_current = b""
        self.aem_current = b""
        self.rotation_deadline = math.inf
        self.rotation_times: list[float] = []
        self._pending_address: tuple[float, bytes] | None = None

        self.clock = start_time
        self._day = int(start_time // DAY_SECONDS)
        self._roll_tek(self._day * DAY_SECONDS)
        self._phase = float(rng.uniform(0.0, advertising_interval))
        self._next_emit = self._first_emit_index(start_time)
        if enabled:
            self.rotate_identifiers(start_time)

    # -- time keeping ---------------------------------------------------

    @property
    def tek_current(self) -> crypto.TemporaryExposureKey:
        return self.teks[-1]

    def unix_time(self, t: float) -> float:
        return self.epoch_unix + t

    def next_event_time(self) -> float:
        """Earliest pending internal state change (day roll, rotation, address swap)."""
        nxt = (self._day + 1) * DAY_SECONDS
        if self.enabled:
            nxt = min(nxt, self.rotation_deadline)
            if self._pending_address is not None:
                nxt = min(nxt, self._pending_address[0])
        return nxt

    def advance(self, now: float) -> None:
        """Apply every day roll and rotation scheduled at or before ``now``."""
        if now < self.clock:
            return
        while True:
            day_boundary = (self._day + 1) * DAY_SECONDS
            te = self.next_event_time()
            if te > now:
                break
            if te == day_boundary:
                self._day += 1
                self._roll_tek(day_boundary)
                self.prune(day_boundary)
            elif self._pending_address is not None and te == self._pending_address[0]:
                when, addr = self._pending_address
                self._pending_address = None
                self.address = addr
                self._emit_event("rotate", when)
            else:
                self.rotate_identifiers(te)
        self.clock = now

    def tick(self, now: float) -> list[AdvertisementPacket]:
        """Advance to ``now`` and return every advertisement emitted since the last call."""
        packets = list(self.emit_until(now))
        self.advance(now)
        return packets

    # -- key schedule ---------------------------------------------------

    def _roll_tek(self, day_start_time: float) -> None:
        start = crypto.interval_number(self.unix_time(day_start_time))
        self.teks.append(crypto.generate_tek(self.rng, crypto.day_start_interval(start)))
        del self.teks[:-MAX_TEKS]
        self._emit_event("roll", day_start_time, payload=b"")

    def rotate_identifiers(self, now: float) -> None:
        """Draw a fresh address and derive the RPI for the current interval."""
        interval = crypto.interval_number(self.unix_time(now))
        tek = self.tek_current
        self.rpi_current = crypto.derive_rpi(tek, interval)
        self.aem_current = crypto.encrypt_metadata(tek, self.rpi_current, self.metadata)
        new_address = self.rng.bytes(ADDRESS_LENGTH)
        self.rotation_deadline = now + float(self.rng.uniform(ROTATION_MIN, ROTATION_MAX))
        self.rotation_times.append(now)
        if self.async_fault and self.address:
            delay = float(self.rng.uniform(ASYNC_DELAY_MIN, ASYNC_DELAY_MAX))
            self._pending_address = (now + delay, new_address)
        else:
            self.address = new_address
        self._emit_event("rotate", now)

    def _emit_event(self, kind: str, t: float, payload: bytes | None = None) -> None:
        if self.event_hook is None:
            return
        if payload is None:
            payload = self.rpi_current + self.aem_current
        self.event_hook(kind, t, self.device_id, self.address, payload)

    # -- advertising ----------------------------------------------------

    def _first_emit_index(self, t: float) -> int:
        return max(0, math.ceil((t - self._phase) / self.advertising_interval))

    def _emit_time(self, k: int) -> float:
        return self._phase + k * self.advertising_interval

    @property
    def emit_cursor(self) -> float:
        """Time of the next advertisement not yet materialised."""
        return self._emit_time(self._next_emit)

    def skip_to(self, t: float) -> None:
        """Move the emission cursor to ``t`` without materialising packets."""
        k = self._first_emit_index(t)
        if k > self._next_emit:
            self._next_emit = k
            self.advance(t)

    def emit_until(self, t: float) -> Iterator[AdvertisementPacket]:
        """Yield advertisements with emit time in ``[emit_cursor, t)``."""
        while True:
            te = self._emit_time(self._next_emit)
            if te >= t:
                return
            self._next_emit += 1
            self.advance(te)
            if self.enabled:
                yield AdvertisementPacket(self.address, self.rpi_current + self.aem_current, te)

    def set_enabled(self, flag: bool, now: float | None = None) -> None:
        """Toggle broadcasting and scanning; stored data is retained."""
        now = self.clock if now is None else now
        self.advance(now)
        if flag and not self.enabled:
            self.enabled = True
            self._pending_address = None
            self.rotate_identifiers(max(now, self.clock))
        elif not flag:
            self.enabled = False
            self._pending_address = None
            self.rotation_deadline = math.inf
        self._emit_event("toggle", now, payload=b"\x01" if flag else b"\x00")

    # -- reception and storage ------------------------------------------

    def on_receive(
        self, packet: AdvertisementPacket, now: float, attenuation: float
    ) -> bool:
        """Store a received advertisement. Returns False if it was dropped."""
        if not self.enabled:
            return False
        if len(packet.payload) != PAYLOAD_LENGTH:
            self.malformed_count += 1
            return False
        if self.snoop is not None:
            self.snoop.append((now, packet.address, packet.payload, attenuation))
        rpi = packet.payload[:16]
        rec = self.observations.get(rpi)
        if rec is None:
            self.observations[rpi] = ObservationRecord(
                rpi, packet.payload[16:], now, now, 1, attenuation
            )
        else:
            rec.last_seen = max(rec.last_seen, now)
            rec.first_seen = min(rec.first_seen, now)
            rec.scan_count += 1
            rec.min_attenuation = min(rec.min_attenuation, attenuation)
        return True

    def prune(self, now: float) -> int:
        """Drop observations and TEKs older than the retention window."""
        cutoff = now - RETENTION_DAYS * DAY_SECONDS
        stale = [rpi for rpi, rec in self.observations.items() if rec.last_seen < cutoff]
        for rpi in stale:
            del self.observations[rpi]
        cutoff_interval = crypto.interval_number(self.unix_time(cutoff))
        keep = [k for k in self.teks if k.end_interval > cutoff_interval]
        # the current key is always retained
        removed_teks = len(self.teks) - len(keep) if keep else 0
        if keep:
            self.teks = keep
        return len(stale) + removed_teks

    def get_tek_history(self, consent: ConsentToken | None) -> list[crypto.TemporaryExposureKey]:
        """Release stored TEKs, current day included, to an authorised app."""
        if not isinstance(consent, ConsentToken) or not consent.valid:
            raise AuthorizationError("TEK release requires a valid consent token")
        if not self.infected:
            raise AuthorizationError("TEKs are released only after a positive diagnosis")
        return list(self.teks)

    def storage_bytes(self) -> int:
        per_row = RECORD_FIELD_BYTES + self.storage_overhead
        rows = sum(rec.scan_count for rec in self.observations.values())
        return rows * per_row + TEK_STORAGE_BYTES * len(self.teks)

    def dump_capture_lines(self) -> list[str]:
        """Snoop log as ``time address payload`` lines for the audit parser."""
        if self.snoop is None:
            return []
        return [
            f"{t:.3f} {':'.join(f'{b:02x}' for b in addr)} {payload.hex()}"
            for t, addr, payload, _ in self.snoop
        ]
