"""On-device matching of diagnosis keys against stored observations."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import crypto
from .device import Device, ObservationRecord
from .errors import ContractError
from .server import DiagnosisKey, VerifiedBatch


@dataclass(frozen=True)
class ExposureConfig:
    min_duration_minutes: float = 15.0
    attenuation_threshold_db: float = 73.0
    interval_tolerance: int = 2

    def __post_init__(self):
        if not self.min_duration_minutes > 0:
            raise ValueError("min_duration_minutes must be positive")
        if self.interval_tolerance < 0:
            raise ValueError("interval_tolerance must be non-negative")


@dataclass(frozen=True)
class ContactWindow:
    key: bytes
    start: float
    end: float
    min_attenuation: float
    duration_minutes: float


@dataclass
class ExposureSummary:
    matched_key_count: int = 0
    windows: list[ContactWindow] = field(default_factory=list)
    total_duration_minutes: float = 0.0
    max_single_duration_minutes: float = 0.0


def provide_diagnosis_keys(device: Device, batches) -> int:
    """Stage keys from verified batches; duplicates are inserted once."""
    if isinstance(batches, VerifiedBatch):
        batches = [batches]
    inserted = 0
    for batch in batches:
        if not isinstance(batch, VerifiedBatch):
            raise ContractError("provide_diagnosis_keys accepts only verified batches")
        for key in batch.keys:
            ident = (key.key_bytes, key.rolling_start_interval)
            if ident not in device.diagnosis_keys:
                device.diagnosis_keys[ident] = key
                inserted += 1
    return inserted


def _record_interval_span(rec: ObservationRecord, epoch_unix: int) -> tuple[int, int]:
    return (
        crypto.interval_number(epoch_unix + rec.first_seen),
        crypto.interval_number(epoch_unix + rec.last_seen),
    )


def _admissible(rec, interval, config, epoch_unix) -> bool:
    if rec.min_attenuation > config.attenuation_threshold_db:
        return False
    lo, hi = _record_interval_span(rec, epoch_unix)
    tol = config.interval_tolerance
    return lo - tol <= interval <= hi + tol


def match_keys(
    observations: dict[bytes, ObservationRecord],
    keys,
    config: ExposureConfig,
    epoch_unix: int,
) -> list[tuple[DiagnosisKey, ObservationRecord]]:
    """Indexed matching: expand each key once and look records up by RPI."""
    matches = []
    for key in keys:
        tek = key.as_tek()
        for j, rpi in enumerate(crypto.rpis_for_day(tek)):
            rec = observations.get(rpi)
            if rec is not None and _admissible(rec, tek.rolling_start_interval + j, config,
                                               epoch_unix):
                matches.append((key, rec))
    return matches


def match_oracle(
    observations,
    diagnosis_keys,
    config: ExposureConfig,
    epoch_unix: int,
) -> set[tuple[bytes, bytes]]:
    """Nested-loop ground truth: every record against every expanded RPI of every key.

    Returns ``(key_bytes, rpi)`` pairs. Intended for small instances only.
    """
    records = list(observations.values()) if isinstance(observations, dict) else list(observations)
    expanded = []
    for key in diagnosis_keys:
        tek = key.as_tek()
        for interval in range(tek.rolling_start_interval, tek.end_interval):
            expanded.append((key.key_bytes, interval, crypto.derive_rpi(tek, interval)))
    found = set()
    for rec in records:
        for key_bytes, interval, rpi in expanded:
            if rec.rpi == rpi and _admissible(rec, interval, config, epoch_unix):
                found.add((key_bytes, rec.rpi))
    return found


def contact_windows(records: list[ObservationRecord], key: bytes, scan_period: float,
                    merge_gap: float | None = None) -> list[ContactWindow]:
    """Merge matched records of one key into contiguous contact windows.

    Records closer than ``merge_gap`` (default two scan periods) belong to the
    same window. A window is credited its observed span plus one scan period,
    since each sighting stands for the scan interval around it.
    """
    if merge_gap is None:
        merge_gap = 2.0 * scan_period
    windows = []
    cur = None
    for rec in sorted(records, key=lambda r: (r.first_seen, r.last_seen)):
        if cur is not None and rec.first_seen - cur[1] <= merge_gap:
            cur = [cur[0], max(cur[1], rec.last_seen), min(cur[2], rec.min_attenuation)]
        else:
            if cur is not None:
                windows.append(cur)
            cur = [rec.first_seen, rec.last_seen, rec.min_attenuation]
    if cur is not None:
        windows.append(cur)
    return [
        ContactWindow(key, s, e, att, (e - s + scan_period) / 60.0) for s, e, att in windows
    ]


def detect_exposure(device: Device, config: ExposureConfig | None = None) -> ExposureSummary:
    """Match staged diagnosis keys against this device's own observations."""
    config = config or ExposureConfig()
    matches = match_keys(device.observations, device.diagnosis_keys.values(), config,
                         device.epoch_unix)
    by_key: dict[bytes, list[ObservationRecord]] = {}
    for key, rec in matches:
        by_key.setdefault(key.key_bytes, []).append(rec)
    summary = ExposureSummary(matched_key_count=len(by_key))
    for key_bytes in sorted(by_key):
        summary.windows.extend(contact_windows(by_key[key_bytes], key_bytes, device.scan_period))
    if summary.windows:
        summary.total_duration_minutes = sum(w.duration_minutes for w in summary.windows)
        summary.max_single_duration_minutes = max(w.duration_minutes for w in summary.windows)
    return summary


def matched_pairs(device: Device, config: ExposureConfig | None = None) -> set[tuple[bytes, bytes]]:
    """``(key_bytes, rpi)`` pairs found by the indexed matcher, for oracle comparison."""
    config = config or ExposureConfig()
    return {
        (k.key_bytes, rec.rpi)
        for k, rec in match_keys(device.observations, device.diagnosis_keys.values(), config,
                                 device.epoch_unix)
    }


def should_notify(summary: ExposureSummary, config: ExposureConfig | None = None) -> bool:
    config = config or ExposureConfig()
    return summary.max_single_duration_minutes >= config.min_duration_minutes
