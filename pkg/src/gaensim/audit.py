"""Capture-log audit: address/payload pairing and rotation intervals.

Accepted line format, whitespace separated::

    [timestamp] aa:bb:cc:dd:ee:ff <40 hex payload chars> [source]

The optional trailing ``source`` label is only present in simulator dumps
and lets interval statistics be grouped per emitting device.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from typing import Iterable

from .errors import EmptyInputError, InsufficientDataError
from .trace import format_address

ROTATION_MIN = 600.0
ROTATION_MAX = 1200.0

_ADDR = re.compile(r"^[0-9a-fA-F]{2}(:[0-9a-fA-F]{2}){5}$")
_PAYLOAD = re.compile(r"^[0-9a-fA-F]{40}$")


@dataclass(frozen=True)
class CaptureRecord:
    address: bytes
    payload: bytes
    timestamp: float | None = None
    source: str | None = None

    def to_line(self) -> str:
        parts = []
        if self.timestamp is not None:
            parts.append(repr(float(self.timestamp)))
        parts += [format_address(self.address), self.payload.hex()]
        if self.source is not None:
            parts.append(self.source)
        return " ".join(parts)


@dataclass
class ParseResult:
    records: list[CaptureRecord]
    skipped: list[int] = field(default_factory=list)


def _parse_line(tokens: list[str]) -> CaptureRecord | None:
    ts = None
    if tokens and not _ADDR.match(tokens[0]):
        try:
            ts = float(tokens[0])
        except ValueError:
            return None
        tokens = tokens[1:]
    if len(tokens) not in (2, 3):
        return None
    addr, payload = tokens[0], tokens[1]
    if not _ADDR.match(addr) or not _PAYLOAD.match(payload):
        return None
    source = tokens[2] if len(tokens) == 3 else None
    return CaptureRecord(bytes.fromhex(addr.replace(":", "")), bytes.fromhex(payload), ts, source)


def parse_capture_detailed(lines: Iterable[str]) -> ParseResult:
    result = ParseResult([])
    for lineno, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        rec = _parse_line(stripped.split())
        if rec is None:
            result.skipped.append(lineno)
        else:
            result.records.append(rec)
    if not result.records:
        raise EmptyInputError("no well-formed capture records")
    return result


def parse_capture(lines: Iterable[str]) -> list[CaptureRecord]:
    """Parse capture lines; malformed lines are skipped (see ``parse_capture_detailed``)."""
    return parse_capture_detailed(lines).records


@dataclass(frozen=True)
class Violation:
    kind: str  # "address" (one address, many payloads) or "payload"
    key: str
    values: tuple[str, ...]


def check_sync(records: list[CaptureRecord]) -> list[Violation]:
    """Report every address seen with >1 payload and every payload with >1 address."""
    by_addr: dict[bytes, set[bytes]] = {}
    by_payload: dict[bytes, set[bytes]] = {}
    for r in records:
        by_addr.setdefault(r.address, set()).add(r.payload)
        by_payload.setdefault(r.payload, set()).add(r.address)
    out = []
    for addr in sorted(by_addr):
        if len(by_addr[addr]) > 1:
            out.append(Violation("address", format_address(addr),
                                 tuple(sorted(p.hex() for p in by_addr[addr]))))
    for payload in sorted(by_payload):
        if len(by_payload[payload]) > 1:
            out.append(Violation("payload", payload.hex(),
                                 tuple(sorted(format_address(a) for a in by_payload[payload]))))
    return out


@dataclass
class IntervalStats:
    gaps: list[float]
    min_gap: float
    mean_gap: float
    max_gap: float
    bounds_ok: bool


def interval_stats(records: list[CaptureRecord], *, group_by_source: bool = True,
                   lower: float = ROTATION_MIN, upper: float = ROTATION_MAX) -> IntervalStats:
    """Gaps between first appearances of consecutive identifier pairs.

    With ``group_by_source`` the records' ``source`` labels separate devices;
    otherwise (or when unlabelled) the log is treated as one source.
    """
    if any(r.timestamp is None for r in records):
        raise InsufficientDataError("interval statistics need timestamps")
    firsts: dict[str | None, dict[tuple[bytes, bytes], float]] = {}
    for r in records:
        src = r.source if group_by_source else None
        seen = firsts.setdefault(src, {})
        pair = (r.address, r.payload)
        if pair not in seen or r.timestamp < seen[pair]:
            seen[pair] = r.timestamp
    gaps = []
    for src in sorted(firsts, key=lambda s: (s is None, s or "")):
        times = sorted(firsts[src].values())
        gaps += [b - a for a, b in zip(times, times[1:])]
    if not gaps:
        raise InsufficientDataError("need at least two rotations")
    return IntervalStats(
        gaps,
        min(gaps),
        sum(gaps) / len(gaps),
        max(gaps),
        all(lower <= g <= upper for g in gaps),
    )


@dataclass
class AuditReport:
    record_count: int
    distinct_pairs: int
    violations: list[Violation]
    interval_stats: IntervalStats | None
    bounds_ok: bool | None
    skipped_lines: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations and self.bounds_ok is not False

    def to_dict(self) -> dict:
        stats = None
        if self.interval_stats is not None:
            s = self.interval_stats
            stats = {"count": len(s.gaps), "min": s.min_gap, "mean": s.mean_gap,
                     "max": s.max_gap}
        return {
            "record_count": self.record_count,
            "distinct_pairs": self.distinct_pairs,
            "violations": [asdict(v) for v in self.violations],
            "interval_stats": stats,
            "bounds_ok": self.bounds_ok,
            "skipped_lines": self.skipped_lines,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [
            f"records:         {self.record_count}",
            f"distinct pairs:  {self.distinct_pairs}",
            f"violations:      {len(self.violations)}",
        ]
        for v in self.violations:
            lines.append(f"  {v.kind} {v.key} -> {', '.join(v.values)}")
        if self.interval_stats is not None:
            s = self.interval_stats
            lines.append(
                f"rotation gaps:   n={len(s.gaps)} min={s.min_gap:.1f}s "
                f"mean={s.mean_gap:.1f}s max={s.max_gap:.1f}s"
            )
            lines.append(f"bounds ok:       {self.bounds_ok}")
        else:
            lines.append("rotation gaps:   n/a")
        if self.skipped_lines:
            lines.append(f"skipped lines:   {', '.join(map(str, self.skipped_lines))}")
        return "\n".join(lines) + "\n"


def audit_report(records_or_lines, *, group_by_source: bool = True) -> AuditReport:
    """Parse (if given text) and run both checks.

    Interval statistics are computed only when every record has a timestamp
    and at least two rotations are present.
    """
    skipped: list[int] = []
    records = list(records_or_lines)
    if not records or not isinstance(records[0], CaptureRecord):
        parsed = parse_capture_detailed(records)
        records, skipped = parsed.records, parsed.skipped
    if not records:
        raise EmptyInputError("no capture records")
    violations = check_sync(records)
    stats = None
    if all(r.timestamp is not None for r in records):
        try:
            stats = interval_stats(records, group_by_source=group_by_source)
        except InsufficientDataError:
            stats = None
    return AuditReport(
        record_count=len(records),
        distinct_pairs=len({(r.address, r.payload) for r in records}),
        violations=violations,
        interval_stats=stats,
        bounds_ok=None if stats is None else stats.bounds_ok,
        skipped_lines=skipped,
    )
