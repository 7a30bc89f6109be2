"""Line-oriented simulation trace.

Each row is ``event_type,time,src,dst,address_hex,payload_hex,attenuation_db``.
Empty fields are left blank. Rows are ground truth for scoring only; attacks
read the ``deliver`` rows addressed to their own sniffers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

from .errors import ParseError

HEADER = "event_type,time,src,dst,address_hex,payload_hex,attenuation_db"


class TraceRow(NamedTuple):
    event_type: str
    time: float
    src: str
    dst: str
    address: bytes
    payload: bytes
    attenuation: float | None

    def to_line(self) -> str:
        att = "" if self.attenuation is None else f"{self.attenuation:.2f}"
        return (
            f"{self.event_type},{self.time:.3f},{self.src},{self.dst},"
            f"{self.address.hex()},{self.payload.hex()},{att}"
        )

    @classmethod
    def from_line(cls, line: str, lineno: int = 0) -> "TraceRow":
        parts = line.rstrip("\n").split(",")
        if len(parts) != 7:
            raise ParseError(f"line {lineno}: expected 7 fields, got {len(parts)}")
        kind, t, src, dst, addr, payload, att = parts
        try:
            return cls(
                kind,
                float(t),
                src,
                dst,
                bytes.fromhex(addr),
                bytes.fromhex(payload),
                float(att) if att else None,
            )
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None


def format_address(address: bytes) -> str:
    return ":".join(f"{b:02x}" for b in address)


@dataclass
class TraceLog:
    rows: list[TraceRow] = field(default_factory=list)
    # Advertisements not materialised because no scanner was listening.
    emission_count: int = 0

    def record(
        self,
        event_type: str,
        time: float,
        src: str = "",
        dst: str = "",
        address: bytes = b"",
        payload: bytes = b"",
        attenuation: float | None = None,
    ) -> None:
        self.rows.append(TraceRow(event_type, time, src, dst, address, payload, attenuation))

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[TraceRow]:
        return iter(self.rows)

    def select(self, event_type: str, *, src: str | None = None, dst: str | None = None):
        return [
            r
            for r in self.rows
            if r.event_type == event_type
            and (src is None or r.src == src)
            and (dst is None or r.dst == dst)
        ]

    def to_lines(self) -> list[str]:
        return [HEADER] + [r.to_line() for r in self.rows]

    def dumps(self) -> str:
        return "\n".join(self.to_lines()) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def parse(cls, lines: Iterable[str]) -> "TraceLog":
        log = cls()
        for lineno, line in enumerate(lines, 1):
            line = line.strip()
            if not line or line == HEADER or line.startswith("#"):
                continue
            log.rows.append(TraceRow.from_line(line, lineno))
        return log

    @classmethod
    def read(cls, path) -> "TraceLog":
        with open(path) as fh:
            return cls.parse(fh)

    def capture_lines(self, dst: str | None = None, *, with_source: bool = False) -> list[str]:
        """Receiver-side capture in the audit format ``time address payload``."""
        out = []
        for r in self.rows:
            if r.event_type != "deliver" or (dst is not None and r.dst != dst):
                continue
            line = f"{r.time:.3f} {format_address(r.address)} {r.payload.hex()}"
            out.append(f"{line} {r.src}" if with_source else line)
        return out

    def rotation_lines(self, src: str | None = None) -> list[str]:
        """Emitter-side identifier changes, labelled with their source device."""
        return [
            f"{r.time:.3f} {format_address(r.address)} {r.payload.hex()} {r.src}"
            for r in self.rows
            if r.event_type == "rotate" and (src is None or r.src == src)
        ]
