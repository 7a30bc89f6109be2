"""Health-authority key server: PINs, uploads and signed diagnosis-key exports.

Export layout (little endian)::

    "ENEXPORT"  u16 version  u8 region_len  region
    u32 batch_num  u32 batch_size  u64 start  u64 end  u32 key_count
    key_count * (16 key bytes, u32 rolling_start, u32 rolling_period, i32 risk)

Signature file layout::

    "ENSIG\\x00\\x00\\x00"  u8 key_version_len  key_version  u16 sig_len  signature
"""

from __future__ import annotations

import os
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .crypto import TemporaryExposureKey
from .errors import ConfigError, ContractError, IntegrityError, ParseError

EXPORT_MAGIC = b"ENEXPORT"
SIG_MAGIC = b"ENSIG\x00\x00\x00"
EXPORT_VERSION = 1
PIN_LIFETIME = 86_400.0
MAX_UPLOAD_KEYS = 15

_HEADER = struct.Struct("<IIQQI")
_KEY = struct.Struct("<16sIIi")


@dataclass
class Pin:
    digits: str
    case_id: str
    expiry: float
    used: bool = False


@dataclass(frozen=True)
class DiagnosisKey:
    key_bytes: bytes
    rolling_start_interval: int
    rolling_period: int = 144
    transmission_risk: int = 0

    def as_tek(self) -> TemporaryExposureKey:
        return TemporaryExposureKey(self.key_bytes, self.rolling_start_interval, self.rolling_period)


@dataclass
class DiagnosisKeyExport:
    region: str
    batch_num: int
    batch_size: int
    start_timestamp: int
    end_timestamp: int
    keys: list[DiagnosisKey] = field(default_factory=list)
    version: int = EXPORT_VERSION

    def to_bytes(self) -> bytes:
        region = self.region.encode("ascii")
        if len(region) > 255:
            raise ValueError("region too long")
        if self.end_timestamp < self.start_timestamp:
            raise ValueError("end timestamp precedes start timestamp")
        parts = [
            EXPORT_MAGIC,
            struct.pack("<HB", self.version, len(region)),
            region,
            _HEADER.pack(self.batch_num, self.batch_size, self.start_timestamp,
                         self.end_timestamp, len(self.keys)),
        ]
        for k in self.keys:
            parts.append(_KEY.pack(k.key_bytes, k.rolling_start_interval, k.rolling_period,
                                   k.transmission_risk))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "DiagnosisKeyExport":
        if data[:8] != EXPORT_MAGIC:
            raise ParseError("bad export magic")
        if len(data) < 11:
            raise ParseError("truncated export header")
        version, rlen = struct.unpack_from("<HB", data, 8)
        off = 11
        if len(data) < off + rlen + _HEADER.size:
            raise ParseError("truncated export header")
        try:
            region = data[off:off + rlen].decode("ascii")
        except UnicodeDecodeError:
            raise ParseError("region is not ascii") from None
        off += rlen
        batch_num, batch_size, start, end, count = _HEADER.unpack_from(data, off)
        off += _HEADER.size
        if len(data) != off + count * _KEY.size:
            raise ParseError(
                f"key section is {len(data) - off} bytes, header declares {count} keys"
            )
        if end < start:
            raise ParseError("end timestamp precedes start timestamp")
        keys = [DiagnosisKey(*_KEY.unpack_from(data, off + i * _KEY.size)) for i in range(count)]
        return cls(region, batch_num, batch_size, start, end, keys, version)


@dataclass(frozen=True)
class ExportSignature:
    signature: bytes
    key_version: str = "v1"

    def to_bytes(self) -> bytes:
        kv = self.key_version.encode("ascii")
        return SIG_MAGIC + struct.pack("<B", len(kv)) + kv + struct.pack(
            "<H", len(self.signature)) + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> "ExportSignature":
        if data[:8] != SIG_MAGIC or len(data) < 9:
            raise ParseError("bad signature magic")
        kvlen = data[8]
        off = 9 + kvlen
        if len(data) < off + 2:
            raise ParseError("truncated signature file")
        (slen,) = struct.unpack_from("<H", data, off)
        sig = data[off + 2:]
        if len(sig) != slen:
            raise ParseError("signature length mismatch")
        return cls(sig, data[9:off].decode("ascii", "replace"))


@dataclass(frozen=True)
class SubmitResult:
    accepted: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.accepted


class VerifiedBatch:
    """Keys from an export whose signature has been checked.

    Only :func:`verify_and_parse_export` constructs these; exposure matching
    refuses anything else.
    """

    __slots__ = ("export", "_token")
    _TOKEN = object()

    def __init__(self, export: DiagnosisKeyExport, _token=None):
        if _token is not VerifiedBatch._TOKEN:
            raise ContractError("VerifiedBatch is created only by verify_and_parse_export")
        self.export = export
        self._token = _token

    @property
    def keys(self) -> list[DiagnosisKey]:
        return self.export.keys

    def __len__(self) -> int:
        return len(self.export.keys)


def signing_key_from_seed(seed: int) -> Ed25519PrivateKey:
    raw = np.random.default_rng(np.random.SeedSequence([seed, 0x5167])).bytes(32)
    return Ed25519PrivateKey.from_private_bytes(raw)


def load_signing_key(path) -> Ed25519PrivateKey:
    data = Path(path).read_bytes()
    if len(data) == 32:
        return Ed25519PrivateKey.from_private_bytes(data)
    key = serialization.load_pem_private_key(data, password=None)
    if not isinstance(key, Ed25519PrivateKey):
        raise ConfigError("server.signing_key", "expected an Ed25519 private key")
    return key


def public_key_bytes(key: Ed25519PublicKey) -> bytes:
    return key.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


class KeyServer:
    """In-memory key server. Upload handling is serialised by a lock."""

    def __init__(
        self,
        seed: int = 0,
        *,
        region: str = "US-VA",
        signing_key: Ed25519PrivateKey | None = None,
        key_version: str = "v1",
    ):
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4B53]))
        self.region = region
        self.signing_key = signing_key
        self.key_version = key_version
        self.pins: dict[str, Pin] = {}
        self.submissions: list[tuple[float, list[DiagnosisKey]]] = []
        self.batches: list[tuple[bytes, bytes]] = []
        self._lock = threading.Lock()

    @property
    def public_key(self) -> Ed25519PublicKey:
        if self.signing_key is None:
            raise ConfigError("server.signing_key", "no signing key configured")
        return self.signing_key.public_key()

    def issue_pin(self, case_id: str, now: float = 0.0, lifetime: float = PIN_LIFETIME) -> Pin:
        with self._lock:
            while True:
                digits = f"{int(self.rng.integers(0, 1_000_000)):06d}"
                if digits not in self.pins:
                    break
            pin = Pin(digits, case_id, now + lifetime)
            self.pins[digits] = pin
            return pin

    def submit_keys(self, pin: str | Pin, teks, now: float = 0.0) -> SubmitResult:
        digits = pin.digits if isinstance(pin, Pin) else str(pin)
        keys = []
        for t in teks:
            if isinstance(t, TemporaryExposureKey):
                t = DiagnosisKey(t.key_bytes, t.rolling_start_interval, t.rolling_period)
            if (
                not isinstance(t, DiagnosisKey)
                or len(t.key_bytes) != 16
                or not 0 < t.rolling_period <= 144
                or t.rolling_start_interval < 0
            ):
                return SubmitResult(False, "format")
            keys.append(t)
        with self._lock:
            record = self.pins.get(digits)
            if record is None or record.used or now > record.expiry:
                return SubmitResult(False, "auth")
            if len(keys) > MAX_UPLOAD_KEYS:
                return SubmitResult(False, "format")
            record.used = True
            self.submissions.append((now, keys))
        return SubmitResult(True)

    def publish_batch(self, period: tuple[float, float] | None = None) -> tuple[bytes, bytes]:
        """Shuffle keys submitted in ``[start, end)`` into a signed export."""
        if self.signing_key is None:
            raise ConfigError("server.signing_key", "no signing key configured")
        with self._lock:
            if period is None:
                start, end = 0.0, max([t for t, _ in self.submissions], default=0.0) + 1.0
            else:
                start, end = period
            keys = [k for t, ks in self.submissions if start <= t < end for k in ks]
            order = self.rng.permutation(len(keys))
            export = DiagnosisKeyExport(
                self.region,
                batch_num=len(self.batches) + 1,
                batch_size=1,
                start_timestamp=int(start),
                end_timestamp=int(end),
                keys=[keys[i] for i in order],
            )
            data = export.to_bytes()
            sig = ExportSignature(self.signing_key.sign(data), self.key_version).to_bytes()
            self.batches.append((data, sig))
            return data, sig

    def download_batches(self, since: int = 0) -> list[tuple[bytes, bytes]]:
        return list(self.batches[since:])

    def state_dict(self) -> dict:
        """JSON-safe snapshot of PINs, submissions and RNG (batches are saved separately)."""
        return {
            "region": self.region,
            "key_version": self.key_version,
            "rng": self.rng.bit_generator.state,
            "pins": [[p.digits, p.case_id, p.expiry, p.used] for p in self.pins.values()],
            "submissions": [
                [t, [[k.key_bytes.hex(), k.rolling_start_interval, k.rolling_period,
                      k.transmission_risk] for k in ks]]
                for t, ks in self.submissions
            ],
        }

    @classmethod
    def from_state(cls, state: dict, signing_key=None, batches=()) -> "KeyServer":
        srv = cls(region=state["region"], signing_key=signing_key,
                  key_version=state["key_version"])
        srv.rng.bit_generator.state = state["rng"]
        for digits, case_id, expiry, used in state["pins"]:
            srv.pins[digits] = Pin(digits, case_id, expiry, used)
        for t, ks in state["submissions"]:
            srv.submissions.append((t, [DiagnosisKey(bytes.fromhex(h), a, b, r) for h, a, b, r in ks]))
        srv.batches = list(batches)
        return srv

    def save(self, directory) -> None:
        """Persist batches as ``batch_NNNN/export.bin`` + ``export.sig``."""
        root = Path(directory)
        for i, (data, sig) in enumerate(self.batches, 1):
            d = root / f"batch_{i:04d}"
            d.mkdir(parents=True, exist_ok=True)
            (d / "export.bin").write_bytes(data)
            (d / "export.sig").write_bytes(sig)


def load_batches(directory) -> list[tuple[bytes, bytes]]:
    root = Path(directory)
    out = []
    for d in sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("batch_")):
        out.append(((d / "export.bin").read_bytes(), (d / "export.sig").read_bytes()))
    return out


def download_batches(server: KeyServer, since: int = 0) -> list[tuple[bytes, bytes]]:
    return server.download_batches(since)


def verify_and_parse_export(
    export_bytes: bytes, signature: bytes | ExportSignature, public_key: Ed25519PublicKey
) -> VerifiedBatch:
    if not isinstance(signature, ExportSignature):
        try:
            signature = ExportSignature.from_bytes(signature)
        except ParseError as exc:
            raise IntegrityError(f"unreadable signature: {exc}") from None
    try:
        public_key.verify(signature.signature, export_bytes)
    except InvalidSignature:
        raise IntegrityError("export signature does not verify") from None
    return VerifiedBatch(DiagnosisKeyExport.from_bytes(export_bytes), VerifiedBatch._TOKEN)


def write_signing_key(key: Ed25519PrivateKey, path) -> None:
    raw = key.private_bytes(serialization.Encoding.Raw, serialization.PrivateFormat.Raw,
                            serialization.NoEncryption())
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "wb") as fh:
        fh.write(raw)
