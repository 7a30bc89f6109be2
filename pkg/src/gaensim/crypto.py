"""Key schedule: TEK -> RPIK/AEMK -> per-interval RPIs and encrypted metadata.

Byte layouts follow the public Exposure Notification cryptography
specification:

* ``RPIK = HKDF-SHA256(TEK, salt=None, info="EN-RPIK", L=16)``
* ``AEMK = HKDF-SHA256(TEK, salt=None, info="EN-AEMK", L=16)``
* ``RPI  = AES-128-ECB(RPIK, "EN-RPI" || 0x00*6 || ENIN_le32)``
* ``AEM  = AES-128-CTR(AEMK, counter=RPI, metadata)``
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import AlignmentError, ValidityError

INTERVAL_SECONDS = 600
ROLLING_PERIOD = 144
KEY_LENGTH = 16
RPI_INFO = b"EN-RPIK"
AEM_INFO = b"EN-AEMK"
RPI_PREFIX = b"EN-RPI" + bytes(6)
DEFAULT_VERSION = 0x40
DEFAULT_TX_POWER = -20


@dataclass(frozen=True)
class TemporaryExposureKey:
    key_bytes: bytes
    rolling_start_interval: int
    rolling_period: int = ROLLING_PERIOD

    def __post_init__(self):
        if len(self.key_bytes) != KEY_LENGTH:
            raise ValueError(f"TEK must be {KEY_LENGTH} bytes, got {len(self.key_bytes)}")
        if self.rolling_period <= 0:
            raise ValueError("rolling_period must be positive")
        if self.rolling_start_interval < 0 or self.rolling_start_interval % self.rolling_period:
            raise AlignmentError(
                f"rolling_start_interval {self.rolling_start_interval} is not a multiple "
                f"of rolling_period {self.rolling_period}"
            )

    @property
    def end_interval(self) -> int:
        """First interval number after the validity window."""
        return self.rolling_start_interval + self.rolling_period

    def covers(self, interval: int) -> bool:
        return self.rolling_start_interval <= interval < self.end_interval


@dataclass(frozen=True)
class Metadata:
    version: int = DEFAULT_VERSION
    tx_power: int = DEFAULT_TX_POWER
    reserved: bytes = b"\x00\x00"

    def to_bytes(self) -> bytes:
        return struct.pack("<Bb", self.version, self.tx_power) + self.reserved

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Metadata":
        if len(raw) != 4:
            raise ValueError(f"metadata must be 4 bytes, got {len(raw)}")
        version, tx_power = struct.unpack("<Bb", raw[:2])
        return cls(version, tx_power, bytes(raw[2:]))


def interval_number(unix_seconds: int | float) -> int:
    """10-minute window index since the Unix epoch."""
    return int(unix_seconds // INTERVAL_SECONDS)


def day_start_interval(interval: int, rolling_period: int = ROLLING_PERIOD) -> int:
    return interval - interval % rolling_period


def generate_tek(
    rng: np.random.Generator, day_start: int, rolling_period: int = ROLLING_PERIOD
) -> TemporaryExposureKey:
    """Draw a fresh 16-byte TEK from ``rng`` valid from ``day_start``.

    A seeded generator stands in for the platform CSPRNG so that runs are
    reproducible.
    """
    if day_start % rolling_period:
        raise AlignmentError(f"day_start {day_start} not aligned to {rolling_period}")
    return TemporaryExposureKey(rng.bytes(KEY_LENGTH), day_start, rolling_period)


def _hkdf16(secret: bytes, info: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=KEY_LENGTH, salt=None, info=info).derive(secret)


def derive_rpik(tek: TemporaryExposureKey) -> bytes:
    return _hkdf16(tek.key_bytes, RPI_INFO)


def derive_aemk(tek: TemporaryExposureKey) -> bytes:
    return _hkdf16(tek.key_bytes, AEM_INFO)


def padded_data(interval: int) -> bytes:
    return RPI_PREFIX + struct.pack("<I", interval)


def _ecb_encryptor(key: bytes):
    return Cipher(algorithms.AES(key), modes.ECB()).encryptor()


def derive_rpi(tek: TemporaryExposureKey, interval: int) -> bytes:
    if not tek.covers(interval):
        raise ValidityError(
            f"interval {interval} outside TEK validity "
            f"[{tek.rolling_start_interval}, {tek.end_interval})"
        )
    return _ecb_encryptor(derive_rpik(tek)).update(padded_data(interval))


def rpis_for_day(tek: TemporaryExposureKey) -> list[bytes]:
    """All RPIs of a TEK, element ``j`` for interval ``rolling_start_interval + j``."""
    enc = _ecb_encryptor(derive_rpik(tek))
    start = tek.rolling_start_interval
    return [enc.update(padded_data(start + j)) for j in range(tek.rolling_period)]


def _ctr_apply(tek: TemporaryExposureKey, rpi: bytes, data: bytes) -> bytes:
    if len(rpi) != 16:
        raise ValueError(f"RPI must be 16 bytes, got {len(rpi)}")
    cipher = Cipher(algorithms.AES(derive_aemk(tek)), modes.CTR(rpi))
    return cipher.encryptor().update(data)


def encrypt_metadata(tek: TemporaryExposureKey, rpi: bytes, metadata: Metadata) -> bytes:
    return _ctr_apply(tek, rpi, metadata.to_bytes())


def decrypt_metadata(tek: TemporaryExposureKey, rpi: bytes, aem: bytes) -> Metadata:
    if len(aem) != 4:
        raise ValueError(f"AEM must be 4 bytes, got {len(aem)}")
    return Metadata.from_bytes(_ctr_apply(tek, rpi, aem))
