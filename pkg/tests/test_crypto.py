import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracle_crypto as oracle
from gaensim import crypto
from gaensim.errors import AlignmentError, ValidityError

ZERO = crypto.TemporaryExposureKey(bytes(16), 0)


def test_frozen_zero_pipeline(vectors):
    tek = crypto.TemporaryExposureKey(vectors["zero_tek"], 0)
    assert crypto.derive_rpik(tek) == vectors["zero_rpik"]
    assert crypto.derive_aemk(tek) == vectors["zero_aemk"]
    assert crypto.derive_rpi(tek, 0) == vectors["zero_rpi0"]
    assert crypto.derive_rpi(tek, 143) == vectors["zero_rpi143"]
    assert crypto.Metadata().to_bytes() == vectors["zero_meta"]
    assert crypto.encrypt_metadata(tek, vectors["zero_rpi0"], crypto.Metadata()) == vectors["zero_aem0"]


def test_frozen_sequential_key(vectors):
    interval = int.from_bytes(vectors["seq_interval"], "big")
    tek = crypto.TemporaryExposureKey(vectors["seq_tek"], crypto.day_start_interval(interval))
    assert crypto.derive_rpik(tek) == vectors["seq_rpik"]
    rpi = crypto.derive_rpi(tek, interval)
    assert rpi == vectors["seq_rpi"]
    assert crypto.encrypt_metadata(tek, rpi, crypto.Metadata()) == vectors["seq_aem"]


def test_oracle_self_checks():
    # FIPS-197 appendix C.1 and RFC 5869 test case 1
    key = bytes(range(16))
    pt = bytes.fromhex("00112233445566778899aabbccddeeff")
    assert oracle.aes128_encrypt_block(key, pt).hex() == "69c4e0d86a7b0430d8cdb78070b4c55a"
    okm = oracle.hkdf_sha256(b"\x0b" * 22, bytes(range(13)), bytes(range(0xF0, 0xFA)), 42)
    assert okm.hex().startswith("3cb25f25faacd57a90434f64d0362f2a")


@settings(max_examples=25, deadline=None)
@given(st.binary(min_size=16, max_size=16), st.integers(0, 143))
def test_matches_independent_oracle(key, j):
    tek = crypto.TemporaryExposureKey(key, 144 * 18_500)
    interval = tek.rolling_start_interval + j
    rpi = crypto.derive_rpi(tek, interval)
    assert rpi == oracle.rpi(key, interval)
    meta = crypto.Metadata()
    assert crypto.encrypt_metadata(tek, rpi, meta) == oracle.aem(key, rpi, meta.to_bytes())


def test_interval_number():
    assert crypto.interval_number(0) == 0
    assert crypto.interval_number(599.9) == 0
    assert crypto.interval_number(600) == 1
    assert crypto.interval_number(1_601_510_400) == 2_669_184


def test_144_rpis_distinct():
    assert len(set(crypto.rpis_for_day(ZERO))) == 144


def test_generated_teks_distinct():
    rng = np.random.default_rng(1)
    keys = {crypto.generate_tek(rng, 0).key_bytes for _ in range(10_000)}
    assert len(keys) == 10_000


def test_generate_tek_deterministic():
    a = crypto.generate_tek(np.random.default_rng(9), 144)
    b = crypto.generate_tek(np.random.default_rng(9), 144)
    assert a == b and a.rolling_start_interval == 144


@pytest.mark.parametrize("version", [0x00, 0x40, 0x7F, 0xFF])
def test_metadata_round_trip_versions(version):
    meta = crypto.Metadata(version=version, tx_power=-20)
    rpi = crypto.derive_rpi(ZERO, 5)
    assert crypto.decrypt_metadata(ZERO, rpi, crypto.encrypt_metadata(ZERO, rpi, meta)) == meta


def test_metadata_round_trip_all_tx_powers():
    rpi = crypto.derive_rpi(ZERO, 7)
    for tx in range(-128, 128):
        meta = crypto.Metadata(tx_power=tx)
        assert crypto.decrypt_metadata(ZERO, rpi, crypto.encrypt_metadata(ZERO, rpi, meta)) == meta


def test_wrong_key_does_not_recover_metadata():
    other = crypto.TemporaryExposureKey(b"\x01" * 16, 0)
    rpi = crypto.derive_rpi(ZERO, 0)
    aem = crypto.encrypt_metadata(ZERO, rpi, crypto.Metadata())
    assert crypto.decrypt_metadata(other, rpi, aem) != crypto.Metadata()


def test_misaligned_start_rejected():
    with pytest.raises(AlignmentError):
        crypto.TemporaryExposureKey(bytes(16), 5)


def test_bad_key_length():
    with pytest.raises(ValueError):
        crypto.TemporaryExposureKey(bytes(15), 0)


@pytest.mark.parametrize("interval", [-1, 144, 10_000])
def test_interval_outside_validity(interval):
    with pytest.raises(ValidityError):
        crypto.derive_rpi(ZERO, interval)
