"""Walk through one day of the key schedule for a single phone.

A fresh 16-byte TEK is drawn at midnight. Two subkeys come out of HKDF,
one for identifiers and one for metadata, and every 10-minute interval gets
its own RPI. Nothing in the broadcast lets an observer recover the TEK.
"""

import numpy as np

from gaensim import crypto

rng = np.random.default_rng(2020)
day = crypto.day_start_interval(crypto.interval_number(1_601_510_400))
tek = crypto.generate_tek(rng, day)

print("TEK          ", tek.key_bytes.hex())
print("RPIK         ", crypto.derive_rpik(tek).hex())
print("AEMK         ", crypto.derive_aemk(tek).hex())
print()

meta = crypto.Metadata()
for j in (0, 1, 2, 143):
    interval = tek.rolling_start_interval + j
    rpi = crypto.derive_rpi(tek, interval)
    aem = crypto.encrypt_metadata(tek, rpi, meta)
    print(f"interval {interval}  RPI {rpi.hex()}  AEM {aem.hex()}")

rpis = crypto.rpis_for_day(tek)
print(f"\n{len(set(rpis))} distinct RPIs for the day")

# anyone holding the TEK (after it is published) can undo the metadata encryption
print("decrypted metadata:", crypto.decrypt_metadata(tek, rpis[0], crypto.encrypt_metadata(tek, rpis[0], meta)))
