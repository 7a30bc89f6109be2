"""The key server only takes uploads with a fresh PIN and signs what it publishes.

Flip one bit of an export and verification fails; reuse a PIN and the
upload is refused.
"""

import numpy as np

from gaensim import crypto
from gaensim.errors import IntegrityError
from gaensim.server import KeyServer, signing_key_from_seed, verify_and_parse_export

rng = np.random.default_rng(7)
srv = KeyServer(7, signing_key=signing_key_from_seed(7))
keys = [crypto.generate_tek(rng, 144 * (18_500 + d)) for d in range(3)]

pin = srv.issue_pin("case-17")
print("PIN", pin.digits, "->", srv.submit_keys(pin, keys))
print("same PIN again ->", srv.submit_keys(pin, keys))
print("never issued   ->", srv.submit_keys("123456", keys))

data, sig = srv.publish_batch()
batch = verify_and_parse_export(data, sig, srv.public_key)
print(f"\nexport {len(data)} bytes, {len(batch)} keys verified")

tampered = bytearray(data)
tampered[40] ^= 0x01
try:
    verify_and_parse_export(bytes(tampered), sig, srv.public_key)
except IntegrityError as exc:
    print("tampered export:", exc)
