"""Two phones sit 1 m apart for 20 minutes. Later, one owner tests positive.

This runs the bundled ``two_device_contact`` scenario: alice uploads her keys
with a PIN, the server signs an export, bob downloads and verifies it, and
his phone finds the 20-minute contact on its own.
"""

from gaensim.scenario import bundled_scenario, execute, load_scenario

res = execute(load_scenario(bundled_scenario("two_device_contact")))
rep = res.report

print("uploads:", rep.uploads)
for name, summary in rep.exposures.items():
    print(f"{name:6s} matched keys {summary['matched_key_count']}  "
          f"longest window {summary['max_single_duration_minutes']:.1f} min  "
          f"notified {summary['notified']}")

bob = res.world.device("bob")
print(f"\nbob stores {len(bob.observations)} RPIs, {bob.storage_bytes()} bytes")
print("notifications:", rep.notifications)
