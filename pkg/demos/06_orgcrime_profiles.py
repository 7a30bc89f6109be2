"""Published keys plus sniffers at known places give away where a patient went.

The attacker expands each published TEK into its RPIs, finds them in sniffer
logs and reads off a sequence of location types. Matching that against a
list of candidate people gets harder as the list grows.
"""

from gaensim import adversary
from gaensim.scenario import bundled_scenario, execute, load_scenario

res = execute(load_scenario(bundled_scenario("orgcrime_city")))
trace = res.trace
logs, _, labels = adversary.sniffer_logs_by_name(trace)
for traj in adversary.reconstruct_trajectories(logs, adversary.published_keys(trace), labels):
    print("trajectory for key", traj.key.hex()[:8], "->",
          [(v.location_type, round(v.first_seen / 3600, 2)) for v in traj.visits])

print()
for n in (2, 5, 10, 20):
    out = adversary.run_attack("orgcrime1", trace, seed=3, candidate_profiles=n)
    print(f"{n:2d} candidate profiles: precision {out.metrics['precision']:.2f}")

print("\nwithout published keys:", adversary.run_attack("orgcrime1", trace, tek_access=False).metrics)
print("reading a phone that is not compromised:",
      [a["metrics"] for a in res.report.attacks if a["threat_model"] == "orgcrime2"])
