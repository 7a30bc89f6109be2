"""How often does a scanning phone hear transmitters at 2, 6 and 12 m?

Scans run every four minutes. Close by, every scan hears the other phone.
Far away, only some scans do, so the gap between receptions grows.
"""

from gaensim.radio import PathLossModel
from gaensim.scenario import bundled_scenario, run_scenario

model = PathLossModel()
for d in (1, 2, 6, 12, 20):
    print(f"{d:3d} m  attenuation {model.attenuation(d):5.1f} dB  "
          f"per-packet reception {model.reception_probability(d):.3f}")

rep = run_scenario(bundled_scenario("distance_ladder"))
print()
for row in rep.reception:
    print(f"{row['source']:5s} at {row['distance_m']:4.0f} m: heard in {row['scans_heard']:3d} scans, "
          f"every {row['mean_interval_s']:.0f} s on average")
