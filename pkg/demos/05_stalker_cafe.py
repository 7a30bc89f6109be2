"""A sniffer in a cafe listens to five phones for four hours.

It can count how many phones are around. It cannot follow any one of them
across rotations: its links are no better than guessing, until a phone with
the async fault gives the game away.
"""

import numpy as np

from gaensim import adversary
from gaensim.radio import World
from gaensim.scenario import bundled_scenario, run_scenario

rep = run_scenario(bundled_scenario("stalker_cafe"))
for a in rep.attacks:
    print(a["name"], a["threat_model"], a["info_leaked"], a["metrics"])


def cafe(async_fault):
    w = World(seed=3)
    for i in range(5):
        ang = 2 * np.pi * i / 5
        w.add_device(f"v{i}", (3 * np.cos(ang), 3 * np.sin(ang)), scan_period=None,
                     async_fault=async_fault)
    w.add_sniffer("s", (0, 0), scan_period=15, scan_window=1)
    w.trace.record("sniffer", 0.0, "s", "cafe")
    w.run_until(4 * 3600)
    log, truth = adversary.sniffer_log(w.trace, "s")
    return adversary.stalker_link(log, truth, rng=np.random.default_rng(0))


for fault in (False, True):
    r = cafe(fault)
    # with the fault every link comes from overlaps, so there is nothing to guess
    chance = "n/a" if r.chance_accuracy is None else f"{r.chance_accuracy:.2f}"
    print(f"\nasync_fault={fault}: linkage accuracy {r.accuracy:.2f}, chance {chance}, "
          f"{r.overlap_links} links from overlapping identifiers, {r.guessed_links} guessed")
