"""Three phones for three days, then an audit of what a receiver would log.

Honest phones change Bluetooth address and RPI at the same instant, so the
address to payload relation is one to one. A phone with the async fault
switches its address a little late and the audit catches it.
"""

from gaensim import audit
from gaensim.radio import World
from gaensim.scenario import bundled_scenario, execute, load_scenario

res = execute(load_scenario(bundled_scenario("sync_rotation_3day")))
rep = audit.audit_report(res.trace.capture_lines(with_source=True))
gaps = audit.interval_stats(audit.parse_capture(res.trace.rotation_lines()))
print(f"records {rep.record_count}, distinct pairs {rep.distinct_pairs}, violations {len(rep.violations)}")
print(f"rotation gaps: n={len(gaps.gaps)} min={gaps.min_gap:.0f}s mean={gaps.mean_gap:.0f}s "
      f"max={gaps.max_gap:.0f}s bounds_ok={gaps.bounds_ok}")

w = World(seed=1)
w.add_device("faulty", (0, 0), async_fault=True)
w.add_device("listener", (1, 0))
w.run_until(6 * 3600)
bad = audit.audit_report(w.trace.capture_lines(dst="listener"))
print(f"\nwith async fault: {len(bad.violations)} violations, e.g.")
for v in bad.violations[:3]:
    print("  ", v.kind, v.key, "->", ", ".join(v.values))
