import math

import numpy as np
import pytest

from gaensim.radio import PathLossModel, Placement, Position, World, attenuation, reception_probability


def test_attenuation_reference():
    assert attenuation(1.0) == pytest.approx(40.0)
    assert attenuation(10.0) == pytest.approx(62.0)
    assert attenuation(1.0, tx_power=-10) == pytest.approx(30.0)


def test_attenuation_rejects_nonpositive():
    with pytest.raises(ValueError):
        attenuation(0.0)


def test_reception_monotone_in_distance():
    d = np.linspace(0.2, 30, 200)
    p = [reception_probability(x) for x in d]
    assert all(a >= b for a, b in zip(p, p[1:]))
    assert reception_probability(1.0) > 0.99
    assert reception_probability(20.0) < 0.01
    assert reception_probability(25.0) == 0.0


def test_model_validation():
    with pytest.raises(ValueError):
        PathLossModel(exponent=0)


def test_placement_interpolates():
    pl = Placement(Position(0, 0), [(0, 0, 0), (10, 10, 0)])
    assert pl.at(5).x == pytest.approx(5)
    assert pl.at(-1).x == 0 and pl.at(99).x == 10


def test_scan_cadence_one_metre():
    w = World(seed=1)
    w.add_device("a", (0, 0))
    w.add_device("b", (1, 0))
    w.run_until(3600)
    scans = w.scan_events["a"]
    assert len(scans) == 15
    assert np.diff(scans).mean() == pytest.approx(240.0)
    assert len(w.device("a").observations) > 0


def test_far_apart_hear_nothing():
    w = World(seed=1)
    w.add_device("a", (0, 0))
    w.add_device("b", (50, 0))
    w.run_until(3600)
    assert not w.device("a").observations and not w.trace.select("deliver")


def test_sniffer_never_transmits():
    w = World(seed=2)
    w.add_device("a", (0, 0))
    w.add_sniffer("s", (1, 0))
    w.run_until(1800)
    assert w.sniffers[0].log
    assert not w.device("a").observations


def test_disabled_device_neither_sends_nor_scans():
    w = World(seed=3)
    w.add_device("a", (0, 0), enabled=False)
    w.add_device("b", (1, 0))
    w.run_until(3600)
    assert not w.device("a").observations and not w.device("b").observations


def test_deterministic_trace():
    def go():
        w = World(seed=7)
        w.add_device("a", (0, 0))
        w.add_device("b", (3, 0))
        w.run_until(7200)
        return w.trace.dumps()

    assert go() == go()


def test_emissions_counted():
    w = World(seed=4)
    w.add_device("a", (0, 0), scan_period=None)
    w.run_until(100)
    assert w.trace.emission_count == pytest.approx(400, abs=1)


def test_scheduled_action_runs_in_order():
    w = World(seed=0)
    seen = []
    w.schedule(50, lambda: seen.append(w.clock))
    w.schedule(10, lambda: seen.append(w.clock))
    w.run_until(100)
    assert seen == [10, 50]


def test_step_requires_positive():
    with pytest.raises(ValueError):
        World().step(0)


def test_empty_world_empty_trace():
    w = World(seed=0)
    w.run_until(3600)
    assert len(w.trace) == 0


def test_lone_device_delivers_nothing():
    w = World(seed=0)
    w.add_device("a", (0, 0))
    assert w.run_until(3600) == 0


def test_every_delivery_has_one_emission():
    w = World(seed=5, trace_emissions=True)
    w.add_device("a", (0, 0))
    w.add_device("b", (4, 0))
    w.add_sniffer("s", (2, 0))
    w.run_until(1800)
    emits = {}
    for r in w.trace.select("emit"):
        key = (r.src, round(r.time, 6))
        assert key not in emits
        emits[key] = (r.address, r.payload)
    deliveries = w.trace.select("deliver")
    assert deliveries
    for r in deliveries:
        assert emits[(r.src, round(r.time, 6))] == (r.address, r.payload)


def test_extra_attenuation_reduces_reception():
    def heard(extra):
        w = World(seed=6)
        w.add_device("a", (0, 0), extra_attenuation=extra)
        w.add_device("b", (3, 0))
        w.run_until(7200)
        return len(w.trace.select("deliver", dst="b"))

    assert heard(15.0) < heard(0.0)
