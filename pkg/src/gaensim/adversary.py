"""Threat-model harness: walking trail, neighbour, stalker and organised crime.

Attacks consume sniffer logs of ``(time, address, payload, attenuation)``.
Simulation ground truth (which device sent what) is passed separately and
used only to score an attack, never to drive it.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from statistics import median

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import binom

from . import crypto
from .device import Device
from .errors import AuthorizationError
from .exposure import ExposureConfig, detect_exposure, should_notify

THREAT_MODELS = ("walking-trail", "neighbor", "stalker1", "stalker2", "orgcrime1", "orgcrime2")
DEFAULT_EPOCH_SECONDS = 1200.0


class InfoLeaked(str, enum.Enum):
    NONE = "None"
    NEARBY_USER_COUNT = "NearbyUserCount"
    MOVEMENT_PROFILE = "MovementProfile"
    INFECTION_STATUS = "InfectionStatus"


@dataclass
class AttackOutcome:
    threat_model: str
    info_leaked: InfoLeaked
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "threat_model": self.threat_model,
            "info_leaked": self.info_leaked.value,
            "metrics": self.metrics,
        }


LogEntry = tuple  # (time, address, payload, attenuation)


def _plausible_metadata(meta: crypto.Metadata) -> bool:
    return meta.reserved == b"\x00\x00" and meta.version == crypto.DEFAULT_VERSION


def run_walking_trail(log, threat_model: str = "walking-trail",
                      rng: np.random.Generator | None = None) -> AttackOutcome:
    """A handful of RPIs carry no identity, history or infection data.

    The attacker tries to open each captured AEM with a guessed TEK; without
    the real key the plaintext is noise.
    """
    rng = rng or np.random.default_rng(0)
    rpis = {entry[2][:16]: entry[2] for entry in log}
    opened = 0
    for payload in rpis.values():
        guess = crypto.TemporaryExposureKey(rng.bytes(16), 0)
        if _plausible_metadata(crypto.decrypt_metadata(guess, payload[:16], payload[16:])):
            opened += 1
    metrics = {
        "captured_rpis": len(rpis),
        "aem_decryption": "failed" if rpis and not opened else ("n/a" if not rpis else "opened"),
        "identity_recovered": False,
    }
    return AttackOutcome(threat_model, InfoLeaked.NONE, metrics)


def _sighting_spans(entries) -> dict[bytes, list[float]]:
    spans: dict[bytes, list[float]] = {}
    for t, _, payload, *_ in entries:
        s = spans.get(payload[:16])
        if s is None:
            spans[payload[:16]] = [t, t]
        else:
            s[0] = min(s[0], t)
            s[1] = max(s[1], t)
    return spans


def _max_concurrent(spans) -> int:
    events = []
    for a, b in spans:
        events.append((a, 1))
        events.append((b, -1))
    # starts before ends at equal times: a sighting instant counts as overlap
    events.sort(key=lambda e: (e[0], -e[1]))
    best = cur = 0
    for _, d in events:
        cur += d
        best = max(best, cur)
    return best


def estimate_nearby_users(log, window_minutes: float = 15.0) -> dict:
    """Estimate how many devices are around the sniffer.

    Per window the estimate is the peak number of RPIs whose sighting spans
    overlap, so successive RPIs of one rotating device count once. Windows are
    combined by median.
    """
    if window_minutes <= 0:
        raise ValueError("window_minutes must be positive")
    if not log:
        return {"estimate": 0.0, "naive_distinct_rpis": 0, "windows": 0}
    width = window_minutes * 60.0
    t0 = min(e[0] for e in log)
    buckets: dict[int, list] = {}
    for e in log:
        buckets.setdefault(int((e[0] - t0) // width), []).append(e)
    per_window = [
        _max_concurrent(_sighting_spans(entries).values())
        for _, entries in sorted(buckets.items())
    ]
    return {
        "estimate": float(median(per_window)),
        "naive_distinct_rpis": len({e[2][:16] for e in log}),
        "windows": len(per_window),
        "per_window": per_window,
    }


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


@dataclass
class LinkageResult:
    chains: list[list[bytes]]
    links: int
    overlap_links: int
    guessed_links: int
    accuracy: float | None
    chance_accuracy: float | None


def stalker_link(log, truth: list[str] | None = None, *,
                 epoch_seconds: float = DEFAULT_EPOCH_SECONDS,
                 rng: np.random.Generator | None = None) -> LinkageResult:
    """Link identifiers across rotations the way an address-tracking stalker would.

    Pairs sharing an address or an RPI are joined deterministically (the
    asynchronous-rotation leak). Everything else has to be guessed: each
    fragment first seen in epoch ``k`` is attached to a uniformly chosen
    fragment of epoch ``k - 1``. ``chance_accuracy`` is the expected accuracy
    of those uniform guesses: per guess, the share of candidates that belong
    to the right device (``1 / |candidates|`` when no ground truth is given).
    """
    rng = rng or np.random.default_rng(0)
    pairs: dict[tuple[bytes, bytes], list] = {}
    for i, (t, address, payload, *_) in enumerate(log):
        key = (address, payload[:16])
        src = truth[i] if truth is not None else None
        p = pairs.get(key)
        if p is None:
            pairs[key] = [t, t, src]
        else:
            p[0] = min(p[0], t)
            p[1] = max(p[1], t)
    keys = list(pairs)
    uf = _UnionFind(len(keys))
    by_addr: dict[bytes, int] = {}
    by_rpi: dict[bytes, int] = {}
    for i, (addr, rpi) in enumerate(keys):
        if addr in by_addr:
            uf.union(i, by_addr[addr])
        else:
            by_addr[addr] = i
        if rpi in by_rpi:
            uf.union(i, by_rpi[rpi])
        else:
            by_rpi[rpi] = i

    groups: dict[int, list[int]] = {}
    for i in range(len(keys)):
        groups.setdefault(uf.find(i), []).append(i)
    fragments = []
    for members in groups.values():
        members.sort(key=lambda i: (pairs[keys[i]][0], keys[i]))
        fragments.append(members)
    fragments.sort(key=lambda m: (pairs[keys[m[0]]][0], keys[m[0]]))

    def first(m):
        return pairs[keys[m[0]]][0]

    def last(m):
        return max(pairs[keys[i]][1] for i in m)

    def fragment_source(fi):
        return pairs[keys[fragments[fi][-1]]][2]

    correct = 0
    overlap = 0
    for m in fragments:
        for a, b in zip(m, m[1:]):
            overlap += 1
            if truth is not None and pairs[keys[a]][2] == pairs[keys[b]][2]:
                correct += 1

    guessed = 0
    chance_terms = []
    predecessor: dict[int, int] = {}
    if fragments and len(log):
        t0 = min(e[0] for e in log)
        spans = [(first(m), last(m)) for m in fragments]
        n_slots = int((max(s[1] for s in spans) - t0) // epoch_seconds) + 1
        populations: list[list[int]] = [[] for _ in range(n_slots)]
        for fi, (a, b) in enumerate(spans):
            for k in range(int((a - t0) // epoch_seconds), int((b - t0) // epoch_seconds) + 1):
                populations[k].append(fi)
        for fi, (a, _) in enumerate(spans):
            k = int((a - t0) // epoch_seconds)
            if k == 0:
                continue
            cands = [g for g in populations[k - 1] if g != fi and spans[g][0] < a]
            if not cands:
                continue
            g = cands[int(rng.integers(len(cands)))]
            predecessor[fi] = g
            guessed += 1
            if truth is None:
                chance_terms.append(1.0 / len(cands))
            else:
                src_next = fragment_source(fi)
                same = sum(1 for c in cands if fragment_source(c) == src_next)
                chance_terms.append(same / len(cands))
                correct += fragment_source(g) == src_next

    children: dict[int, list[int]] = {}
    for child, parent in predecessor.items():
        children.setdefault(parent, []).append(child)
    chains = []
    for root in range(len(fragments)):
        if root in predecessor:
            continue
        chain, stack = [], [root]
        while stack:
            f = stack.pop()
            chain.extend(keys[i][1] for i in fragments[f])
            stack.extend(sorted(children.get(f, []), reverse=True))
        chains.append(chain)

    links = overlap + guessed
    accuracy = correct / links if truth is not None and links else None
    chance = float(np.mean(chance_terms)) if chance_terms else None
    return LinkageResult(chains, links, overlap, guessed, accuracy, chance)


# -- organised crime I ---------------------------------------------------


@dataclass
class Visit:
    sniffer: str
    location_type: str | None
    first_seen: float
    last_seen: float


@dataclass
class Trajectory:
    key: bytes
    visits: list[Visit]

    @property
    def sniffers(self) -> list[str]:
        return [v.sniffer for v in self.visits]


@dataclass
class OrgCrimeResult:
    trajectories: list[Trajectory]
    precision: float | None
    degraded: bool


def reconstruct_trajectories(sniffer_logs: dict[str, list], published_teks,
                             side_channel: dict[str, str] | None = None) -> list[Trajectory]:
    """Expand published TEKs and place each key at the sniffers that heard it."""
    owner: dict[bytes, bytes] = {}
    for tek in published_teks:
        tek = tek.as_tek() if hasattr(tek, "as_tek") else tek
        for rpi in crypto.rpis_for_day(tek):
            owner[rpi] = tek.key_bytes
    hits: dict[bytes, list[tuple[float, str]]] = {}
    for name in sorted(sniffer_logs):
        for t, _, payload, *_ in sniffer_logs[name]:
            k = owner.get(payload[:16])
            if k is not None:
                hits.setdefault(k, []).append((t, name))
    out = []
    for k in sorted(hits):
        visits: list[Visit] = []
        for t, name in sorted(hits[k]):
            if visits and visits[-1].sniffer == name:
                visits[-1].last_seen = t
            else:
                label = side_channel.get(name) if side_channel else None
                visits.append(Visit(name, label, t, t))
        out.append(Trajectory(k, visits))
    return out


def trajectory_windows(traj: Trajectory, window_seconds: float) -> dict[int, str]:
    """Location type observed in each side-channel window the trajectory touches."""
    seen: dict[int, str] = {}
    for v in traj.visits:
        if v.location_type is None:
            continue
        for w in range(int(v.first_seen // window_seconds), int(v.last_seen // window_seconds) + 1):
            seen.setdefault(w, v.location_type)
    return seen


def make_decoy_profiles(true_profile: dict[int, str], count: int, location_types,
                        rng: np.random.Generator, share: float = 0.5) -> list[dict[int, str]]:
    """Decoys keep each window's location type with probability ``share``."""
    types = sorted(set(location_types))
    decoys = []
    for _ in range(count):
        d = {}
        for w, lt in sorted(true_profile.items()):
            d[w] = lt if rng.random() < share else types[int(rng.integers(len(types)))]
        decoys.append(d)
    return decoys


def profile_precision(observed: dict[int, str], true_profile: dict[int, str],
                      decoys: list[dict[int, str]]) -> float:
    """Expected correctness of picking a best-scoring profile, ties broken uniformly."""
    def score(p):
        return sum(1 for w, lt in observed.items() if p.get(w) == lt)

    s_true = score(true_profile)
    scores = [score(d) for d in decoys]
    best = max([s_true] + scores)
    if s_true < best:
        return 0.0
    return 1.0 / (1 + sum(1 for s in scores if s == best))


def org_crime_profile(
    sniffer_logs: dict[str, list],
    published_teks,
    side_channel: dict[str, str] | None,
    candidate_profiles: int,
    *,
    true_profiles: dict[bytes, dict[int, str]] | None = None,
    decoy_pool: dict[bytes, list[dict[int, str]]] | None = None,
    window_seconds: float = 900.0,
) -> OrgCrimeResult:
    """Profile infected users from published keys plus side-channel windows.

    ``true_profiles`` is the side-channel record of each real person's
    movements, keyed by the infected TEK it belongs to; ``decoy_pool`` holds
    look-alike profiles, of which the first ``candidate_profiles - 1`` are
    offered alongside the true one.
    """
    if candidate_profiles < 1:
        raise ValueError("candidate_profiles must be at least 1")
    trajectories = reconstruct_trajectories(sniffer_logs, published_teks, side_channel)
    if not side_channel:
        return OrgCrimeResult(trajectories, None, True)
    if not true_profiles:
        return OrgCrimeResult(trajectories, None, False)
    precisions = []
    for traj in trajectories:
        truth = true_profiles.get(traj.key)
        if truth is None:
            continue
        observed = trajectory_windows(traj, window_seconds)
        pool = (decoy_pool or {}).get(traj.key, [])
        precisions.append(profile_precision(observed, truth, pool[:candidate_profiles - 1]))
    precision = float(np.mean(precisions)) if precisions else None
    return OrgCrimeResult(trajectories, precision, False)


# -- organised crime II --------------------------------------------------


def org_crime_device_read(device: Device, compromised: bool,
                          config: ExposureConfig | None = None) -> AttackOutcome:
    """Read infection and exposure status off a victim phone."""
    if not compromised:
        raise AuthorizationError("device storage is protected; compromise required")
    exposed = should_notify(detect_exposure(device, config), config)
    metrics = {
        "infected": bool(device.infected),
        "exposed": exposed,
        "status": "exposed" if exposed else "not exposed",
    }
    return AttackOutcome("orgcrime2", InfoLeaked.INFECTION_STATUS, metrics)


# -- cross-day TEK clustering ---------------------------------------------


def _hamming(a: bytes, b: bytes) -> int:
    return int.from_bytes(bytes(x ^ y for x, y in zip(a, b)), "big").bit_count()


def cluster_published_teks(keys, n_devices: int) -> list[int]:
    """Try to group shuffled daily keys into per-device chains.

    Keys are bucketed by day, then consecutive days are joined by the
    minimum total Hamming-distance assignment. Random keys give this attacker
    nothing to work with; it exists to measure that.
    """
    days: dict[int, list[int]] = {}
    for i, k in enumerate(keys):
        days.setdefault(k.rolling_start_interval, []).append(i)
    labels = [-1] * len(keys)
    prev: list[int] | None = None
    for day in sorted(days):
        members = days[day]
        if prev is None:
            for lbl, i in enumerate(members[:n_devices]):
                labels[i] = lbl
        else:
            cost = np.array([[_hamming(keys[p].key_bytes, keys[m].key_bytes) for m in members]
                             for p in prev])
            rows, cols = linear_sum_assignment(cost)
            for r, c in zip(rows, cols):
                labels[members[c]] = labels[prev[r]]
        prev = [i for i in members if labels[i] >= 0]
    return labels


def clustering_accuracy(labels: list[int], truth: list[int], n_devices: int) -> float:
    """Fraction correctly grouped under the best relabelling of clusters."""
    best = 0
    for perm in itertools.permutations(range(n_devices)):
        hits = sum(1 for lbl, t in zip(labels, truth) if lbl >= 0 and perm[lbl] == t)
        best = max(best, hits)
    return best / len(truth) if truth else 0.0


def random_clustering_baseline(n_days: int, n_devices: int = 2, *, trials: int = 20000,
                               seed: int = 0) -> float:
    """Expected best-relabelling accuracy when each day's keys are assigned at random."""
    if n_devices == 2:
        k = np.arange(n_days + 1)
        return float(np.sum(binom.pmf(k, n_days, 0.5) * np.maximum(k, n_days - k)) / n_days)
    rng = np.random.default_rng(seed)
    total = 0.0
    truth = [d for _ in range(n_days) for d in range(n_devices)]
    for _ in range(trials):
        labels = [int(x) for _ in range(n_days) for x in rng.permutation(n_devices)]
        total += clustering_accuracy(labels, truth, n_devices)
    return total / trials


def chance_link_accuracy(population_sizes) -> float:
    """Mean accuracy of uniform random assignment given candidate-set sizes."""
    sizes = [s for s in population_sizes if s > 0]
    return float(np.mean([1.0 / s for s in sizes])) if sizes else math.nan


# -- trace-driven dispatch -------------------------------------------------


def sniffer_log(trace, name: str | None = None):
    """Deliveries to sniffer ``name`` (all sniffers if None) as ``(log, truth)``."""
    sniffers = {r.src for r in trace.select("sniffer")}
    if name is not None:
        if name not in sniffers:
            raise KeyError(f"no sniffer named {name!r} in trace")
        sniffers = {name}
    rows = sorted((r for r in trace.select("deliver") if r.dst in sniffers),
                  key=lambda r: (r.time, r.dst, r.src))
    return [(r.time, r.address, r.payload, r.attenuation) for r in rows], [r.src for r in rows]


def sniffer_logs_by_name(trace) -> tuple[dict[str, list], dict[str, list], dict[str, str]]:
    labels = {r.src: r.dst for r in trace.select("sniffer")}
    logs: dict[str, list] = {n: [] for n in labels}
    truth: dict[str, list] = {n: [] for n in labels}
    for r in trace.select("deliver"):
        if r.dst in logs:
            logs[r.dst].append((r.time, r.address, r.payload, r.attenuation))
            truth[r.dst].append(r.src)
    return logs, truth, {n: lbl for n, lbl in labels.items() if lbl}


def published_keys(trace):
    from .server import DiagnosisKey

    out = []
    for r in trace.select("publish"):
        p = r.payload
        out.append(DiagnosisKey(p[:16], int.from_bytes(p[16:20], "little"),
                                int.from_bytes(p[20:24], "little")))
    return out


def true_profiles_from_trace(trace, keys, window_seconds: float = 900.0):
    """Side-channel record of where each infected person actually was.

    Built from ground-truth delivery sources for the uploading device's
    published keys, restricted to the day each key was valid.
    """
    logs, truth, labels = sniffer_logs_by_name(trace)
    uploads = {}
    for r in trace.select("publish"):
        uploads[r.payload[:16]] = r.src
    profiles: dict[bytes, dict[int, str]] = {}
    for k in keys:
        owner = uploads.get(k.key_bytes)
        tek = k.as_tek()
        owned = set(crypto.rpis_for_day(tek))
        prof: dict[int, str] = {}
        for name, entries in logs.items():
            label = labels.get(name)
            if label is None:
                continue
            for (t, _, payload, _), src in zip(entries, truth[name]):
                if src == owner and payload[:16] in owned:
                    prof.setdefault(int(t // window_seconds), label)
        if prof:
            profiles[k.key_bytes] = prof
    return profiles


def run_attack(model: str, trace, *, sniffer: str | None = None, seed: int = 0,
               window_minutes: float = 15.0, candidate_profiles: int = 5,
               tek_access: bool = True, decoy_share: float = 0.5,
               max_decoys: int = 19) -> AttackOutcome:
    """Run one log-based threat model over a simulation trace.

    ``orgcrime2`` needs live device state and is handled by
    :func:`org_crime_device_read` instead.
    """
    rng = np.random.default_rng(seed)
    if model not in THREAT_MODELS:
        raise ValueError(f"unknown threat model {model!r}")
    if model == "orgcrime2":
        raise ValueError("orgcrime2 reads a device, not a trace; use org_crime_device_read")
    if model in ("walking-trail", "neighbor"):
        log, truth = sniffer_log(trace, sniffer)
        out = run_walking_trail(log, model, rng)
        out.metrics["victims_heard"] = len(set(truth))
        return out
    if model == "stalker1":
        log, truth = sniffer_log(trace, sniffer)
        est = estimate_nearby_users(log, window_minutes)
        metrics = {k: v for k, v in est.items() if k != "per_window"}
        metrics["devices_in_log"] = len(set(truth))
        return AttackOutcome(model, InfoLeaked.NEARBY_USER_COUNT, metrics)
    if model == "stalker2":
        log, truth = sniffer_log(trace, sniffer)
        res = stalker_link(log, truth, rng=rng)
        trackable = (
            res.accuracy is not None
            and res.links > 0
            and res.accuracy > (res.chance_accuracy or 0.0) + 0.05
        )
        metrics = {
            "links": res.links,
            "overlap_links": res.overlap_links,
            "guessed_links": res.guessed_links,
            "linkage_accuracy": res.accuracy,
            "chance_accuracy": res.chance_accuracy,
        }
        return AttackOutcome(model, InfoLeaked.MOVEMENT_PROFILE if trackable else InfoLeaked.NONE,
                             metrics)
    # orgcrime1
    logs, _, labels = sniffer_logs_by_name(trace)
    keys = published_keys(trace) if tek_access else []
    window = 900.0
    truths = true_profiles_from_trace(trace, keys, window)
    types = sorted(set(labels.values()))
    pool = {k: make_decoy_profiles(p, max_decoys, types, rng, decoy_share)
            for k, p in sorted(truths.items())}
    res = org_crime_profile(logs, keys, labels, candidate_profiles, true_profiles=truths,
                            decoy_pool=pool, window_seconds=window)
    leaked = InfoLeaked.MOVEMENT_PROFILE if (keys and labels and res.trajectories) else InfoLeaked.NONE
    metrics = {
        "tek_access": bool(tek_access),
        "side_channel": bool(labels),
        "trajectories": len(res.trajectories),
        "candidate_profiles": candidate_profiles,
        "precision": res.precision,
        "degraded": res.degraded,
    }
    return AttackOutcome(model, leaked, metrics)
