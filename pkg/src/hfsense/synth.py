"""Synthetic cohorts with planted, parameterised class effects.

Each participant has a latent baseline for every modality. During the
``effect_days`` before a decompensated event the latent parameters move by
``delta`` times their total (between- plus within-participant) standard
deviation; compensated windows draw the same within-participant noise with
no shift. With every delta at 0 the two classes are exchangeable.

Effect directions: decompensation lowers KCCQ scores, lowers accelerometer
completeness while raising motion intensity, makes calls fewer but longer,
and (when enabled) shortens and thins out trips away from home.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import DAY_MS, EPOCH_MS
from .actigraphy import EPOCHS_PER_DAY
from .artifacts import write_json
from .geo import destination, haversine
from .ingest import (
    AccelStream,
    CallStream,
    ClinicalEvent,
    KccqStream,
    LocationStream,
    ParticipantDataset,
    write_streams,
)

START_MS = 1_609_459_200_000  # 2021-01-01T00:00Z
HOME_CENTRE = (33.75, -84.39)


@dataclass(frozen=True)
class CohortSpec:
    n_participants: int = 28
    n_compensated: int = 62
    n_decompensated: int = 48
    enrollment_days: int = 200
    min_event_gap_days: int = 3
    accel_lookback_days: int = 21
    effect_days: int = 14
    delta_kccq: float = 1.0
    delta_motion: float = 1.0
    delta_social: float = 1.0
    delta_location: float = 0.0
    p_no_accel: float = 0.10
    p_no_calls: float = 0.15
    p_no_location: float = 0.30
    p_no_kccq: float = 0.20
    p_day_off: float = 0.20
    accel_completeness: float = 0.01
    survey_response_rate: float = 0.85
    fs: float = 5.0
    seed: int = 0

    def __post_init__(self):
        for name in ("p_no_accel", "p_no_calls", "p_no_location", "p_no_kccq", "p_day_off",
                     "accel_completeness", "survey_response_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} is not a rate in [0, 1]")
        if self.n_participants < 1:
            raise ValueError("n_participants must be >= 1")
        if self.n_compensated + self.n_decompensated < self.n_participants:
            raise ValueError("every participant needs at least one event")
        if self.enrollment_days <= self.accel_lookback_days:
            raise ValueError("enrollment_days must exceed accel_lookback_days")

    @property
    def n_events(self):
        return self.n_compensated + self.n_decompensated

    def to_dict(self):
        return asdict(self)


# latent parameters: (baseline, between-participant sd, within/window sd)
MOTION_AMP = (np.log(0.06), 0.30, 0.25)  # log z-noise sd in g
MOTION_COMP = (0.0, 0.60, 0.35)  # logit offset around accel_completeness
CALL_RATE = (np.log(4.0), 0.40, 0.25)  # log calls per day
CALL_DUR = (np.log(120.0), 0.30, 0.25)  # log median call seconds
KCCQ_LEVEL = (60.0, 12.0, 8.0)
TRIP_RATE = (np.log(2.0), 0.40, 0.25)  # log trips per day
TRIP_DIST = (np.log(4.0), 0.40, 0.25)  # log median trip km


def _total_sd(p):
    return float(np.hypot(p[1], p[2]))


def _logit(p):
    return np.log(p / (1 - p))


def _expit(x):
    return 1.0 / (1.0 + np.exp(-x))


def _allocate_events(spec, rng):
    """Events per participant (each >= 1) and a shuffled label sequence."""
    n = spec.n_participants
    counts = np.ones(n, dtype=int) + rng.multinomial(spec.n_events - n, np.full(n, 1.0 / n))
    labels = rng.permutation(np.r_[np.zeros(spec.n_compensated, int), np.ones(spec.n_decompensated, int)])
    return counts, labels


def _event_days(n, spec, rng):
    lo = spec.accel_lookback_days
    span = spec.enrollment_days - lo
    free = span - (n - 1) * spec.min_event_gap_days
    if free < n:
        raise ValueError(
            f"infeasible cohort: {n} events with >= {spec.min_event_gap_days} day spacing do not fit "
            f"in {span} days after a {lo}-day lookback; raise enrollment_days or lower the event count"
        )
    picks = np.sort(rng.choice(free, size=n, replace=False))
    return lo + picks + np.arange(n) * spec.min_event_gap_days


class _Latent:
    """Per-day latent parameter for one modality of one participant."""

    def __init__(self, params, delta, rng, days, event_days, labels, effect_days):
        base, between, within = params
        self.level = base + between * rng.standard_normal()
        self.daily = self.level + 0.5 * within * rng.standard_normal(days)
        # window-level draws for every event; a day belongs to the nearest upcoming event's window
        for d_e, y in sorted(zip(event_days, labels), key=lambda p: -p[0]):
            shift = within * rng.standard_normal() + (delta * _total_sd(params) if y == 1 else 0.0)
            lo = max(0, d_e - effect_days)
            self.daily[lo:d_e] = self.level + shift + 0.5 * within * rng.standard_normal(d_e - lo)

    def __getitem__(self, day):
        return self.daily[day]


def _participant(pid, spec, n_events, labels, ss):
    rng = np.random.default_rng(ss)
    days = spec.enrollment_days
    ev_days = _event_days(n_events, spec, rng)
    ev_t = START_MS + ev_days * DAY_MS + (10 * 3600_000 + rng.integers(0, 6 * 3600_000, n_events))
    events = [ClinicalEvent(pid, int(t), int(y), f"{pid}-{k:03d}") for k, (t, y) in enumerate(zip(ev_t, labels))]

    def latent(params, delta):
        return _Latent(params, delta, rng, days, ev_days, labels, spec.effect_days)

    amp = latent(MOTION_AMP, spec.delta_motion)
    comp = latent(MOTION_COMP, -spec.delta_motion)
    rate = latent(CALL_RATE, -spec.delta_social)
    dur = latent(CALL_DUR, spec.delta_social)
    kccq = latent(KCCQ_LEVEL, -spec.delta_kccq)
    trips = latent(TRIP_RATE, -spec.delta_location)
    trip_km = latent(TRIP_DIST, -spec.delta_location)

    shares = {m: rng.random() >= p for m, p in (("accel", spec.p_no_accel), ("calls", spec.p_no_calls),
                                                  ("locations", spec.p_no_location), ("kccq", spec.p_no_kccq))}
    ds = ParticipantDataset(pid, events=events)
    if shares["accel"]:
        ds.accel = _accel(spec, rng, ev_days, amp, comp)
    if shares["calls"]:
        ds.calls = _calls(pid, rng, days, rate, dur)
    if shares["locations"]:
        ds.locations = _locations(rng, days, trips, trip_km)
    if shares["kccq"]:
        ds.surveys = _surveys(spec, rng, days, kccq)
    return ds


def _accel(spec, rng, ev_days, amp, comp):
    fs = spec.fs
    per_epoch = int(round(EPOCH_MS / 1000 * fs))
    step_ms = 1000.0 / fs
    days = sorted({d for e in ev_days for d in range(max(0, e - spec.accel_lookback_days), e)})
    base_logit = _logit(spec.accel_completeness)
    t_parts, xyz_parts = [], []
    for d in days:
        if rng.random() < spec.p_day_off:
            continue
        c = _expit(base_logit + comp[d])
        mean_len = 10.0
        n_sess = rng.poisson(c * EPOCHS_PER_DAY / mean_len)
        mask = np.zeros(EPOCHS_PER_DAY, dtype=bool)
        for s, ln in zip(rng.integers(0, EPOCHS_PER_DAY, n_sess), rng.geometric(1.0 / mean_len, n_sess)):
            mask[s : s + ln] = True
        ep = np.flatnonzero(mask)
        if len(ep) == 0:
            continue
        k = np.arange(per_epoch)
        offs = (ep[:, None] * EPOCH_MS + k[None, :] * step_ms).ravel()
        t = START_MS + d * DAY_MS + np.round(offs).astype(np.int64)
        hour = (offs / 3600_000.0)
        diurnal = np.where((hour < 6) | (hour >= 23), 0.3, 1.0)
        sigma = np.exp(amp[d]) * diurnal
        # session-level intensity variation, constant over each run of epochs
        run_id = np.cumsum(np.r_[True, np.diff(ep) > 1])
        run_gain = np.exp(0.3 * rng.standard_normal(run_id[-1] + 1))[run_id]
        sigma = sigma * np.repeat(run_gain, per_epoch)
        xyz = rng.standard_normal((len(t), 3)) * sigma[:, None]
        t_parts.append(t)
        xyz_parts.append(xyz)
    if not t_parts:
        return AccelStream(np.zeros(0, np.int64), np.zeros(0), np.zeros(0), np.zeros(0))
    t = np.concatenate(t_parts)
    xyz = np.round(np.concatenate(xyz_parts), 4)
    return AccelStream(t, xyz[:, 0].copy(), xyz[:, 1].copy(), xyz[:, 2].copy())


def _calls(pid, rng, days, rate, dur):
    contacts = [f"{pid}-contact-{j:02d}" for j in range(int(rng.integers(5, 25)))]
    weights = 1.0 / np.arange(1, len(contacts) + 1)
    weights /= weights.sum()
    t_all, d_all, c_all = [], [], []
    for d in range(days):
        n = rng.poisson(np.exp(rate[d]))
        if n == 0:
            continue
        # waking hours 7:00-22:00
        t = START_MS + d * DAY_MS + np.sort(rng.integers(7 * 3600_000, 22 * 3600_000, n))
        du = np.round(np.exp(dur[d] + 0.8 * rng.standard_normal(n)), 1)
        t_all.append(t)
        d_all.append(du)
        c_all.extend(rng.choice(len(contacts), size=n, p=weights))
    if not t_all:
        return CallStream(np.zeros(0, np.int64), np.zeros(0), np.zeros(0, dtype=object))
    return CallStream(np.concatenate(t_all), np.concatenate(d_all),
                      np.array([contacts[i] for i in c_all], dtype=object))


def _locations(rng, days, trips, trip_km):
    home = (HOME_CENTRE[0] + 0.2 * rng.standard_normal(), HOME_CENTRE[1] + 0.2 * rng.standard_normal())
    places = []  # recurring destinations
    for _ in range(int(rng.integers(3, 8))):
        places.append(destination(home[0], home[1], rng.uniform(0, 360), np.exp(TRIP_DIST[0] + 0.6 * rng.standard_normal())))
    t_c, lat_c, lon_c = [], [], []
    for d in range(days):
        day0 = START_MS + d * DAY_MS
        n = rng.poisson(np.exp(trips[d]))
        starts = np.sort(rng.integers(8 * 3600_000, 20 * 3600_000, n))
        for s in starts:
            if rng.random() < 0.5 and places:
                lat, lon = places[int(rng.integers(len(places)))]
                scale = np.exp(trip_km[d] - TRIP_DIST[0])
                dist = haversine(home[0], home[1], lat, lon) * scale
                brg = _bearing(home, (lat, lon))
            else:
                dist = np.exp(trip_km[d] + 0.6 * rng.standard_normal())
                brg = rng.uniform(0, 360)
            lat, lon = destination(home[0], home[1], brg, dist)
            stay = int(rng.integers(20 * 60_000, 3 * 3600_000))
            t_c += [day0 + s + int(rng.integers(5 * 60_000, 30 * 60_000)), day0 + s + stay + 40 * 60_000]
            jitter = 0.00015 * rng.standard_normal(2)
            lat_c += [lat, home[0] + jitter[0]]
            lon_c += [lon, home[1] + jitter[1]]
        # a few small moves around the home block
        for _ in range(rng.poisson(1.0)):
            t_c.append(day0 + int(rng.integers(0, DAY_MS)))
            j = 0.0008 * rng.standard_normal(2)
            lat_c.append(home[0] + j[0])
            lon_c.append(home[1] + j[1])
    order = np.argsort(t_c, kind="stable")
    t = np.asarray(t_c, dtype=np.int64)[order]
    lat = np.asarray(lat_c)[order]
    lon = np.asarray(lon_c)[order]
    # the app records a fix only after >= 100 m and >= 5 min since the last one
    keep = []
    last = None
    for i in range(len(t)):
        if last is None or (t[i] - t[last] >= 5 * 60_000 and haversine(lat[i], lon[i], lat[last], lon[last]) >= 0.1):
            keep.append(i)
            last = i
    keep = np.asarray(keep, dtype=int)
    return LocationStream(t[keep], np.round(lat[keep], 6), np.round(lon[keep], 6))


def _bearing(a, b):
    phi1, phi2 = np.radians(a[0]), np.radians(b[0])
    dl = np.radians(b[1] - a[1])
    y = np.sin(dl) * np.cos(phi2)
    x = np.cos(phi1) * np.sin(phi2) - np.sin(phi1) * np.cos(phi2) * np.cos(dl)
    return np.degrees(np.arctan2(y, x))


def _surveys(spec, rng, days, kccq):
    offsets = rng.normal(0, 4, size=4)
    t, doms = [], []
    start = int(rng.integers(0, 7))
    for d in range(start, days, 7):
        if rng.random() > spec.survey_response_rate:
            continue
        t.append(START_MS + d * DAY_MS + int(rng.integers(9 * 3600_000, 21 * 3600_000)))
        vals = np.clip(kccq[d] + offsets + 5.0 * rng.standard_normal(4), 0, 100)
        doms.append(np.round(vals, 2))
    if not t:
        return KccqStream(np.zeros(0, np.int64), *(np.zeros(0) for _ in range(4)))
    doms = np.asarray(doms)
    return KccqStream(np.asarray(t, dtype=np.int64), *(doms[:, i].copy() for i in range(4)))


def generate(spec=CohortSpec()):
    """Synthetic cohort as ParticipantDatasets keyed by participant id."""
    root = np.random.SeedSequence(int(spec.seed))
    alloc_ss, *part_ss = root.spawn(spec.n_participants + 1)
    counts, labels = _allocate_events(spec, np.random.default_rng(alloc_ss))
    out = {}
    pos = 0
    for i in range(spec.n_participants):
        pid = f"P{i + 1:03d}"
        lab = labels[pos : pos + counts[i]]
        pos += counts[i]
        out[pid] = _participant(pid, spec, int(counts[i]), lab, part_ss[i])
    return out


def write_cohort(datasets, out_dir, spec, config=None):
    """Write the five ingest files plus cohort_spec.json."""
    out_dir = Path(out_dir)
    config = {"cohort_spec": spec.to_dict(), **(config or {})}
    paths = write_streams(datasets, out_dir, config, spec.seed, float_format="%.4f")
    paths["cohort_spec"] = write_json(out_dir / "cohort_spec.json", {"cohort_spec": spec.to_dict()}, config, spec.seed)
    return paths


def load_spec(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return CohortSpec(**doc["cohort_spec"])
