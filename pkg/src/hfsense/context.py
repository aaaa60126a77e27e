"""Social-contact and location feature sets."""

from dataclasses import asdict, dataclass

import numpy as np

from .geo import EARTH_RADIUS_KM, haversine

SOCIAL_FEATURES = ("numCalls", "durCalls", "durCalls_std", "durNoCalls", "durNoCalls_std")
GEO_FEATURES = ("atHome", "distToHome", "zone1", "zone2")

ZONE1_KM = 2.0
KM_PER_DEG = np.pi * EARTH_RADIUS_KM / 180.0

__all__ = [
    "GeoFeatures",
    "HomeLocation",
    "SocialFeatures",
    "find_home",
    "geo_features",
    "haversine",
    "no_call_gaps",
    "social_features",
]


@dataclass(frozen=True)
class SocialFeatures:
    numCalls: int
    durCalls: float
    durCalls_std: float
    durNoCalls: float
    durNoCalls_std: float

    def as_dict(self):
        return asdict(self)


def no_call_gaps(starts_s, durations_s, t_a, t_b):
    """Lengths of the maximal call-free intervals of [t_a, t_b), in seconds.

    Overlapping calls are merged first; zero-length gaps are not intervals
    and are dropped.
    """
    starts = np.asarray(starts_s, dtype=float)
    ends = starts + np.asarray(durations_s, dtype=float)
    order = np.argsort(starts, kind="stable")
    gaps = []
    cursor = float(t_a)
    for s, e in zip(starts[order], ends[order]):
        if s > cursor:
            gaps.append(s - cursor)
        cursor = max(cursor, e)
    if t_b > cursor:
        gaps.append(t_b - cursor)
    return np.asarray(gaps, dtype=float)


def social_features(calls, t_a_ms, t_b_ms, shares_calls=True):
    """Call features over [t_a, t_b); None when the participant never shared call data."""
    if not shares_calls:
        return None
    dur = np.asarray(calls.duration_s, dtype=float)
    n = len(dur)
    gaps = no_call_gaps(np.asarray(calls.t_ms) / 1000.0, dur, t_a_ms / 1000.0, t_b_ms / 1000.0)
    return SocialFeatures(
        numCalls=n,
        durCalls=float(dur.sum()),
        durCalls_std=float(dur.std()) if n > 1 else 0.0,
        durNoCalls=float(gaps.sum()),
        durNoCalls_std=float(gaps.std()) if len(gaps) > 1 else 0.0,
    )


@dataclass(frozen=True)
class HomeLocation:
    lat: float
    lon: float
    dlat: float
    dlon: float
    cell: tuple

    def cells_of(self, lat, lon):
        return _cells(lat, lon, self.dlat, self.dlon)


def _cells(lat, lon, dlat, dlon):
    return (
        np.floor(np.asarray(lat, dtype=float) / dlat).astype(np.int64),
        np.floor(np.asarray(lon, dtype=float) / dlon).astype(np.int64),
    )


def find_home(lat, lon, cell_m=100.0):
    """Centre of the most frequently visited grid cell of about ``cell_m`` metres.

    Pings must be in time order; ties go to the cell visited first. Returns
    None for an empty history.
    """
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if len(lat) == 0:
        return None
    dlat = cell_m / 1000.0 / KM_PER_DEG
    # one longitude step per participant, scaled at the history's mean latitude
    coslat = max(np.cos(np.radians(np.mean(lat))), 1e-6)
    dlon = dlat / coslat
    ci, cj = _cells(lat, lon, dlat, dlon)
    keys = np.stack([ci, cj], axis=1)
    uniq, first, inverse, freq = np.unique(
        keys, axis=0, return_index=True, return_inverse=True, return_counts=True
    )
    best = np.lexsort((first, -freq))[0]
    i, j = (int(v) for v in uniq[best])
    return HomeLocation((i + 0.5) * dlat, (j + 0.5) * dlon, dlat, dlon, (i, j))


@dataclass(frozen=True)
class GeoFeatures:
    atHome: int
    distToHome: float
    zone1: int
    zone2: int

    def as_dict(self):
        return asdict(self)


def geo_features(lat, lon, home):
    """Location features for a window's pings; None when there are none or no home."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if home is None or len(lat) == 0:
        return None
    ci, cj = home.cells_of(lat, lon)
    at_home = int(np.count_nonzero((ci == home.cell[0]) & (cj == home.cell[1])))
    d = haversine(lat, lon, home.lat, home.lon)
    near = int(np.count_nonzero(d <= ZONE1_KM))
    return GeoFeatures(at_home, float(d.sum()), near, len(d) - near)
