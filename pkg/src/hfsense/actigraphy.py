"""Accelerometer z-axis to 30 s activity counts, and the motion feature set."""

import logging
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy import signal

from . import DAY_MS, EPOCH_MS

log = logging.getLogger(__name__)

EPOCHS_PER_DAY = DAY_MS // EPOCH_MS  # 2880
SETTLING_SAMPLES = 50
MIN_SEGMENT = 3 * SETTLING_SAMPLES
MIN_COMPLETENESS = 0.001


class SegmentTooShort(ValueError):
    pass


@lru_cache(maxsize=32)
def butter_sos(fs, low=0.25, high=11.0, order=3):
    """Second-order sections of the band-pass; clamps ``high`` below Nyquist."""
    if fs <= 0:
        raise ValueError("fs must be positive")
    ceiling = 0.45 * fs
    if high > ceiling:
        log.warning("band-pass upper cutoff %.3g Hz clamped to %.3g Hz at fs=%.3g Hz", high, ceiling, fs)
        high = ceiling
    if not 0 < low < high:
        raise ValueError(f"invalid passband [{low}, {high}] Hz at fs={fs} Hz")
    return signal.butter(order, [low, high], btype="bandpass", fs=fs, output="sos")


def bandpass_filter(z, fs, low=0.25, high=11.0, order=3):
    """Zero-phase Butterworth band-pass of one gap-free segment."""
    z = np.asarray(z, dtype=float)
    if len(z) < MIN_SEGMENT:
        raise SegmentTooShort(f"segment of {len(z)} samples < {MIN_SEGMENT}")
    return signal.sosfiltfilt(butter_sos(float(fs), low, high, order), z)


def segments(t_ms, fs):
    """(start, stop) index pairs of runs with no inter-sample gap > 2/fs."""
    if len(t_ms) == 0:
        return []
    breaks = np.flatnonzero(np.diff(t_ms) > 2000.0 / fs) + 1
    starts = np.r_[0, breaks]
    stops = np.r_[breaks, len(t_ms)]
    return list(zip(starts.tolist(), stops.tolist()))


@dataclass(frozen=True)
class ActivityEpochs:
    """A run of 30 s epochs, column-wise."""

    t_start: np.ndarray  # int64 ms
    count: np.ndarray
    present: np.ndarray

    def __len__(self):
        return len(self.t_start)


def _counts_from_times(t_ms, mag, origin_ms):
    """Present-epoch indices and counts from sorted sample times and |signal|."""
    rel = np.asarray(t_ms, dtype=np.int64) - origin_ms
    sec = rel // 1000
    first = np.flatnonzero(np.r_[True, sec[1:] != sec[:-1]])
    sec_max = np.maximum.reduceat(mag, first)
    sec_id = sec[first]
    ep = sec_id // 30
    efirst = np.flatnonzero(np.r_[True, ep[1:] != ep[:-1]])
    # (epoch, second-of-epoch) table summed left to right; empty seconds add 0
    slots = np.zeros((len(efirst), 30))
    slots[np.cumsum(np.r_[False, ep[1:] != ep[:-1]]), sec_id % 30] = sec_max
    counts = np.zeros(len(efirst))
    for k in range(30):
        counts += slots[:, k]
    return ep[efirst], counts


def epochize(filtered, fs, t0_ms=0):
    """Activity counts for a contiguous filtered sequence starting at ``t0_ms``.

    Sample k sits at t0 + k/fs seconds. Each epoch's count is the sum, over
    its thirty 1 s bins, of the largest |sample| in the bin.
    """
    filtered = np.asarray(filtered, dtype=float)
    if len(filtered) == 0:
        return ActivityEpochs(np.zeros(0, np.int64), np.zeros(0), np.zeros(0, bool))
    sec = np.floor(np.arange(len(filtered)) / fs).astype(np.int64)
    t = sec * 1000
    ep, counts = _counts_from_times(t, np.abs(filtered), 0)
    n = int(ep[-1]) + 1
    out = np.zeros(n)
    present = np.zeros(n, dtype=bool)
    out[ep] = counts
    present[ep] = True
    return ActivityEpochs(t0_ms + np.arange(n, dtype=np.int64) * EPOCH_MS, out, present)


def participant_epochs(accel, fs=5.0, low=0.25, high=11.0, order=3):
    """Epoch store over every UTC day that holds usable samples.

    The z-axis is filtered per contiguous run; runs too short to filter are
    dropped and do not make their epochs present.
    """
    t_parts, m_parts = [], []
    for a, b in segments(accel.t_ms, fs):
        try:
            v = bandpass_filter(accel.z[a:b], fs, low, high, order)
        except SegmentTooShort:
            continue
        t_parts.append(accel.t_ms[a:b])
        m_parts.append(np.abs(v))
    if not t_parts:
        return ActivityEpochs(np.zeros(0, np.int64), np.zeros(0), np.zeros(0, bool))
    t = np.concatenate(t_parts)
    mag = np.concatenate(m_parts)
    ep, counts = _counts_from_times(t, mag, 0)
    ep_t = ep * EPOCH_MS
    days = np.unique(ep_t // DAY_MS)
    grid = (days[:, None] * DAY_MS + np.arange(EPOCHS_PER_DAY) * EPOCH_MS).ravel()
    idx = np.searchsorted(days, ep_t // DAY_MS) * EPOCHS_PER_DAY + (ep_t % DAY_MS) // EPOCH_MS
    count = np.zeros(len(grid))
    present = np.zeros(len(grid), dtype=bool)
    count[idx] = counts
    present[idx] = True
    return ActivityEpochs(grid.astype(np.int64), count, present)


def window_epochs(store, t_a, t_b):
    """Dense epochs on the 30 s grid of [t_a, t_b); epochs absent from the store are not present."""
    if t_a % EPOCH_MS or t_b % EPOCH_MS:
        raise ValueError("window bounds must lie on the 30 s grid")
    n = (t_b - t_a) // EPOCH_MS
    grid = t_a + np.arange(n, dtype=np.int64) * EPOCH_MS
    count = np.zeros(n)
    present = np.zeros(n, dtype=bool)
    i, j = np.searchsorted(store.t_start, [t_a, t_b])
    if j > i:
        pos = (store.t_start[i:j] - t_a) // EPOCH_MS
        count[pos] = store.count[i:j]
        present[pos] = store.present[i:j]
    return ActivityEpochs(grid, count, present)


@dataclass(frozen=True)
class MotionFeatures:
    act_mean: float
    act_std: float
    act_mode: float
    act_skew: float
    act_kurt: float
    act_comp: float

    def as_dict(self):
        return asdict(self)


MOTION_FEATURES = ("act_mean", "act_std", "act_mode", "act_skew", "act_kurt", "act_comp")


def count_mode(counts):
    """Most frequent value after rounding half-up to integers; smallest wins ties."""
    rounded = np.floor(np.asarray(counts, dtype=float) + 0.5)
    values, freq = np.unique(rounded, return_counts=True)
    return float(values[np.argmax(freq)])


def motion_features(epochs):
    """Motion features over one window's epochs, or None when the window is missing."""
    total = len(epochs.present)
    if total == 0:
        return None
    comp = float(np.count_nonzero(epochs.present)) / total
    if comp < MIN_COMPLETENESS:
        return None
    x = epochs.count[epochs.present]
    mean = float(np.mean(x))
    d = x - mean
    m2 = float(np.mean(d**2))
    std = np.sqrt(m2)
    if std == 0:
        skew = kurt = 0.0
    else:
        z = d / std  # standardise first: m2**1.5 underflows for tiny spreads
        skew = float(np.mean(z**3))
        kurt = float(np.mean(z**4))
    return MotionFeatures(mean, float(std), count_mode(x), skew, kurt, comp)
