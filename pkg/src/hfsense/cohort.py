"""Event-anchored windows and the labelled multi-modality feature table."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import DAY_MS
from .actigraphy import MOTION_FEATURES, motion_features, participant_epochs, window_epochs
from .context import GEO_FEATURES, SOCIAL_FEATURES, find_home, geo_features, social_features
from .ingest import ClinicalEvent, ParticipantDataset  # noqa: F401  (re-exported)
from .kccq import ALL_KCCQ_COLUMNS, KccqVariant, all_variant_features

MODALITIES = ("motion", "social", "location", "kccq")
ID_COLUMNS = ("participant_id", "event_id", "event_t_ms", "label", "overlaps_prior_event", "short_lookback")
FEATURE_COLUMNS = MOTION_FEATURES + SOCIAL_FEATURES + GEO_FEATURES + ALL_KCCQ_COLUMNS


def modality_columns(modality, kccq_variant=KccqVariant.SUM_RECENT):
    if modality == "motion":
        return MOTION_FEATURES
    if modality == "social":
        return SOCIAL_FEATURES
    if modality == "location":
        return GEO_FEATURES
    if modality == "kccq":
        return KccqVariant(kccq_variant).columns
    raise ValueError(f"unknown modality {modality!r}; expected one of {MODALITIES}")


@dataclass(frozen=True)
class WindowSpec:
    n_days: int = 14
    shift_days: int = 0

    def __post_init__(self):
        if self.n_days < 1:
            raise ValueError("n_days must be >= 1")
        if self.shift_days < 0:
            raise ValueError("shift_days must be >= 0")

    def interval(self, t_event_ms):
        """[start, end) in ms. The anchor is the midnight (UTC) starting the event day."""
        anchor = (int(t_event_ms) // DAY_MS) * DAY_MS
        return anchor - (self.n_days + self.shift_days) * DAY_MS, anchor - self.shift_days * DAY_MS


@dataclass(frozen=True)
class EventWindow:
    event: ClinicalEvent
    t_a: int
    t_b: int
    dataset: ParticipantDataset
    overlaps_prior_event: bool = False
    short_lookback: bool = False


def build_windows(datasets, spec=WindowSpec()):
    """One window per clinical event, ordered by (participant, event time)."""
    windows = []
    for pid in sorted(datasets):
        ds = datasets[pid]
        enrolled = ds.first_time()
        events = sorted(ds.events, key=lambda e: e.t_ms)
        for k, ev in enumerate(events):
            t_a, t_b = spec.interval(ev.t_ms)
            overlaps = any(t_a <= prev.t_ms < ev.t_ms for prev in events[:k])
            short = enrolled is not None and t_a < enrolled
            windows.append(EventWindow(ev, t_a, t_b, ds, overlaps, short))
    return windows


@dataclass
class ParticipantContext:
    """Per-participant quantities computed once over the full history."""

    epochs: object
    home: object
    shares_calls: bool


def participant_context(ds, fs=5.0):
    return ParticipantContext(
        epochs=participant_epochs(ds.accel, fs=fs),
        home=find_home(ds.locations.lat, ds.locations.lon),
        shares_calls=len(ds.calls) > 0,
    )


def window_row(w, ctx):
    ev = w.event
    row = {
        "participant_id": ev.participant_id,
        "event_id": ev.event_id,
        "event_t_ms": ev.t_ms,
        "label": ev.label,
        "overlaps_prior_event": w.overlaps_prior_event,
        "short_lookback": w.short_lookback,
    }
    ds = w.dataset
    feats = {}
    m = motion_features(window_epochs(ctx.epochs, w.t_a, w.t_b))
    if m is not None:
        feats.update(m.as_dict())
    s = social_features(ds.calls.slice_time(w.t_a, w.t_b), w.t_a, w.t_b, ctx.shares_calls)
    if s is not None:
        feats.update(s.as_dict())
    locs = ds.locations.slice_time(w.t_a, w.t_b)
    g = geo_features(locs.lat, locs.lon, ctx.home)
    if g is not None:
        feats.update(g.as_dict())
    k = all_variant_features(ds.surveys.slice_time(w.t_a, w.t_b))
    if k is not None:
        feats.update(k)
    row.update({c: feats.get(c, np.nan) for c in FEATURE_COLUMNS})
    return row


def extract_features(windows, fs=5.0, threads=1, contexts=None):
    """Feature table with one row per window; MISSING modalities are NaN.

    ``contexts`` may carry precomputed :class:`ParticipantContext` objects
    keyed by participant id (reused across time-to-event shifts).
    """
    contexts = {} if contexts is None else contexts
    needed = sorted({w.event.participant_id for w in windows} - set(contexts))
    by_pid = {w.event.participant_id: w.dataset for w in windows}
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for pid, ctx in zip(needed, pool.map(lambda p: participant_context(by_pid[p], fs), needed)):
            contexts[pid] = ctx
    rows = [window_row(w, contexts[w.event.participant_id]) for w in windows]
    table = pd.DataFrame(rows, columns=list(ID_COLUMNS + FEATURE_COLUMNS))
    table = table.sort_values(["participant_id", "event_t_ms"], kind="stable").reset_index(drop=True)
    return table.astype({"label": np.int64, "event_t_ms": np.int64})


def complete_rows(table, modalities, kccq_variant=KccqVariant.SUM_RECENT):
    """Boolean mask of rows where every required modality is present."""
    cols = [c for m in modalities for c in modality_columns(m, kccq_variant)]
    return table[cols].notna().all(axis=1).to_numpy()


def read_features(path):
    try:
        table = pd.read_csv(path, comment="#", dtype={"participant_id": str, "event_id": str})
    except pd.errors.EmptyDataError:
        raise ValueError(f"feature table {path} is empty") from None
    if table.empty:
        raise ValueError(f"feature table {path} has no rows")
    missing = [c for c in ID_COLUMNS + FEATURE_COLUMNS if c not in table.columns]
    if missing:
        raise ValueError(f"feature table {path} lacks columns {missing}")
    return table
