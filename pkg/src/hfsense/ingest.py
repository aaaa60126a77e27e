"""Parsing, validation and de-identification of the five input streams.

Streams are held column-wise in small frozen dataclasses of numpy arrays;
a 14-day accelerometer window at 5 Hz is millions of samples, so per-sample
objects are not an option.
"""

import csv
import hashlib
import hmac
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .artifacts import count_comment_lines, write_csv
from .geo import destination, rotate_points, rotation_between

log = logging.getLogger(__name__)

STREAMS = ("accel", "calls", "locations", "kccq", "events")

STREAM_COLUMNS = {
    "accel": ("participant_id", "t_ms", "x_g", "y_g", "z_g"),
    "calls": ("participant_id", "t_ms", "duration_s", "contact_id"),
    "locations": ("participant_id", "t_ms", "lat_deg", "lon_deg"),
    "kccq": ("participant_id", "t_ms", "phys", "symp", "qol", "soc"),
    "events": ("participant_id", "t_ms", "label"),
}

# column -> validation kind
_KINDS = {
    "participant_id": "id",
    "t_ms": "time",
    "x_g": "float",
    "y_g": "float",
    "z_g": "float",
    "duration_s": "nonneg",
    "contact_id": "id",
    "lat_deg": "lat",
    "lon_deg": "lon",
    "phys": "score",
    "symp": "score",
    "qol": "score",
    "soc": "score",
    "label": "label",
}

_TEXT_KINDS = {"id", "label"}

LABELS = {"compensated": 0, "decompensated": 1}
KCCQ_DOMAINS = ("phys", "symp", "qol", "soc")


class IngestError(Exception):
    """Fatal input problem: missing file or malformed header."""


@dataclass(frozen=True)
class AccelStream:
    t_ms: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __len__(self):
        return len(self.t_ms)

    def slice_time(self, t_a, t_b):
        i, j = np.searchsorted(self.t_ms, [t_a, t_b], side="left")
        return AccelStream(self.t_ms[i:j], self.x[i:j], self.y[i:j], self.z[i:j])


@dataclass(frozen=True)
class CallStream:
    t_ms: np.ndarray
    duration_s: np.ndarray
    contact_id: np.ndarray  # object array of opaque ids

    def __len__(self):
        return len(self.t_ms)

    def slice_time(self, t_a, t_b):
        i, j = np.searchsorted(self.t_ms, [t_a, t_b], side="left")
        return CallStream(self.t_ms[i:j], self.duration_s[i:j], self.contact_id[i:j])


@dataclass(frozen=True)
class LocationStream:
    t_ms: np.ndarray
    lat: np.ndarray
    lon: np.ndarray

    def __len__(self):
        return len(self.t_ms)

    def slice_time(self, t_a, t_b):
        i, j = np.searchsorted(self.t_ms, [t_a, t_b], side="left")
        return LocationStream(self.t_ms[i:j], self.lat[i:j], self.lon[i:j])


@dataclass(frozen=True)
class KccqStream:
    t_ms: np.ndarray
    phys: np.ndarray
    symp: np.ndarray
    qol: np.ndarray
    soc: np.ndarray

    def __len__(self):
        return len(self.t_ms)

    @property
    def summary(self):
        return (self.phys + self.symp + self.qol + self.soc) / 4.0

    def slice_time(self, t_a, t_b):
        i, j = np.searchsorted(self.t_ms, [t_a, t_b], side="left")
        return KccqStream(*(getattr(self, f)[i:j] for f in ("t_ms",) + KCCQ_DOMAINS))


@dataclass(frozen=True)
class ClinicalEvent:
    participant_id: str
    t_ms: int
    label: int  # 0 compensated, 1 decompensated
    event_id: str = ""


def _empty(stream):
    t = np.zeros(0, dtype=np.int64)
    f = np.zeros(0)
    if stream == "accel":
        return AccelStream(t, f, f, f)
    if stream == "calls":
        return CallStream(t, f, np.zeros(0, dtype=object))
    if stream == "locations":
        return LocationStream(t, f, f)
    if stream == "kccq":
        return KccqStream(t, f, f, f, f)
    raise KeyError(stream)


@dataclass
class ParticipantDataset:
    participant_id: str
    accel: AccelStream = field(default_factory=lambda: _empty("accel"))
    calls: CallStream = field(default_factory=lambda: _empty("calls"))
    locations: LocationStream = field(default_factory=lambda: _empty("locations"))
    surveys: KccqStream = field(default_factory=lambda: _empty("kccq"))
    events: list = field(default_factory=list)

    def first_time(self):
        """Earliest timestamp over all streams, or None."""
        firsts = [s.t_ms[0] for s in (self.accel, self.calls, self.locations, self.surveys) if len(s)]
        firsts += [e.t_ms for e in self.events]
        return int(min(firsts)) if firsts else None


@dataclass
class RejectsReport:
    rows: list = field(default_factory=list)  # (stream, line_number, reason)
    totals: dict = field(default_factory=dict)  # stream -> total data rows

    def add(self, stream, line_numbers, reason):
        self.rows.extend((stream, int(n), reason) for n in line_numbers)

    def count(self, stream=None):
        return sum(1 for r in self.rows if stream is None or r[0] == stream)

    def to_frame(self):
        df = pd.DataFrame(self.rows, columns=["stream", "line_number", "reason"])
        return df.sort_values(["stream", "line_number"], kind="stable").reset_index(drop=True)


def _read_header(path):
    with open(path, newline="", encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                return next(csv.reader([line]))
    return None


def _read_raw(path, stream, colmap):
    """Read one stream file. Returns (DataFrame, line_numbers, bad_row_mask).

    The fast path lets the C parser type numeric columns directly; any
    parse failure falls back to reading every field as text.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"missing input file: {path}")
    header = _read_header(path)
    expected = STREAM_COLUMNS[stream]
    actual = [colmap.get(c, c) for c in expected]
    if header is None:
        raise IngestError(f"{path.name}: empty file, no header")
    header = [h.strip() for h in header]
    missing = [a for a in actual if a not in header]
    if missing:
        raise IngestError(f"{path.name}: malformed header, missing columns {missing}")
    skip = count_comment_lines(path)
    dtypes = {a: ("category" if _KINDS[c] in _TEXT_KINDS else "float64") for c, a in zip(expected, actual)}
    common = dict(skiprows=skip, skip_blank_lines=False, skipinitialspace=True, usecols=actual)
    try:
        df = pd.read_csv(path, dtype=dtypes, **common)
    except (ValueError, pd.errors.ParserError):
        try:
            df = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False, **common)
        except pd.errors.ParserError:
            df, lines, bad = _read_raw_slow(path, skip, header)
            df = df[actual]
            df.columns = list(expected)
            return df, lines, bad
    df = df[actual]
    df.columns = list(expected)
    lines = np.arange(len(df), dtype=np.int64) + skip + 2
    bad = np.zeros(len(df), dtype=bool)
    suspect = np.flatnonzero(df.isna().any(axis=1).to_numpy())
    if len(suspect):
        # short rows and literal "nan" both surface as NaN; look at the raw text of those rows
        df, bad = _reparse_rows(path, df, lines, suspect, header, actual)
    return df, lines, bad


def _reparse_rows(path, df, lines, rows, header, actual):
    wanted = dict(zip(lines[rows].tolist(), rows.tolist()))
    df = df.astype(object)
    bad = np.zeros(len(df), dtype=bool)
    pos = [header.index(a) for a in actual]
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            i = wanted.get(lineno)
            if i is None:
                continue
            fields = next(csv.reader([raw]), [])
            if len(fields) != len(header):
                bad[i] = True
                df.iloc[i] = [""] * len(actual)
            else:
                df.iloc[i] = [fields[p].strip() for p in pos]
    return df, bad


def _read_raw_slow(path, skip, header):
    records, lines, bad = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno <= skip + 1:
                continue
            lines.append(lineno)
            if len(row) != len(header):
                bad.append(True)
                row = [""] * len(header)
            else:
                bad.append(False)
            records.append([r.strip() for r in row])
    df = pd.DataFrame(records, columns=header, dtype=str)
    return df, np.asarray(lines, dtype=np.int64), np.asarray(bad, dtype=bool)


def _text_column(series):
    """(codes, labels) for a text column; code -1 marks an empty field."""
    if isinstance(series.dtype, pd.CategoricalDtype):
        cats = [str(c).strip() for c in series.cat.categories]
        codes = series.cat.codes.to_numpy().astype(np.int64)
    else:
        codes, uniq = pd.factorize(series.fillna("").astype(str).str.strip())
        cats = list(uniq)
    labels = np.array(cats + [""], dtype=object)
    codes = np.where(codes < 0, len(cats), codes)
    return codes, labels


def _validate(stream, df, lines, bad, report):
    """Type-convert columns and drop invalid rows, recording each rejection once."""
    n = len(df)
    keep = ~bad
    report.add(stream, lines[bad], "wrong field count")
    out = {}
    for col in STREAM_COLUMNS[stream]:
        kind = _KINDS[col]
        series = df[col]
        if kind in _TEXT_KINDS:
            codes, labels = _text_column(series)
            _reject(report, stream, lines, keep, labels[codes] == "", f"missing {col}")
            if kind == "label":
                mapped = np.array([LABELS.get(s.lower(), -1) for s in labels], dtype=np.int64)
                vals = mapped[codes]
                _reject(report, stream, lines, keep, vals < 0, "unknown label")
                out[col] = vals
            else:
                out[col] = pd.Categorical(labels[codes])
            continue
        missing_reason = f"missing domain {col}" if kind == "score" else f"missing {col}"
        if series.dtype == np.float64:
            num = series.to_numpy()
            _reject(report, stream, lines, keep, np.isnan(num), missing_reason)
        else:
            text = series.fillna("").astype(str)
            _reject(report, stream, lines, keep, (text.str.len() == 0).to_numpy(), missing_reason)
            num = pd.to_numeric(text, errors="coerce").to_numpy(dtype=float)
        _reject(report, stream, lines, keep, ~np.isfinite(num), f"unparseable {col}")
        with np.errstate(invalid="ignore"):
            if kind == "time":
                _reject(report, stream, lines, keep, num != np.round(num), f"non-integer {col}")
            elif kind == "nonneg":
                _reject(report, stream, lines, keep, num < 0, f"negative {col}")
            elif kind == "lat":
                _reject(report, stream, lines, keep, np.abs(num) > 90, "lat out of range")
            elif kind == "lon":
                _reject(report, stream, lines, keep, np.abs(num) > 180, "lon out of range")
            elif kind == "score":
                _reject(report, stream, lines, keep, (num < 0) | (num > 100), f"{col} out of range")
        out[col] = num
    report.totals[stream] = n
    frame = pd.DataFrame({c: v[keep] for c, v in out.items()})
    frame["t_ms"] = frame["t_ms"].astype(np.int64)
    return frame


def _reject(report, stream, lines, keep, mask, reason):
    hit = keep & mask
    if hit.any():
        report.add(stream, lines[hit], reason)
        keep &= ~mask


def _split_by_participant(frame):
    if len(frame) == 0:
        return {}
    codes, uniq = pd.factorize(frame["participant_id"], sort=True)
    t = frame["t_ms"].to_numpy()
    order = np.lexsort((t, codes))  # stable: ties keep file order
    frame = frame.iloc[order].reset_index(drop=True)
    codes = codes[order]
    starts = np.flatnonzero(np.r_[True, codes[1:] != codes[:-1]])
    ends = np.r_[starts[1:], len(codes)]
    return {str(uniq[codes[s]]): frame.iloc[s:e] for s, e in zip(starts, ends)}


def _to_stream(stream, g):
    t = g["t_ms"].to_numpy(dtype=np.int64)
    if stream == "accel":
        return AccelStream(t, *(g[c].to_numpy(dtype=float) for c in ("x_g", "y_g", "z_g")))
    if stream == "calls":
        return CallStream(t, g["duration_s"].to_numpy(dtype=float), g["contact_id"].to_numpy(dtype=object))
    if stream == "locations":
        return LocationStream(t, g["lat_deg"].to_numpy(dtype=float), g["lon_deg"].to_numpy(dtype=float))
    if stream == "kccq":
        return KccqStream(t, *(g[c].to_numpy(dtype=float) for c in KCCQ_DOMAINS))
    raise KeyError(stream)


_ATTR = {"accel": "accel", "calls": "calls", "locations": "locations", "kccq": "surveys"}


def parse_streams(input_dir, schema=None):
    """Parse the five stream files in ``input_dir``.

    ``schema`` optionally maps stream name to a {canonical column: file column}
    dict. Returns ``(datasets, rejects)`` where ``datasets`` is a dict keyed by
    participant id, in sorted id order.
    """
    input_dir = Path(input_dir)
    schema = schema or {}
    report = RejectsReport()
    frames = {}
    for stream in STREAMS:
        df, lines, bad = _read_raw(input_dir / f"{stream}.csv", stream, schema.get(stream, {}))
        frames[stream] = _validate(stream, df, lines, bad, report)
    for stream, n in report.totals.items():
        if report.count(stream):
            log.warning("%s: rejected %d of %d rows", stream, report.count(stream), n)
    return assemble(frames), report


def assemble(frames):
    """Build ParticipantDatasets from validated per-stream frames."""
    by_stream = {s: _split_by_participant(f) for s, f in frames.items()}
    pids = sorted(set().union(*(g.keys() for g in by_stream.values())))
    datasets = {}
    for pid in pids:
        ds = ParticipantDataset(pid)
        for stream, attr in _ATTR.items():
            g = by_stream[stream].get(pid)
            if g is not None:
                setattr(ds, attr, _to_stream(stream, g))
        g = by_stream["events"].get(pid)
        if g is not None:
            ds.events = _make_events(pid, g["t_ms"].to_numpy(), g["label"].to_numpy())
        datasets[pid] = ds
    return datasets


def _make_events(pid, t, labels):
    return [
        ClinicalEvent(pid, int(ti), int(li), f"{pid}-{k:03d}")
        for k, (ti, li) in enumerate(zip(t, labels))
    ]


def keyed_hash(value, salt):
    """Keyed 64-bit hash, rendered as 16 hex characters."""
    if not salt:
        raise ValueError("de-identification salt must be non-empty")
    if isinstance(salt, str):
        salt = salt.encode()
    return hmac.new(salt, str(value).encode(), hashlib.sha256).digest()[:8].hex()


def _participant_rng(pid, geo_seed):
    key = int.from_bytes(hashlib.sha256(str(pid).encode()).digest()[:8], "little")
    return np.random.default_rng([int(geo_seed), key])


def geo_offset(pid, geo_seed, offset_km=(5.0, 50.0)):
    """Deterministic (bearing_deg, distance_km) of a participant's location offset."""
    rng = _participant_rng(pid, geo_seed)
    bearing = rng.uniform(0.0, 360.0)
    dist = rng.uniform(*offset_km)
    return bearing, dist


def deidentify(dataset, salt, geo_seed, offset_km=(5.0, 50.0)):
    """Hash identifiers and displace the participant's locations.

    All pings are moved by one rigid rotation of the sphere that carries the
    first ping ``offset_km`` away, so within-participant great-circle
    distances are preserved.
    """
    if not salt:
        raise ValueError("de-identification salt must be non-empty")
    new_pid = keyed_hash(dataset.participant_id, salt)
    cache = {}
    ids = np.empty(len(dataset.calls), dtype=object)
    for k, cid in enumerate(dataset.calls.contact_id):
        if cid not in cache:
            cache[cid] = keyed_hash(cid, salt)
        ids[k] = cache[cid]
    calls = replace(dataset.calls, contact_id=ids)

    locs = dataset.locations
    if len(locs):
        bearing, dist = geo_offset(dataset.participant_id, geo_seed, offset_km)
        lat0, lon0 = locs.lat[0], locs.lon[0]
        lat1, lon1 = destination(lat0, lon0, bearing, dist)
        rot = rotation_between(lat0, lon0, lat1, lon1)
        lat, lon = rotate_points(locs.lat, locs.lon, rot)
        locs = LocationStream(locs.t_ms.copy(), lat, lon)

    events = [
        ClinicalEvent(new_pid, e.t_ms, e.label, f"{new_pid}-{k:03d}")
        for k, e in enumerate(dataset.events)
    ]
    return ParticipantDataset(new_pid, dataset.accel, calls, locs, dataset.surveys, events)


def deidentify_all(datasets, salt, geo_seed, offset_km=(5.0, 50.0)):
    out = [deidentify(ds, salt, geo_seed, offset_km) for ds in datasets.values()]
    return {ds.participant_id: ds for ds in sorted(out, key=lambda d: d.participant_id)}


def streams_to_frames(datasets):
    """Inverse of :func:`assemble`: one flat frame per stream."""
    parts = {s: [] for s in STREAMS}
    for pid, ds in datasets.items():
        a = ds.accel
        if len(a):
            parts["accel"].append(pd.DataFrame(
                {"participant_id": pid, "t_ms": a.t_ms, "x_g": a.x, "y_g": a.y, "z_g": a.z}))
        c = ds.calls
        if len(c):
            parts["calls"].append(pd.DataFrame(
                {"participant_id": pid, "t_ms": c.t_ms, "duration_s": c.duration_s, "contact_id": c.contact_id}))
        loc = ds.locations
        if len(loc):
            parts["locations"].append(pd.DataFrame(
                {"participant_id": pid, "t_ms": loc.t_ms, "lat_deg": loc.lat, "lon_deg": loc.lon}))
        k = ds.surveys
        if len(k):
            parts["kccq"].append(pd.DataFrame(
                {"participant_id": pid, "t_ms": k.t_ms, **{d: getattr(k, d) for d in KCCQ_DOMAINS}}))
        if ds.events:
            parts["events"].append(pd.DataFrame({
                "participant_id": pid,
                "t_ms": [e.t_ms for e in ds.events],
                "label": ["decompensated" if e.label else "compensated" for e in ds.events],
            }))
    return {
        s: pd.concat(p, ignore_index=True) if p else pd.DataFrame(columns=list(STREAM_COLUMNS[s]))
        for s, p in parts.items()
    }


def write_streams(datasets, out_dir, config=None, seed=None, float_format=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for stream, frame in streams_to_frames(datasets).items():
        fmt = float_format if stream == "accel" else None
        paths[stream] = write_csv(out_dir / f"{stream}.csv", frame[list(STREAM_COLUMNS[stream])],
                                  config, seed, float_format=fmt)
    return paths


def write_rejects(report, path, config=None, seed=None):
    return write_csv(path, report.to_frame(), config, seed)
