"""Plot-data emitters: actigraphy double plot and location density grids."""

import numpy as np
import pandas as pd

from . import DAY_MS
from .actigraphy import EPOCHS_PER_DAY, ActivityEpochs
from .artifacts import meta_lines

MISSING_SENTINEL = -1.0


def doubleplot_matrix(epochs, sentinel=MISSING_SENTINEL):
    """(2 * 2880, days - 1) matrix; column d stacks day d over day d + 1.

    ``epochs`` is a participant epoch store. Days are contiguous from the
    first to the last stored day; absent epochs hold ``sentinel``.
    Returns ``(matrix, first_day_ms)``.
    """
    if len(epochs) == 0:
        raise ValueError("double plot needs at least two days of epochs")
    day = epochs.t_start // DAY_MS
    first, last = int(day.min()), int(day.max())
    n_days = last - first + 1
    if n_days < 2:
        raise ValueError("double plot needs at least two days of epochs")
    grid = np.full(n_days * EPOCHS_PER_DAY, sentinel)
    idx = (epochs.t_start - first * DAY_MS) // (DAY_MS // EPOCHS_PER_DAY)
    grid[idx[epochs.present]] = epochs.count[epochs.present]
    days = grid.reshape(n_days, EPOCHS_PER_DAY)
    matrix = np.concatenate([days[:-1], days[1:]], axis=1).T
    return matrix, first * DAY_MS


def location_density(lat, lon, grid=200, pad=0.10):
    """Gaussian KDE over (lon, lat) on a regular grid, Scott's-rule bandwidth.

    Degenerate covariance (one ping, duplicates, collinear pings) is
    regularised by one grid cell per axis. The returned density integrates
    to 1 over the grid. Returns ``(lon_axis, lat_axis, density)`` with
    density indexed [lat, lon].
    """
    pts = np.stack([np.asarray(lon, dtype=float), np.asarray(lat, dtype=float)])
    n = pts.shape[1]
    if n == 0:
        raise ValueError("location density needs at least one ping")
    lo, hi = pts.min(axis=1), pts.max(axis=1)
    span = np.where(hi - lo > 0, hi - lo, 0.01)
    axes = [np.linspace(lo[i] - pad * span[i], hi[i] + pad * span[i], grid) for i in range(2)]
    step = np.array([a[1] - a[0] for a in axes])
    cov = np.cov(pts) * n ** (-2.0 / 6.0) if n > 1 else np.zeros((2, 2))
    eig = np.linalg.eigvalsh(cov)
    if eig.min() <= 1e-12 * max(eig.max(), 1e-300):
        cov = cov + np.diag(step**2)
    inv = np.linalg.inv(cov)
    norm = 1.0 / (2 * np.pi * np.sqrt(np.linalg.det(cov)))
    gx, gy = np.meshgrid(axes[0], axes[1])
    q = np.stack([gx.ravel(), gy.ravel()], axis=1)
    dens = np.zeros(len(q))
    for lo_i in range(0, n, 256):
        p = pts[:, lo_i : lo_i + 256].T
        d = q[:, None, :] - p[None, :, :]
        m = np.einsum("qpi,ij,qpj->qp", d, inv, d)
        dens += np.exp(-0.5 * m).sum(axis=1)
    dens = dens * norm / n
    dens /= dens.sum() * step[0] * step[1]
    return axes[0], axes[1], dens.reshape(grid, grid)


def write_matrix(path, matrix, config=None, seed=None, extra=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(meta_lines(config, seed, extra))
        np.savetxt(fh, matrix, fmt="%.17g", delimiter=",")
    return path


def epochs_frame(stores):
    """Long epochs.csv table from {participant_id: ActivityEpochs}."""
    parts = [
        pd.DataFrame({"participant_id": pid, "t_start_ms": s.t_start, "count": s.count,
                      "present": s.present.astype(np.int8)})
        for pid, s in sorted(stores.items())
        if len(s)
    ]
    if not parts:
        return pd.DataFrame(columns=["participant_id", "t_start_ms", "count", "present"])
    return pd.concat(parts, ignore_index=True)


def read_epochs(path):
    """Inverse of :func:`epochs_frame` after a CSV round trip."""
    df = pd.read_csv(path, comment="#", dtype={"participant_id": str, "t_start_ms": np.int64, "present": np.int8},
                     float_precision="round_trip")
    out = {}
    for pid, g in df.groupby("participant_id", sort=True):
        out[pid] = ActivityEpochs(g["t_start_ms"].to_numpy(np.int64), g["count"].to_numpy(float),
                                  g["present"].to_numpy().astype(bool))
    return out
