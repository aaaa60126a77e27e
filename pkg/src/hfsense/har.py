"""Sedentary-versus-ambulatory recognition trained on the UCI HAR raw signals.

The forest is grown with scikit-learn and then exported to plain arrays
(:class:`ForestModel`), which is what gets serialised, loaded and used for
inference on phone data.
"""

import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import norm, rankdata
from sklearn.ensemble import RandomForestClassifier
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import StratifiedKFold, cross_val_score
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.tree import DecisionTreeClassifier

from . import EPOCH_MS
from .actigraphy import segments, window_epochs

log = logging.getLogger(__name__)

HAR_ACTIVITIES = {
    1: "WALKING",
    2: "WALKING_UPSTAIRS",
    3: "WALKING_DOWNSTAIRS",
    4: "SITTING",
    5: "STANDING",
    6: "LAYING",
}
AMBULATORY = {1, 2, 3}
SEDENTARY = {4, 5, 6}

WINDOW_S = 2.56
MIN_WINDOW_SAMPLES = 6
FEATURE_NAMES = ("mean_x", "mean_y", "mean_z", "std_x", "std_y", "std_z")
DOMAIN_SHIFT_NOTE = (
    "model trained on 50 Hz HAR windows (128 samples); applied to phone samples "
    "inside each 2.56 s span without resampling"
)


def merge_har_labels(raw):
    """Map HAR activity labels (1..6 or names) to 1 = ambulatory, 0 = sedentary."""
    names = {v: k for k, v in HAR_ACTIVITIES.items()}
    arr = np.atleast_1d(np.asarray(raw, dtype=object))
    out = np.empty(len(arr), dtype=np.int64)
    for i, r in enumerate(arr):
        code = names.get(str(r).upper(), None) if isinstance(r, str) else r
        try:
            code = int(code)
        except (TypeError, ValueError):
            code = None
        if code in AMBULATORY:
            out[i] = 1
        elif code in SEDENTARY:
            out[i] = 0
        else:
            raise ValueError(f"unknown HAR activity label {r!r}")
    return int(out[0]) if np.ndim(raw) == 0 else out


# ---------------------------------------------------------------- dataset


def _find_root(path):
    path = Path(path)
    for cand in (path, path / "UCI HAR Dataset"):
        if (cand / "train").is_dir():
            return cand
    raise FileNotFoundError(f"no UCI HAR layout (train/ directory) under {path}")


def _read_matrix(path):
    return pd.read_csv(path, sep=r"\s+", header=None, dtype=float).to_numpy()


def load_uci_har(path, split="train", channels="body"):
    """Raw accelerometer windows of one split.

    Returns ``(windows, labels, subjects)`` with windows shaped (n, 128, 3)
    in g. ``channels`` selects ``body_acc`` or ``total_acc``.
    """
    root = _find_root(path)
    prefix = {"body": "body_acc", "total": "total_acc"}[channels]
    sig = root / split / "Inertial Signals"
    axes = [_read_matrix(sig / f"{prefix}_{a}_{split}.txt") for a in "xyz"]
    windows = np.stack(axes, axis=2)
    labels = _read_matrix(root / split / f"y_{split}.txt").ravel().astype(int)
    subjects = _read_matrix(root / split / f"subject_{split}.txt").ravel().astype(int)
    if not (len(windows) == len(labels) == len(subjects)):
        raise ValueError("HAR signal, label and subject files disagree in length")
    return windows, labels, subjects


def window_features(windows):
    """Per-axis mean then per-axis population std for (n, samples, 3) windows."""
    windows = np.asarray(windows, dtype=float)
    return np.concatenate([windows.mean(axis=1), windows.std(axis=1)], axis=1)


# ---------------------------------------------------------------- forest


@dataclass
class Tree:
    feature: np.ndarray  # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (nodes, 2) class fractions

    def leaf_values(self, X):
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active[idx] = self.feature[node[idx]] >= 0
        return self.value[node]


@dataclass
class ForestModel:
    trees: list
    seed: int
    feature_names: tuple = FEATURE_NAMES

    @property
    def n_trees(self):
        return len(self.trees)

    def predict_proba(self, X):
        """(n, 2) mean of leaf class fractions over trees."""
        # trees were grown on float32 inputs; round the same way so splits agree
        X = np.asarray(X, dtype=np.float32).astype(float)
        acc = np.zeros((len(X), 2))
        for t in self.trees:
            acc += t.leaf_values(X)
        return acc / len(self.trees)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def to_dict(self):
        return {
            "seed": self.seed,
            "feature_names": list(self.feature_names),
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "value": t.value.tolist(),
                }
                for t in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, d):
        trees = [
            Tree(
                np.asarray(t["feature"], dtype=np.int64),
                np.asarray(t["threshold"], dtype=float),
                np.asarray(t["left"], dtype=np.int64),
                np.asarray(t["right"], dtype=np.int64),
                np.asarray(t["value"], dtype=float),
            )
            for t in d["trees"]
        ]
        return cls(trees, int(d["seed"]), tuple(d.get("feature_names", FEATURE_NAMES)))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _forest_estimator(trees, seed):
    return RandomForestClassifier(
        n_estimators=trees,
        criterion="gini",
        max_features="sqrt",
        min_samples_leaf=2,
        bootstrap=True,
        random_state=seed,
        n_jobs=1,
    )


def _export_tree(est):
    t = est.tree_
    value = t.value[:, 0, :].astype(float)
    value = value / value.sum(axis=1, keepdims=True)
    full = np.zeros((len(value), 2))
    full[:, est.classes_.astype(int)] = value
    feature = np.where(t.children_left >= 0, t.feature, -1).astype(np.int64)
    return Tree(feature, t.threshold.astype(float), t.children_left.astype(np.int64),
                t.children_right.astype(np.int64), full)


def train_har(X, y, trees=100, seed=0):
    """Random forest on the six mean/std features; deterministic given ``seed``."""
    y = np.asarray(y).astype(int)
    if len(np.unique(y)) < 2:
        raise ValueError("HAR training needs both classes")
    rf = _forest_estimator(trees, seed).fit(np.asarray(X, dtype=float), y)
    return ForestModel([_export_tree(e) for e in rf.estimators_], int(seed))


def candidate_classifiers(seed=0, trees=100):
    return {
        "random_forest": _forest_estimator(trees, seed),
        "logistic_regression": make_pipeline(StandardScaler(), LogisticRegression(max_iter=1000)),
        "decision_tree": DecisionTreeClassifier(min_samples_leaf=2, random_state=seed),
    }


def cross_validate_har(X, y, seed=0, n_splits=5, which=None, trees=100):
    """Mean k-fold accuracy per candidate classifier."""
    cv = StratifiedKFold(n_splits=n_splits, shuffle=True, random_state=seed)
    out = {}
    for name, est in candidate_classifiers(seed, trees).items():
        if which is not None and name not in which:
            continue
        out[name] = float(np.mean(cross_val_score(est, X, y, cv=cv, scoring="accuracy")))
    return out


# ---------------------------------------------------------------- phone data


def window_length(fs):
    """Samples per 2.56 s window, rounded to an even count so the hop is exactly half."""
    return 2 * int(round(WINDOW_S / 2 * fs))


def stride_windows(n_samples, fs):
    """(start, stop) pairs over one contiguous segment with 50% overlap."""
    w = window_length(fs)
    hop = w // 2
    if n_samples >= w:
        starts = np.arange(0, n_samples - w + 1, hop)
        return [(int(s), int(s) + w) for s in starts]
    if n_samples >= MIN_WINDOW_SAMPLES:
        return [(0, n_samples)]
    return []


def phone_window_features(accel, fs=5.0):
    feats = []
    for a, b in segments(accel.t_ms, fs):
        seg = np.column_stack([accel.x[a:b], accel.y[a:b], accel.z[a:b]])
        for s, e in stride_windows(b - a, fs):
            w = seg[s:e]
            feats.append(np.r_[w.mean(axis=0), w.std(axis=0)])
    return np.asarray(feats).reshape(-1, 6)


def walk_epochs(accel, model, fs=5.0):
    """Number of 2.56 s windows the model labels ambulatory."""
    X = phone_window_features(accel, fs)
    if len(X) == 0:
        return 0
    return int(np.count_nonzero(model.predict(X) == 1))


def sample_5h_subwindow(present, rng, max_missing=0.5, max_tries=100, span_epochs=600):
    """Random contiguous span of ``span_epochs`` epochs with missingness <= ``max_missing``.

    ``present`` is the window's per-epoch presence mask. Returns
    ``(start, stop)`` epoch indices, or None after ``max_tries`` misses.
    """
    present = np.asarray(present, dtype=bool)
    n_starts = len(present) - span_epochs + 1
    if n_starts <= 0:
        return None
    csum = np.r_[0, np.cumsum(present)]
    for _ in range(max_tries):
        s = int(rng.integers(n_starts))
        missing = 1.0 - (csum[s + span_epochs] - csum[s]) / span_epochs
        if missing <= max_missing:
            return s, s + span_epochs
    return None


def mann_whitney(a, b, continuity=True):
    """Two-sided Mann-Whitney U (normal approximation, tie-corrected).

    Returns ``(U, p)`` with U for the first group. Groups smaller than 3
    give p = NaN; a zero tie-corrected variance gives p = 1.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        raise ValueError("both groups must be non-empty")
    ranks = rankdata(np.r_[a, b])
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    if n1 < 3 or n2 < 3:
        warnings.warn("Mann-Whitney with a group smaller than 3: p not reported", RuntimeWarning, stacklevel=2)
        return u, float("nan")
    n = n1 + n2
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts)) / (n * (n - 1))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return u, 1.0
    dev = abs(u - n1 * n2 / 2.0)
    if continuity:
        dev = max(dev - 0.5, 0.0)
    p = 2.0 * norm.sf(dev / np.sqrt(var))
    return u, float(min(p, 1.0))


def walk_table(windows, contexts, model, fs=5.0, seed=0):
    """Walk-epoch counts per event window, over the full window and a random 5 h span.

    ``contexts`` maps participant id to a ParticipantContext (for the epoch
    presence grid). The span draw for window i uses seed sequence (seed, i);
    windows with no qualifying span get NaN.
    """
    rows = []
    for i, w in enumerate(windows):
        acc = w.dataset.accel.slice_time(w.t_a, w.t_b)
        full = walk_epochs(acc, model, fs) if len(acc) else 0
        present = window_epochs(contexts[w.event.participant_id].epochs, w.t_a, w.t_b).present
        span = sample_5h_subwindow(present, np.random.default_rng(np.random.SeedSequence([int(seed), i])))
        if span is None:
            sub = float("nan")
        else:
            a = w.t_a + span[0] * EPOCH_MS
            sub = float(walk_epochs(acc.slice_time(a, w.t_a + span[1] * EPOCH_MS), model, fs))
        rows.append({
            "event_id": w.event.event_id,
            "label": w.event.label,
            "has_accel": bool(present.any()),
            "walk_count": full,
            "subsample_walk_count": sub,
        })
    return pd.DataFrame(rows, columns=["event_id", "label", "has_accel", "walk_count", "subsample_walk_count"])


def walk_comparison(table):
    """Mann-Whitney of walk counts, decompensated against compensated events."""
    out = {}
    for col in ("walk_count", "subsample_walk_count"):
        t = table[table["has_accel"] & table[col].notna()]
        pos = t.loc[t["label"] == 1, col].to_numpy(float)
        neg = t.loc[t["label"] == 0, col].to_numpy(float)
        res = {"n_decompensated": len(pos), "n_compensated": len(neg), "U": None, "p": None}
        if len(pos) and len(neg):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                u, p = mann_whitney(pos, neg)
            res.update(U=u, p=None if np.isnan(p) else p)
        out[col] = res
    out["domain_shift_note"] = DOMAIN_SHIFT_NOTE
    return out
