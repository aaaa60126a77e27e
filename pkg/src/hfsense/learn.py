"""Logistic-regression models under leave-one-subject-out evaluation.

Covers single-modality, early-fusion and late-fusion models, majority
undersampling of training folds, greedy forward feature selection and the
pooled out-of-fold metrics.
"""

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.stats import rankdata

from .cohort import WindowSpec, build_windows, complete_rows, extract_features, modality_columns
from .kccq import KccqVariant

log = logging.getLogger(__name__)

METRICS = ("acc", "auc", "aucpr", "ppv", "tpr")


class Fusion(str, Enum):
    NONE = "none"
    EARLY = "early"
    LATE = "late"


# ---------------------------------------------------------------- logistic model


@dataclass
class LogisticModel:
    feature_names: tuple
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray
    n_iter: int = 0
    grad_max: float = 0.0

    def standardize(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def decision_function(self, X):
        return self.standardize(X) @ self.weights + self.bias

    def predict_proba(self, X):
        return sigmoid(self.decision_function(X))

    def to_dict(self):
        return {
            "feature_names": list(self.feature_names),
            "weights": self.weights.tolist(),
            "bias": float(self.bias),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
        }


def sigmoid(s):
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logistic_loss_grad(w, b, Z, y, l2=1.0):
    """Penalised negative log-likelihood and its gradient (w, b).

    loss = sum(log(1 + exp(s)) - y s) + l2/2 |w|^2 with s = Z w + b; the
    bias is not penalised.
    """
    s = Z @ w + b
    loss = float(np.sum(np.logaddexp(0.0, s) - y * s) + 0.5 * l2 * (w @ w))
    r = sigmoid(s) - y
    return loss, Z.T @ r + l2 * w, float(r.sum())


def _newton(Z, y, l2, tol=1e-8, max_iter=100):
    n, d = Z.shape
    A = np.hstack([Z, np.ones((n, 1))])
    theta = np.zeros(d + 1)
    pen = np.r_[np.full(d, l2), 0.0]
    loss, gw, gb = logistic_loss_grad(theta[:d], theta[d], Z, y, l2)
    g = np.r_[gw, gb]
    it = 0
    while np.max(np.abs(g)) >= tol and it < max_iter:
        p = sigmoid(A @ theta)
        H = (A * (p * (1 - p))[:, None]).T @ A + np.diag(pen)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        slope = float(g @ step)
        # below rounding level the loss cannot confirm a decrease; take the pure Newton step
        exact = slope <= 1e-12 * max(1.0, abs(loss))
        for _ in range(60):
            cand = theta - t * step
            new_loss, nw, nb = logistic_loss_grad(cand[:d], cand[d], Z, y, l2)
            if exact or new_loss <= loss - 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        theta, loss, g = cand, new_loss, np.r_[nw, nb]
        it += 1
    return theta[:d], float(theta[d]), it, float(np.max(np.abs(g)))


def fit_logistic(X, y, l2=1.0, feature_names=None, tol=1e-8, max_iter=100):
    """Fit an L2-penalised logistic model on standardised features by damped Newton.

    The scaler is fitted on ``X``; constant columns get unit scale.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{i}" for i in range(X.shape[1]))
    bad = ~np.isfinite(X).all(axis=0)
    if bad.any():
        raise ValueError(f"non-finite values in feature {names[int(np.flatnonzero(bad)[0])]!r}")
    if len(np.unique(y)) < 2:
        raise ValueError("training labels contain a single class")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    w, b, it, gmax = _newton(Z, y, l2, tol, max_iter)
    if gmax >= tol:
        log.debug("logistic fit stopped after %d iterations, |grad| = %.3g", it, gmax)
    return LogisticModel(names, w, b, mean, scale, it, gmax)


# ---------------------------------------------------------------- metrics


def roc_auc(probs, labels):
    """P(score+ > score-) with ties counted one half."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n1 = int(labels.sum())
    n0 = len(labels) - n1
    if n1 == 0 or n0 == 0:
        return float("nan")
    ranks = rankdata(probs)
    return (float(ranks[labels].sum()) - n1 * (n1 + 1) / 2.0) / (n1 * n0)


def average_precision(probs, labels):
    """Area under the precision-recall curve, step-wise over descending thresholds."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels).astype(float)
    if labels.sum() == 0 or labels.sum() == len(labels):
        return float("nan")
    order = np.argsort(-probs, kind="stable")
    s, y = probs[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tps = np.cumsum(y)[last]
    fps = last + 1 - tps
    precision = tps / (tps + fps)
    recall = tps / tps[-1]
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def metrics(probs, labels, threshold=0.5):
    """Pooled acc, auc, aucpr, ppv, tpr.

    A prediction is positive when prob >= threshold. ppv with no predicted
    positive is reported as 0.
    """
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels).astype(int)
    if len(probs) != len(labels) or len(probs) == 0:
        raise ValueError("probs and labels must be non-empty and of equal length")
    pred = probs >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    tn = int(np.sum(~pred & (labels == 0)))
    if len(np.unique(labels)) < 2:
        warnings.warn("single-class labels: auc and aucpr undefined", RuntimeWarning, stacklevel=2)
    return {
        "acc": (tp + tn) / len(labels),
        "auc": roc_auc(probs, labels),
        "aucpr": average_precision(probs, labels),
        "ppv": tp / (tp + fp) if tp + fp else 0.0,
        "tpr": tp / (tp + fn) if tp + fn else float("nan"),
    }


# ---------------------------------------------------------------- resampling and folds


def undersample_majority(labels, rng):
    """Sorted row indices: every minority row plus an equal-size random draw of the majority."""
    labels = np.asarray(labels).astype(int)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("undersampling needs both classes")
    minority, majority = (pos, neg) if len(pos) <= len(neg) else (neg, pos)
    picked = rng.choice(majority, size=len(minority), replace=False)
    return np.sort(np.concatenate([minority, picked]))


def group_kfold(groups, n_splits, rng):
    """Participant-grouped folds: shuffled groups dealt round-robin into folds."""
    groups = np.asarray(groups)
    uniq = np.unique(groups)
    uniq = uniq[rng.permutation(len(uniq))]
    n_splits = min(n_splits, len(uniq))
    fold_of = {g: i % n_splits for i, g in enumerate(uniq)}
    assign = np.array([fold_of[g] for g in groups])
    return [(np.flatnonzero(assign != k), np.flatnonzero(assign == k)) for k in range(n_splits)]


def _seed_rng(*entropy):
    return np.random.default_rng(np.random.SeedSequence([int(e) for e in entropy]))


# ---------------------------------------------------------------- feature selection


def inner_cv_auc(X, y, folds, l2=1.0):
    """Mean held-out AUC over the folds where both train and test hold both classes."""
    scores = []
    for tr, te in folds:
        if len(np.unique(y[tr])) < 2 or len(np.unique(y[te])) < 2:
            continue
        model = fit_logistic(X[tr], y[tr], l2)
        scores.append(roc_auc(model.predict_proba(X[te]), y[te]))
    return float(np.mean(scores)) if scores else 0.5


def sffs_select(X, y, groups, candidates, k=3, seed=0, l2=1.0, n_splits=5):
    """Greedy forward selection of up to ``k`` columns by inner grouped-CV AUC.

    ``X`` is a DataFrame (or mapping) holding the candidate columns. Ties
    resolve to the name that sorts first.
    """
    candidates = list(candidates)
    if len(candidates) <= k:
        return candidates
    y = np.asarray(y).astype(int)
    folds = group_kfold(groups, n_splits, _seed_rng(seed))
    cols = {c: np.asarray(X[c], dtype=float) for c in candidates}
    selected = []
    while len(selected) < k:
        best, best_score = None, -np.inf
        for name in sorted(set(candidates) - set(selected)):
            M = np.column_stack([cols[c] for c in selected + [name]])
            score = inner_cv_auc(M, y, folds, l2)
            if score > best_score:
                best, best_score = name, score
        selected.append(best)
    return selected


# ---------------------------------------------------------------- LOSO


@dataclass
class FoldResult:
    held_out: str
    event_ids: list
    probs: np.ndarray
    labels: np.ndarray
    selected: dict
    n_train: int
    model: object = None  # LogisticModel (none/early) or LateFusionModel
    train_X: np.ndarray = None  # undersampled training matrix of the final model inputs

    def to_dict(self):
        model = self.model.to_dict() if self.model is not None else None
        return {
            "held_out_participant": self.held_out,
            "event_ids": list(self.event_ids),
            "probs": [float(p) for p in self.probs],
            "labels": [int(v) for v in self.labels],
            "selected_features": self.selected,
            "n_train": int(self.n_train),
            "model": model,
        }


@dataclass
class LateFusionModel:
    modalities: tuple
    base: dict
    meta: LogisticModel

    def predict_proba(self, X_by_modality):
        P = np.column_stack([self.base[m].predict_proba(X_by_modality[m]) for m in self.modalities])
        return self.meta.predict_proba(P)

    def to_dict(self):
        return {
            "base": {m: self.base[m].to_dict() for m in self.modalities},
            "meta": self.meta.to_dict(),
        }


@dataclass
class EvaluationReport:
    acc: float
    auc: float
    aucpr: float
    ppv: float
    tpr: float
    folds: list
    skipped_folds: list
    config: dict
    repeats: list = field(default_factory=list)
    n_events: int = 0
    n_participants: int = 0

    @property
    def metrics(self):
        return {m: getattr(self, m) for m in METRICS}

    def pooled(self):
        probs = np.concatenate([f.probs for f in self.folds]) if self.folds else np.zeros(0)
        labels = np.concatenate([f.labels for f in self.folds]) if self.folds else np.zeros(0)
        return probs, labels

    def to_dict(self):
        return {
            "config": self.config,
            "pooling": "events",
            "metrics": self.metrics,
            "repeats": self.repeats,
            "n_events": self.n_events,
            "n_participants": self.n_participants,
            "skipped_folds": self.skipped_folds,
            "folds": [f.to_dict() for f in self.folds],
        }


def _fit_late(train, y, groups, selected, modalities, rng, l2, n_splits=5):
    """Base model per modality plus a meta model on nested out-of-fold probabilities."""
    n = len(y)
    oof = np.full((n, len(modalities)), 0.5)
    for tr, te in group_kfold(groups, n_splits, rng):
        if len(np.unique(y[tr])) < 2:
            oof[te] = y[tr].mean() if len(tr) else 0.5
            continue
        for j, m in enumerate(modalities):
            cols = selected[m]
            base = fit_logistic(train[cols].to_numpy()[tr], y[tr], l2, cols)
            oof[te, j] = base.predict_proba(train[cols].to_numpy()[te])
    meta = fit_logistic(oof, y, l2, [f"p_{m}" for m in modalities])
    base = {m: fit_logistic(train[selected[m]].to_numpy(), y, l2, selected[m]) for m in modalities}
    return LateFusionModel(tuple(modalities), base, meta), oof


def _run_fold(data, pid, fold_seed, modalities, fusion, variant, l2, k):
    test_mask = (data["participant_id"] == pid).to_numpy()
    train_all = data[~test_mask]
    test = data[test_mask]
    y_all = train_all["label"].to_numpy().astype(int)
    if len(np.unique(y_all)) < 2:
        return None
    rng = _seed_rng(*fold_seed)
    idx = undersample_majority(y_all, rng)
    train = train_all.iloc[idx]
    y = y_all[idx]
    groups = train["participant_id"].to_numpy()
    inner_seed = int(rng.integers(2**62))
    selected = {}
    for m in modalities:
        cands = list(modality_columns(m, variant))
        selected[m] = sffs_select(train, y, groups, cands, k, inner_seed, l2)
    if fusion == Fusion.LATE:
        model, _ = _fit_late(train, y, groups, selected, modalities, rng, l2)
        probs = model.predict_proba({m: test[selected[m]].to_numpy() for m in modalities})
        train_X = None
    else:
        cols = [c for m in modalities for c in selected[m]]
        train_X = train[cols].to_numpy(dtype=float)
        model = fit_logistic(train_X, y, l2, cols)
        probs = model.predict_proba(test[cols].to_numpy(dtype=float))
    return FoldResult(
        held_out=pid,
        event_ids=test["event_id"].tolist(),
        probs=np.asarray(probs, dtype=float),
        labels=test["label"].to_numpy().astype(int),
        selected=selected,
        n_train=len(y),
        model=model,
        train_X=train_X,
    )


def loso_evaluate(
    table,
    modalities,
    fusion=Fusion.NONE,
    kccq_variant=KccqVariant.SUM_RECENT,
    seed=0,
    l2=1.0,
    k=3,
    resample_repeats=1,
    threads=1,
    window=None,
):
    """Leave-one-subject-out evaluation pooled over every held-out event.

    Rows enter only when all requested modalities are present. Fold i draws
    its undersample and inner-CV randomness from the seed sequence
    (seed, i[, repeat]), so results do not depend on ``threads``.
    """
    fusion = Fusion(fusion)
    variant = KccqVariant(kccq_variant)
    modalities = list(modalities)
    if not modalities:
        raise ValueError("at least one modality is required")
    if fusion == Fusion.NONE and len(modalities) != 1:
        raise ValueError("fusion 'none' takes exactly one modality; use early or late fusion")
    if fusion != Fusion.NONE and len(modalities) < 2:
        raise ValueError(f"{fusion.value} fusion needs at least two modalities")
    if len(table) == 0:
        raise ValueError("feature table is empty")
    data = table[complete_rows(table, modalities, variant)].reset_index(drop=True)
    pids = sorted(data["participant_id"].unique())
    if len(pids) < 2:
        raise ValueError(f"need >= 2 participants with {modalities} present, found {len(pids)}")
    config = {
        "modalities": modalities,
        "fusion": fusion.value,
        "kccq_variant": variant.value,
        "seed": int(seed),
        "l2": l2,
        "k": k,
        "resample_repeats": int(resample_repeats),
        "threshold": 0.5,
    }
    if window is not None:
        config["window"] = {"n_days": window.n_days, "shift_days": window.shift_days}

    runs = []
    for r in range(max(1, int(resample_repeats))):
        def job(item, r=r):
            i, pid = item
            fold_seed = (seed, i) if r == 0 else (seed, i, r)
            return _run_fold(data, pid, fold_seed, modalities, fusion, variant, l2, k)

        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            results = list(pool.map(job, enumerate(pids)))
        folds = [f for f in results if f is not None]
        skipped = [pid for pid, f in zip(pids, results) if f is None]
        for pid in skipped:
            log.warning("fold for participant %s skipped: training set has a single class", pid)
        probs = np.concatenate([f.probs for f in folds])
        labels = np.concatenate([f.labels for f in folds])
        runs.append((folds, skipped, metrics(probs, labels)))

    folds, skipped, _ = runs[0]
    avg = {m: float(np.mean([run[2][m] for run in runs])) for m in METRICS}
    return EvaluationReport(
        **avg,
        folds=folds,
        skipped_folds=skipped,
        config=config,
        repeats=[run[2] for run in runs],
        n_events=len(data),
        n_participants=len(pids),
    )


def permute_labels(table, seed):
    """Copy of ``table`` with the label column randomly permuted."""
    out = table.copy()
    out["label"] = np.random.default_rng(seed).permutation(out["label"].to_numpy())
    return out


def time_to_event_sweep(datasets, shifts, modalities, fusion=Fusion.LATE, n_days=14,
                        kccq_variant=KccqVariant.SUM_RECENT, seed=0, threads=1, fs=5.0, **kwargs):
    """(shift, EvaluationReport) per shift; per-participant preprocessing is shared."""
    contexts = {}
    out = []
    for shift in shifts:
        if shift < 0:
            raise ValueError("shifts must be >= 0")
        spec = WindowSpec(n_days, int(shift))
        table = extract_features(build_windows(datasets, spec), fs=fs, threads=threads, contexts=contexts)
        report = loso_evaluate(table, modalities, fusion, kccq_variant, seed, threads=threads,
                               window=spec, **kwargs)
        out.append((int(shift), report))
    return out
