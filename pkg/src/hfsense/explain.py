"""Exact interventional Shapley attributions for logistic models."""

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .learn import Fusion, loso_evaluate, sigmoid

MAX_EXACT_FEATURES = 20
MAX_BACKGROUND = 100


@dataclass
class ShapRow:
    event_id: str
    feature_names: tuple
    phi: np.ndarray
    base_value: float
    model_output: float
    feature_values: np.ndarray


def _coalition_values(w, b, z, B, link, chunk=4096):
    """v(S) for every subset S (bit i of the index set => feature i taken from x)."""
    n = len(w)
    R = len(B)
    wx = w * z
    wB = B * w  # (R, n)
    v = np.empty(2**n)
    masks = np.arange(2**n)
    for lo in range(0, 2**n, chunk):
        m = masks[lo : lo + chunk]
        s = np.full((len(m), R), float(b))
        # fixed accumulation order keeps v(S) and v(S u {i}) bitwise equal when w_i == 0
        for i in range(n):
            on = ((m >> i) & 1).astype(bool)
            s[on] += wx[i]
            s[~on] += wB[:, i]
        out = sigmoid(s) if link == "probability" else s
        v[lo : lo + chunk] = out.mean(axis=1)
    return v


def shapley_from_values(v, n):
    """Shapley values from a table of all 2^n coalition values."""
    masks = np.arange(2**n)
    sizes = np.array([bin(m).count("1") for m in masks])
    weight = np.array([math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) if s < n else 0.0
                       for s in range(n + 1)])
    phi = np.zeros(n)
    for i in range(n):
        without = masks[((masks >> i) & 1) == 0]
        phi[i] = np.sum(weight[sizes[without]] * (v[without | (1 << i)] - v[without]))
    return phi


def shap_exact(model, x, background, output="probability", event_id=""):
    """Exact Shapley values of one instance against a background set.

    ``x`` and ``background`` are raw feature vectors; the model's scaler is
    applied internally. ``output`` is ``"probability"`` or ``"logit"``.
    """
    x = np.asarray(x, dtype=float).ravel()
    background = np.atleast_2d(np.asarray(background, dtype=float))
    n = len(model.weights)
    if n > MAX_EXACT_FEATURES:
        raise ValueError(f"exact enumeration supports <= {MAX_EXACT_FEATURES} features, got {n}")
    if background.shape[0] == 0:
        raise ValueError("background set is empty")
    if output not in ("probability", "logit"):
        raise ValueError(f"unknown output {output!r}")
    z = model.standardize(x[None, :])[0]
    B = model.standardize(background)
    v = _coalition_values(model.weights, model.bias, z, B, output)
    phi = shapley_from_values(v, n)
    return ShapRow(event_id, tuple(model.feature_names), phi, float(v[0]), float(v[-1]), x)


def shap_summary(rows):
    """Features ranked by mean |phi| (name order on ties) plus per-instance triples."""
    if not rows:
        raise ValueError("no rows to summarise")
    names = sorted({f for r in rows for f in r.feature_names})
    phi = {f: [] for f in names}
    triples = []
    for r in rows:
        lookup = dict(zip(r.feature_names, r.phi))
        for f in names:
            phi[f].append(abs(lookup.get(f, 0.0)))
        for f, p, val in zip(r.feature_names, r.phi, r.feature_values):
            triples.append({"event_id": r.event_id, "feature": f, "phi": float(p), "feature_value": float(val)})
    ranking = pd.DataFrame({"feature": names, "mean_abs_phi": [float(np.mean(phi[f])) for f in names]})
    ranking = ranking.sort_values(["mean_abs_phi", "feature"], ascending=[False, True], kind="stable")
    ranking["rank"] = np.arange(1, len(ranking) + 1)
    return ranking.reset_index(drop=True), pd.DataFrame(triples)


def explain_early_fusion(table, modalities, kccq_variant="sum_recent", seed=0, threads=1, **kwargs):
    """SHAP rows for every held-out event, each explained by its own fold's model.

    Background is that fold's undersampled training matrix, capped at
    MAX_BACKGROUND rows by a seeded draw.
    """
    report = loso_evaluate(table, modalities, Fusion.EARLY, kccq_variant, seed, threads=threads, **kwargs)
    by_id = table.set_index("event_id")
    rows = []
    for i, fold in enumerate(report.folds):
        bg = fold.train_X
        if len(bg) > MAX_BACKGROUND:
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), i, 7]))
            bg = bg[np.sort(rng.choice(len(bg), MAX_BACKGROUND, replace=False))]
        cols = list(fold.model.feature_names)
        for eid in fold.event_ids:
            x = by_id.loc[eid, cols].to_numpy(dtype=float)
            rows.append(shap_exact(fold.model, x, bg, event_id=eid))
    return rows, report


def shap_frame(rows):
    """Long-format table for shap.csv."""
    records = []
    for r in rows:
        for f, p, val in zip(r.feature_names, r.phi, r.feature_values):
            records.append({
                "event_id": r.event_id,
                "feature": f,
                "phi": float(p),
                "feature_value": float(val),
                "base_value": r.base_value,
                "model_output": r.model_output,
            })
    return pd.DataFrame(records, columns=["event_id", "feature", "phi", "feature_value", "base_value", "model_output"])
