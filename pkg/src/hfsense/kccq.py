"""KCCQ-12 summary scoring and the survey feature variants."""

import math
from enum import Enum

import numpy as np

DOMAINS = ("phys", "symp", "qol", "soc")
SEVERE_THRESHOLD = 25.0  # summary <= 25 ~ NYHA class IV


class KccqVariant(str, Enum):
    SUM_RECENT = "sum_recent"
    SUM_MEAN = "sum_mean"
    ALL_RECENT = "all_recent"
    ALL_MEAN = "all_mean"

    @property
    def columns(self):
        stat = self.value.split("_")[1]
        if self.value.startswith("sum"):
            return (f"kccq_sum_{stat}",)
        return tuple(f"kccq_{d}_{stat}" for d in DOMAINS)


ALL_KCCQ_COLUMNS = tuple(c for v in KccqVariant for c in v.columns)


def summary_score(phys, symp, qol, soc):
    """Mean of the four domain scores (each 0-100)."""
    vals = np.array([phys, symp, qol, soc], dtype=float)
    if np.isnan(vals).any():
        raise ValueError("KCCQ survey invalid: a domain is missing")
    if ((vals < 0) | (vals > 100)).any():
        raise ValueError("KCCQ domain score outside [0, 100]")
    return math.fsum(vals) / 4.0


def kccq_features(surveys, variant=KccqVariant.SUM_RECENT):
    """Features for the surveys of one window, keyed by column name; None without a survey."""
    variant = KccqVariant(variant)
    if len(surveys) == 0:
        return None
    doms = np.stack([np.asarray(getattr(surveys, d), dtype=float) for d in DOMAINS], axis=1)
    if variant.value.endswith("recent"):
        # surveys sharing the latest timestamp are averaged, so row order never matters
        doms = doms[surveys.t_ms == np.max(surveys.t_ms)]
    # fsum keeps the result independent of row order
    if variant.value.startswith("sum"):
        values = [math.fsum(doms.ravel()) / doms.size]
    else:
        values = [math.fsum(col) / len(col) for col in doms.T]
    return dict(zip(variant.columns, values))


def all_variant_features(surveys):
    """Every variant's columns in one dict, or None without a survey."""
    if len(surveys) == 0:
        return None
    out = {}
    for v in KccqVariant:
        out.update(kccq_features(surveys, v))
    return out
