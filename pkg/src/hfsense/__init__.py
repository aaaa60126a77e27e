"""Smartphone passive-sensing pipeline for heart-failure decompensation prediction."""

__version__ = "0.1.0"

DAY_MS = 86_400_000
EPOCH_MS = 30_000
