"""Artifact metadata and deterministic file writing.

Every file the pipeline writes starts with a metadata block so that any
output can be traced to the tool version, the resolved configuration and the
seed. CSV-like files get ``#``-prefixed lines; JSON files get a ``meta`` key.
Nothing time- or host-dependent is recorded, so reruns are byte-identical.
"""

import hashlib
import json
from pathlib import Path

from . import __version__


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def meta_block(config=None, seed=None):
    config = config or {}
    return {
        "tool": "hfsense",
        "version": __version__,
        "config_hash": config_hash(config),
        "seed": seed,
    }


def meta_lines(config=None, seed=None, extra=None):
    meta = meta_block(config, seed)
    line = f"# {meta['tool']} {meta['version']} config_hash={meta['config_hash']} seed={meta['seed']}"
    lines = [line]
    for key, value in (extra or {}).items():
        lines.append(f"# {key}={value}")
    return "\n".join(lines) + "\n"


def write_csv(path, frame, config=None, seed=None, extra=None, **to_csv_kwargs):
    """Write a DataFrame preceded by the metadata block."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(meta_lines(config, seed, extra))
        frame.to_csv(fh, index=False, lineterminator="\n", **to_csv_kwargs)
    return path


def write_json(path, payload, config=None, seed=None):
    path = Path(path)
    doc = {"meta": meta_block(config, seed), **payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default, allow_nan=True)
        fh.write("\n")
    return path


def _json_default(obj):
    import numpy as np

    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def count_comment_lines(path):
    """Number of leading ``#`` lines in a text file."""
    n = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                n += 1
            else:
                break
    return n
