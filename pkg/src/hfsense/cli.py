"""Command-line entry point: ``hfsense <subcommand> [flags]``.

Values resolve as flag, then ``--config`` file, then built-in default. The
resolved configuration (minus ``threads``, which never changes results) is
written as ``<subcommand>_config.json`` beside the outputs.
"""

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import pandas as pd

from . import __version__
from .artifacts import write_csv, write_json
from .cohort import WindowSpec, build_windows, extract_features, participant_context, read_features
from .emit import doubleplot_matrix, epochs_frame, location_density, write_matrix
from .explain import explain_early_fusion, shap_frame, shap_summary
from .har import (
    ForestModel,
    cross_validate_har,
    load_uci_har,
    merge_har_labels,
    train_har,
    walk_comparison,
    walk_table,
    window_features,
)
from .ingest import IngestError, deidentify_all, parse_streams, write_rejects, write_streams
from .kccq import KccqVariant
from .learn import Fusion, loso_evaluate, permute_labels, time_to_event_sweep
from .synth import CohortSpec, generate, load_spec, write_cohort

log = logging.getLogger("hfsense")

COMMON_DEFAULTS = {"input": None, "out": ".", "seed": 0, "threads": 1}
NOT_RECORDED = {"threads", "config", "command", "salt", "out"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- parsing


def _csv_list(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _bool(text):
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _window_flags(p):
    p.add_argument("--window-days", type=int, help="window length in days (default 14)")
    p.add_argument("--shift-days", type=int, help="days between window end and event day (default 0)")


def _model_flags(p, modalities="kccq,motion,social", fusion=True):
    p.add_argument("--modalities", help=f"comma-separated subset of motion,social,location,kccq (default {modalities})")
    if fusion:
        p.add_argument("--fusion", choices=[f.value for f in Fusion], help="default late")
    p.add_argument("--kccq-variant", choices=[v.value for v in KccqVariant], help="default sum_recent")
    p.add_argument("--resample-repeats", type=int, help="undersampling repeats per fold (default 1)")


COMMANDS = {}


def command(name, help, defaults):
    def deco(fn):
        COMMANDS[name] = (fn, help, defaults)
        return fn
    return deco


def build_parser():
    parser = argparse.ArgumentParser(prog="hfsense", description="Passive-sensing heart-failure pipeline.")
    parser.add_argument("--version", action="version", version=f"hfsense {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for name, (fn, help, _) in COMMANDS.items():
        p = sub.add_parser(name, help=help, description=help)
        p.add_argument("--input", help="input directory or file")
        p.add_argument("--out", help="output directory (default .)")
        p.add_argument("--seed", type=int, help="master seed (default 0)")
        p.add_argument("--config", help="flat key = value file; flags take precedence")
        p.add_argument("--threads", type=int, help="worker cap; never changes results (default 1)")
        fn.add_flags(p)
    return parser


def _types(subparser):
    return {a.dest: a.type for a in subparser._actions if a.dest not in ("help", "version")}


def read_config_file(path):
    """Flat ``key = value`` (or ``key: value``) lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            for sep in ("=", ":"):
                if sep in line:
                    key, value = line.split(sep, 1)
                    break
            else:
                raise UsageError(f"{path}:{n}: expected 'key = value'")
            out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def resolve(args, subparser):
    """Merge flags over the config file over defaults."""
    _, _, defaults = COMMANDS[args.command]
    defaults = {**COMMON_DEFAULTS, **defaults}
    types = _types(subparser)
    file_cfg = {}
    if args.config:
        if not Path(args.config).is_file():
            raise UsageError(f"config file not found: {args.config}")
        file_cfg = read_config_file(args.config)
        unknown = sorted(set(file_cfg) - set(defaults) - {"config"})
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    cfg = {}
    for key, default in defaults.items():
        value = getattr(args, key, None)
        if value is None and key in file_cfg:
            conv = types.get(key)
            try:
                value = conv(file_cfg[key]) if conv else file_cfg[key]
            except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key}: {exc}") from None
        cfg[key] = default if value is None else value
    return cfg


def recorded(cfg, command):
    out = {k: v for k, v in cfg.items() if k not in NOT_RECORDED}
    out["command"] = command
    if cfg.get("salt"):
        out["salt_sha256"] = hashlib.sha256(cfg["salt"].encode()).hexdigest()[:16]
    return out


def _out_dir(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need_dir(cfg, key="input"):
    if cfg.get(key) is None:
        raise UsageError(f"--{key.replace('_', '-')} is required")
    p = Path(cfg[key])
    if not p.is_dir():
        raise UsageError(f"--{key.replace('_', '-')} {p} is not a directory")
    return p


def _need_features(cfg):
    if cfg.get("input") is None:
        raise UsageError("--input is required (features.csv or a directory holding it)")
    p = Path(cfg["input"])
    if p.is_dir():
        p = p / "features.csv"
    if not p.is_file():
        raise UsageError(f"feature table not found: {p}")
    if p.stat().st_size == 0:
        raise ValueError(f"feature table {p} is empty")
    return p


def _modalities(cfg):
    mods = _csv_list(cfg["modalities"])
    if not mods:
        raise UsageError("--modalities is empty")
    return mods


def _window(cfg):
    return WindowSpec(int(cfg["window_days"]), int(cfg["shift_days"]))


def _save_config(out, cfg, command):
    rec = recorded(cfg, command)
    return write_json(out / f"{command}_config.json", {"config": rec}, rec, cfg["seed"])


# ---------------------------------------------------------------- subcommands


def _flags(fn):
    def deco(add):
        fn.add_flags = add
        return fn
    return deco


@command("synth", "generate a synthetic cohort in the five-file input format", {
    "n_participants": 28, "n_compensated": 62, "n_decompensated": 48, "enrollment_days": 200,
    "delta_kccq": 1.0, "delta_motion": 1.0, "delta_social": 1.0, "delta_location": 0.0, "spec": None,
})
def cmd_synth(cfg):
    out = _out_dir(cfg)
    if cfg["spec"]:
        base = load_spec(cfg["spec"]).to_dict()
        base["seed"] = cfg["seed"]
    else:
        base = {k: cfg[k] for k in ("n_participants", "n_compensated", "n_decompensated", "enrollment_days",
                                    "delta_kccq", "delta_motion", "delta_social", "delta_location")}
        base["seed"] = cfg["seed"]
    spec = CohortSpec(**base)
    rec = recorded(cfg, "synth")
    write_cohort(generate(spec), out, spec, rec)
    _save_config(out, cfg, "synth")
    return 0


@_flags(cmd_synth)
def _(p):
    for key, typ in (("n-participants", int), ("n-compensated", int), ("n-decompensated", int),
                     ("enrollment-days", int), ("delta-kccq", float), ("delta-motion", float),
                     ("delta-social", float), ("delta-location", float)):
        p.add_argument(f"--{key}", type=typ)
    p.add_argument("--spec", help="cohort_spec.json to reproduce (seed still comes from --seed)")


@command("ingest", "validate and de-identify the five input files", {"salt": None, "geo_seed": None})
def cmd_ingest(cfg):
    src = _need_dir(cfg)
    if not cfg["salt"]:
        raise UsageError("--salt is required for de-identification")
    out = _out_dir(cfg)
    geo_seed = cfg["seed"] if cfg["geo_seed"] is None else cfg["geo_seed"]
    rec = recorded(cfg, "ingest")
    datasets, rejects = parse_streams(src)
    clean = deidentify_all(datasets, cfg["salt"], geo_seed)
    write_streams(clean, out, rec, cfg["seed"])
    write_rejects(rejects, out / "rejects.csv", rec, cfg["seed"])
    _save_config(out, cfg, "ingest")
    return 0


@_flags(cmd_ingest)
def _(p):
    p.add_argument("--salt", help="secret key for identifier hashing")
    p.add_argument("--geo-seed", type=int, help="seed for the per-participant location offset (default --seed)")


@command("extract", "per-event window features, epoch store and rejects", {
    "window_days": 14, "shift_days": 0, "fs": 5.0,
})
def cmd_extract(cfg):
    src = _need_dir(cfg)
    out = _out_dir(cfg)
    rec = recorded(cfg, "extract")
    datasets, rejects = parse_streams(src)
    spec = _window(cfg)
    contexts = {}
    table = extract_features(build_windows(datasets, spec), fs=cfg["fs"], threads=cfg["threads"], contexts=contexts)
    extra = {"window_days": spec.n_days, "shift_days": spec.shift_days}
    write_csv(out / "features.csv", table, rec, cfg["seed"], extra)
    write_csv(out / "epochs.csv", epochs_frame({p: c.epochs for p, c in contexts.items()}), rec, cfg["seed"])
    write_rejects(rejects, out / "rejects.csv", rec, cfg["seed"])
    _save_config(out, cfg, "extract")
    return 0


@_flags(cmd_extract)
def _(p):
    _window_flags(p)
    p.add_argument("--fs", type=float, help="accelerometer sampling rate in Hz (default 5)")


MODEL_DEFAULTS = {"modalities": "kccq,motion,social", "kccq_variant": "sum_recent", "resample_repeats": 1}


@command("train", "leave-one-subject-out evaluation on a feature table", {
    **MODEL_DEFAULTS, "fusion": "late", "permute_labels": False,
})
def cmd_train(cfg):
    path = _need_features(cfg)
    out = _out_dir(cfg)
    table = read_features(path)
    if cfg["permute_labels"]:
        table = permute_labels(table, cfg["seed"])
    report = loso_evaluate(table, _modalities(cfg), cfg["fusion"], cfg["kccq_variant"], cfg["seed"],
                           resample_repeats=cfg["resample_repeats"], threads=cfg["threads"])
    rec = recorded(cfg, "train")
    write_json(out / "report.json", report.to_dict(), rec, cfg["seed"])
    _save_config(out, cfg, "train")
    return 0


@_flags(cmd_train)
def _(p):
    _model_flags(p)
    p.add_argument("--permute-labels", type=_bool, nargs="?", const=True,
                   help="shuffle labels first (permutation baseline)")


@command("sweep", "time-to-event sweep over window shifts", {
    **MODEL_DEFAULTS, "fusion": "late", "window_days": 14, "shifts": "0,1,2,3,4,5,6,7", "fs": 5.0,
})
def cmd_sweep(cfg):
    src = _need_dir(cfg)
    out = _out_dir(cfg)
    try:
        shifts = [int(s) for s in _csv_list(cfg["shifts"])]
    except ValueError:
        raise UsageError(f"--shifts must be comma-separated integers, got {cfg['shifts']!r}") from None
    datasets, _ = parse_streams(src)
    results = time_to_event_sweep(datasets, shifts, _modalities(cfg), cfg["fusion"], int(cfg["window_days"]),
                                  cfg["kccq_variant"], cfg["seed"], cfg["threads"], cfg["fs"],
                                  resample_repeats=cfg["resample_repeats"])
    rows = [{"shift_days": s, **r.metrics, "n_events": r.n_events} for s, r in results]
    rec = recorded(cfg, "sweep")
    write_csv(out / "sweep.csv", pd.DataFrame(rows), rec, cfg["seed"])
    _save_config(out, cfg, "sweep")
    return 0


@_flags(cmd_sweep)
def _(p):
    _model_flags(p)
    p.add_argument("--window-days", type=int, help="window length in days (default 14)")
    p.add_argument("--shifts", help="comma-separated shifts in days (default 0..7)")
    p.add_argument("--fs", type=float, help="accelerometer sampling rate in Hz (default 5)")


@command("explain", "exact Shapley attributions of the early-fusion fold models", {**MODEL_DEFAULTS})
def cmd_explain(cfg):
    path = _need_features(cfg)
    out = _out_dir(cfg)
    table = read_features(path)
    rows, report = explain_early_fusion(table, _modalities(cfg), cfg["kccq_variant"], cfg["seed"],
                                        cfg["threads"], resample_repeats=cfg["resample_repeats"])
    rec = recorded(cfg, "explain")
    ranking, _ = shap_summary(rows)
    write_csv(out / "shap.csv", shap_frame(rows), rec, cfg["seed"])
    write_csv(out / "shap_summary.csv", ranking, rec, cfg["seed"])
    write_json(out / "explain_report.json", {"metrics": report.metrics, "output": "probability",
                                             "n_rows": len(rows)}, rec, cfg["seed"])
    _save_config(out, cfg, "explain")
    return 0


@_flags(cmd_explain)
def _(p):
    _model_flags(p, fusion=False)


@command("har", "train the activity model on UCI HAR and count walk epochs per event", {
    "har_path": None, "model": None, "channels": "body", "trees": 100, "cv_folds": 5,
    "window_days": 14, "shift_days": 0, "fs": 5.0,
})
def cmd_har(cfg):
    out = _out_dir(cfg)
    rec = recorded(cfg, "har")
    if cfg["har_path"] is None and cfg["model"] is None:
        raise UsageError("har needs --har-path (to train) or --model (a saved har_model.json)")
    if cfg["har_path"] is not None:
        _need_dir(cfg, "har_path")
        windows, labels, subjects = load_uci_har(cfg["har_path"], "train", cfg["channels"])
        X, y = window_features(windows), merge_har_labels(labels)
        cv = cross_validate_har(X, y, cfg["seed"], cfg["cv_folds"], trees=cfg["trees"])
        model = train_har(X, y, cfg["trees"], cfg["seed"])
        write_json(out / "har_model.json", model.to_dict(), rec, cfg["seed"])
        write_json(out / "har_cv.json", {"cv_accuracy": cv, "best": max(sorted(cv), key=cv.get), "n_windows": len(y), "n_ambulatory": int(y.sum()),
                                         "channels": cfg["channels"]}, rec, cfg["seed"])
    else:
        if not Path(cfg["model"]).is_file():
            raise UsageError(f"--model {cfg['model']} not found")
        model = ForestModel.load(cfg["model"])
    if cfg["input"] is not None:
        src = _need_dir(cfg)
        datasets, _ = parse_streams(src)
        windows = build_windows(datasets, _window(cfg))
        contexts = {pid: participant_context(ds, cfg["fs"]) for pid, ds in datasets.items()}
        table = walk_table(windows, contexts, model, cfg["fs"], cfg["seed"])
        write_csv(out / "walk_epochs.csv", table, rec, cfg["seed"])
        write_json(out / "har_report.json", walk_comparison(table), rec, cfg["seed"])
    _save_config(out, cfg, "har")
    return 0


@_flags(cmd_har)
def _(p):
    p.add_argument("--har-path", help="UCI HAR dataset directory")
    p.add_argument("--model", help="saved har_model.json to use instead of training")
    p.add_argument("--channels", choices=["body", "total"], help="HAR signal set (default body)")
    p.add_argument("--trees", type=int, help="forest size (default 100)")
    p.add_argument("--cv-folds", type=int, help="cross-validation folds (default 5)")
    _window_flags(p)
    p.add_argument("--fs", type=float, help="phone accelerometer rate in Hz (default 5)")


@command("doubleplot", "double-plot activity matrices per participant", {"participant": None, "fs": 5.0})
def cmd_doubleplot(cfg):
    src = _need_dir(cfg)
    out = _out_dir(cfg)
    rec = recorded(cfg, "doubleplot")
    datasets, _ = parse_streams(src)
    pids = [cfg["participant"]] if cfg["participant"] else sorted(datasets)
    written = 0
    for pid in pids:
        if pid not in datasets:
            raise ValueError(f"participant {pid!r} not in {src}")
        ctx = participant_context(datasets[pid], cfg["fs"])
        try:
            matrix, first_ms = doubleplot_matrix(ctx.epochs)
        except ValueError as exc:
            if cfg["participant"]:
                raise
            log.warning("skipping %s: %s", pid, exc)
            continue
        extra = {"participant_id": pid, "first_day_ms": first_ms, "missing": -1, "rows": "2 x 2880 epochs"}
        write_matrix(out / f"doubleplot_{pid}.csv", matrix, rec, cfg["seed"], extra)
        written += 1
    if written == 0:
        raise ValueError("no participant has two or more days of epochs")
    _save_config(out, cfg, "doubleplot")
    return 0


@_flags(cmd_doubleplot)
def _(p):
    p.add_argument("--participant", help="participant id (default: all)")
    p.add_argument("--fs", type=float, help="accelerometer sampling rate in Hz (default 5)")


@command("kde", "location kernel-density grids per participant", {"participant": None, "grid": 200})
def cmd_kde(cfg):
    src = _need_dir(cfg)
    out = _out_dir(cfg)
    rec = recorded(cfg, "kde")
    datasets, _ = parse_streams(src)
    pids = [cfg["participant"]] if cfg["participant"] else sorted(datasets)
    for pid in pids:
        if pid not in datasets:
            raise ValueError(f"participant {pid!r} not in {src}")
        loc = datasets[pid].locations
        if len(loc) == 0:
            if cfg["participant"]:
                raise ValueError(f"participant {pid!r} has no location pings")
            continue
        lon_axis, lat_axis, dens = location_density(loc.lat, loc.lon, cfg["grid"])
        extra = {"participant_id": pid, "lon_min": repr(float(lon_axis[0])), "lon_max": repr(float(lon_axis[-1])),
                 "lat_min": repr(float(lat_axis[0])), "lat_max": repr(float(lat_axis[-1])),
                 "rows": "latitude ascending", "cols": "longitude ascending"}
        write_matrix(out / f"kde_{pid}.csv", dens, rec, cfg["seed"], extra)
    _save_config(out, cfg, "kde")
    return 0


@_flags(cmd_kde)
def _(p):
    p.add_argument("--participant", help="participant id (default: all)")
    p.add_argument("--grid", type=int, help="cells per axis (default 200)")


# ---------------------------------------------------------------- entry point


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    fn = COMMANDS[args.command][0]
    try:
        cfg = resolve(args, subparser)
        return fn(cfg)
    except UsageError as exc:
        subparser.print_usage(sys.stderr)
        print(f"hfsense {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, IngestError, FileNotFoundError, KeyError) as exc:
        print(f"hfsense {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
