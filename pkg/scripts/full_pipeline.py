"""Run synth, ingest, extract, train (early and late), explain, doubleplot and kde on one cohort.

    python scripts/full_pipeline.py --out runs/demo --seed 7
    python scripts/full_pipeline.py --out runs/demo --har-path "UCI HAR Dataset"
"""

import argparse
import json
import time
from pathlib import Path

from hfsense.cli import main as hfsense


def step(argv):
    t0 = time.perf_counter()
    code = hfsense([str(a) for a in argv])
    print(f"{argv[0]:<10} exit {code}  {time.perf_counter() - t0:6.1f}s", flush=True)
    if code != 0:
        raise SystemExit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/pipeline")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--salt", default="change-me")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--har-path", help="UCI HAR directory; adds the walk-epoch analysis")
    args = ap.parse_args()
    out = Path(args.out)
    s, t = ["--seed", args.seed], ["--threads", args.threads]
    t0 = time.perf_counter()
    step(["synth", "--out", out / "raw", *s])
    step(["ingest", "--input", out / "raw", "--out", out / "clean", "--salt", args.salt, *s, *t])
    step(["extract", "--input", out / "clean", "--out", out / "features", *s, *t])
    for fusion in ("early", "late"):
        step(["train", "--input", out / "features", "--out", out / f"train_{fusion}", "--fusion", fusion, *s, *t])
    step(["explain", "--input", out / "features", "--out", out / "explain", *s, *t])
    step(["doubleplot", "--input", out / "clean", "--out", out / "doubleplot", *s])
    step(["kde", "--input", out / "clean", "--out", out / "kde", *s])
    if args.har_path:
        step(["har", "--har-path", args.har_path, "--input", out / "clean", "--out", out / "har", *s, *t])
    print(f"total {time.perf_counter() - t0:.1f}s")
    for fusion in ("early", "late"):
        m = json.loads((out / f"train_{fusion}" / "report.json").read_text())["metrics"]
        print(fusion, " ".join(f"{k}={v:.3f}" for k, v in sorted(m.items()) if v is not None))


if __name__ == "__main__":
    main()
