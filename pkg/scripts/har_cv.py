"""Cross-validated accuracy of the three candidate activity classifiers on UCI HAR.

    python scripts/har_cv.py "UCI HAR Dataset" --channels body
"""

import argparse
import time

from hfsense.har import cross_validate_har, load_uci_har, merge_har_labels, window_features


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("path")
    ap.add_argument("--split", default="train")
    ap.add_argument("--channels", choices=["body", "total"], default="body")
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    t0 = time.perf_counter()
    windows, labels, _ = load_uci_har(args.path, args.split, args.channels)
    X, y = window_features(windows), merge_har_labels(labels)
    print(f"{len(y)} windows, {int(y.sum())} ambulatory")
    for name, acc in cross_validate_har(X, y, args.seed, args.folds).items():
        print(f"{name:<20} {acc:.4f}")
    print(f"{time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
