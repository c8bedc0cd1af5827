#!/usr/bin/env python3
"""Convert the OpenMIC-2018 release into the plab dataset directory format.

Expects the unpacked release directory, containing:
  openmic-2018.npz                   X (N,10,128), Y_true (N,20), Y_mask (N,20), sample_key (N,)
  class-map.json                     instrument name -> column index
  partitions/split01_train.csv       one sample key per line
  partitions/split01_test.csv

Labels: an observed relevance >= threshold becomes +1, an observed relevance
below it becomes -1, and unobserved pairs are left out (unknown).
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np


def read_keys(path):
    with open(path, newline="") as f:
        return [row[0].strip() for row in csv.reader(f) if row and row[0].strip()]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("release", type=Path, help="unpacked openmic-2018 directory")
    ap.add_argument("out", type=Path, help="output dataset directory")
    ap.add_argument("--threshold", type=float, default=0.5)
    ap.add_argument("--split", default="split01", help="partition prefix (default split01)")
    ap.add_argument(
        "--standardize",
        action="store_true",
        help="shift/scale each feature dimension by train-split mean and std",
    )
    args = ap.parse_args(argv)
    if not 0.0 < args.threshold < 1.0:
        ap.error("threshold must lie in (0, 1)")

    data = np.load(args.release / "openmic-2018.npz", allow_pickle=True)
    X = data["X"].astype(np.float64)
    Y_true, Y_mask = data["Y_true"], data["Y_mask"].astype(bool)
    keys = [str(k) for k in data["sample_key"]]
    with open(args.release / "class-map.json") as f:
        class_map = json.load(f)
    names = [name for name, _ in sorted(class_map.items(), key=lambda kv: kv[1])]

    if X.ndim != 3 or Y_true.shape != Y_mask.shape or Y_true.shape[0] != X.shape[0]:
        sys.exit(f"unexpected shapes: X {X.shape}, Y_true {Y_true.shape}, Y_mask {Y_mask.shape}")
    if Y_true.shape[1] != len(names):
        sys.exit(f"{Y_true.shape[1]} label columns but {len(names)} classes in class-map.json")
    if np.any((Y_true < 0) | (Y_true > 1)):
        sys.exit("relevance outside [0, 1]")

    parts = args.release / "partitions"
    train = set(read_keys(parts / f"{args.split}_train.csv"))
    test = set(read_keys(parts / f"{args.split}_test.csv"))
    if train & test:
        sys.exit(f"{len(train & test)} clips appear in both partitions")
    index = {k: i for i, k in enumerate(keys)}
    missing = (train | test) - index.keys()
    if missing:
        sys.exit(f"{len(missing)} partition keys not in the archive, e.g. {sorted(missing)[0]}")
    # Keep archive order; drop clips in neither partition.
    rows = [i for i, k in enumerate(keys) if k in train or k in test]

    if args.standardize:
        train_rows = [i for i in rows if keys[i] in train]
        flat = X[train_rows].reshape(-1, X.shape[2])
        mean, std = flat.mean(axis=0), flat.std(axis=0)
        X = (X - mean) / np.where(std > 0, std, 1.0)

    args.out.mkdir(parents=True, exist_ok=True)
    n, t, d = len(rows), X.shape[1], X.shape[2]
    meta = {
        "num_clips": n,
        "timesteps": t,
        "feature_dim": d,
        "class_names": names,
        "clip_ids": [keys[i] for i in rows],
    }
    (args.out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    X[rows].astype("<f4").tofile(args.out / "features.f32")

    with open(args.out / "labels.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["clip_index", "class_index", "value"])
        for j, i in enumerate(rows):
            for c in np.flatnonzero(Y_mask[i]):
                w.writerow([j, int(c), 1 if Y_true[i, c] >= args.threshold else -1])

    with open(args.out / "split.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["clip_index", "split"])
        for j, i in enumerate(rows):
            w.writerow([j, "train" if keys[i] in train else "test"])

    print(f"wrote {n} clips ({sum(keys[i] in train for i in rows)} train) x {t} x {d}, {len(names)} classes to {args.out}")


if __name__ == "__main__":
    main()
