"""Rebuild the benchmark CSVs under data/ from offline sources.

Sources are the KEEL dataset dumps shipped in the ``keel-ds`` wheel plus the
optdigits test file bundled with scikit-learn. Nothing is downloaded.

    pip install keel-ds
    python scripts/prepare_datasets.py [--out data]

Outputs (header row, label in the last column named ``class``):

    optdigits_train.csv / optdigits_test.csv   official UCI split (3823 / 1797)
    pendigits.csv                              train+test pooled (10992)
    segment.csv                                Image Segmentation, pooled (2310)
    letter.csv                                 Letter Recognition (20000)
    winequality_red.csv                        red Wine Quality (1599, quality 3..8)

The red Wine Quality labels are reassembled from KEEL's one-vs-rest subsets
(quality 4 vs rest, 3 vs 5, 8 vs 6, 8 vs 6+7); whatever is left over is 7.
"""
import argparse
import collections
import csv
import os
from pathlib import Path

import numpy as np


def keel_dir():
    import keel_ds

    return Path(os.path.dirname(keel_ds.__file__)) / "data"


def read_dat(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("@"):
                continue
            rows.append([tok.strip() for tok in line.split(",")])
    return rows


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {path} ({len(rows)} rows)")


def numeric_rows(rows):
    # normalise number text so "100" and "100.0" do not both appear
    out = []
    for r in rows:
        out.append([repr(float(v)) if "." in v or "e" in v.lower() else str(int(v)) for v in r[:-1]]
                   + [r[-1]])
    return out


def export_balanced(name, out, header_prefix="f"):
    rows = numeric_rows(read_dat(keel_dir() / "balanced" / "raw" / f"{name}.dat"))
    d = len(rows[0]) - 1
    return rows, [f"{header_prefix}{j}" for j in range(d)] + ["class"]


def wine_red(out):
    raw = keel_dir() / "imbalanced" / "raw"
    key = lambda r: tuple(float(v) for v in r[:-1])

    base = read_dat(raw / "winequality-red-4.dat")
    pools = {}
    for fname, pos, neg in [("winequality-red-3_vs_5.dat", 3, 5), ("winequality-red-8_vs_6.dat", 8, 6)]:
        for r in read_dat(raw / fname):
            q = pos if r[-1] == "positive" else neg
            pools.setdefault(key(r), collections.Counter())[q] += 1

    rows = []
    for r in base:
        if r[-1] == "positive":
            q = 4
        else:
            c = pools.get(key(r))
            if c and sum(c.values()) > 0:
                q = min(q for q, n in c.items() if n > 0)
                c[q] -= 1
            else:
                q = 7
        rows.append(r[:-1] + [str(q)])

    counts = collections.Counter(int(r[-1]) for r in rows)
    expected = {3: 10, 4: 53, 5: 681, 6: 638, 7: 199, 8: 18}
    if dict(counts) != expected:
        raise SystemExit(f"wine reconstruction mismatch: {dict(counts)}")
    header = ["fixed_acidity", "volatile_acidity", "citric_acid", "residual_sugar", "chlorides",
              "free_sulfur_dioxide", "total_sulfur_dioxide", "density", "pH", "sulphates",
              "alcohol", "class"]
    write_csv(out / "winequality_red.csv", header, rows)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data"))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows, header = export_balanced("optdigits", out)
    from sklearn.datasets import load_digits

    digits = load_digits()
    test = np.asarray([[float(v) for v in r] for r in rows[3823:]])
    if not (np.array_equal(test[:, :-1], digits.data) and np.array_equal(test[:, -1], digits.target)):
        raise SystemExit("optdigits: tail of KEEL dump is not the UCI test file")
    write_csv(out / "optdigits_train.csv", header, rows[:3823])
    write_csv(out / "optdigits_test.csv", header, rows[3823:])

    for name, fname in [("penbased", "pendigits.csv"), ("segment", "segment.csv"), ("letter", "letter.csv")]:
        rows, header = export_balanced(name, out)
        write_csv(out / fname, header, rows)

    wine_red(out)


if __name__ == "__main__":
    main()
