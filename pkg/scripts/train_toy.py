"""Train the desk preset on the toy scenario for several seeds and report learning curves.

Writes curves.csv (seed, iteration, aggregate reward) and prints, per seed, the
first-iteration reward, the least-squares slope over the first quarter of
training and the mean of the last three iterations.
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from ltmarket.ippo import preset, train
from ltmarket.scenario import load_scenario

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scenario", default=ROOT / "configs" / "toy.yaml", type=Path)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--iterations", type=int, help="override the preset's iteration count")
    ap.add_argument("--out", default=Path("runs/train_toy"), type=Path)
    args = ap.parse_args()

    scn = load_scenario(args.scenario)
    rows = []
    for seed in args.seeds:
        overrides = {"seed": seed}
        if args.iterations is not None:
            overrides["iterations"] = args.iterations
        hist = []
        train(scn, preset("desk", **overrides), args.out / f"seed{seed}",
              on_iteration=lambda it, stats: hist.append(sum(stats.values())))
        h = np.array(hist)
        q = len(h) // 4
        slope = np.polyfit(np.arange(q + 1), h[: q + 1], 1)[0] if q > 0 else float("nan")
        print(f"seed {seed}: first {h[0]:+8.2f}  first-quarter slope {slope:+7.3f}  final {h[-3:].mean():+8.2f}",
              flush=True)
        rows += [(seed, i, float(v)) for i, v in enumerate(h)]

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "iteration", "aggregate_reward"])
        w.writerows(rows)
    print(f"wrote {args.out / 'curves.csv'}")


if __name__ == "__main__":
    main()
