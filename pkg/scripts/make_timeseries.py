"""Write the synthetic hourly series used by the bundled scenario files."""

import argparse
from pathlib import Path

import numpy as np

from ltmarket.scenario import SERIES_NAMES, synthetic_series


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=Path(__file__).resolve().parents[1] / "configs" / "data" / "synthetic_hourly.csv",
                    type=Path)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--peak-mw", type=float, default=1000.0)
    args = ap.parse_args()
    series = synthetic_series(args.seed, args.peak_mw)
    table = np.column_stack([series[n] for n in SERIES_NAMES])
    args.out.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(args.out, table, delimiter=",", header=",".join(SERIES_NAMES), comments="", fmt="%.6f")
    print(f"wrote {args.out} ({len(table)} rows)")


if __name__ == "__main__":
    main()
