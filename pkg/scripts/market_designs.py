"""Compare market designs: energy-only, with CfD auctions, with a capacity market, and both.

For each design the scenario's contract switches are overridden, agents are
trained from scratch, the frozen policies are simulated, and the usual tables
are written under <out>/<design>/.  A one-line summary per design goes to
designs.csv.
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from ltmarket.evaluation import read_records, simulate, summary_tables, write_tables
from ltmarket.ippo import preset, train
from ltmarket.scenario import load_scenario, with_overrides

ROOT = Path(__file__).resolve().parents[1]
DESIGNS = {
    "energy_only": dict(cm_enabled=False, cfd_enabled=False),
    "cfd": dict(cm_enabled=False, cfd_enabled=True),
    "cm": dict(cm_enabled=True, cfd_enabled=False),
    "cfd_cm": dict(cm_enabled=True, cfd_enabled=True),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scenario", default=ROOT / "configs" / "designs.yaml", type=Path)
    ap.add_argument("--designs", nargs="+", default=list(DESIGNS), choices=list(DESIGNS))
    ap.add_argument("--preset", default="desk")
    ap.add_argument("--iterations", type=int)
    ap.add_argument("--episodes", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=Path("runs/market_designs"), type=Path)
    args = ap.parse_args()

    base = load_scenario(args.scenario)
    summary = []
    for name in args.designs:
        scn = with_overrides(base, **DESIGNS[name])
        overrides = {"seed": args.seed}
        if args.iterations is not None:
            overrides["iterations"] = args.iterations
        out = args.out / name
        result = train(scn, preset(args.preset, **overrides), out / "train")
        rec_path = out / "records.jsonl"
        simulate(result.policies, scn, args.episodes, args.seed, rec_path, workers=1)
        _, records = read_records(rec_path)
        tables = summary_tables(records, scn)
        write_tables(tables, out)
        prices = tables["prices"]
        demand = sum(r["demand_mwh"] for r in prices)
        row = {
            "design": name,
            "mean_spot_price": float(np.mean([r["spot_price"] for r in prices])),
            "mean_total_price": float(np.mean([r["total_price"] for r in prices])),
            "lost_load_share": sum(r["lost_load_mwh"] for r in prices) / demand if demand else 0.0,
            "emissions_t_per_episode": sum(r["emissions_t"] for r in tables["emissions"]) / len(records),
            "mean_hhi": float(np.mean([r["hhi"] for r in tables["hhi"]])) if tables["hhi"] else float("nan"),
        }
        summary.append(row)
        print("  ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()), flush=True)

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "designs.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(summary)
    print(f"wrote {args.out / 'designs.csv'}")


if __name__ == "__main__":
    main()
