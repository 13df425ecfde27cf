"""Token-mixer ablation on the desk benchmark: three arms, several seeds.

    python scripts/run_ablation.py --root runs/desk_data --out runs/desk_ablation --seeds 0,1,2

Arms: attentive token mixing, plain (ungated) token mixing, channel mixing
only. Reports median AvgTL per arm and whether the medians are ordered
attentive >= vanilla >= channel-only. Results land in ``<out>/ablation.json``.
"""

import argparse
import json
import statistics
import time
from pathlib import Path

from patchmixer.desk import ARMS, desk_config, ensure_benchmark, grid_domains
from patchmixer.training import transfer_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--root", default="runs/desk_data", help="benchmark directory (generated if missing)")
    ap.add_argument("--out", default="runs/desk_ablation")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--epochs", type=int, default=50)
    args = ap.parse_args()

    domains = grid_domains(ensure_benchmark(args.root))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [int(s) for s in args.seeds.split(",")]

    arms = {}
    for arm, mixer in ARMS.items():
        runs = []
        for seed in seeds:
            t0 = time.perf_counter()
            grid = transfer_grid(domains, desk_config(seed, mixer, epochs=args.epochs), out / arm / f"seed{seed}")
            runs.append({"seed": seed, "seconds": time.perf_counter() - t0, "avg_tl": grid.avg_tl,
                         "cells": {f"{a}->{b}": r.oa for (a, b), r in grid.cells.items()}})
            print(f"{arm:13s} seed {seed}  AvgTL {grid.avg_tl:.4f}  ({runs[-1]['seconds']:.0f}s)", flush=True)
        arms[arm] = {"mixer": mixer, "runs": runs, "median_avg_tl": statistics.median(r["avg_tl"] for r in runs)}

    med = [arms[a]["median_avg_tl"] for a in ARMS]
    ordered = all(x >= y for x, y in zip(med, med[1:]))
    (out / "ablation.json").write_text(json.dumps({"arms": arms, "ordered": ordered}, indent=2) + "\n")
    for arm in ARMS:
        print(f"{arm:13s} median AvgTL {arms[arm]['median_avg_tl']:.4f}")
    print("ordering attentive >= vanilla >= channel-only:", "holds" if ordered else "violated")


if __name__ == "__main__":
    main()
