"""Desk-scale transfer benchmark: one 2x2 grid per seed.

    python scripts/run_benchmark.py --root runs/desk_data --out runs/desk_grid --seeds 0,1,2

Prints per-epoch progress, then per-seed cells and wall-clock time, and
writes everything to ``<out>/benchmark.json``.
"""

import argparse
import json
import statistics
import time
from pathlib import Path

from patchmixer.desk import desk_config, ensure_benchmark, grid_domains
from patchmixer.training import transfer_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--root", default="runs/desk_data", help="benchmark directory (generated if missing)")
    ap.add_argument("--out", default="runs/desk_grid")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--mixer", default="attentive", choices=["attentive", "vanilla", "none"])
    ap.add_argument("--epochs", type=int, default=50)
    args = ap.parse_args()

    domains = grid_domains(ensure_benchmark(args.root))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for seed in (int(s) for s in args.seeds.split(",")):
        cfg = desk_config(seed, args.mixer, epochs=args.epochs)
        t0 = time.perf_counter()
        grid = transfer_grid(
            domains, cfg, out / f"seed{seed}",
            on_epoch=lambda d, r: print(f"  seed {seed} {d} epoch {r['epoch']:3d} loss {r['loss']:.4f} "
                                         f"train_oa {r['train_oa']:.3f}", flush=True),
        )
        secs = time.perf_counter() - t0
        cells = {f"{a}->{b}": rep.oa for (a, b), rep in grid.cells.items()}
        results.append({"seed": seed, "seconds": secs, "cells": cells, "avg_tl": grid.avg_tl})
        print(json.dumps(results[-1], sort_keys=True), flush=True)

    same = [v for r in results for k, v in r["cells"].items() if k.split("->")[0] == k.split("->")[1]]
    summary = {"mixer": args.mixer, "runs": results, "median_same_domain": statistics.median(same)}
    (out / "benchmark.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"median same-domain OA {summary['median_same_domain']:.3f}")


if __name__ == "__main__":
    main()
