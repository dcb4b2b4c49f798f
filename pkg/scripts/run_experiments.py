"""Run the reference experiments and print their headline numbers.

    python scripts/run_experiments.py smoke --seed 0
    python scripts/run_experiments.py ablation --seeds 0 1 2
    python scripts/run_experiments.py cascade

Results are cached in ``runs/`` (keyed by arguments and source digest), which
the acceptance suite reads back instead of retraining.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from cfftgan.trainkit.experiments import cascade, smoke
from cfftgan.trainkit.train import smoothed


def report_smoke(r: dict) -> None:
    g = smoothed(r["g_total"], 50)
    drop = 1 - g[-1] / g[99]
    e, f = r["early"], r["final"]
    style_win = np.mean(np.array(f["style"]) > np.array(f["style_baseline"]))
    sem_win = np.mean(np.array(f["semantic"]) > np.array(f["semantic_baseline"]))
    print(
        f"seed={r['seed']} hiformer={r['hiformer_enabled']} seconds={r['seconds']:.0f} "
        f"g_drop={drop:.3f} swd100={e['swd']:.4f} swd_end={f['swd']:.4f} "
        f"style_win={style_win:.3f} semantic_win={sem_win:.3f}"
    )


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("experiment", choices=["smoke", "ablation", "cascade"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=None)
    ap.add_argument("--cache", default="runs")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    if args.experiment == "smoke":
        report_smoke(smoke(args.cache, args.seed, True, args.steps or 2000))
    elif args.experiment == "ablation":
        wins = 0
        for s in args.seeds:
            full = smoke(args.cache, s, True, args.steps or 2000)
            abl = smoke(args.cache, s, False, args.steps or 2000)
            report_smoke(full)
            report_smoke(abl)
            wins += abl["final"]["swd"] >= full["final"]["swd"]
        print(f"full model wins {wins}/{len(args.seeds)}")
    else:
        r = cascade(args.cache, args.seed, args.steps or 500)
        print(f"seconds={r['seconds']:.0f} finite={r['finite']} hit_rate={r['hit_rate']:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
