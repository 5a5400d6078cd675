"""Accuracy, deviation and step-count table over strategies x K x B on the severe synthetic split.

    python scripts/strategy_grid.py --out runs/grid --epochs 50 --seeds 0,1,2,3,4
"""

import argparse
import dataclasses

from pslsim.harness import ExperimentConfig, compare_strategies
from pslsim.partition import PartitionSpec


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/grid")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--clients", default="16,64")
    p.add_argument("--batches", default="64,128")
    p.add_argument("--strategies", default="cl,gpsl,fls,fpls")
    args = p.parse_args()

    base = ExperimentConfig(partition=PartitionSpec(K=16, C=2, alpha=3.0, seed=0),
                            epochs=args.epochs,
                            seeds=tuple(int(s) for s in args.seeds.split(",")))
    configs = []
    for K in (int(k) for k in args.clients.split(",")):
        for B in (int(b) for b in args.batches.split(",")):
            for s in args.strategies.split(","):
                configs.append(dataclasses.replace(
                    base, strategy=s, global_batch=B,
                    partition=dataclasses.replace(base.partition, K=K)))
    rows, _ = compare_strategies(configs, args.out, record_timing=True)

    print(f"{'strategy':>8} {'K':>4} {'B':>4} {'acc':>7} {'std':>6} {'dev':>6} {'T':>6} {'eff B':>6} {'sec':>7}")
    for r in rows:
        std = float("nan") if r["accuracy_std"] is None else 100 * r["accuracy_std"]
        print(f"{r['strategy']:>8} {r['K']:>4} {r['B']:>4} {100 * r['accuracy_mean']:7.2f} "
              f"{std:6.2f} {r['mean_deviation']:6.3f} {r['steps_per_epoch']:6.1f} "
              f"{r['effective_batch']:6d} {r['wall_time_seconds']:7.1f}")


if __name__ == "__main__":
    main()
