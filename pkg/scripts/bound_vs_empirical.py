"""Monte Carlo tail Pr(deviation >= M*eps) against the closed-form without-replacement bound."""

import argparse

from pslsim.data import SyntheticSpec, make_gaussian_mixture
from pslsim.deviation import BoundInputs, empirical_deviation_tail, serfling_union_bound
from pslsim.partition import PartitionSpec, extended_dirichlet_partition


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--batches", default="25,50,100,200,500")
    p.add_argument("--eps", default="0.02,0.05,0.1,0.2")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    train, _ = make_gaussian_mixture(SyntheticSpec(classes=args.classes,
                                                   per_class_count=args.per_class, feature_dim=2))
    part = extended_dirichlet_partition(train, PartitionSpec(K=10, C=2, alpha=3.0, seed=args.seed))
    D0, M = train.size, train.num_classes
    eps = [float(e) for e in args.eps.split(",")]
    print(f"D0={D0} M={M} trials={args.trials}")
    print(f"{'B':>5} {'eps':>5} {'gpsl p':>9} {'fpls p':>9} {'fls p':>9} {'bound':>10}")
    for B in (int(b) for b in args.batches.split(",")):
        tails = {s: empirical_deviation_tail(s, part, train.labels, B, eps, args.trials, args.seed)
                 for s in ("gpsl", "fpls", "fls")}
        for i, e in enumerate(eps):
            bound = serfling_union_bound(BoundInputs(e, B, D0, M))
            print(f"{B:5d} {e:5.2f} {tails['gpsl'][i].probability:9.5f} "
                  f"{tails['fpls'][i].probability:9.5f} {tails['fls'][i].probability:9.5f} "
                  f"{bound:10.3g}")


if __name__ == "__main__":
    main()
