"""Train base, naive gSSL and MP-SSL on the same toy task and compare test accuracy."""
from __future__ import annotations

import argparse

from mpssl.foundation import FoundationSpec, TaskSpec, make_foundation_domain, make_generator, make_target_task
from mpssl.trainer import TrainLoopConfig, train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--fraction", type=float, default=0.10)
    args = ap.parse_args()

    domain = make_foundation_domain(FoundationSpec())
    G = make_generator(domain)
    methods = ("base", "naive_gssl", "mpssl")
    acc = {m: [] for m in methods}
    for seed in range(args.seeds):
        task = make_target_task(domain, TaskSpec(seed=seed, labeled_fraction=args.fraction))
        for m in methods:
            run = train(task, TrainLoopConfig(method=m, seed=seed), G=G)
            acc[m].append(run.test_accuracy)
            print(f"seed {seed} {m:10s} test acc {run.test_accuracy:.4f} (best epoch {run.best_epoch}, "
                  f"D_u reads {run.unlabeled_reads})")
    for m in methods:
        print(f"{m:10s} mean {sum(acc[m]) / len(acc[m]):.4f}")


if __name__ == "__main__":
    main()
