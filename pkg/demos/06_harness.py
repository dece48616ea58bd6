"""Config-driven run, an ablation table and curve plots through the harness API."""
from __future__ import annotations

import argparse
import tempfile
from pathlib import Path

from mpssl.harness.ablation import format_table, run_ablation
from mpssl.harness.config import ExperimentConfig, dump_config
from mpssl.harness.plots import emit_plots
from mpssl.harness.runner import recompute_summary, run_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()
    out = args.out or Path(tempfile.mkdtemp(prefix="mpssl-demo-"))

    cfg = ExperimentConfig(name="demo", seeds=(0, 1), epochs=6, steps_per_epoch=5, milestones=(3, 5))
    print(dump_config(cfg))
    res = run_experiment(cfg, out / "demo")
    acc = res.summary["test_accuracy"]
    print(f"mean test acc {acc['mean']:.4f} +- {acc['std']:.4f} over {acc['n']} seeds")
    print(f"recomputed from metrics: {recompute_summary(res.out_dir)['mean']:.4f}")

    table = run_ablation("lmo_components", cfg, out / "lmo_components")
    print(format_table(table))
    for path in emit_plots([res.out_dir], out / "plots"):
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
