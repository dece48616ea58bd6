"""Run orchestration: one sub-run per seed, metrics on disk, a summary join."""
from __future__ import annotations

import json
import logging
import math
import os
import statistics
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from .. import checkpoint
from ..foundation import (FoundationGenerator, TrainingBudget, make_foundation_domain, make_generator,
                          make_target_task, pretrain_foundation_classifier, pretrain_learned_generator, save_domain)
from ..trainer import TrainingError, select_lambda, train
from .config import ExperimentConfig, dump_config, load_config
from .metrics import read_metrics, write_metrics

log = logging.getLogger(__name__)

OUT_ROOT_ENV = "MPSSL_OUT_ROOT"
SUMMARY_SCHEMA_VERSION = 1


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ROOT_ENV, "runs"))


@lru_cache(maxsize=8)
def _foundation(spec, backend: str):
    domain = make_foundation_domain(spec)
    if backend == "learned":
        return pretrain_learned_generator(domain, TrainingBudget(seed=spec.seed))
    return make_generator(domain)


@lru_cache(maxsize=8)
def _foundation_classifier(spec):
    return pretrain_foundation_classifier(make_foundation_domain(spec), TrainingBudget(seed=spec.seed))


def build_foundation(cfg: ExperimentConfig) -> FoundationGenerator:
    return _foundation(cfg.foundation_spec(), cfg.generator_backend)


def pretrain_foundation(cfg: ExperimentConfig, out_dir: str | Path) -> dict[str, Path]:
    """Build and persist the foundation domain, generator and foundation classifier."""
    out_dir = Path(out_dir)
    spec = cfg.foundation_spec()
    G = build_foundation(cfg)
    clf = _foundation_classifier(spec)
    paths = {"domain": out_dir / "domain.pt", "generator": out_dir / "generator.pt",
             "foundation_classifier": out_dir / "foundation_classifier.pt"}
    save_domain(paths["domain"], G.domain)
    G.save(paths["generator"])
    checkpoint.save(paths["foundation_classifier"], "foundation_classifier", clf.state_dict(), seed=spec.seed,
                    config_hash=cfg.config_hash())
    return paths


@dataclass
class ExperimentResult:
    out_dir: Path
    summary: dict
    failures: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


def run_seed(cfg: ExperimentConfig, seed: int, seed_dir: Path | None = None):
    """Train one seed; writes metrics and checkpoint into ``seed_dir`` when given."""
    G = build_foundation(cfg)
    task = make_target_task(G.domain, cfg.task_spec(seed))
    f_F = _foundation_classifier(cfg.foundation_spec()) if cfg.method == "pssl" else None
    tcfg = cfg.train_config(seed)
    kwargs = dict(outer_cfg=cfg.outer_config(), G=G, foundation_classifier=f_F)
    lam_scores = None
    if cfg.lam_search:
        lam, lam_scores = select_lambda(task, tcfg, **kwargs)
        tcfg.lam = lam
    h = cfg.config_hash()
    ckpt = seed_dir / "checkpoint.pt" if seed_dir is not None else None
    run = train(task, tcfg, checkpoint_path=ckpt, config_hash=h, **kwargs)
    if seed_dir is not None:
        write_metrics(seed_dir / "metrics.jsonl", run.metrics, config_hash=h, seed=seed, method=cfg.method)
        info = {
            "config_hash": h, "seed": seed, "method": cfg.method, "best_epoch": run.best_epoch,
            "test_accuracy": run.test_accuracy, "final_test_accuracy": run.final_test_accuracy,
            "lam": tcfg.lam, "lam_scores": lam_scores, "unlabeled_reads": run.unlabeled_reads,
            "generator_unchanged": run.generator_unchanged, "wall_clock": run.wall_clock,
        }
        (seed_dir / "run.json").write_text(json.dumps(info, sort_keys=True, indent=1) + "\n")
    return run


def summarize(accuracies: dict[int, float]) -> dict:
    vals = [accuracies[s] for s in sorted(accuracies)]
    return {
        "n": len(vals),
        "mean": statistics.fmean(vals) if vals else math.nan,
        "std": statistics.stdev(vals) if len(vals) > 1 else 0.0,
    }


def run_experiment(config, out_dir: str | Path | None = None) -> ExperimentResult:
    """Run every seed of ``config`` (a path or :class:`ExperimentConfig`).

    A failing seed is recorded in the summary and the remaining seeds still run.
    """
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    out_dir = Path(out_dir) if out_dir is not None else default_out_root() / cfg.name
    out_dir.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash()
    (out_dir / "config.ini").write_text(dump_config(cfg))
    t0 = time.perf_counter()
    accuracies, failures, clocks, reads = {}, {}, {}, {}
    for seed in cfg.seeds:
        seed_dir = out_dir / f"seed_{seed}"
        try:
            run = run_seed(cfg, seed, seed_dir)
        except (TrainingError, ValueError, RuntimeError) as exc:
            log.error("seed %s failed: %s", seed, exc)
            failures[str(seed)] = str(exc)
            continue
        accuracies[seed] = run.test_accuracy
        clocks[str(seed)] = run.wall_clock
        reads[str(seed)] = run.unlabeled_reads
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION, "config_hash": h, "name": cfg.name, "method": cfg.method,
        "seeds": list(cfg.seeds), "test_accuracy": summarize(accuracies),
        "per_seed": {str(s): a for s, a in sorted(accuracies.items())},
        "unlabeled_reads": reads, "failures": failures,
        "wall_clock": {"total": time.perf_counter() - t0, "per_seed": clocks},
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    return ExperimentResult(out_dir, summary, failures)


def best_epoch_from_metrics(rows: list[dict]) -> dict:
    """The record the best-validation model comes from: max accuracy, then min loss, earliest first."""
    best = rows[0]
    for r in rows[1:]:
        if (r["val_accuracy"], -r["val_loss"]) > (best["val_accuracy"], -best["val_loss"]):
            best = r
    return best


def recompute_summary(out_dir: str | Path) -> dict:
    """Aggregate test accuracy again from the per-seed metrics files alone."""
    out_dir = Path(out_dir)
    accs = {}
    for seed_dir in sorted(out_dir.glob("seed_*")):
        rows = read_metrics(seed_dir / "metrics.jsonl")
        accs[int(seed_dir.name.split("_", 1)[1])] = best_epoch_from_metrics(rows)["test_accuracy"]
    return summarize(accs)
