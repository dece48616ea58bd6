"""Ablation presets: named config matrices mirroring the published ablation tables."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .config import ConfigError, ExperimentConfig, with_overrides
from .runner import run_experiment

DATASET_FRACTIONS = (0.10, 0.25, 0.50, 1.00)
DATASET_METHODS = ("base", "fixmatch_oracle", "adaptive_oracle", "naive_gssl", "pssl", "mpssl")


@dataclass(frozen=True)
class AblationPreset:
    name: str
    axis: str
    rows: tuple[tuple[str, dict], ...]
    columns: tuple[tuple[str, dict], ...] = (("", {}),)

    def expand(self, base: ExperimentConfig) -> list[tuple[str, str, ExperimentConfig]]:
        """``(row label, column label, config)`` for every cell; all cells share ``base.seeds``."""
        cells = []
        for row, row_over in self.rows:
            for col, col_over in self.columns:
                over = {**row_over, **col_over}
                name = f"{base.name}-{self.name}-{_slug(row)}" + (f"-{_slug(col)}" if col else "")
                cells.append((row, col, with_overrides(base, name=name, **over)))
        return cells


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", text.lower()).strip("_")


_MPSSL = {"method": "mpssl"}

PRESETS = {
    "lmo_components": AblationPreset("lmo_components", "latent meta-optimization terms", (
        ("Base Model", {"method": "base"}),
        ("MP-SSL w/o LMO", {**_MPSSL, "use_lmo": False}),
        ("MP-SSL w/o L_gap", {**_MPSSL, "lambda_gap": 0.0}),
        ("MP-SSL w/o L_val", {**_MPSSL, "val_weight": 0.0}),
        ("MP-SSL", dict(_MPSSL)),
    )),
    "mapper_conditioning": AblationPreset("mapper_conditioning", "mapper conditioning", (
        ("Base Model", {"method": "base"}),
        ("Unconditional M", {**_MPSSL, "mapper_conditional": False}),
        ("Conditional M", {**_MPSSL, "mapper_conditional": True}),
    )),
    "converter_variants": AblationPreset("converter_variants", "label converter output", (
        ("Soft Label by EMB", {**_MPSSL, "converter_mode": "soft_embedding", "tau": 1.0}),
        ("Soft Gumbel Softmax", {**_MPSSL, "converter_mode": "soft_gumbel", "tau": 1.0}),
        ("Hard Gumbel Softmax (tau=1e-1)", {**_MPSSL, "converter_mode": "hard_gumbel", "tau": 1e-1}),
        ("Hard Gumbel Softmax (tau=1e-3)", {**_MPSSL, "converter_mode": "hard_gumbel", "tau": 1e-3}),
        ("Hard Gumbel Softmax (tau=1e-5)", {**_MPSSL, "converter_mode": "hard_gumbel", "tau": 1e-5}),
        ("Hard Gumbel Softmax (tau=1e-7)", {**_MPSSL, "converter_mode": "hard_gumbel", "tau": 1e-7}),
    )),
    "scr_distances": AblationPreset("scr_distances", "unsupervised loss", (
        ("FixMatch-style (full model)", {**_MPSSL, "unsup_loss": "fixmatch"}),
        ("L1 Distance", {**_MPSSL, "unsup_loss": "scr", "distance": "l1"}),
        ("L2 Distance", {**_MPSSL, "unsup_loss": "scr", "distance": "l2"}),
        ("Smooth L1 Distance", {**_MPSSL, "unsup_loss": "scr", "distance": "smooth_l1"}),
        ("SCR (cosine)", {**_MPSSL, "unsup_loss": "scr", "distance": "cosine"}),
    )),
    "gap_kinds": AblationPreset("gap_kinds", "gap loss form", (
        ("MSE", {**_MPSSL, "gap_kind": "mse"}),
        ("MMD", {**_MPSSL, "gap_kind": "mmd"}),
    )),
    "dataset_sizes": AblationPreset(
        "dataset_sizes", "labeled fraction",
        tuple((m, {"method": m}) for m in DATASET_METHODS),
        tuple((f"{int(round(f * 100))}%", {"labeled_fraction": f}) for f in DATASET_FRACTIONS),
    ),
}


def get_preset(name: str) -> AblationPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown ablation preset {name!r}; choose from {sorted(PRESETS)}") from None


def run_ablation(preset_name: str, base: ExperimentConfig, out_dir: str | Path) -> dict:
    """Run every cell of a preset and write ``table.json`` and ``table.txt``."""
    preset = get_preset(preset_name)
    out_dir = Path(out_dir)
    cells = []
    for row, col, cfg in preset.expand(base):
        cell_dir = out_dir / _slug(row) / (_slug(col) if col else "")
        res = run_experiment(cfg, cell_dir)
        acc = res.summary["test_accuracy"]
        cells.append({"row": row, "column": col, "mean": acc["mean"], "std": acc["std"], "n": acc["n"],
                      "seeds": list(cfg.seeds), "config_hash": cfg.config_hash(),
                      "run_dir": str(cell_dir.relative_to(out_dir)), "failures": res.failures})
    table = {"preset": preset.name, "axis": preset.axis, "base_config_hash": base.config_hash(),
             "rows": [r for r, _ in preset.rows], "columns": [c for c, _ in preset.columns], "cells": cells}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "table.json").write_text(json.dumps(table, sort_keys=True, indent=1) + "\n")
    (out_dir / "table.txt").write_text(format_table(table))
    return table


def format_table(table: dict) -> str:
    cols = table["columns"]
    lookup = {(c["row"], c["column"]): c for c in table["cells"]}
    header = ["Pattern"] + [c or "Test Acc. (%)" for c in cols]
    body = []
    for row in table["rows"]:
        line = [row]
        for col in cols:
            c = lookup[(row, col)]
            line.append(f"{100 * c['mean']:.2f} +- {100 * c['std']:.2f}")
        body.append(line)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    fmt = lambda r: "  ".join(s.ljust(w) for s, w in zip(r, widths)).rstrip()
    lines = [f"# {table['preset']} ({table['axis']}), config {table['base_config_hash']}", fmt(header),
             "  ".join("-" * w for w in widths)] + [fmt(r) for r in body]
    return "\n".join(lines) + "\n"
