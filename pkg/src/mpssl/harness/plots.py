"""Static plot emission from metrics files and ablation tables."""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import MetricsError, read_metrics  # noqa: E402

# no Software/timestamp chunks, so re-emission is byte-stable
_PNG_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_run_curves(run_dir: Path, out_dir: Path, name: str | None = None) -> Path:
    """Loss and accuracy versus epoch for every seed of one experiment directory."""
    name = name or run_dir.name
    seed_dirs = sorted(p for p in run_dir.glob("seed_*") if p.is_dir())
    if not seed_dirs:
        raise MetricsError(f"{run_dir}: no seed_*/metrics.jsonl files")
    metric_files = [p / "metrics.jsonl" for p in seed_dirs]
    for path in metric_files:
        if not path.exists():
            raise MetricsError(f"{path}: metrics file missing")
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 4))
    for path in metric_files:
        rows = read_metrics(path)
        ep = [r["epoch"] for r in rows]
        label = path.parent.name
        ax_loss.plot(ep, [r["train_loss"] for r in rows], label=f"{label} train")
        ax_loss.plot(ep, [r["val_loss"] for r in rows], "--", label=f"{label} val")
        ax_acc.plot(ep, [r["test_accuracy"] for r in rows], label=f"{label} test")
        ax_acc.plot(ep, [r["val_accuracy"] for r in rows], ":", label=f"{label} val")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.legend(fontsize=6)
    fig.suptitle(name)
    fig.tight_layout()
    return _save(fig, out_dir / f"{name}_curves.png")


def dataset_size_curves(table: dict) -> dict[str, tuple[list, list, list]]:
    """``method -> (labeled %, mean acc %, std %)`` from a ``dataset_sizes`` table."""
    cols = table["columns"]
    xs = [float(c.rstrip("%")) for c in cols]
    lookup = {(c["row"], c["column"]): c for c in table["cells"]}
    return {row: (xs, [100 * lookup[(row, c)]["mean"] for c in cols], [100 * lookup[(row, c)]["std"] for c in cols])
            for row in table["rows"]}


def _read_table(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MetricsError(f"{path}: unreadable ablation table ({exc})") from exc


def plot_dataset_sizes(table_path: Path, out_dir: Path) -> Path:
    """Accuracy versus labeled fraction, one curve per method."""
    curves = dataset_size_curves(_read_table(table_path))
    fig, ax = plt.subplots(figsize=(5, 4))
    for row, (xs, means, stds) in curves.items():
        ax.errorbar(xs, means, yerr=stds, marker="o", capsize=3, label=row)
    ax.set_xlabel("labeled dataset size (%)")
    ax.set_ylabel("test accuracy (%)")
    ax.set_xticks(xs)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, out_dir / "dataset_sizes.png")


def emit_plots(run_dirs, out_dir: str | Path) -> list[Path]:
    """Plot every given directory: experiment dirs get epoch curves, ablation dirs
    with a ``dataset_sizes`` table also get the labeled-fraction curve."""
    out_dir = Path(out_dir)
    written = []
    for d in map(Path, run_dirs):
        table = d / "table.json"
        if table.exists():
            if _read_table(table).get("preset") == "dataset_sizes":
                written.append(plot_dataset_sizes(table, out_dir))
            for sub in sorted(p.parent for p in d.glob("**/summary.json")):
                written.append(plot_run_curves(sub, out_dir / d.name, "-".join(sub.relative_to(d).parts)))
        else:
            written.append(plot_run_curves(d, out_dir))
    return written
