"""Per-epoch metrics records and their line-delimited JSON persistence."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

METRICS_SCHEMA_VERSION = 1


class MetricsError(ValueError):
    pass


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    test_accuracy: float
    scr_loss: float | None = None
    gap_loss: float | None = None
    meta_grad_norm_phi: float | None = None
    meta_grad_norm_xi: float | None = None
    acceptance_rate: float | None = None
    lr: float | None = None
    wall_clock: float = 0.0

    def to_json(self, **stamp) -> str:
        row = {"schema_version": METRICS_SCHEMA_VERSION, **stamp, **asdict(self)}
        return json.dumps(_clean(row), sort_keys=True)


# wall-clock fields are excluded from determinism comparisons
VOLATILE_FIELDS = ("wall_clock",)
FIELD_TYPES = {f.name: f.type for f in fields(MetricsRecord)}
REQUIRED = ("epoch", "train_loss", "val_loss", "val_accuracy", "test_accuracy", "wall_clock")


def _clean(row: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in row.items()}


def validate_record(row: dict) -> None:
    """Check one parsed metrics line against the schema; raises :class:`MetricsError`."""
    if row.get("schema_version") != METRICS_SCHEMA_VERSION:
        raise MetricsError(f"unsupported metrics schema version {row.get('schema_version')!r}")
    for key in ("config_hash", "seed"):
        if key not in row:
            raise MetricsError(f"metrics record lacks {key!r}")
    for key in REQUIRED:
        if not isinstance(row.get(key), (int, float)) or isinstance(row.get(key), bool):
            raise MetricsError(f"metrics field {key!r} missing or not numeric")
    for key in ("val_accuracy", "test_accuracy", "acceptance_rate"):
        v = row.get(key)
        if v is not None and not 0.0 <= v <= 1.0:
            raise MetricsError(f"{key}={v} outside [0, 1]")
    unknown = set(row) - set(FIELD_TYPES) - {"schema_version", "config_hash", "seed", "method"}
    if unknown:
        raise MetricsError(f"unknown metrics fields {sorted(unknown)}")


def write_metrics(path: str | Path, records, **stamp) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json(**stamp) + "\n")
    return path


def read_metrics(path: str | Path, validate: bool = True) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise MetricsError(f"{path}: metrics file missing")
    rows = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MetricsError(f"{path}:{n}: corrupt metrics line ({exc})") from exc
            if validate:
                try:
                    validate_record(row)
                except MetricsError as exc:
                    raise MetricsError(f"{path}:{n}: {exc}") from exc
            rows.append(row)
    if not rows:
        raise MetricsError(f"{path}: metrics file has no records")
    epochs = [r["epoch"] for r in rows]
    if any(b <= a for a, b in zip(epochs, epochs[1:])):
        raise MetricsError(f"{path}: epochs not strictly increasing")
    return rows


def strip_volatile(rows: list[dict]) -> list[dict]:
    return [{k: v for k, v in r.items() if k not in VOLATILE_FIELDS} for r in rows]
