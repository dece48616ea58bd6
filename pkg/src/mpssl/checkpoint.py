"""Versioned checkpoint files.

Every file is a ``torch.save`` archive holding a header (schema version, kind,
seed, optional config hash) next to the payload.
"""
from __future__ import annotations

from pathlib import Path

import torch

SCHEMA_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save(path: str | Path, kind: str, payload: dict, seed: int, config_hash: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"schema_version": SCHEMA_VERSION, "kind": kind, "seed": int(seed), "config_hash": config_hash}
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save({"header": header, "payload": payload}, tmp)
    tmp.replace(path)
    return path


def read_header(path: str | Path) -> dict:
    return _read(path)["header"]


def load(path: str | Path, kind: str | None = None) -> dict:
    blob = _read(path)
    header = blob["header"]
    if kind is not None and header.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind!r} checkpoint, found {header.get('kind')!r}")
    return blob["payload"]


def _read(path) -> dict:
    try:
        blob = torch.load(Path(path), weights_only=True)
    except Exception as exc:  # torch raises several unrelated types for bad files
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    header = blob.get("header") if isinstance(blob, dict) else None
    if not header or header.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointError(f"{path}: missing header or unsupported schema version")
    return blob
