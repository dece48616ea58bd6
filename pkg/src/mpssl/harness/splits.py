"""Labeled / unlabeled / validation splitting.

Protocol: the raw pool is split 50:50 into a labeled side and an unlabeled
side; the labeled side is subsampled (stratified) to the requested fraction
with the remainder joining the unlabeled side; the labeled side is then split
9:1 into train and validation.  A test split, when requested, is carved off
before any of this.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .._common import rng


@dataclass(frozen=True, eq=False)
class Dataset:
    x: torch.Tensor
    y: torch.Tensor | None = None
    index: np.ndarray | None = None  # positions in the raw pool

    def __len__(self) -> int:
        return self.x.shape[0]


class SplitError(ValueError):
    pass


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def split_sizes(n: int, labeled_fraction: float) -> tuple[int, int, int]:
    """``(|D|, |D_val|, |D_u|)`` for a pool of ``n`` samples."""
    n_labeled_side = n // 2
    n_labeled = _round_half_up(labeled_fraction * n_labeled_side)
    n_val = _round_half_up(n_labeled / 10)
    return n_labeled - n_val, n_val, n - n_labeled


def _stratified_take(idx: np.ndarray, labels: np.ndarray, k: int, gen: np.random.Generator) -> np.ndarray:
    """Pick exactly ``k`` of ``idx``, proportionally per class (largest remainder)."""
    classes = np.unique(labels[idx])
    groups = [gen.permutation(idx[labels[idx] == c]) for c in classes]
    sizes = np.array([len(g) for g in groups], dtype=float)
    quota = sizes * k / sizes.sum()
    take = np.floor(quota).astype(int)
    order = np.argsort(-(quota - take), kind="stable")
    for j in order[: k - take.sum()]:
        take[j] += 1
    # keep every class alive when the budget allows it
    if k >= len(classes):
        for j in np.flatnonzero(take == 0):
            donor = int(np.argmax(take))
            take[donor] -= 1
            take[j] += 1
    return np.sort(np.concatenate([g[:t] for g, t in zip(groups, take)]))


def split_dataset(x, y, labeled_fraction: float, seed: int, test_size: int = 0):
    """Return ``(D, D_u, D_val, D_test)`` as :class:`Dataset` objects.

    ``D_u`` carries no labels.  ``D_test`` is empty unless ``test_size > 0``.
    Raises :class:`SplitError` when some class does not survive into ``D``.
    """
    if not 0 < labeled_fraction <= 1:
        raise SplitError(f"labeled_fraction must be in (0, 1], got {labeled_fraction}")
    x = torch.as_tensor(x)
    labels = np.asarray(y)
    n_total = len(labels)
    gen = rng(seed, 40)
    perm = gen.permutation(n_total)
    test_idx, pool = np.sort(perm[:test_size]), perm[test_size:]
    n = len(pool)
    n_train, n_val, _ = split_sizes(n, labeled_fraction)
    labeled_side, unlabeled_side = pool[: n // 2], pool[n // 2 :]
    labeled = _stratified_take(labeled_side, labels, n_train + n_val, gen)
    rest = np.setdiff1d(labeled_side, labeled)
    unlabeled = np.sort(np.concatenate([unlabeled_side, rest]))
    val = _stratified_take(labeled, labels, n_val, gen) if n_val else labeled[:0]
    train = np.setdiff1d(labeled, val)
    missing = np.setdiff1d(np.unique(labels), labels[train])
    if len(missing):
        raise SplitError(f"classes {missing.tolist()} missing from the labeled train split; use a larger raw pool")

    yt = torch.as_tensor(labels)

    def make(idx, with_labels=True):
        t = torch.as_tensor(idx, dtype=torch.long)
        return Dataset(x[t], yt[t] if with_labels else None, idx)

    return make(train), make(unlabeled, with_labels=False), make(val), make(test_idx)
