"""Training loops for the synthetic-unlabeled method and every baseline.

All methods share the classifier, optimizer, schedule and random streams, so
differences between runs with the same seed come from the method alone.  The
labeled-batch stream in particular is consumed identically by every method.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint
from ._common import DTYPE, ConfigurationError, clone_params, rng, tensor
from .classifier import Classifier
from .foundation import FoundationClassifier, FoundationGenerator, TargetTask, generate, sample_latent
from .harness.metrics import MetricsRecord
from .latent_search import ConditionalMapper, LabelConverter, synthesize_unlabeled
from .lmo import InnerStepConfig, MetaGradientError, OuterStepConfig, lmo_step, make_outer_optimizer
from .losses import (DISTANCES, STRONG, WEAK, adaptive_threshold_update, fixmatch_like_loss, max_confidence,
                     scr_loss, supervised_loss)

log = logging.getLogger(__name__)

METHODS = ("base", "mpssl", "naive_gssl", "pssl", "fixmatch_oracle", "adaptive_oracle", "transfer_ssl")
GSSL_METHODS = ("mpssl", "naive_gssl", "pssl")
ORACLE_METHODS = ("fixmatch_oracle", "adaptive_oracle")
UNSUP_LOSSES = ("auto", "scr", "fixmatch", "adaptive")
LAMBDA_GRID = tuple(round(0.1 * k, 1) for k in range(1, 11))


class TrainingError(RuntimeError):
    def __init__(self, message, last_good_epoch=None, last_good_params=None):
        super().__init__(message)
        self.last_good_epoch = last_good_epoch
        self.last_good_params = last_good_params


@dataclass
class TrainLoopConfig:
    method: str = "mpssl"
    epochs: int = 60
    steps_per_epoch: int = 10
    batch_size: int = 64
    val_batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    milestones: tuple[int, ...] = (20, 40, 52)
    lr_decay: float = 0.1
    lam: float = 1.0
    hidden: tuple[int, ...] = (64, 32)
    seed: int = 0
    unsup_loss: str = "auto"
    distance: str = "cosine"
    use_lmo: bool = True
    mapper_conditional: bool = True
    mapper_hidden: int = 64
    embed_dim: int = 8
    converter_mode: str = "hard_gumbel"
    tau: float = 1e-5
    threshold: float = 0.95
    adaptive_momentum: float = 0.99
    transfer_pool_size: int = 2000

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}")
        if self.batch_size < 1 or self.val_batch_size < 1 or self.epochs < 1 or self.steps_per_epoch < 1:
            raise ConfigurationError("batch sizes, epochs and steps_per_epoch must be >= 1")
        if self.unsup_loss not in UNSUP_LOSSES:
            raise ConfigurationError(f"unknown unsupervised loss {self.unsup_loss!r}")
        if self.distance not in DISTANCES:
            raise ConfigurationError(f"unknown distance {self.distance!r}")
        if self.lam < 0:
            raise ConfigurationError("lam must be nonnegative")
        self.milestones = tuple(self.milestones)
        self.hidden = tuple(self.hidden)

    @property
    def resolved_unsup_loss(self) -> str:
        if self.unsup_loss != "auto":
            return self.unsup_loss
        if self.method == "mpssl":
            return "scr"
        return "adaptive" if self.method == "adaptive_oracle" else "fixmatch"


@dataclass
class TrainedRun:
    final_params: dict
    best_params: dict
    best_epoch: int
    metrics: list[MetricsRecord]
    config: TrainLoopConfig
    wall_clock: float
    test_accuracy: float  # of the best-validation model
    final_test_accuracy: float
    unlabeled_reads: int
    classifier: Classifier = field(repr=False, default=None)
    mapper: ConditionalMapper | None = field(repr=False, default=None)
    converter: LabelConverter | None = field(repr=False, default=None)
    generator_unchanged: bool = True


def evaluate(clf: Classifier, params, dataset) -> tuple[float, float]:
    """Top-1 accuracy and mean cross-entropy; parameters are not touched."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    with torch.no_grad():
        logits = clf.logits(dataset.x, params)
        y = torch.as_tensor(dataset.y, dtype=torch.long)
        acc = float((logits.argmax(-1) == y).to(DTYPE).mean())
        loss = float(F.cross_entropy(logits, y))
    return acc, loss


def pssl_label(f_F: FoundationClassifier, x) -> torch.Tensor:
    """Soft foundation label for a target sample, from the frozen foundation classifier."""
    return f_F.predict_proba(x)


def lr_at(cfg: TrainLoopConfig, epoch: int) -> float:
    """Learning rate in effect during ``epoch`` (0-based)."""
    return cfg.lr * cfg.lr_decay ** sum(1 for m in cfg.milestones if epoch >= m)


def _batch(gen: np.random.Generator, n: int, size: int) -> np.ndarray:
    return gen.permutation(n)[: min(size, n)]


def _uniform_labels(gen, n, k):
    return torch.as_tensor(gen.integers(0, k, size=n))


def train(task: TargetTask, cfg: TrainLoopConfig, outer_cfg: OuterStepConfig | None = None,
          G: FoundationGenerator | None = None, foundation_classifier: FoundationClassifier | None = None,
          transfer_pool: torch.Tensor | None = None, checkpoint_path: str | Path | None = None,
          config_hash: str | None = None) -> TrainedRun:
    """Run one training job for ``cfg.method``."""
    method = cfg.method
    outer_cfg = outer_cfg or OuterStepConfig()
    if method in GSSL_METHODS + ("transfer_ssl",) and G is None:
        raise ConfigurationError(f"method {method!r} needs a foundation generator")
    if method == "pssl" and foundation_classifier is None:
        raise ConfigurationError("pssl needs a pretrained foundation classifier")
    if method in ORACLE_METHODS and len(task.unlabeled) == 0:
        raise ConfigurationError(f"method {method!r} needs a real unlabeled split")
    unsup = cfg.resolved_unsup_loss
    t0 = time.perf_counter()

    clf = Classifier(task.data_dim, task.num_classes, cfg.hidden, seed=cfg.seed).fit_normalization(task.train.x)
    opt = torch.optim.SGD(clf.parameters(), lr=cfg.lr, momentum=cfg.momentum, nesterov=cfg.momentum > 0)
    data_rng, latent_rng, aug_rng, extra_rng = (rng(cfg.seed, 100 + i) for i in range(4))

    mapper = converter = outer_opt = None
    digest = G.checksum() if G is not None else None
    if method == "mpssl" and cfg.use_lmo:
        mapper = ConditionalMapper(G.latent_dim, task.num_classes, cfg.embed_dim, cfg.mapper_hidden,
                                   conditional=cfg.mapper_conditional, seed=cfg.seed)
        converter = LabelConverter(task.num_classes, G.num_classes, cfg.tau, cfg.converter_mode, seed=cfg.seed)
        outer_opt = make_outer_optimizer(mapper, converter, outer_cfg.lr)
    u_x = None
    if method in ORACLE_METHODS:
        u_x = task.unlabeled.read()
    elif method == "transfer_ssl":
        if transfer_pool is None:
            gen = rng(cfg.seed, 110)
            labels = gen.integers(0, G.num_classes, size=cfg.transfer_pool_size)
            transfer_pool = G.domain.sample(labels, seed=int(gen.integers(2**31)))
        u_x = transfer_pool
    threshold_state = 1.0 / task.num_classes

    n_train, n_val = len(task.train), len(task.val)
    records: list[MetricsRecord] = []
    best = (-1.0, float("inf"))
    best_params, best_epoch = clf.snapshot(), 0
    last_good = clf.snapshot()
    for epoch in range(cfg.epochs):
        lr = lr_at(cfg, epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        sums = {"train": 0.0, "scr": 0.0, "gap": 0.0, "phi": 0.0, "xi": 0.0, "acc": 0.0}
        counts = {"scr": 0, "gap": 0, "acc": 0}
        for _ in range(cfg.steps_per_epoch):
            idx = torch.as_tensor(_batch(data_rng, n_train, cfg.batch_size))
            x, y = task.train.x[idx], task.train.y[idx]
            latent_seed, noise_seed = (int(s) for s in latent_rng.integers(0, 2**31, size=2))
            aug_seed = int(aug_rng.integers(0, 2**31))
            z = sample_latent(len(idx), G.latent_dim, latent_seed) if G is not None else None

            if mapper is not None:
                vidx = torch.as_tensor(_batch(extra_rng, n_val, cfg.val_batch_size))
                inner = InnerStepConfig(eta=lr, lam=cfg.lam, distance=cfg.distance)
                try:
                    rep = lmo_step(mapper, converter, G, clf, clf.params, x, y, task.val.x[vidx], task.val.y[vidx],
                                   z, noise_seed, aug_seed, inner, outer_cfg, outer_opt)
                except MetaGradientError as exc:
                    raise TrainingError(f"epoch {epoch}: {exc}", epoch - 1, last_good) from exc
                sums["gap"] += rep.gap_loss
                sums["phi"] += rep.grad_norm_phi
                sums["xi"] += rep.grad_norm_xi
                counts["gap"] += 1

            x_u = _unlabeled_batch(method, cfg, G, mapper, converter, foundation_classifier, u_x, x, y, z,
                                   noise_seed + 1, extra_rng, len(idx))
            loss = supervised_loss(clf, clf.params, x, y)
            if x_u is not None and cfg.lam != 0:
                if unsup == "scr":
                    u = scr_loss(clf, clf.params, x_u, WEAK, STRONG, cfg.distance, aug_seed)
                    sums["scr"] += float(u.detach())
                    counts["scr"] += 1
                else:
                    thr = cfg.threshold
                    if unsup == "adaptive":
                        conf = max_confidence(clf, clf.params, x_u, WEAK, aug_seed)
                        threshold_state, thr = adaptive_threshold_update(threshold_state, conf, cfg.adaptive_momentum)
                        thr = min(max(thr, 1e-6), 1.0)
                    u, rate = fixmatch_like_loss(clf, clf.params, x_u, thr, WEAK, STRONG, aug_seed)
                    sums["acc"] += rate
                    counts["acc"] += 1
                loss = loss + cfg.lam * u
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}", epoch - 1, last_good)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums["train"] += float(loss.detach())

        val_acc, val_loss = evaluate(clf, None, task.val) if n_val else (float("nan"), float("nan"))
        test_acc, _ = evaluate(clf, None, task.test)
        rec = MetricsRecord(
            epoch=epoch, train_loss=sums["train"] / cfg.steps_per_epoch, val_loss=val_loss, val_accuracy=val_acc,
            test_accuracy=test_acc,
            scr_loss=sums["scr"] / counts["scr"] if counts["scr"] else None,
            gap_loss=sums["gap"] / counts["gap"] if counts["gap"] else None,
            meta_grad_norm_phi=sums["phi"] / counts["gap"] if counts["gap"] else None,
            meta_grad_norm_xi=sums["xi"] / counts["gap"] if counts["gap"] else None,
            acceptance_rate=sums["acc"] / counts["acc"] if counts["acc"] else None,
            lr=lr, wall_clock=time.perf_counter() - t0,
        )
        records.append(rec)
        last_good = clf.snapshot()
        if n_val and (val_acc, -val_loss) > (best[0], -best[1]):
            best, best_params, best_epoch = (val_acc, val_loss), clf.snapshot(), epoch
        if checkpoint_path is not None:
            save_run_checkpoint(checkpoint_path, clf, mapper, converter, opt, outer_opt, epoch, cfg.seed, config_hash)

    if not n_val:
        best_params, best_epoch = clf.snapshot(), cfg.epochs - 1
    best_acc, _ = evaluate(clf, best_params, task.test)
    return TrainedRun(
        final_params=clf.snapshot(), best_params=best_params, best_epoch=best_epoch, metrics=records, config=cfg,
        wall_clock=time.perf_counter() - t0, test_accuracy=best_acc, final_test_accuracy=records[-1].test_accuracy,
        unlabeled_reads=task.unlabeled.reads, classifier=clf, mapper=mapper, converter=converter,
        generator_unchanged=G is None or G.checksum() == digest,
    )


def _unlabeled_batch(method, cfg, G, mapper, converter, f_F, u_x, x, y, z, noise_seed, gen, n):
    """Unlabeled batch for the classifier update, or None for the base model."""
    with torch.no_grad():
        if method == "base":
            return None
        if method == "mpssl":
            if mapper is None:  # ablation without latent search: plain random draws from the generator
                return generate(G, z, _uniform_labels(gen, n, G.num_classes))
            return synthesize_unlabeled(mapper, converter, G, z, y, noise_seed)
        if method == "naive_gssl":
            return generate(G, z, _uniform_labels(gen, n, G.num_classes))
        if method == "pssl":
            return generate(G, z, pssl_label(f_F, x))
        idx = torch.as_tensor(_batch(gen, u_x.shape[0], cfg.batch_size))
        return u_x[idx]


def train_mpssl(task, G, cfg: TrainLoopConfig, outer_cfg: OuterStepConfig | None = None, **kw) -> TrainedRun:
    if cfg.method != "mpssl":
        cfg = replace(cfg, method="mpssl")
    return train(task, cfg, outer_cfg, G=G, **kw)


def train_baseline(task, cfg: TrainLoopConfig, G=None, foundation_classifier=None, transfer_pool=None,
                   **kw) -> TrainedRun:
    if cfg.method == "mpssl":
        raise ConfigurationError("use train_mpssl for the mpssl method")
    return train(task, cfg, G=G, foundation_classifier=foundation_classifier, transfer_pool=transfer_pool, **kw)


def select_lambda(task, cfg: TrainLoopConfig, grid=LAMBDA_GRID, **kw) -> tuple[float, dict[float, float]]:
    """Grid-search ``lam`` on the validation split; returns the best value and all scores."""
    scores = {}
    for lam in grid:
        run = train(task, replace(cfg, lam=lam), **kw)
        acc, loss = evaluate(run.classifier, run.best_params, task.val)
        scores[lam] = (acc, -loss)
    best = max(scores, key=lambda k: scores[k])
    return best, {k: v[0] for k, v in scores.items()}


def save_run_checkpoint(path, clf, mapper, converter, opt, outer_opt, epoch, seed, config_hash=None):
    payload = {
        "classifier": clf.state_dict(),
        "mapper": mapper.state_dict() if mapper is not None else None,
        "converter": converter.state_dict() if converter is not None else None,
        "optimizer": opt.state_dict(),
        "outer_optimizer": outer_opt.state_dict() if outer_opt is not None else None,
        "epoch": int(epoch),
    }
    return checkpoint.save(path, "run", payload, seed=seed, config_hash=config_hash)


def load_run_checkpoint(path) -> dict:
    """Returns the payload with ``classifier``/``mapper``/``converter`` rebuilt as objects."""
    payload = checkpoint.load(path, "run")
    payload["classifier"] = Classifier.from_state_dict(payload["classifier"])
    if payload["mapper"] is not None:
        payload["mapper"] = ConditionalMapper.from_state_dict(payload["mapper"])
    if payload["converter"] is not None:
        payload["converter"] = LabelConverter.from_state_dict(payload["converter"])
    return payload


def config_dict(cfg) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()}
