"""Latent meta-optimization: one-step lookahead of the classifier, then an
outer update of the mapper and converter against validation loss plus gap loss.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch

from ._common import ConfigurationError, clone_params
from .latent_search import synthesize_unlabeled
from .losses import STRONG, WEAK, AugmentationPolicy, gap_from_features, scr_loss, supervised_loss

META_MODES = ("second_order", "first_order")
GAP_VARIANTS = ("feature_pairwise", "output_batch_mean")


class MetaGradientError(FloatingPointError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class InnerStepConfig:
    eta: float = 0.01
    lam: float = 1.0
    distance: str = "cosine"
    weak: AugmentationPolicy = WEAK
    strong: AugmentationPolicy = STRONG

    def __post_init__(self):
        if self.eta < 0:
            raise ConfigurationError("inner step size must be nonnegative")


@dataclass
class OuterStepConfig:
    lr: float = 1e-4
    lambda_gap: float = 10.0
    val_weight: float = 1.0
    meta_mode: str = "second_order"
    gap_variant: str = "feature_pairwise"
    gap_kind: str = "mse"
    mmd_bandwidth: float | None = None

    def __post_init__(self):
        if self.lr <= 0 or self.lambda_gap < 0 or self.val_weight < 0:
            raise ConfigurationError("outer step size must be positive and weights nonnegative")
        if self.meta_mode not in META_MODES:
            raise ConfigurationError(f"unknown meta mode {self.meta_mode!r}")
        if self.gap_variant not in GAP_VARIANTS:
            raise ConfigurationError(f"unknown gap variant {self.gap_variant!r}")


@dataclass
class MetaGradientReport:
    outer_loss: float
    val_loss: float
    gap_loss: float
    grad_norm_phi: float
    grad_norm_xi: float
    fd_discrepancy: float | None = None
    grads: dict = field(default_factory=dict, repr=False)


def inner_step(clf, theta, x, y, x_hat, cfg: InnerStepConfig, seed: int = 0, create_graph: bool = True):
    """Return ``theta - eta * grad(sup + lam * scr)`` as a new parameter dict.

    With ``create_graph`` the result stays differentiable with respect to
    whatever ``x_hat`` depends on.  ``lam == 0`` drops the consistency term
    entirely, so the step is exactly the supervised one.
    """
    if len(x) == 0 or len(x_hat) == 0:
        raise ValueError("empty batch")
    loss = supervised_loss(clf, theta, x, y)
    if cfg.lam != 0:
        loss = loss + cfg.lam * scr_loss(clf, theta, x_hat, cfg.weak, cfg.strong, cfg.distance, seed)
    keys = list(theta)
    grads = torch.autograd.grad(loss, [theta[k] for k in keys], create_graph=create_graph, allow_unused=True)
    out = {}
    for k, g in zip(keys, grads):
        if g is None:
            out[k] = theta[k]
            continue
        if not torch.isfinite(g).all():
            raise MetaGradientError(f"non-finite inner gradient for {k}")
        out[k] = theta[k] - cfg.eta * g
    return out


def outer_loss(clf, theta_prime, x_val, y_val, theta, x_real, x_hat, cfg: OuterStepConfig):
    """``val_weight * CE(f_{theta'}(x_val)) + lambda_gap * gap``; returns ``(total, val, gap)``.

    The gap is measured with the current (pre-lookahead) parameters ``theta``.
    """
    if len(x_val) == 0:
        raise ValueError("empty validation batch")
    val = supervised_loss(clf, theta_prime, x_val, y_val)
    if cfg.lambda_gap == 0:
        gap = torch.zeros((), dtype=val.dtype)
    elif cfg.gap_variant == "feature_pairwise":
        gap = gap_from_features(clf.features(x_real, theta), clf.features(x_hat, theta), cfg.gap_kind, cfg.mmd_bandwidth)
    else:
        diff = clf.logits(x_real, theta).mean(0) - clf.logits(x_hat, theta).mean(0)
        gap = (diff**2).sum()
    return cfg.val_weight * val + cfg.lambda_gap * gap, val, gap


def meta_objective(clf, theta, mapper, converter, G, x, y, x_val, y_val, z, noise_seed, aug_seed,
                   inner_cfg: InnerStepConfig, outer_cfg: OuterStepConfig, mapper_params=None, converter_logits=None):
    """Outer objective as a function of the mapper and converter parameters."""
    x_hat = synthesize_unlabeled(mapper, converter, G, z, y, noise_seed, mapper_params, converter_logits)
    theta = clone_params(theta, requires_grad=True)
    if outer_cfg.meta_mode == "second_order":
        theta_prime = inner_step(clf, theta, x, y, x_hat, inner_cfg, aug_seed, create_graph=True)
    else:
        theta_prime = inner_step(clf, theta, x, y, x_hat.detach(), inner_cfg, aug_seed, create_graph=False)
        theta_prime = {k: v.detach() for k, v in theta_prime.items()}
    frozen = {k: v.detach() for k, v in theta.items()}
    return outer_loss(clf, theta_prime, x_val, y_val, frozen, x, x_hat, outer_cfg)


def make_outer_optimizer(mapper, converter, lr: float = 1e-4) -> torch.optim.Optimizer:
    return torch.optim.Adam(mapper.parameters() + converter.parameters(), lr=lr)


def lmo_step(mapper, converter, G, clf, theta, x, y, x_val, y_val, z, noise_seed: int, aug_seed: int,
             inner_cfg: InnerStepConfig, outer_cfg: OuterStepConfig, optimizer=None) -> MetaGradientReport:
    """One outer update of ``(phi, xi)``; ``theta`` and the generator are left untouched."""
    if optimizer is None:
        optimizer = make_outer_optimizer(mapper, converter, outer_cfg.lr)
    total, val, gap = meta_objective(clf, theta, mapper, converter, G, x, y, x_val, y_val, z, noise_seed,
                                     aug_seed, inner_cfg, outer_cfg)
    params = mapper.parameters() + converter.parameters()
    if total.requires_grad:
        grads = torch.autograd.grad(total, params, allow_unused=True)
    else:  # first-order mode without a gap term: every pathway to (phi, xi) is cut
        grads = [None] * len(params)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    n_phi = len(mapper.parameters())
    report = MetaGradientReport(
        outer_loss=float(total.detach()), val_loss=float(val.detach()), gap_loss=float(gap.detach()),
        grad_norm_phi=float(torch.sqrt(sum((g**2).sum() for g in grads[:n_phi]))),
        grad_norm_xi=float(torch.sqrt(sum((g**2).sum() for g in grads[n_phi:]))),
        grads={"phi": dict(zip(mapper.params, grads[:n_phi])), "xi": grads[n_phi]},
    )
    if not all(torch.isfinite(g).all() for g in grads) or not torch.isfinite(total):
        raise MetaGradientError("non-finite meta-gradient", report)
    optimizer.zero_grad(set_to_none=False)
    for p, g in zip(params, grads):
        p.grad = g.clone()
    optimizer.step()
    return report
