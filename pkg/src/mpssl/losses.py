"""Supervised, consistency, feature-gap and pseudo-label losses plus toy augmentations."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from ._common import DTYPE, ConfigurationError, rng, tensor

COSINE_EPS = 1e-12
SMOOTH_L1_BETA = 1.0
DISTANCES = ("cosine", "l1", "l2", "smooth_l1")
GAP_KINDS = ("mse", "mmd")


@dataclass(frozen=True)
class AugmentationPolicy:
    """Differentiable vector augmentation: ``x * jitter * mask + noise``.

    ``jitter`` is a per-sample scale drawn from ``[1 - jitter, 1 + jitter]``,
    ``mask`` zeroes each coordinate with probability ``mask_prob``.
    """

    kind: str = "weak"
    noise_scale: float = 0.0
    mask_prob: float = 0.0
    jitter: float = 0.0

    @property
    def is_identity(self) -> bool:
        return self.noise_scale == 0 and self.mask_prob == 0 and self.jitter == 0


WEAK = AugmentationPolicy("weak", noise_scale=0.1)
STRONG = AugmentationPolicy("strong", noise_scale=0.4, mask_prob=0.2, jitter=0.2)
IDENTITY = AugmentationPolicy("weak")


@dataclass(frozen=True)
class LossWeights:
    lam: float = 1.0
    lambda_gap: float = 10.0

    def __post_init__(self):
        if self.lam < 0 or self.lambda_gap < 0:
            raise ConfigurationError("loss weights must be nonnegative")


def augment(x: torch.Tensor, policy: AugmentationPolicy, seed: int) -> torch.Tensor:
    if policy.is_identity:
        return x
    gen = rng(seed, 80)
    shape = tuple(x.shape)
    out = x
    if policy.jitter > 0:
        scale = gen.uniform(1 - policy.jitter, 1 + policy.jitter, size=shape[:-1] + (1,))
        out = out * tensor(scale)
    if policy.mask_prob > 0:
        keep = gen.random(shape) >= policy.mask_prob
        out = out * tensor(keep.astype(float))
    if policy.noise_scale > 0:
        out = out + policy.noise_scale * tensor(gen.standard_normal(shape))
    return out


def supervised_loss(clf, params, x, y) -> torch.Tensor:
    if len(x) == 0:
        raise ValueError("empty batch")
    return F.cross_entropy(clf.logits(x, params), torch.as_tensor(y, dtype=torch.long))


def feature_distance(fw: torch.Tensor, fs: torch.Tensor, distance: str = "cosine") -> torch.Tensor:
    """Per-sample distance between two feature batches of shape ``(B, d_f)``."""
    if distance == "cosine":
        # 1 - cos(u, v) == |u/|u| - v/|v||^2 / 2; this form is exactly zero for equal directions
        uw = fw / torch.linalg.vector_norm(fw, dim=-1, keepdim=True).clamp_min(COSINE_EPS)
        us = fs / torch.linalg.vector_norm(fs, dim=-1, keepdim=True).clamp_min(COSINE_EPS)
        return 0.5 * ((uw - us) ** 2).sum(-1)
    if distance == "l1":
        return (fw - fs).abs().mean(-1)
    if distance == "l2":
        return ((fw - fs) ** 2).mean(-1)
    if distance == "smooth_l1":
        return F.smooth_l1_loss(fw, fs, reduction="none", beta=SMOOTH_L1_BETA).mean(-1)
    raise ConfigurationError(f"unknown distance {distance!r}")


def scr_loss(clf, params, x_hat, weak: AugmentationPolicy = WEAK, strong: AugmentationPolicy = STRONG,
             distance: str = "cosine", seed: int = 0) -> torch.Tensor:
    """Consistency between extractor features of a weak and a strong view.

    Only the feature extractor is involved, so the head receives no gradient.
    """
    if len(x_hat) == 0:
        raise ValueError("empty batch")
    fw = clf.features(augment(x_hat, weak, seed), params)
    fs = clf.features(augment(x_hat, strong, seed + 1), params)
    return feature_distance(fw, fs, distance).mean()


def median_bandwidth(a: torch.Tensor) -> float:
    a = a.detach()
    d = torch.cdist(a, a)
    off = d[~torch.eye(len(a), dtype=torch.bool)]
    med = float(off.median()) if off.numel() else 0.0
    return med if med > 0 else 1.0


def mmd2_unbiased(a: torch.Tensor, b: torch.Tensor, bandwidth: float) -> torch.Tensor:
    """Unbiased squared MMD with a Gaussian kernel ``exp(-||u-v||^2 / (2 bw^2))``.

    For equal batch sizes the cross term also drops its diagonal (the
    U-statistic), so identical batches give exactly zero.
    """
    m, n = len(a), len(b)
    if m < 2 or n < 2:
        raise ValueError("MMD needs at least two samples per batch")
    gamma = 1.0 / (2.0 * bandwidth**2)

    def k(u, v):
        return torch.exp(-gamma * ((u[:, None, :] - v[None, :, :]) ** 2).sum(-1))

    kaa, kbb, kab = k(a, a), k(b, b), k(a, b)
    term_a = (kaa.sum() - kaa.diagonal().sum()) / (m * (m - 1))
    term_b = (kbb.sum() - kbb.diagonal().sum()) / (n * (n - 1))
    if m == n:
        cross = (kab.sum() - kab.diagonal().sum()) / (m * (m - 1))
    else:
        cross = kab.mean()
    return term_a + term_b - 2.0 * cross


def gap_from_features(fr: torch.Tensor, fs: torch.Tensor, kind: str = "mse", bandwidth: float | None = None):
    if kind == "mse":
        if fr.shape != fs.shape:
            raise ValueError(f"paired gap needs equal batches, got {tuple(fr.shape)} and {tuple(fs.shape)}")
        return ((fr - fs) ** 2).sum(-1).mean()
    if kind == "mmd":
        bw = median_bandwidth(fr) if bandwidth is None else bandwidth
        if bw <= 0:
            raise ConfigurationError("MMD bandwidth must be positive")
        return mmd2_unbiased(fr, fs, bw)
    raise ConfigurationError(f"unknown gap kind {kind!r}")


def gap_loss(clf, params, real, synthetic, kind: str = "mse", bandwidth: float | None = None) -> torch.Tensor:
    """Feature gap between real samples and their synthetic counterparts."""
    return gap_from_features(clf.features(real, params), clf.features(synthetic, params), kind, bandwidth)


def fixmatch_like_loss(clf, params, x_u, threshold: float = 0.95, weak: AugmentationPolicy = WEAK,
                       strong: AugmentationPolicy = STRONG, seed: int = 0):
    """Confidence-gated pseudo-label cross-entropy on the strong view.

    Returns ``(loss, acceptance_rate)``; the loss averages over accepted samples
    and is zero when none pass.
    """
    if not 0 <= threshold <= 1:
        raise ConfigurationError(f"threshold must lie in [0, 1], got {threshold}")
    with torch.no_grad():
        probs = torch.softmax(clf.logits(augment(x_u, weak, seed), params), dim=-1)
        conf, pseudo = probs.max(-1)
        mask = conf >= threshold
    rate = float(mask.to(DTYPE).mean())
    if not mask.any():
        return torch.zeros((), dtype=DTYPE), rate
    logits_s = clf.logits(augment(x_u, strong, seed + 1), params)
    return F.cross_entropy(logits_s[mask], pseudo[mask]), rate


def max_confidence(clf, params, x, weak: AugmentationPolicy = WEAK, seed: int = 0) -> torch.Tensor:
    with torch.no_grad():
        return torch.softmax(clf.logits(augment(x, weak, seed), params), dim=-1).max(-1).values


def adaptive_threshold_update(state: float, confidences, momentum: float) -> tuple[float, float]:
    """EMA of the batch-mean max confidence; the threshold is the EMA itself."""
    if not 0 <= momentum < 1:
        raise ConfigurationError(f"momentum must lie in [0, 1), got {momentum}")
    batch_mean = float(torch.as_tensor(confidences, dtype=DTYPE).mean())
    new = momentum * state + (1.0 - momentum) * batch_mean
    return new, new
