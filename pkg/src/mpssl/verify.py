"""Independent oracle checks: finite differences, Monte Carlo, closed forms.

Every check returns a :class:`CheckResult`; ``run_checks`` runs a named
subset and is what ``mpssl verify`` calls.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import torch

from ._common import DTYPE, clone_params, rng, tensor
from .classifier import Classifier
from .foundation import FoundationSpec, generate, make_foundation_domain, make_generator, sample_latent
from .latent_search import (ConditionalMapper, LabelConverter, convert_label_hard, convert_label_soft,
                            synthesize_unlabeled)
from .lmo import InnerStepConfig, OuterStepConfig, lmo_step, make_outer_optimizer, meta_objective
from .losses import (DISTANCES, IDENTITY, feature_distance, fixmatch_like_loss, gap_loss, median_bandwidth,
                     scr_loss, supervised_loss)

FD_STEP = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail} (value {self.value:.3g}, threshold {self.threshold:.3g}, {self.seconds:.1f}s)"


def central_difference(fn, tensors: list[torch.Tensor], h: float = FD_STEP) -> list[torch.Tensor]:
    """Central finite-difference gradient of scalar ``fn()`` w.r.t. each tensor, perturbed in place."""
    out = []
    for t in tensors:
        g = torch.zeros_like(t)
        flat, gflat = t.data.view(-1), g.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = float(fn().detach())
            flat[i] = orig - h
            down = float(fn().detach())
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def relative_error(a: list[torch.Tensor], b: list[torch.Tensor]) -> float:
    """``||a - b|| / max(||a||, ||b||)`` over the concatenation of both gradient lists."""
    fa = torch.cat([t.reshape(-1) for t in a])
    fb = torch.cat([t.reshape(-1) for t in b])
    scale = max(float(fa.norm()), float(fb.norm()))
    if scale == 0.0:
        return 0.0
    return float((fa - fb).norm()) / scale


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------- loss gradients

def _small_instance(seed: int):
    gen = rng(seed, 900)
    d = int(gen.integers(2, 6))
    k = int(gen.integers(2, 4))
    f = int(gen.integers(2, 9))
    b = int(gen.integers(2, 5))
    clf = Classifier(d, k, hidden=(int(gen.integers(2, 7)),), feature_dim=f, seed=seed)
    theta = clf.snapshot()
    x = tensor(gen.normal(size=(b, d)))
    x2 = tensor(gen.normal(size=(b, d)))
    y = torch.as_tensor(gen.integers(0, k, size=b))
    return clf, theta, x, x2, y


def _loss_fns(clf, x, x2, y, seed):
    bw = median_bandwidth(clf.features(x).detach())
    fns = {"supervised": lambda p, a, b: supervised_loss(clf, p, a, y)}
    for dist in DISTANCES:
        fns[f"scr_{dist}"] = lambda p, a, b, dist=dist: scr_loss(clf, p, a, distance=dist, seed=seed)
    fns["gap_mse"] = lambda p, a, b: gap_loss(clf, p, a, b, "mse")
    # the median-heuristic bandwidth is a detached statistic, so it is pinned for the difference quotient
    fns["gap_mmd"] = lambda p, a, b: gap_loss(clf, p, a, b, "mmd", bandwidth=bw)
    fns["fixmatch"] = lambda p, a, b: fixmatch_like_loss(clf, p, a, threshold=1.0 / clf.num_classes, seed=seed)[0]
    return fns


@_timed
def check_loss_gradients(trials: int = 20, tol: float = 1e-4, seed: int = 0) -> CheckResult:
    """Autograd vs central differences for every loss, w.r.t. classifier params and inputs."""
    worst: dict[str, float] = {}
    for t in range(trials):
        clf, theta, x, x2, y = _small_instance(seed * 1000 + t)
        for name, fn in _loss_fns(clf, x, x2, y, t).items():
            p = clone_params(theta, requires_grad=True)
            a, b = x.clone().requires_grad_(True), x2.clone().requires_grad_(True)
            leaves = list(p.values()) + [a, b]
            loss = fn(p, a, b)
            ad = torch.autograd.grad(loss, leaves, allow_unused=True)
            ad = [torch.zeros_like(v) if g is None else g for v, g in zip(leaves, ad)]
            fd = central_difference(lambda: fn(p, a, b), leaves)
            worst[name] = max(worst.get(name, 0.0), relative_error(ad, fd))
    value = max(worst.values())
    detail = ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
    return CheckResult("loss_gradients", value <= tol, value, tol, f"{trials} trials; worst rel. err. {detail}")


# ---------------------------------------------------------------- meta-gradient

def tiny_meta_instance(seed: int, converter_mode: str = "soft_gumbel"):
    """A random LMO problem with at most 200 parameters in total."""
    gen = rng(seed, 901)
    spec = FoundationSpec(num_classes=3, data_dim=3, latent_dim=2, seed=seed, separation=2.0)
    G = make_generator(make_foundation_domain(spec))
    k, b = 2, 3
    mapper = ConditionalMapper(2, k, embed_dim=2, hidden=4, seed=seed)
    # perturb away from the identity so every weight carries gradient
    with torch.no_grad():
        for v in mapper.params.values():
            v.add_(tensor(gen.normal(scale=0.1, size=tuple(v.shape))))
    converter = LabelConverter(k, 3, tau=1.0, mode=converter_mode, seed=seed, init_scale=0.5)
    clf = Classifier(3, k, hidden=(4,), feature_dim=3, seed=seed)
    theta = clf.snapshot()
    y = torch.as_tensor(gen.integers(0, k, size=b))
    x = generate(G, sample_latent(b, 2, seed + 1), y) + tensor(gen.normal(scale=0.3, size=(b, 3)))
    x_val = generate(G, sample_latent(b, 2, seed + 2), y)
    z = sample_latent(b, 2, seed + 3)
    n_params = (sum(v.numel() for v in mapper.params.values()) + converter.logits.numel()
                + sum(v.numel() for v in theta.values()))
    return dict(G=G, mapper=mapper, converter=converter, clf=clf, theta=theta, x=x, y=y, x_val=x_val,
                y_val=y, z=z, n_params=n_params)


@_timed
def check_meta_gradient(instances: int = 10, tol: float = 1e-3, seed: int = 0, gap_kind: str = "mse") -> CheckResult:
    """Second-order lmo_step gradient w.r.t. (phi, xi) vs central differences of the outer loss.

    The converter runs in soft Gumbel mode: the hard straight-through estimator
    is by design not the derivative of its own (piecewise constant) forward pass.
    """
    worst, max_params = 0.0, 0
    inner = InnerStepConfig(eta=0.1, lam=1.0)
    outer = OuterStepConfig(lr=1e-4, lambda_gap=10.0, gap_kind=gap_kind, mmd_bandwidth=1.0)
    for i in range(instances):
        inst = tiny_meta_instance(seed * 1000 + i)
        mapper, conv = inst["mapper"], inst["converter"]
        max_params = max(max_params, inst["n_params"])
        phi0 = clone_params(mapper.params, requires_grad=False)
        xi0 = conv.logits.detach().clone()
        args = (inst["clf"], inst["theta"], mapper, conv, inst["G"], inst["x"], inst["y"], inst["x_val"],
                inst["y_val"], inst["z"], 7 + i, 11 + i, inner, outer)
        report = lmo_step(mapper, conv, inst["G"], *args[:2], *args[5:],
                          optimizer=make_outer_optimizer(mapper, conv, outer.lr))
        ad = [report.grads["phi"][k] for k in phi0] + [report.grads["xi"]]
        phi, xi = clone_params(phi0), xi0.clone()
        fd = central_difference(
            lambda: meta_objective(*args, mapper_params=phi, converter_logits=xi)[0],
            list(phi.values()) + [xi])
        worst = max(worst, relative_error(ad, fd))
    return CheckResult("meta_gradient", worst <= tol, worst, tol,
                       f"{instances} instances, <= {max_params} params each, {gap_kind} gap")


# ---------------------------------------------------------------- Gumbel-softmax

@_timed
def check_gumbel_frequencies(draws: int = 100_000, logits=(2.0, 1.0, 0.0), seed: int = 0,
                             z_max: float = 3.0) -> CheckResult:
    """Hard-converter class frequencies vs softmax(logits) in standard errors (Gumbel-max property)."""
    conv = LabelConverter(1, len(logits), tau=1.0, mode="hard_gumbel", logits=tensor([logits]))
    with torch.no_grad():
        hard = convert_label_hard(conv, torch.zeros(draws, dtype=torch.long), seed)
    freq = hard.mean(0).numpy()
    p = torch.softmax(tensor(logits), 0).numpy()
    se = np.sqrt(p * (1 - p) / draws)
    z = np.abs(freq - p) / se
    detail = "freq " + ", ".join(f"{f:.4f}" for f in freq) + " vs " + ", ".join(f"{q:.4f}" for q in p)
    return CheckResult("gumbel_frequencies", bool((z <= z_max).all()), float(z.max()), z_max, detail)


@_timed
def check_straight_through(trials: int = 10, seed: int = 0) -> CheckResult:
    """Gradient through the hard converter equals the gradient with the soft vector substituted, bitwise."""
    mismatches = 0
    for t in range(trials):
        gen = rng(seed, 902, t)
        k, kf, b = 3, 5, 6
        G = make_generator(make_foundation_domain(FoundationSpec(kf, 4, 2, seed=t)))
        logits = tensor(gen.normal(size=(k, kf))).requires_grad_(True)
        y = torch.as_tensor(gen.integers(0, k, size=b))
        z = tensor(gen.normal(size=(b, 2)))
        target = tensor(gen.normal(size=(b, 4)))
        conv = LabelConverter(k, kf, tau=float(gen.choice([1e-1, 1.0, 3.0])), mode="hard_gumbel")

        def downstream(label):
            return ((generate(G, z, label) - target) ** 2).sum()

        hard = convert_label_hard(conv, y, t, logits)
        (g_hard,) = torch.autograd.grad(downstream(hard), logits)
        soft = convert_label_soft(conv, y, t, logits)
        # backward through the soft vector, but with the hard forward value feeding the downstream graph
        out = downstream(hard.detach() + (soft - soft.detach()))
        (g_soft,) = torch.autograd.grad(out, logits)
        mismatches += int(not torch.equal(g_hard, g_soft))
    return CheckResult("straight_through", mismatches == 0, float(mismatches), 0.0,
                       f"{trials} trials, bitwise gradient comparison")


# ---------------------------------------------------------------- SCR properties

@_timed
def check_scr_properties(trials: int = 20, seed: int = 0, tol: float = 1e-6) -> CheckResult:
    """Cosine SCR bounds, identical-branch zero, positive-scale invariance, zero head gradient."""
    failures = []
    worst_scale = 0.0
    for t in range(trials):
        gen = rng(seed, 903, t)
        clf, theta, x, _, _ = _small_instance(seed * 1000 + t)
        p = clone_params(theta, requires_grad=True)
        loss = scr_loss(clf, p, x * float(gen.uniform(0.1, 20)), seed=t)
        if not 0.0 <= float(loss.detach()) <= 2.0:
            failures.append(f"bounds t={t}")
        for dist in DISTANCES:
            if float(scr_loss(clf, p, x, IDENTITY, IDENTITY, dist, seed=t).detach()) != 0.0:
                failures.append(f"identity {dist} t={t}")
        fw, fs = tensor(gen.normal(size=(5, 4))), tensor(gen.normal(size=(5, 4)))
        a = float(np.exp(gen.uniform(-5, 5)))
        diff = float((feature_distance(a * fw, a * fs) - feature_distance(fw, fs)).abs().max())
        worst_scale = max(worst_scale, diff)
        head = [p[k] for k in clf.head_keys()]
        grads = torch.autograd.grad(loss, head, allow_unused=True)
        if any(g is not None and bool(g.ne(0).any()) for g in grads):
            failures.append(f"head gradient t={t}")
        # antipodal and orthogonal closed forms
        u = tensor(gen.normal(size=(1, 4)))
        if abs(float(feature_distance(u, -u)) - 2.0) > tol:
            failures.append(f"antipodal t={t}")
    if worst_scale > tol:
        failures.append(f"scale invariance {worst_scale:.1e}")
    detail = "; ".join(failures) if failures else f"{trials} trials, max scale drift {worst_scale:.1e}"
    return CheckResult("scr_properties", not failures, float(len(failures)), 0.0, detail)


# ---------------------------------------------------------------- gap recovery

def gap_recovery_task(seed: int = 0, num_classes: int = 3, foundation_classes: int = 6, latent_dim: int = 3,
                      data_dim: int = 6, shift: float = 0.5):
    """Real data ``x = G(P z + w_y, c_y)``: the affine latent map ``(P, w)`` has zero gap by construction."""
    gen = rng(seed, 904)
    G = make_generator(make_foundation_domain(FoundationSpec(foundation_classes, data_dim, latent_dim, seed=seed)))
    P = torch.eye(latent_dim, dtype=DTYPE) + tensor(gen.normal(scale=shift / math.sqrt(latent_dim),
                                                               size=(latent_dim, latent_dim)))
    w = tensor(gen.normal(scale=shift, size=(num_classes, latent_dim)))
    classes = torch.as_tensor(gen.choice(foundation_classes, size=num_classes, replace=False))

    def real(z, y):
        return generate(G, z @ P.T + w[y], classes[y])

    return G, real, classes


@_timed
def check_gap_recovery(steps: int = 200, reduction: float = 0.90, seed: int = 0, outer_lr: float = 2e-2,
                       batch: int = 32) -> CheckResult:
    """Gap-only LMO (validation weight 0, lambda_gap 10) from the identity mapper on a task with a known
    zero-gap latent map; passes when the gap falls by the required fraction."""
    k = 3
    G, real, classes = gap_recovery_task(seed, num_classes=k)
    mapper = ConditionalMapper(G.latent_dim, k, embed_dim=4, hidden=32, seed=seed)
    # converter pinned to the right foundation class by a wide logit margin
    logits = torch.full((k, G.num_classes), -30.0, dtype=DTYPE)
    logits[torch.arange(k), classes] = 30.0
    conv = LabelConverter(k, G.num_classes, tau=1e-5, mode="hard_gumbel", logits=logits)
    clf = Classifier(G.domain.data_dim, k, hidden=(16,), feature_dim=8, seed=seed)
    theta = clf.snapshot()
    inner = InnerStepConfig(eta=0.01, lam=1.0)
    outer = OuterStepConfig(lr=outer_lr, lambda_gap=10.0, val_weight=0.0)
    opt = make_outer_optimizer(mapper, conv, outer.lr)

    def batch_at(s):
        gen = rng(seed, 905, s)
        y = torch.as_tensor(gen.integers(0, k, size=batch))
        z = sample_latent(batch, G.latent_dim, int(gen.integers(2**31)))
        return y, z, real(z, y)

    def eval_gap():
        y, z, x = batch_at(10**6)
        with torch.no_grad():
            x_hat = synthesize_unlabeled(mapper, conv, G, z, y, 0)
            return float(gap_loss(clf, theta, x, x_hat, "mse"))

    start = eval_gap()
    for s in range(steps):
        y, z, x = batch_at(s)
        lmo_step(mapper, conv, G, clf, theta, x, y, x, y, z, s, s, inner, outer, optimizer=opt)
    end = eval_gap()
    frac = 1.0 - end / start if start > 0 else 0.0
    return CheckResult("gap_recovery", frac >= reduction, frac, reduction,
                       f"gap {start:.4g} -> {end:.4g} after {steps} steps")


CHECKS = {
    "loss_gradients": check_loss_gradients,
    "meta_gradient": check_meta_gradient,
    "gumbel_frequencies": check_gumbel_frequencies,
    "straight_through": check_straight_through,
    "scr_properties": check_scr_properties,
    "gap_recovery": check_gap_recovery,
}


def run_checks(names=None) -> list[CheckResult]:
    names = list(CHECKS) if names is None else list(names)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown checks {unknown}; choose from {list(CHECKS)}")
    return [CHECKS[n]() for n in names]
