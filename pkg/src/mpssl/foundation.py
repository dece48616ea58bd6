"""Toy foundation domain, frozen conditional generator, and derived target tasks.

The foundation domain is an affine-Gaussian class-conditional family: class
``c`` produces ``mu_c + A_c z`` for ``z ~ N(0, I)``.  The analytic generator
evaluates that map directly; the learned generator is a small network fitted
to it and frozen, so code paths that treat the generator as an opaque network
are exercised too.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint
from ._common import DTYPE, ConfigurationError, checksum, init_linear, leaky, linear, rng, tensor
from .harness.splits import Dataset, split_dataset

SOFT_LABEL_TOL = 1e-6


class FoundationTrainingError(RuntimeError):
    """Pretraining finished without reaching its configured quality floor."""


@dataclass(frozen=True)
class FoundationSpec:
    num_classes: int = 10
    data_dim: int = 8
    latent_dim: int = 4
    seed: int = 0
    separation: float = 6.0
    # singular values of every A_c are drawn from [min_scale, max_scale]
    min_scale: float = 0.5
    max_scale: float = 1.0
    max_condition: float = 100.0


@dataclass(frozen=True, eq=False)
class FoundationDomain:
    means: torch.Tensor  # (K, d)
    scales: torch.Tensor  # (K, d, d_z)
    spec: FoundationSpec

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def data_dim(self) -> int:
        return self.means.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.scales.shape[2]

    @property
    def seed(self) -> int:
        return self.spec.seed

    def sample(self, labels, seed: int) -> torch.Tensor:
        """Draw fresh samples ``mu_y + A_y z`` for the given hard labels."""
        labels = torch.as_tensor(np.asarray(labels), dtype=torch.long)
        z = sample_latent(len(labels), self.latent_dim, seed)
        return self.means[labels] + torch.einsum("bij,bj->bi", self.scales[labels], z)

    def state_dict(self) -> dict:
        return {"means": self.means, "scales": self.scales, "spec": _spec_dict(self.spec)}

    @classmethod
    def from_state_dict(cls, state: dict) -> FoundationDomain:
        return cls(state["means"], state["scales"], FoundationSpec(**state["spec"]))


def _spec_dict(spec) -> dict:
    return {k: getattr(spec, k) for k in spec.__dataclass_fields__}


def make_foundation_domain(spec: FoundationSpec) -> FoundationDomain:
    K, d, dz = spec.num_classes, spec.data_dim, spec.latent_dim
    if K < 2:
        raise ConfigurationError(f"need at least 2 foundation classes, got {K}")
    if d < 2 or dz < 1:
        raise ConfigurationError(f"need data_dim >= 2 and latent_dim >= 1, got {d}, {dz}")
    if dz > d:
        raise ConfigurationError(f"latent_dim {dz} exceeds data_dim {d}")
    if not 0 < spec.min_scale <= spec.max_scale:
        raise ConfigurationError("scale range must satisfy 0 < min_scale <= max_scale")
    if spec.max_scale / spec.min_scale > spec.max_condition:
        raise ConfigurationError("scale range violates max_condition")

    gen = rng(spec.seed, 0)
    means = _separated_means(gen, K, d, spec.separation)
    scales = np.empty((K, d, dz))
    for c in range(K):
        u, _ = np.linalg.qr(gen.normal(size=(d, dz)))
        v, _ = np.linalg.qr(gen.normal(size=(dz, dz)))
        s = gen.uniform(spec.min_scale, spec.max_scale, size=dz)
        scales[c] = (u * s) @ v.T
    return FoundationDomain(tensor(means), tensor(scales), spec)


def _separated_means(gen: np.random.Generator, K: int, d: int, separation: float) -> np.ndarray:
    # Greedy rejection sampling; the spread grows whenever the packing gets tight.
    spread = separation * max(1.0, K ** (1.0 / d)) / math.sqrt(2.0)
    accepted = np.empty((K, d))
    n = 0
    misses = 0
    while n < K:
        cand = gen.normal(0.0, spread, size=d)
        if n == 0 or np.min(np.linalg.norm(accepted[:n] - cand, axis=1)) >= separation:
            accepted[n] = cand
            n += 1
            misses = 0
        else:
            misses += 1
            if misses > 200:
                spread *= 1.1
                misses = 0
    return accepted


def sample_latent(count: int, latent_dim: int, seed: int) -> torch.Tensor:
    """I.i.d. standard-normal latents; row ``i`` depends only on ``(seed, i)``."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    return tensor(rng(seed, 1).standard_normal((count, latent_dim)))


def _as_label(y, num_classes: int):
    """Return ``(hard_index_tensor, None)`` or ``(None, prob_tensor)``, batched."""
    if isinstance(y, (int, np.integer)):
        return torch.tensor([int(y)]), None
    y = torch.as_tensor(y)
    if y.dtype in (torch.int8, torch.int16, torch.int32, torch.int64, torch.uint8):
        return y.reshape(-1).long(), None
    p = y.to(DTYPE)
    if p.dim() == 1:
        p = p.unsqueeze(0)
    if p.shape[-1] != num_classes:
        raise ValueError(f"soft label has {p.shape[-1]} entries, expected {num_classes}")
    pd = p.detach()
    if (pd < -SOFT_LABEL_TOL).any() or ((pd.sum(-1) - 1).abs() > SOFT_LABEL_TOL).any():
        raise ValueError("soft label must be nonnegative and sum to 1")
    return None, p


@dataclass(eq=False)
class FoundationGenerator:
    """Frozen conditional generator ``G(z, y_F)``.

    ``y_F`` is either a hard class index or a probability vector over the
    foundation classes.  Soft labels mix the class-conditional statistics
    (analytic backend) or the conditioning embeddings (learned backend), so the
    output is differentiable in both ``z`` and the label probabilities.
    """

    domain: FoundationDomain
    backend: str = "analytic"
    learned_params: dict[str, torch.Tensor] | None = None
    _digest: str = field(init=False, default="")

    def __post_init__(self):
        if self.backend not in ("analytic", "learned"):
            raise ConfigurationError(f"unknown generator backend {self.backend!r}")
        if self.backend == "learned" and self.learned_params is None:
            raise ConfigurationError("learned backend requires learned_params")
        if self.learned_params is not None:
            self.learned_params = {k: v.detach().requires_grad_(False) for k, v in self.learned_params.items()}
        self._digest = self.checksum()

    @property
    def latent_dim(self) -> int:
        return self.domain.latent_dim

    @property
    def num_classes(self) -> int:
        return self.domain.num_classes

    def checksum(self) -> str:
        tensors = {"means": self.domain.means, "scales": self.domain.scales}
        if self.learned_params is not None:
            tensors.update(self.learned_params)
        return checksum(tensors)

    def is_unchanged(self) -> bool:
        return self.checksum() == self._digest

    def __call__(self, z, y) -> torch.Tensor:
        return generate(self, z, y)

    def state_dict(self) -> dict:
        return {"backend": self.backend, "domain": self.domain.state_dict(), "learned_params": self.learned_params}

    @classmethod
    def from_state_dict(cls, state: dict) -> FoundationGenerator:
        return cls(FoundationDomain.from_state_dict(state["domain"]), state["backend"], state["learned_params"])

    def save(self, path: str | Path) -> None:
        checkpoint.save(path, "generator", self.state_dict(), seed=self.domain.seed)

    @classmethod
    def load(cls, path: str | Path) -> FoundationGenerator:
        return cls.from_state_dict(checkpoint.load(path, "generator"))


def generate(G: FoundationGenerator, z, y) -> torch.Tensor:
    z = torch.as_tensor(z, dtype=DTYPE)
    single = z.dim() == 1
    if single:
        z = z.unsqueeze(0)
    if z.shape[-1] != G.latent_dim:
        raise ValueError(f"latent has dimension {z.shape[-1]}, generator expects {G.latent_dim}")
    hard, soft = _as_label(y, G.num_classes)
    n = hard.shape[0] if hard is not None else soft.shape[0]
    if n == 1 and z.shape[0] > 1:
        if hard is not None:
            hard = hard.expand(z.shape[0])
        else:
            soft = soft.expand(z.shape[0], -1)
    elif z.shape[0] == 1 and n > 1:
        z = z.expand(n, -1)
    if G.backend == "analytic":
        out = _analytic(G.domain, z, hard, soft)
    else:
        if soft is None:
            soft = F.one_hot(hard, G.num_classes).to(DTYPE)
        out = _learned_forward(G.learned_params, z, soft)
    return out[0] if single and out.shape[0] == 1 else out


def _analytic(domain: FoundationDomain, z, hard, soft):
    if hard is not None:
        return domain.means[hard] + torch.einsum("bij,bj->bi", domain.scales[hard], z)
    per_class = torch.einsum("kij,bj->bki", domain.scales, z)
    return soft @ domain.means + torch.einsum("bk,bki->bi", soft, per_class)


def _learned_forward(params, z, p):
    # conditional-norm style: the label embedding sets gain and bias of the hidden layer
    h = leaky(linear(z, params["w1"], params["b1"]))
    h = h * (1.0 + p @ params["gain"]) + p @ params["shift"]
    h = leaky(linear(h, params["w2"], params["b2"]))
    return linear(h, params["w3"], params["b3"]) + p @ params["mean"]


@dataclass
class TrainingBudget:
    samples_per_class: int = 500
    epochs: int = 40
    batch_size: int = 128
    lr: float = 5e-3
    steps: int = 3000  # generator pretraining
    hidden: int = 128
    accuracy_floor: float = 0.95
    mse_ratio: float = 0.05
    seed: int = 0


def make_generator(domain: FoundationDomain) -> FoundationGenerator:
    return FoundationGenerator(domain, "analytic")


def pretrain_learned_generator(domain: FoundationDomain, budget: TrainingBudget | None = None) -> FoundationGenerator:
    """Fit the learned backend to the analytic map and freeze it.

    Raises ``FoundationTrainingError`` when the held-out conditional MSE is not
    below ``mse_ratio * E||A_c z||^2`` after ``budget.steps`` updates.
    """
    budget = budget or TrainingBudget()
    gen = rng(budget.seed, 10)
    K, d, dz, h = domain.num_classes, domain.data_dim, domain.latent_dim, budget.hidden
    params = {}
    params["w1"], params["b1"] = init_linear(gen, dz, h)
    params["w2"], params["b2"] = init_linear(gen, h, h)
    params["w3"], params["b3"] = init_linear(gen, h, d)
    params["w3"] = params["w3"] * 0.1
    params["gain"] = torch.zeros(K, h, dtype=DTYPE)
    params["shift"] = torch.zeros(K, h, dtype=DTYPE)
    params["mean"] = domain.means.clone()
    for v in params.values():
        v.requires_grad_(True)
    opt = torch.optim.Adam(params.values(), lr=budget.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, budget.steps)
    for step in range(budget.steps):
        y = torch.as_tensor(gen.integers(0, K, size=budget.batch_size))
        z = tensor(gen.standard_normal((budget.batch_size, dz)))
        target = _analytic(domain, z, y, None)
        pred = _learned_forward(params, z, F.one_hot(y, K).to(DTYPE))
        loss = ((pred - target) ** 2).sum(-1).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()

    G = FoundationGenerator(domain, "learned", params)
    mse, ref = learned_generator_error(G, seed=budget.seed + 1)
    if mse > budget.mse_ratio * ref:
        raise FoundationTrainingError(
            f"learned generator MSE {mse:.4f} exceeds {budget.mse_ratio} * {ref:.4f} after {budget.steps} steps"
        )
    return G


def learned_generator_error(G: FoundationGenerator, n: int = 4096, seed: int = 12345) -> tuple[float, float]:
    """Held-out ``(E||G(z,c) - (mu_c + A_c z)||^2, E||A_c z||^2)``."""
    gen = rng(seed, 11)
    y = torch.as_tensor(gen.integers(0, G.num_classes, size=n))
    z = tensor(gen.standard_normal((n, G.latent_dim)))
    with torch.no_grad():
        target = _analytic(G.domain, z, y, None)
        pred = generate(G, z, y)
        az = torch.einsum("bij,bj->bi", G.domain.scales[y], z)
    return float(((pred - target) ** 2).sum(-1).mean()), float((az**2).sum(-1).mean())


@dataclass(eq=False)
class FoundationClassifier:
    params: dict[str, torch.Tensor]
    held_out_accuracy: float = float("nan")

    @property
    def num_outputs(self) -> int:
        return self.params["w2"].shape[1]

    def logits(self, x) -> torch.Tensor:
        x = torch.as_tensor(x, dtype=DTYPE)
        h = leaky(linear(x, self.params["w1"], self.params["b1"]))
        return linear(h, self.params["w2"], self.params["b2"])

    def predict_proba(self, x) -> torch.Tensor:
        with torch.no_grad():
            return torch.softmax(self.logits(x), dim=-1)

    def state_dict(self) -> dict:
        return {"params": self.params, "held_out_accuracy": self.held_out_accuracy}


def pretrain_foundation_classifier(domain: FoundationDomain, budget: TrainingBudget | None = None) -> FoundationClassifier:
    budget = budget or TrainingBudget()
    K, d = domain.num_classes, domain.data_dim
    gen = rng(budget.seed, 20)
    labels = np.repeat(np.arange(K), budget.samples_per_class)
    x = domain.sample(labels, seed=budget.seed * 7919 + 1)
    y = torch.as_tensor(labels)
    mean, std = x.mean(0), x.std(0)
    params = {}
    params["w1"], params["b1"] = init_linear(gen, d, 64)
    params["w2"], params["b2"] = init_linear(gen, 64, K)
    # fold input standardization into the first layer so the frozen net takes raw samples
    params["w1"] = params["w1"] / std.unsqueeze(1)
    params["b1"] = params["b1"] - (mean / std) @ (params["w1"] * std.unsqueeze(1))
    for v in params.values():
        v.requires_grad_(True)
    clf = FoundationClassifier(params)
    opt = torch.optim.Adam(params.values(), lr=budget.lr)
    for _ in range(budget.epochs):
        for idx in np.array_split(gen.permutation(len(y)), max(1, len(y) // budget.batch_size)):
            loss = F.cross_entropy(clf.logits(x[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    for v in params.values():
        v.requires_grad_(False)

    test_labels = np.repeat(np.arange(K), max(50, budget.samples_per_class // 5))
    x_test = domain.sample(test_labels, seed=budget.seed * 7919 + 2)
    acc = float((clf.predict_proba(x_test).argmax(-1).numpy() == test_labels).mean())
    clf.held_out_accuracy = acc
    if acc < budget.accuracy_floor:
        raise FoundationTrainingError(f"foundation classifier held-out accuracy {acc:.3f} < floor {budget.accuracy_floor}")
    return clf


class UnlabeledPool:
    """Real unlabeled split; every read is counted so gSSL runs can be audited."""

    def __init__(self, x: torch.Tensor):
        self._x = x
        self.reads = 0

    def __len__(self) -> int:
        return self._x.shape[0]

    def read(self) -> torch.Tensor:
        self.reads += 1
        return self._x


@dataclass(frozen=True)
class TaskSpec:
    num_classes: int = 4
    samples_per_class: int = 80
    test_per_class: int = 250
    labeled_fraction: float = 0.10
    shift_scale: float = 0.3  # strength of the affine perturbation of foundation statistics
    shift_offset: float = 0.0  # norm of an extra translation (large values make the task unrelated)
    noise_scale: float = 3.5  # isotropic observation noise on target samples
    seed: int = 0


@dataclass(eq=False)
class TargetTask:
    num_classes: int
    train: Dataset
    val: Dataset
    test: Dataset
    unlabeled: UnlabeledPool
    shift_matrix: torch.Tensor
    shift_bias: torch.Tensor
    spec: TaskSpec
    # evaluation-only; training code must not consult it
    class_to_foundation_map: tuple[int, ...] = field(repr=False, default=())

    @property
    def data_dim(self) -> int:
        return self.train.x.shape[1]


def make_target_task(domain: FoundationDomain, spec: TaskSpec | None = None) -> TargetTask:
    spec = spec or TaskSpec()
    if spec.num_classes > domain.num_classes:
        raise ConfigurationError("target task has more classes than the foundation domain")
    if spec.num_classes < 2:
        raise ConfigurationError("target task needs at least 2 classes")
    gen = rng(spec.seed, 30)
    d = domain.data_dim
    class_map = tuple(int(c) for c in gen.choice(domain.num_classes, size=spec.num_classes, replace=False))
    mat = np.eye(d) + spec.shift_scale * gen.normal(size=(d, d)) / math.sqrt(d)
    bias = spec.shift_scale * gen.normal(size=d)
    direction = gen.normal(size=d)
    bias = bias + spec.shift_offset * direction / np.linalg.norm(direction)
    shift_matrix, shift_bias = tensor(mat), tensor(bias)

    def draw(per_class: int, seed: int):
        labels = np.repeat(np.arange(spec.num_classes), per_class)
        foundation = np.asarray(class_map)[labels]
        x = domain.sample(foundation, seed=seed) @ shift_matrix.T + shift_bias
        if spec.noise_scale > 0:
            x = x + spec.noise_scale * tensor(rng(seed, 31).standard_normal(x.shape))
        return x, torch.as_tensor(labels)

    x_raw, y_raw = draw(spec.samples_per_class, seed=spec.seed * 104729 + 1)
    x_test, y_test = draw(spec.test_per_class, seed=spec.seed * 104729 + 2)
    train, unlabeled, val, _ = split_dataset(x_raw, y_raw, spec.labeled_fraction, seed=spec.seed)
    return TargetTask(
        num_classes=spec.num_classes,
        train=train,
        val=val,
        test=Dataset(x_test, y_test),
        unlabeled=UnlabeledPool(unlabeled.x),
        shift_matrix=shift_matrix,
        shift_bias=shift_bias,
        spec=spec,
        class_to_foundation_map=class_map,
    )


def save_domain(path: str | Path, domain: FoundationDomain) -> None:
    checkpoint.save(path, "domain", domain.state_dict(), seed=domain.seed)


def load_domain(path: str | Path) -> FoundationDomain:
    return FoundationDomain.from_state_dict(checkpoint.load(path, "domain"))
