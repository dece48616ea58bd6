"""Learnable front-ends of the frozen generator.

``ConditionalMapper`` turns a Gaussian latent and a target label into a new
generator latent.  ``LabelConverter`` turns a target label into a foundation
label through a Gumbel-softmax over a per-class logit row.
"""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from ._common import DTYPE, ConfigurationError, clone_params, init_linear, leaky, linear, rng, tensor
from .foundation import FoundationGenerator, generate

CONVERTER_MODES = ("soft_embedding", "soft_gumbel", "hard_gumbel")


class ConditionalMapper:
    """Three-layer leaky-ReLU perceptron on ``concat(z, EMB(y))``.

    With ``identity_init`` the network starts as the exact identity on ``z``:
    the first ``2 d_z`` hidden units carry ``z`` and ``-z``, which the leaky
    ReLU pair maps back to ``(1 + slope) z``; the remaining units (and the label
    path) get small random weights whose outgoing weights start at zero.
    """

    def __init__(self, latent_dim: int, num_classes: int, embed_dim: int = 8, hidden: int = 64,
                 conditional: bool = True, identity_init: bool = True, seed: int = 0,
                 params: dict[str, torch.Tensor] | None = None):
        self.latent_dim = latent_dim
        self.num_classes = num_classes
        self.embed_dim = embed_dim if conditional else 0
        self.hidden = hidden
        self.conditional = conditional
        if params is not None:
            self.params = clone_params(params, requires_grad=True)
            return
        if identity_init and hidden < 2 * latent_dim:
            raise ConfigurationError(f"identity init needs hidden >= {2 * latent_dim}")
        gen = rng(seed, 50)
        din = latent_dim + self.embed_dim
        p = {}
        if conditional:
            p["emb"] = tensor(gen.normal(size=(num_classes, embed_dim)))
        p["w1"], p["b1"] = init_linear(gen, din, hidden)
        p["w2"], p["b2"] = init_linear(gen, hidden, hidden)
        p["w3"], p["b3"] = init_linear(gen, hidden, latent_dim)
        if identity_init:
            self._identity(p, gen)
        self.params = {k: v.requires_grad_(True) for k, v in p.items()}

    def _identity(self, p, gen):
        dz, h = self.latent_dim, self.hidden
        k = 1.0 + 0.2  # 1 + leaky slope
        eye = torch.eye(dz, dtype=DTYPE)
        noise = 1e-2
        p["w1"] = p["w1"] * noise
        p["w1"][:, : 2 * dz] = 0.0
        p["w1"][:dz, :dz] = eye
        p["w1"][:dz, dz : 2 * dz] = -eye
        # layer 2: units [0, 2dz) recombine the pair into +z, -z
        w2 = tensor(gen.normal(scale=noise, size=(h, h)))
        w2[:, : 2 * dz] = 0.0
        w2[2 * dz :, :] = 0.0
        w2[:dz, :dz] = eye / k
        w2[dz : 2 * dz, :dz] = -eye / k
        w2[:dz, dz : 2 * dz] = -eye / k
        w2[dz : 2 * dz, dz : 2 * dz] = eye / k
        p["w2"] = w2
        w3 = torch.zeros(h, dz, dtype=DTYPE)
        w3[:dz] = eye / k
        w3[dz : 2 * dz] = -eye / k
        p["w3"] = w3
        for b in ("b1", "b2", "b3"):
            p[b] = torch.zeros_like(p[b])

    def parameters(self) -> list[torch.Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(v.numel() for v in self.params.values())

    def __call__(self, z, y, params=None) -> torch.Tensor:
        return map_latent(self, z, y, params)

    def state_dict(self) -> dict:
        return {
            "params": {k: v.detach().clone() for k, v in self.params.items()},
            "latent_dim": self.latent_dim, "num_classes": self.num_classes,
            "embed_dim": self.embed_dim, "hidden": self.hidden, "conditional": self.conditional,
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> ConditionalMapper:
        return cls(state["latent_dim"], state["num_classes"], max(state["embed_dim"], 1), state["hidden"],
                   state["conditional"], params=state["params"])


def map_latent(mapper: ConditionalMapper, z, y, params=None) -> torch.Tensor:
    p = mapper.params if params is None else params
    z = torch.as_tensor(z, dtype=DTYPE)
    single = z.dim() == 1
    if single:
        z = z.unsqueeze(0)
    if z.shape[-1] != mapper.latent_dim:
        raise ValueError(f"latent has dimension {z.shape[-1]}, mapper expects {mapper.latent_dim}")
    if mapper.conditional:
        y = torch.as_tensor(y, dtype=torch.long).reshape(-1)
        emb = p["emb"][y]
        if emb.shape[0] != z.shape[0]:
            emb = emb.expand(z.shape[0], -1)
        h = torch.cat([z, emb], dim=-1)
    else:
        h = z
    h = leaky(linear(h, p["w1"], p["b1"]))
    h = leaky(linear(h, p["w2"], p["b2"]))
    out = linear(h, p["w3"], p["b3"])
    return out[0] if single else out


class LabelConverter:
    """Per-target-class logits over foundation classes plus a sampling mode.

    The logit row stands for ``log EMB(y)``; storing logits directly avoids a
    positivity constraint on the embedding.
    """

    def __init__(self, num_classes: int, num_foundation_classes: int, tau: float = 1e-5,
                 mode: str = "hard_gumbel", logits: torch.Tensor | None = None, seed: int = 0,
                 init_scale: float = 0.0):
        if tau <= 0:
            raise ConfigurationError(f"temperature must be positive, got {tau}")
        if mode not in CONVERTER_MODES:
            raise ConfigurationError(f"unknown converter mode {mode!r}")
        self.tau = float(tau)
        self.mode = mode
        if logits is None:
            logits = tensor(rng(seed, 60).normal(scale=init_scale, size=(num_classes, num_foundation_classes)))
        self.logits = logits.detach().clone().to(DTYPE).requires_grad_(True)

    @property
    def num_foundation_classes(self) -> int:
        return self.logits.shape[1]

    def parameters(self) -> list[torch.Tensor]:
        return [self.logits]

    def __call__(self, y, noise_seed: int, logits=None) -> torch.Tensor:
        if self.mode == "hard_gumbel":
            return convert_label_hard(self, y, noise_seed, logits)
        return convert_label_soft(self, y, noise_seed, logits)

    def state_dict(self) -> dict:
        return {"logits": self.logits.detach().clone(), "tau": self.tau, "mode": self.mode}

    @classmethod
    def from_state_dict(cls, state: dict) -> LabelConverter:
        n, k = state["logits"].shape
        return cls(n, k, state["tau"], state["mode"], logits=state["logits"])


def gumbel_noise(shape, noise_seed: int) -> torch.Tensor:
    u = rng(noise_seed, 61).random(shape)
    u = np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).eps)
    return tensor(-np.log(-np.log(u)))


def _perturbed(conv: LabelConverter, y, noise_seed, logits):
    rows = (conv.logits if logits is None else logits)[torch.as_tensor(y, dtype=torch.long).reshape(-1)]
    if conv.mode == "soft_embedding":
        return rows, 1.0
    return rows + gumbel_noise(tuple(rows.shape), noise_seed), conv.tau


def convert_label_soft(conv: LabelConverter, y, noise_seed: int, logits=None) -> torch.Tensor:
    """Gumbel-softmax probabilities over foundation classes (batched over ``y``).

    In ``soft_embedding`` mode the noise is dropped and the temperature is 1.
    """
    if conv.tau <= 0:
        raise ConfigurationError("temperature must be positive")
    scores, tau = _perturbed(conv, y, noise_seed, logits)
    return torch.softmax(scores / tau, dim=-1)


def convert_label_hard(conv: LabelConverter, y, noise_seed: int, logits=None) -> torch.Tensor:
    """One-hot at the perturbed-logit argmax, back-propagating as the soft vector."""
    if conv.tau <= 0:
        raise ConfigurationError("temperature must be positive")
    scores, tau = _perturbed(conv, y, noise_seed, logits)
    soft = torch.softmax(scores / tau, dim=-1)
    hard = F.one_hot(scores.detach().argmax(-1), scores.shape[-1]).to(DTYPE)
    return hard - soft.detach() + soft


def synthesize_unlabeled(mapper: ConditionalMapper, converter: LabelConverter, G: FoundationGenerator,
                         z, y, noise_seed: int, mapper_params=None, converter_logits=None) -> torch.Tensor:
    """``G(M(z, y), I(y))`` for a batch of latents and target labels."""
    z_hat = map_latent(mapper, z, y, mapper_params)
    y_f = converter(y, noise_seed, converter_logits)
    if y_f.shape[-1] != G.num_classes:
        raise ValueError(f"converter emits {y_f.shape[-1]} foundation classes, generator has {G.num_classes}")
    return generate(G, z_hat, y_f)
