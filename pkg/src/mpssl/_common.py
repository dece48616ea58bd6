"""Shared numeric helpers: dtype, seeded randomness, functional MLP layers."""
from __future__ import annotations

import hashlib
import math

import numpy as np
import torch
import torch.nn.functional as F

DTYPE = torch.float64
LEAKY_SLOPE = 0.2


class ConfigurationError(ValueError):
    """Raised when a construction or run configuration is invalid."""


def rng(seed: int | np.random.SeedSequence, *stream: int) -> np.random.Generator:
    """Independent generator for ``seed`` and an optional stream path."""
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *stream])
    return np.random.default_rng(ss)


def tensor(a, dtype=DTYPE) -> torch.Tensor:
    return torch.as_tensor(np.asarray(a), dtype=dtype)


def leaky(x: torch.Tensor) -> torch.Tensor:
    return F.leaky_relu(x, LEAKY_SLOPE)


def linear(x: torch.Tensor, w: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return x @ w + b


def init_linear(gen: np.random.Generator, fan_in: int, fan_out: int):
    """He-style init for leaky-ReLU layers, weights stored as (in, out)."""
    gain = math.sqrt(2.0 / (1.0 + LEAKY_SLOPE**2))
    w = gen.normal(0.0, gain / math.sqrt(fan_in), size=(fan_in, fan_out))
    return tensor(w), torch.zeros(fan_out, dtype=DTYPE)


def checksum(tensors) -> str:
    """Stable hex digest over a dict or sequence of tensors."""
    h = hashlib.sha256()
    items = tensors.items() if isinstance(tensors, dict) else enumerate(tensors)
    for k, t in items:
        h.update(str(k).encode())
        h.update(np.ascontiguousarray(t.detach().cpu().numpy()).tobytes())
    return h.hexdigest()


def clone_params(params: dict[str, torch.Tensor], requires_grad: bool = False):
    return {k: v.detach().clone().requires_grad_(requires_grad) for k, v in params.items()}
