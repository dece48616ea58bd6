"""The trained classifier ``f = h o g``: a feed-forward feature extractor and a linear head.

Parameters live in a flat dict so the same functions evaluate both the live
parameters and the differentiable one-step lookahead used by the meta-update.
Extractor keys start with ``g_``, head keys with ``h_``.
"""
from __future__ import annotations

import torch

from ._common import DTYPE, clone_params, init_linear, leaky, linear, rng


class Classifier:
    def __init__(self, data_dim: int, num_classes: int, hidden: tuple[int, ...] = (64, 32),
                 feature_dim: int | None = None, seed: int = 0):
        self.data_dim = data_dim
        self.num_classes = num_classes
        self.hidden = tuple(hidden)
        gen = rng(seed, 70)
        widths = [data_dim, *self.hidden]
        if feature_dim is not None:
            widths.append(feature_dim)
        if widths[-1] < 2:
            raise ValueError("feature width must be at least 2")
        self.feature_dim = widths[-1]
        # the last extractor layer is linear when feature_dim is given (so no hidden layers = linear model)
        self.linear_last = feature_dim is not None
        p = {}
        for i in range(len(widths) - 1):
            p[f"g_w{i}"], p[f"g_b{i}"] = init_linear(gen, widths[i], widths[i + 1])
        p["h_w"], p["h_b"] = init_linear(gen, self.feature_dim, num_classes)
        self.params = {k: v.requires_grad_(True) for k, v in p.items()}
        self.input_shift = torch.zeros(data_dim, dtype=DTYPE)
        self.input_scale = torch.ones(data_dim, dtype=DTYPE)

    def fit_normalization(self, x) -> Classifier:
        """Fix a per-coordinate standardization from labeled data (not trained)."""
        x = torch.as_tensor(x, dtype=DTYPE)
        self.input_shift = x.mean(0).detach().clone()
        self.input_scale = x.std(0).clamp_min(1e-6).detach().clone() if len(x) > 1 else torch.ones_like(self.input_shift)
        return self

    @property
    def depth(self) -> int:
        return sum(1 for k in self.params if k.startswith("g_w"))

    def features(self, x, params=None) -> torch.Tensor:
        p = self.params if params is None else params
        h = (x - self.input_shift) / self.input_scale
        for i in range(self.depth):
            h = linear(h, p[f"g_w{i}"], p[f"g_b{i}"])
            if not (self.linear_last and i == self.depth - 1):
                h = leaky(h)
        return h

    def head(self, feats, params=None) -> torch.Tensor:
        p = self.params if params is None else params
        return linear(feats, p["h_w"], p["h_b"])

    def logits(self, x, params=None) -> torch.Tensor:
        return self.head(self.features(x, params), params)

    def parameters(self) -> list[torch.Tensor]:
        return list(self.params.values())

    def extractor_keys(self) -> list[str]:
        return [k for k in self.params if k.startswith("g_")]

    def head_keys(self) -> list[str]:
        return [k for k in self.params if k.startswith("h_")]

    def snapshot(self) -> dict[str, torch.Tensor]:
        return clone_params(self.params)

    def load_params(self, params: dict[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for k, v in params.items():
                self.params[k].copy_(v)

    def state_dict(self) -> dict:
        return {"params": self.snapshot(), "data_dim": self.data_dim, "num_classes": self.num_classes,
                "hidden": list(self.hidden), "feature_dim": self.feature_dim if self.linear_last else None,
                "input_shift": self.input_shift, "input_scale": self.input_scale}

    @classmethod
    def from_state_dict(cls, state: dict) -> Classifier:
        clf = cls(state["data_dim"], state["num_classes"], tuple(state["hidden"]), state["feature_dim"])
        clf.load_params(state["params"])
        clf.input_shift, clf.input_scale = state["input_shift"], state["input_scale"]
        return clf
