"""Supervised, self-consistency, gap and FixMatch-like losses on a small classifier."""
from __future__ import annotations

import numpy as np
import torch

from mpssl.classifier import Classifier
from mpssl.losses import IDENTITY, fixmatch_like_loss, gap_loss, scr_loss, supervised_loss


def main() -> None:
    gen = np.random.default_rng(0)
    clf = Classifier(5, 3, hidden=(8,), feature_dim=4, seed=0)
    x = torch.as_tensor(gen.normal(size=(16, 5)))
    x_far = x + 4.0
    y = torch.as_tensor(gen.integers(0, 3, size=16))

    with torch.no_grad():
        print(f"supervised CE           {float(supervised_loss(clf, None, x, y)):.4f}")
        for dist in ("cosine", "l1", "l2", "smooth_l1"):
            print(f"SCR {dist:10s}          {float(scr_loss(clf, None, x, distance=dist, seed=0)):.4f}")
        print(f"SCR identical branches  {float(scr_loss(clf, None, x, IDENTITY, IDENTITY, 'cosine', 0)):.4f}")
        print(f"gap mse near / far      {float(gap_loss(clf, None, x, x + 0.1)):.4f} / {float(gap_loss(clf, None, x, x_far)):.4f}")
        print(f"gap mmd near / far      {float(gap_loss(clf, None, x, x + 0.1, 'mmd')):.4f} / "
              f"{float(gap_loss(clf, None, x, x_far, 'mmd')):.4f}")
        loss, rate = fixmatch_like_loss(clf, None, x, threshold=0.5, seed=0)
        print(f"fixmatch-like           {float(loss):.4f} (acceptance {rate:.2f})")

    # the self-consistency term leaves the head untouched
    grads = torch.autograd.grad(scr_loss(clf, None, x, seed=0), [clf.params["h_w"]], allow_unused=True)
    print(f"head gradient of SCR    {'none' if grads[0] is None else float(grads[0].abs().max())}")


if __name__ == "__main__":
    main()
