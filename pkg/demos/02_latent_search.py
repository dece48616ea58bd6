"""Label converter in its three modes and the identity-initialized latent mapper."""
from __future__ import annotations

import torch

from mpssl.foundation import FoundationSpec, make_foundation_domain, make_generator, sample_latent
from mpssl.latent_search import (ConditionalMapper, LabelConverter, convert_label_hard, convert_label_soft,
                                 map_latent, synthesize_unlabeled)


def main() -> None:
    logits = torch.tensor([[2.0, 1.0, 0.0]], dtype=torch.float64)
    for mode, tau in (("soft_embedding", 1.0), ("soft_gumbel", 1.0), ("hard_gumbel", 1e-5)):
        conv = LabelConverter(1, 3, tau=tau, mode=mode, logits=logits.clone())
        fn = convert_label_hard if mode == "hard_gumbel" else convert_label_soft
        print(f"{mode:15s} tau={tau:g}: {fn(conv, 0, 0).detach().numpy().round(3)}")

    # Gumbel-max: hard samples follow softmax(logits)
    conv = LabelConverter(1, 3, tau=1.0, mode="hard_gumbel", logits=logits.clone())
    freq = convert_label_hard(conv, torch.zeros(20_000, dtype=torch.long), 1).mean(0)
    print(f"hard frequencies {freq.detach().numpy().round(3)} vs softmax {torch.softmax(logits[0], 0).numpy().round(3)}")

    domain = make_foundation_domain(FoundationSpec())
    G = make_generator(domain)
    mapper = ConditionalMapper(domain.latent_dim, 4, seed=0)
    z = sample_latent(8, domain.latent_dim, 0)
    y = torch.arange(8) % 4
    print(f"mapper at init is the identity: {float((map_latent(mapper, z, y) - z).detach().abs().max()):.1e}")
    conv = LabelConverter(4, domain.num_classes, seed=0, init_scale=1.0)
    x_hat = synthesize_unlabeled(mapper, conv, G, z, y, 0)
    print(f"synthetic batch {tuple(x_hat.shape)}, differentiable: {x_hat.requires_grad}")


if __name__ == "__main__":
    main()
