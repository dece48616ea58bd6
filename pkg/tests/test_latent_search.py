from __future__ import annotations

import numpy as np
import pytest
import torch

from mpssl._common import ConfigurationError
from mpssl.foundation import generate, sample_latent
from mpssl.latent_search import (ConditionalMapper, LabelConverter, convert_label_hard, convert_label_soft,
                                 map_latent, synthesize_unlabeled)
from mpssl.verify import central_difference, check_gumbel_frequencies, check_straight_through, relative_error


def _pinned_converter(num_classes, foundation_classes, classes, mode="hard_gumbel", tau=1e-5):
    logits = torch.full((num_classes, foundation_classes), -30.0, dtype=torch.float64)
    logits[torch.arange(num_classes), torch.as_tensor(classes)] = 30.0
    return LabelConverter(num_classes, foundation_classes, tau, mode, logits=logits)


class TestMapper:
    @pytest.mark.parametrize("conditional", [True, False])
    def test_identity_initialization(self, conditional):
        m = ConditionalMapper(4, 3, conditional=conditional, seed=2)
        z = sample_latent(20, 4, 0)
        y = torch.arange(20) % 3
        assert float((map_latent(m, z, y) - z).abs().max()) < 1e-12

    def test_conditional_labels_diverge_after_one_step(self):
        m = ConditionalMapper(2, 2, seed=0)
        z = torch.ones(1, 2, dtype=torch.float64)
        target = torch.tensor([[1.0, -1.0], [-1.0, 1.0]], dtype=torch.float64)
        loss = sum(((map_latent(m, z, torch.tensor([y])) - target[y]) ** 2).sum() for y in range(2))
        grads = torch.autograd.grad(loss, m.parameters())
        with torch.no_grad():
            for p, g in zip(m.parameters(), grads):
                p.sub_(0.1 * g)
        a, b = map_latent(m, z, torch.tensor([0])), map_latent(m, z, torch.tensor([1]))
        assert float((a - b).abs().max()) > 1e-4

    def test_latent_jacobian_finite_differences(self):
        m = ConditionalMapper(3, 2, hidden=16, seed=1)
        with torch.no_grad():
            for p in m.parameters():
                p.add_(0.2 * torch.randn(p.shape, generator=torch.Generator().manual_seed(0), dtype=p.dtype))
        z0 = sample_latent(1, 3, 4)[0]
        jac = torch.autograd.functional.jacobian(lambda z: map_latent(m, z, 1), z0)
        h = 1e-6
        fd = torch.stack([(map_latent(m, z0 + h * e, 1) - map_latent(m, z0 - h * e, 1)) / (2 * h)
                          for e in torch.eye(3, dtype=torch.float64)], dim=1)
        assert relative_error([jac], [fd]) < 1e-4

    def test_dimension_mismatch(self):
        m = ConditionalMapper(3, 2)
        with pytest.raises(ValueError):
            map_latent(m, torch.zeros(1, 4, dtype=torch.float64), 0)

    def test_unconditional_input_width(self):
        m = ConditionalMapper(3, 2, conditional=False)
        assert m.params["w1"].shape[0] == 3 and "emb" not in m.params

    @pytest.mark.parametrize("conditional", [True, False])
    def test_trainable(self, conditional):
        m = ConditionalMapper(2, 3, conditional=conditional, seed=0)
        opt = torch.optim.Adam(m.parameters(), lr=1e-2)
        z = sample_latent(32, 2, 0)
        y = torch.arange(32) % 3
        target = 0.5 * z + torch.tensor([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]], dtype=torch.float64)[y]
        losses = []
        for _ in range(50):
            loss = ((map_latent(m, z, y) - target) ** 2).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss))
        assert losses[-1] < losses[0]

    def test_state_dict_round_trip(self):
        m = ConditionalMapper(3, 2, seed=4)
        back = ConditionalMapper.from_state_dict(m.state_dict())
        z = sample_latent(5, 3, 1)
        assert torch.equal(map_latent(m, z, torch.arange(5) % 2), map_latent(back, z, torch.arange(5) % 2))


class TestSoftConverter:
    def test_normalized_and_positive(self):
        conv = LabelConverter(3, 10, tau=0.5, mode="soft_gumbel", init_scale=1.0)
        p = convert_label_soft(conv, torch.arange(3), 0)
        assert float((p.sum(-1) - 1).abs().max()) <= 1e-6 and bool((p > 0).all())

    def test_high_temperature_limit(self):
        conv = LabelConverter(1, 8, tau=1e3, mode="soft_gumbel")
        for seed in range(5):
            p = convert_label_soft(conv, 0, seed)
            assert float((p - 1 / 8).abs().max()) < 1e-3

    def test_low_temperature_concentrates_on_perturbed_argmax(self):
        conv = LabelConverter(2, 6, tau=1e-5, mode="soft_gumbel", init_scale=1.0, seed=3)
        from mpssl.latent_search import gumbel_noise

        for seed in range(20):
            p = convert_label_soft(conv, torch.tensor([1]), seed)[0]
            perturbed = conv.logits[1] + gumbel_noise((1, 6), seed)[0]
            assert float(p[int(perturbed.argmax())]) >= 1 - 1e-3

    def test_soft_embedding_is_plain_softmax(self):
        conv = LabelConverter(2, 4, tau=1e-5, mode="soft_embedding", init_scale=1.0)
        p = convert_label_soft(conv, torch.arange(2), 123)
        assert torch.equal(p, torch.softmax(conv.logits, -1))

    def test_differentiable_in_logits(self):
        conv = LabelConverter(2, 4, tau=1.0, mode="soft_gumbel")
        (g,) = torch.autograd.grad(convert_label_soft(conv, torch.tensor([0]), 0)[0, 1], conv.logits)
        assert float(g[0].abs().sum()) > 0 and float(g[1].abs().sum()) == 0

    def test_entropy_monotone_in_temperature(self):
        logits = torch.tensor([[2.0, 1.0, 0.0, -1.0, 0.5]], dtype=torch.float64)
        for seed in range(10):
            ent = []
            for tau in (1e-5, 1e-3, 1e-1, 1.0, 10.0):
                p = convert_label_soft(LabelConverter(1, 5, tau, "soft_gumbel", logits=logits), 0, seed)
                ent.append(float(-(p * p.clamp_min(1e-300).log()).sum()))
            assert all(b >= a - 1e-12 for a, b in zip(ent, ent[1:]))

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_rejects_nonpositive_temperature(self, tau):
        with pytest.raises(ConfigurationError):
            LabelConverter(2, 3, tau=tau)
        conv = LabelConverter(2, 3, tau=1.0)
        conv.tau = tau
        with pytest.raises(ConfigurationError):
            convert_label_soft(conv, 0, 0)

    def test_unknown_mode(self):
        with pytest.raises(ConfigurationError):
            LabelConverter(2, 3, mode="sparsemax")


class TestHardConverter:
    def test_one_hot_forward(self):
        conv = LabelConverter(3, 7, tau=1e-5, init_scale=1.0)
        out = convert_label_hard(conv, torch.arange(3), 5)
        assert bool(((out == 1).sum(-1) == 1).all()) and bool(((out == 0).sum(-1) == 6).all())

    def test_argmax_matches_soft(self):
        conv = LabelConverter(3, 7, tau=0.3, init_scale=1.0, seed=1)
        for seed in range(20):
            hard = convert_label_hard(conv, torch.arange(3), seed)
            soft = convert_label_soft(conv, torch.arange(3), seed)
            assert torch.equal(hard.argmax(-1), soft.argmax(-1))

    def test_ties_break_to_lowest_index(self):
        conv = LabelConverter(1, 4, tau=1.0, mode="soft_embedding")
        # soft_embedding has no noise, so equal logits tie exactly
        hard = convert_label_hard(conv, 0, 0)
        assert hard.argmax().item() == 0 and float(hard.sum()) == 1

    def test_gumbel_max_frequencies(self):
        res = check_gumbel_frequencies()
        assert res.passed, res.line()

    def test_straight_through_bitwise(self):
        res = check_straight_through()
        assert res.passed, res.line()

    def test_argmax_invariant_to_row_shift(self):
        conv = LabelConverter(2, 5, tau=1e-3, init_scale=1.0, seed=2)
        shifted = conv.logits.detach() + torch.tensor([[3.5], [-100.0]], dtype=torch.float64)
        for seed in range(50):
            assert torch.equal(convert_label_hard(conv, torch.arange(2), seed),
                               convert_label_hard(conv, torch.arange(2), seed, shifted))


class TestSynthesize:
    def test_identity_composition_gives_class_mean(self, domain, G):
        m = ConditionalMapper(domain.latent_dim, 3)
        conv = _pinned_converter(3, domain.num_classes, [4, 7, 1])
        z = torch.zeros(3, domain.latent_dim, dtype=torch.float64)
        out = synthesize_unlabeled(m, conv, G, z, torch.arange(3), 0)
        assert float((out - domain.means[[4, 7, 1]]).abs().max()) < 1e-12

    def test_mapper_gradient_finite_differences(self, domain, G):
        m = ConditionalMapper(domain.latent_dim, 2, embed_dim=2, hidden=8, seed=0)
        with torch.no_grad():
            for p in m.parameters():
                p.add_(0.1 * torch.randn(p.shape, generator=torch.Generator().manual_seed(1), dtype=p.dtype))
        conv = LabelConverter(2, domain.num_classes, tau=1.0, mode="soft_gumbel", init_scale=0.5)
        z = sample_latent(3, domain.latent_dim, 2)
        y = torch.tensor([0, 1, 1])
        t = torch.ones(3, domain.data_dim, dtype=torch.float64)

        def objective(params):
            return ((synthesize_unlabeled(m, conv, G, z, y, 9, mapper_params=params) - t) ** 2).sum()

        params = {k: v.detach().clone().requires_grad_(True) for k, v in m.params.items()}
        ad = torch.autograd.grad(objective(params), list(params.values()))
        fd = central_difference(lambda: objective(params), list(params.values()))
        assert relative_error(list(ad), fd) < 1e-3

    def test_deterministic(self, domain, G):
        m = ConditionalMapper(domain.latent_dim, 3, seed=1)
        conv = LabelConverter(3, domain.num_classes, init_scale=1.0)
        z = sample_latent(6, domain.latent_dim, 0)
        y = torch.arange(6) % 3
        assert torch.equal(synthesize_unlabeled(m, conv, G, z, y, 4), synthesize_unlabeled(m, conv, G, z, y, 4))

    def test_hard_mode_hits_generator_classes(self, domain, G):
        conv = _pinned_converter(3, domain.num_classes, [4, 7, 1])
        m = ConditionalMapper(domain.latent_dim, 3)
        z = sample_latent(3, domain.latent_dim, 0)
        out = synthesize_unlabeled(m, conv, G, z, torch.arange(3), 0)
        assert torch.allclose(out, generate(G, z, torch.tensor([4, 7, 1])), rtol=0, atol=1e-12)

    def test_class_count_mismatch(self, domain, G):
        conv = LabelConverter(2, domain.num_classes + 1)
        m = ConditionalMapper(domain.latent_dim, 2)
        with pytest.raises(ValueError):
            synthesize_unlabeled(m, conv, G, sample_latent(2, domain.latent_dim, 0), torch.arange(2), 0)

    def test_converter_state_round_trip(self):
        conv = LabelConverter(3, 5, tau=1e-3, mode="soft_gumbel", init_scale=1.0)
        back = LabelConverter.from_state_dict(conv.state_dict())
        assert back.mode == conv.mode and back.tau == conv.tau and torch.equal(back.logits, conv.logits)
        assert np.isclose(back.tau, 1e-3)
