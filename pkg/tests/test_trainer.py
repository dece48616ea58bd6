from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
import torch

from mpssl._common import ConfigurationError
from mpssl.classifier import Classifier
from mpssl.foundation import TaskSpec, TrainingBudget, make_target_task, pretrain_foundation_classifier
from mpssl.harness.metrics import strip_volatile
from mpssl.harness.splits import Dataset
from mpssl.lmo import OuterStepConfig
from mpssl.losses import scr_loss
from mpssl.trainer import (GSSL_METHODS, LAMBDA_GRID, METHODS, TrainingError, TrainLoopConfig, evaluate,
                           load_run_checkpoint, lr_at, pssl_label, select_lambda, train, train_baseline,
                           train_mpssl)
from conftest import params_equal, quick_cfg


@pytest.fixture(scope="module")
def f_F(domain):
    return pretrain_foundation_classifier(domain, TrainingBudget())


def _run(task, G, f_F, method, **kw):
    return train(task, quick_cfg(method, **kw), G=G, foundation_classifier=f_F)


def _stream(run):
    return strip_volatile([r.__dict__ for r in run.metrics])


class TestTrainMpssl:
    def test_degenerate_config_matches_base_bitwise(self, domain, G):
        base = train(make_target_task(domain), quick_cfg("base"))
        mp = train_mpssl(make_target_task(domain), G, quick_cfg("mpssl", lam=0.0), OuterStepConfig(lambda_gap=0.0))
        assert params_equal(base.final_params, mp.final_params)
        assert [r.train_loss for r in base.metrics] == [r.train_loss for r in mp.metrics]

    def test_unlabeled_split_never_read(self, task, G):
        run = train_mpssl(task, G, quick_cfg())
        assert run.unlabeled_reads == 0 and task.unlabeled.reads == 0

    def test_generator_frozen(self, task, G):
        before = G.checksum()
        run = train_mpssl(task, G, quick_cfg())
        assert run.generator_unchanged and G.checksum() == before

    def test_metrics_recorded(self, task, G):
        run = train_mpssl(task, G, quick_cfg())
        assert [r.epoch for r in run.metrics] == list(range(4))
        r = run.metrics[-1]
        assert r.gap_loss is not None and r.scr_loss is not None and r.meta_grad_norm_phi is not None
        assert 0 <= r.val_accuracy <= 1 and 0 <= r.test_accuracy <= 1

    def test_mapper_and_converter_move(self, task, G):
        run = train_mpssl(task, G, quick_cfg(), OuterStepConfig(lr=1e-2))
        init = type(run.mapper)(G.latent_dim, task.num_classes, seed=0)
        assert not params_equal(init.params, run.mapper.params)

    def test_without_lmo_variant(self, task, G):
        run = train_mpssl(task, G, quick_cfg(use_lmo=False))
        assert run.mapper is None and run.metrics[-1].gap_loss is None and run.metrics[-1].scr_loss is not None

    def test_non_finite_loss_keeps_last_good(self, domain, G):
        task = make_target_task(domain)
        x = task.train.x.clone()
        x[0, 0] = float("inf")
        task.train = Dataset(x, task.train.y, task.train.index)
        with pytest.raises(TrainingError) as info:
            train(task, quick_cfg("base"))
        assert info.value.last_good_params is not None


class TestBaselines:
    @pytest.mark.parametrize("method", GSSL_METHODS)
    def test_gssl_methods_never_read_unlabeled(self, task, G, f_F, method):
        run = _run(task, G, f_F, method)
        assert run.unlabeled_reads == 0

    @pytest.mark.parametrize("method", ["fixmatch_oracle", "adaptive_oracle"])
    def test_oracles_read_unlabeled(self, task, G, f_F, method):
        run = _run(task, G, f_F, method)
        assert run.unlabeled_reads == 1 and run.metrics[-1].acceptance_rate is not None

    def test_transfer_ssl_uses_foundation_samples(self, task, G):
        run = train_baseline(task, quick_cfg("transfer_ssl"), G=G)
        assert run.unlabeled_reads == 0 and run.metrics[-1].acceptance_rate is not None

    @pytest.mark.parametrize("method", METHODS)
    def test_same_seed_identical_metric_streams(self, domain, G, f_F, method):
        a = _run(make_target_task(domain), G, f_F, method)
        b = _run(make_target_task(domain), G, f_F, method)
        assert _stream(a) == _stream(b)

    def test_data_source_mismatch(self, domain, G):
        task = make_target_task(domain)
        with pytest.raises(ConfigurationError):
            train(task, quick_cfg("pssl"), G=G)
        with pytest.raises(ConfigurationError):
            train(task, quick_cfg("naive_gssl"))
        empty = make_target_task(domain)
        empty.unlabeled._x = empty.unlabeled._x[:0]
        with pytest.raises(ConfigurationError):
            train(empty, quick_cfg("fixmatch_oracle"))
        with pytest.raises(ConfigurationError):
            train_baseline(task, quick_cfg("mpssl"), G=G)

    def test_unknown_method(self):
        with pytest.raises(ConfigurationError):
            TrainLoopConfig(method="mixmatch")

    def test_irrelevant_generator_gives_no_free_lunch(self, domain, G):
        diffs = []
        for s in range(5):
            task = make_target_task(domain, TaskSpec(seed=s, shift_offset=200.0))
            base = train(task, TrainLoopConfig(method="base", seed=s)).test_accuracy
            naive = train(task, TrainLoopConfig(method="naive_gssl", seed=s), G=G).test_accuracy
            diffs.append(naive - base)
        se = np.std(diffs, ddof=1) / np.sqrt(len(diffs))
        assert abs(np.mean(diffs)) <= 3 * se + 1e-9

    def test_fixmatch_acceptance_rate_trend(self, task):
        run = train(task, TrainLoopConfig(method="fixmatch_oracle", seed=0))
        rates = np.array([r.acceptance_rate for r in run.metrics])
        smooth = np.convolve(rates, np.ones(10) / 10, mode="valid")
        assert smooth[-1] >= smooth[0]
        assert np.polyfit(np.arange(len(smooth)), smooth, 1)[0] >= 0


class TestSchedule:
    def test_milestone_decay_exact(self):
        cfg = TrainLoopConfig()
        assert cfg.milestones == (20, 40, 52) and cfg.epochs == 60 and cfg.batch_size == 64
        for epoch, k in [(0, 0), (19, 0), (20, 1), (39, 1), (40, 2), (52, 3), (59, 3)]:
            assert lr_at(cfg, epoch) == cfg.lr * 0.1**k

    def test_logged_lr(self, task):
        run = train(task, quick_cfg("base"))
        assert [r.lr for r in run.metrics] == [0.01, 0.01, 0.01 * 0.1, 0.01 * 0.1**2]

    def test_lambda_grid(self):
        assert LAMBDA_GRID == (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)

    def test_select_lambda(self, task, G):
        lam, scores = select_lambda(task, quick_cfg("mpssl", epochs=1, steps_per_epoch=1), grid=(0.1, 0.5), G=G)
        assert lam in (0.1, 0.5) and set(scores) == {0.1, 0.5}


class TestBestModel:
    def test_best_epoch_has_max_val_accuracy(self, task, G):
        run = train_mpssl(task, G, quick_cfg(epochs=6))
        accs = [r.val_accuracy for r in run.metrics]
        best = run.metrics[run.best_epoch]
        assert best.val_accuracy == max(accs)
        ties = [r for r in run.metrics if r.val_accuracy == max(accs)]
        assert best.val_loss == min(r.val_loss for r in ties)
        acc, _ = evaluate(run.classifier, run.best_params, task.test)
        assert acc == run.test_accuracy

    def test_checkpoint_round_trip(self, task, G, tmp_path):
        path = tmp_path / "ckpt.pt"
        run = train(task, quick_cfg(), G=G, checkpoint_path=path, config_hash="abc")
        payload = load_run_checkpoint(path)
        clf = payload["classifier"]
        assert payload["epoch"] == 3 and payload["mapper"] is not None
        assert evaluate(clf, None, task.test) == evaluate(run.classifier, run.final_params, task.test)


class TestEvaluate:
    def _clf(self):
        return Classifier(2, 4, hidden=(), feature_dim=4, seed=0)

    def test_perfect_predictor(self):
        clf = self._clf()
        with torch.no_grad():
            clf.params["g_w0"].copy_(torch.eye(2, 4))
            clf.params["h_w"].zero_()
            clf.params["h_w"][0] = torch.tensor([1.0, -1.0, 0.0, 0.0])
        x = torch.tensor([[5.0, 0.0]] * 5 + [[-5.0, 0.0]] * 5, dtype=torch.float64)
        y = torch.tensor([0] * 5 + [1] * 5)
        assert evaluate(clf, None, Dataset(x, y))[0] == 1.0

    def test_constant_predictor(self):
        clf = self._clf()
        with torch.no_grad():
            for v in clf.params.values():
                v.zero_()
            clf.params["h_b"][2] = 1.0
        x = torch.as_tensor(np.random.default_rng(0).normal(size=(40, 2)))
        y = torch.arange(40) % 4
        assert evaluate(clf, None, Dataset(x, y))[0] == 0.25

    def test_pure_and_repeatable(self, task):
        clf = Classifier(task.data_dim, 4, seed=1)
        before = clf.snapshot()
        assert evaluate(clf, None, task.test) == evaluate(clf, None, task.test)
        assert params_equal(before, clf.snapshot())

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            evaluate(self._clf(), None, Dataset(torch.zeros(0, 2, dtype=torch.float64), torch.zeros(0)))


class TestPsslLabel:
    def test_class_means(self, domain, task, f_F):
        for c in task.class_to_foundation_map:
            assert int(pssl_label(f_F, domain.means[c]).argmax()) == c

    def test_normalized_and_deterministic(self, task, f_F):
        p = pssl_label(f_F, task.train.x)
        assert float((p.sum(-1) - 1).abs().max()) <= 1e-6
        assert torch.equal(p, pssl_label(f_F, task.train.x))


def test_scr_term_has_no_head_gradient(task):
    clf = Classifier(task.data_dim, 4, seed=0).fit_normalization(task.train.x)
    loss = scr_loss(clf, None, task.train.x, seed=0)
    grads = torch.autograd.grad(loss, [clf.params["h_w"], clf.params["h_b"]], allow_unused=True)
    assert all(g is None or bool((g == 0).all()) for g in grads)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TrainLoopConfig(batch_size=0)
    with pytest.raises(ConfigurationError):
        replace(TrainLoopConfig(), epochs=0)
