import numpy as np
import pytest
import torch

import tsbn.trainer as trainer_mod
from tsbn.datasets import SynthParams, make_synthetic
from tsbn.errors import ConfigError, DivergenceError
from tsbn.nets import build_models
from tsbn.trainer import (METHODS, PartitionViolation, TrainConfig, cross_validate, downstream_params,
                          downstream_step, make_batch, make_optimizer, param_checksum, pretext_step,
                          restoration_params, train, train_baseline, train_tsbn)

H, W = 32, 16


def small_config(**kw):
    base = dict(height=H, width=W, epochs=2, seed=0, pretrain_epochs=1)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def data():
    return make_synthetic(SynthParams(n_samples=24, height=H, width=W, seed=3))


def _batch(data, n=4):
    return make_batch(data.images[:n], data.labels[:n], 0.5)


def test_batch_targets_follow_gsim(data):
    b = _batch(data)
    shift = (b.targets - b.images).view(4, -1)
    for i, label in enumerate(data.labels[:4]):
        assert torch.allclose(shift[i], torch.full_like(shift[i], 0.25 if label else -0.25))


def test_pretext_step_leaves_downstream_untouched(data):
    bundle = build_models("unet_small", seed=0)
    before_down = param_checksum(bundle.classifier, bundle.branch_p, bundle.branch_d)
    before_rest = param_checksum(bundle.restoration)
    loss = pretext_step(bundle, data.samples[:4], small_config())
    assert np.isfinite(loss) and loss > 0
    assert param_checksum(bundle.classifier, bundle.branch_p, bundle.branch_d) == before_down
    assert param_checksum(bundle.restoration) != before_rest


def test_zero_learning_rate_changes_nothing(data):
    bundle = build_models("rdn_small", seed=0)
    before = param_checksum(bundle)
    cfg = small_config(lr=0.0)
    assert pretext_step(bundle, data.samples[:4], cfg) > 0
    ct, bce, total, _ = downstream_step(bundle, data.samples[:4], cfg)
    assert bce > 0 and total > 0
    assert param_checksum(bundle) == before


def test_downstream_step_stops_gradient_at_encoder(data):
    bundle = build_models("unet_small", seed=0)
    before_rest = param_checksum(bundle.restoration)
    before_down = param_checksum(bundle.classifier, bundle.branch_p, bundle.branch_d)
    downstream_step(bundle, data.samples[:4], small_config())
    assert param_checksum(bundle.restoration) == before_rest
    assert param_checksum(bundle.classifier, bundle.branch_p, bundle.branch_d) != before_down


def test_alpha_zero_reduces_to_bce(data):
    bundle = build_models("unet_small", seed=0)
    ct, bce, total, _ = downstream_step(bundle, _batch(data), small_config(alpha=0.0))
    assert ct > 0
    assert total == bce


def test_overfit_single_sample():
    one = make_synthetic(SynthParams(n_samples=1, height=H, width=W, seed=4))
    bundle = build_models("unet_small", seed=0)
    cfg = small_config()
    opt = make_optimizer(restoration_params(bundle), cfg)
    batch = make_batch(one.images, one.labels, cfg.d)
    losses = [pretext_step(bundle, batch, cfg, opt) for _ in range(200)]
    assert losses[-1] <= 0.1 * losses[0]


def test_transfer_alignment_with_frozen_encoder(data):
    bundle = build_models("unet_small", seed=0)
    cfg = small_config()
    opt = make_optimizer(downstream_params(bundle), cfg)
    batch = _batch(data)
    frozen = param_checksum(bundle.restoration)
    cts = [downstream_step(bundle, batch, cfg, opt)[0] for _ in range(300)]
    assert param_checksum(bundle.restoration) == frozen
    assert cts[-1] < 0.1 * cts[0]


def test_epochs_zero_returns_initial_bundle(data):
    out = train_tsbn(data, small_config(epochs=0))
    assert len(out.history) == 0
    assert param_checksum(out.bundle) == param_checksum(build_models("unet_small", seed=0))


def test_tsbn_history_and_determinism(data):
    a = train_tsbn(data, small_config())
    b = train_tsbn(data, small_config())
    assert len(a.history) == 2
    assert a.history.columns == ("loss_mse", "loss_ct", "loss_bce", "loss_d", "train_acc")
    assert a.history.rows == b.history.rows
    assert param_checksum(a.bundle) == param_checksum(b.bundle)
    for row in a.history.rows:
        assert all(np.isfinite(v) for v in row.values())
        assert row["loss_d"] == pytest.approx(row["loss_ct"] + row["loss_bce"])
    csv_lines = a.history.to_csv().splitlines()
    assert csv_lines[0] == "epoch,loss_mse,loss_ct,loss_bce,loss_d,train_acc" and len(csv_lines) == 3


def test_partition_check_passes(data):
    out = train_tsbn(data, small_config(epochs=1, variant="rdn_small"), check_partition=True)
    assert len(out.history) == 1


def test_partition_check_detects_leak(data, monkeypatch):
    real = trainer_mod.pretext_step

    def leaky(bundle, batch, config, optimizer=None, where=None):
        with torch.no_grad():
            bundle.classifier.fc.bias.add_(1.0)
        return real(bundle, batch, config, optimizer, where)

    monkeypatch.setattr(trainer_mod, "pretext_step", leaky)
    with pytest.raises(PartitionViolation):
        train_tsbn(data, small_config(epochs=1), check_partition=True)


def test_divergence_is_reported(data):
    bundle = build_models("unet_small", seed=0)
    with torch.no_grad():
        bundle.restoration.head.bias.fill_(float("nan"))
    with pytest.raises(DivergenceError) as info:
        pretext_step(bundle, _batch(data), small_config(), where=dict(epoch=3, batch=7))
    assert info.value.epoch == 3 and info.value.batch == 7
    assert "epoch=3" in str(info.value)


def test_baseline_structure(data):
    plain = train_baseline("plain", data, small_config())
    assert "loss_ct" not in plain.history.columns and "loss_mse" not in plain.history.columns
    multi = train_baseline("multitask", data, small_config())
    assert {"loss_mse", "loss_bce"} <= set(multi.history.columns)
    assert all(np.isfinite(r["loss_mse"]) and np.isfinite(r["loss_bce"]) for r in multi.history.rows)
    ft = train_baseline("finetune_ssl", data, small_config(pretrain_epochs=2))
    assert len(ft.pretrain_history) == 2 and len(ft.history) == 2
    assert ft.bundle.aux_decoder is None


def test_four_methods_give_distinct_classifiers(data):
    sums = {m: param_checksum(train(m, data, small_config()).classifier) for m in METHODS}
    assert len(set(sums.values())) == 4


def test_methods_share_initial_classifier():
    from tsbn.nets import build_baseline_models
    ref = param_checksum(build_models("unet_small", seed=3).classifier)
    assert param_checksum(build_models("rdn_small", seed=3).classifier) == ref
    for kind in ("plain", "finetune_ssl", "multitask"):
        assert param_checksum(build_baseline_models(kind, seed=3).classifier) == ref
    assert param_checksum(build_models("unet_small", seed=4).classifier) != ref


def test_finetune_without_pretraining_equals_plain(data):
    # with no pretraining epochs the fine-tuning baseline is the plain classifier
    a = train_baseline("finetune_ssl", data, small_config(pretrain_epochs=0))
    b = train_baseline("plain", data, small_config())
    assert param_checksum(a.classifier) == param_checksum(b.classifier)


def test_config_validation(data):
    with pytest.raises(ConfigError):
        small_config(height=30).validate()
    with pytest.raises(ConfigError):
        small_config(w=0).validate()
    with pytest.raises(ConfigError):
        small_config(variant="vgg").validate()
    with pytest.raises(ConfigError):
        train_tsbn(data, TrainConfig(epochs=1))  # 96x48 config vs 32x16 data
    with pytest.raises(ConfigError):
        train("simclr", data, small_config())
    cfg = small_config(alpha=0.3)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"learning_rate": 1.0})


def test_cross_validate_structure(data):
    res = cross_validate("plain", data, small_config(epochs=1), k=3, split_seed=1)
    assert len(res.report.folds) == 3 and len(res.outputs) == 3
    assert res.split.k == 3
    youdens = [r.youden for r in res.report.folds]
    if all(y is not None for y in youdens):
        assert res.report.mean["youden"] == pytest.approx(np.mean(youdens), abs=1e-12)
