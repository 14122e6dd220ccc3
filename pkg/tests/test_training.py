import math

import numpy as np
import pytest
import torch

from ecgssl import rng as rngs
from ecgssl.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from ecgssl.config import RunConfig
from ecgssl.data import split_folds, synth_ecg
from ecgssl.models import attach_classification_head, build_conv_encoder
from ecgssl.nn import bn_state
from ecgssl.physio import PhysioParams
from ecgssl.records import EcgRecord, nonoverlapping_crops
from ecgssl.training import (
    TrainingError,
    finetune_two_step,
    label_efficiency_sweep,
    linear_evaluate,
    noise_robustness_sweep,
    predict_tta,
    predict_tta_batch,
    pretrain,
    train_supervised,
    validation_loss,
)

TINY_CPC = {"encoder_layers": 2, "encoder_width": 8, "lstm_layers": 1, "lstm_hidden": 8, "steps_ahead": 2, "n_negatives": 4}


def tiny_config(**kw):
    base = dict(
        cpc=TINY_CPC,
        conv={"depth_blocks": 2, "base_channels": 4},
        pretrain_crop_s=1.0,
        crop_s=1.0,
        batch_size=8,
        epochs=2,
        linear_epochs=2,
        finetune_epochs=[2, 2],
        head_hidden=8,
        proj_hidden=8,
        proj_dim=4,
        finetune_lr=1e-2,
    )
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def ds():
    return synth_ecg(40, n_channels=3, duration_s=4.0, class_spec=("st_elevation", "wide_qrs"), rng=rngs.stream(0, "training-tests"))


@pytest.fixture(scope="module")
def cpc_ckpt(ds):
    return pretrain(tiny_config(), ds)


def _params(model):
    return {k: v.detach().clone() for k, v in model.named_parameters()}


@pytest.mark.parametrize("objective,model", [("cpc", "cpc"), ("simclr", "conv"), ("byol", "conv"), ("simclr", "cpc")])
def test_pretrain_smoke_and_reload(tmp_path, ds, objective, model):
    cfg = tiny_config(objective=objective, model=model)
    ckpt = pretrain(cfg, ds)
    assert len(ckpt.extra["val_loss"]) == 2
    sel = ckpt.extra["selected_epoch"]
    assert ckpt.extra["val_loss"][sel] == min(ckpt.extra["val_loss"])
    save_checkpoint(tmp_path / "p.ckpt", ckpt)
    reloaded = load_checkpoint(tmp_path / "p.ckpt")
    assert validation_loss(reloaded, ds) == ckpt.extra["val_loss"][sel]
    if objective == "byol":
        assert reloaded.ema is not None


def test_cpc_training_loss_decreases(ds):
    ckpt = pretrain(tiny_config(epochs=50), ds)
    curve = ckpt.extra["train_loss"]
    assert curve[-1] < curve[0]


def test_lr_zero_changes_only_bn_statistics(ds):
    cfg = tiny_config(lr=0.0, weight_decay=0.0, epochs=1)
    torch.manual_seed(cfg.seed)
    from ecgssl.training import build_pretrain_model

    fresh = build_pretrain_model(cfg, ds.n_channels)
    ckpt = pretrain(cfg, ds)
    trained = ckpt.build()
    for k, v in _params(fresh).items():
        assert torch.equal(v, dict(trained.named_parameters())[k].detach())
    moved = [k for k, v in bn_state(fresh).items() if not torch.equal(v, bn_state(trained)[k])]
    assert moved


def test_pretrain_aborts_on_non_finite(ds):
    cfg = tiny_config(lr=1e30, epochs=3)
    with pytest.raises(TrainingError, match="non-finite"):
        pretrain(cfg, ds)


def test_linear_evaluate_freezes_backbone(ds, cpc_ckpt):
    cfg = tiny_config()
    backbone_before = {k: v.clone() for k, v in cpc_ckpt.state.items() if k.startswith("backbone.")}
    report = linear_evaluate(cpc_ckpt, ds, cfg)
    after = {f"backbone.{k}": v for k, v in report.model.backbone.state_dict().items()}
    assert after.keys() == backbone_before.keys()
    for k, v in backbone_before.items():
        assert torch.equal(v, after[k]), k
    assert 0 <= report.macro_auc <= 1
    assert len(report.per_label_auc) == ds.n_labels
    assert report.curve[report.selected_epoch] == max(report.curve)
    n_head = sum(p.numel() for p in report.model.head.parameters())
    assert n_head == report.model.backbone.feature_dim * ds.n_labels + ds.n_labels


def test_two_step_step1_touches_only_head_and_bn_stats(ds, cpc_ckpt):
    cfg = tiny_config(finetune_epochs=[2, 0])
    report = finetune_two_step(cpc_ckpt, ds, cfg)
    backbone = report.model.backbone
    for k, v in backbone.named_parameters():
        assert torch.equal(v.detach(), cpc_ckpt.state[f"backbone.{k}"]), k
    stats_changed = [k for k, v in bn_state(backbone).items() if not torch.equal(v, cpc_ckpt.state[f"backbone.{k}"])]
    assert stats_changed
    assert "step1" in report.extra


def test_two_step_full_run(ds, cpc_ckpt):
    report = finetune_two_step(cpc_ckpt, ds, tiny_config())
    step1_val = report.extra["step1"]["val_macro_auc"]
    assert report.extra["step2"]["val_macro_auc"] >= step1_val - 0.05
    assert report.extra["step2_lrs"] == pytest.approx({"stem": 1e-5, "body": 1e-4, "head": 1e-3})
    nodisc = finetune_two_step(cpc_ckpt, ds, tiny_config(discriminative=False))
    assert len(set(nodisc.extra["step2_lrs"].values())) == 1


def test_no_two_step_with_zero_lr_keeps_parameters(ds, cpc_ckpt):
    cfg = tiny_config(two_step=False, finetune_lr=0.0, weight_decay=0.0)
    report = finetune_two_step(cpc_ckpt, ds, cfg)
    torch.manual_seed(cfg.seed)
    baseline = attach_classification_head(cpc_ckpt.build(), ds.n_labels, cfg.head_variant, cfg.head_hidden, cfg.head_dropout)
    assert "step1" not in report.extra
    for k, v in baseline.named_parameters():
        assert torch.equal(v.detach(), dict(report.model.named_parameters())[k].detach()), k


def test_train_supervised_from_scratch(ds):
    report = train_supervised(ds, tiny_config(model="conv", objective="simclr"))
    assert len(report.curve) == 4 and 0 <= report.macro_auc <= 1


def _conv_classifier(n_labels=2):
    torch.manual_seed(0)
    model = attach_classification_head(build_conv_encoder(2, 4, 3), n_labels)
    return model.eval()


def test_tta_single_window_and_tiling():
    model = _conv_classifier()
    window = np.random.default_rng(0).normal(size=(3, 250)).astype(np.float32)
    single = torch.sigmoid(model(torch.from_numpy(window[None]))).double().detach().numpy()[0]
    np.testing.assert_allclose(predict_tta(model, EcgRecord("a", window)), single, atol=1e-7)
    tiled = EcgRecord("b", np.tile(window, (1, 4)))
    np.testing.assert_allclose(predict_tta(model, tiled), single, atol=1e-7)


def test_tta_mean_of_four_crops():
    model = _conv_classifier()
    rec = EcgRecord("c", np.random.default_rng(1).normal(size=(3, 1000)).astype(np.float32))
    crops = nonoverlapping_crops(rec, 2.5)
    assert len(crops) == 4
    manual = np.mean([torch.sigmoid(model(torch.from_numpy(np.array(c.samples)[None]))).double().detach().numpy()[0] for c in crops], axis=0)
    np.testing.assert_allclose(predict_tta(model, rec), manual, atol=1e-7)
    batch = predict_tta_batch(model, [rec, rec], batch_size=3)
    np.testing.assert_allclose(batch, np.stack([manual, manual]), atol=1e-7)


def test_noise_sweep_zero_level_equals_clean(ds):
    model = _conv_classifier()
    _, _, test_ids = split_folds(ds.manifest)
    recs, labels = ds.get(test_ids), ds.label_matrix(test_ids)
    rows = noise_robustness_sweep(model, recs, labels, [PhysioParams.zero(), 1, 6], seed=0, crop_s=1.0)
    clean = predict_tta_batch(model, recs, 1.0)
    from ecgssl.metrics import macro_auc

    assert rows[0]["macro_auc"] == macro_auc(clean, labels)[0]
    assert math.isinf(rows[0]["mean_snr_db"])
    assert rows[1]["mean_snr_db"] > rows[2]["mean_snr_db"]


def test_label_sweep(ds, cpc_ckpt):
    cfg = tiny_config(finetune_epochs=[1, 1])
    result = label_efficiency_sweep(cpc_ckpt, ds, cfg, fold_counts=[1, 8], repeats=1)
    rows = result["rows"]
    assert {(r["fold_count"], r["variant"]) for r in rows} == {(1, "pretrained"), (1, "scratch"), (8, "pretrained"), (8, "scratch")}
    n1 = next(r["n_train"] for r in rows if r["fold_count"] == 1)
    n8 = next(r["n_train"] for r in rows if r["fold_count"] == 8)
    assert n1 < n8
    full = finetune_two_step(cpc_ckpt, ds, cfg)
    pre8 = next(r["macro_auc"] for r in rows if r["fold_count"] == 8 and r["variant"] == "pretrained")
    assert pre8 == full.macro_auc


def test_determinism(ds, cpc_ckpt):
    cfg = tiny_config()
    a = linear_evaluate(cpc_ckpt, ds, cfg).to_json()
    b = linear_evaluate(cpc_ckpt, ds, cfg).to_json()
    assert a == b
    p1 = pretrain(cfg, ds)
    p2 = pretrain(cfg, ds)
    assert p1.extra == p2.extra
    assert all(torch.equal(v, p2.state[k]) for k, v in p1.state.items())


def test_incompatible_channels(ds, cpc_ckpt):
    other = synth_ecg(20, n_channels=2, duration_s=2.0, rng=np.random.default_rng(0))
    with pytest.raises(TrainingError, match="channels"):
        linear_evaluate(cpc_ckpt, other, tiny_config())
