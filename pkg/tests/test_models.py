import pytest
import torch

from ecgssl.models import (
    ClassificationHead,
    ConvConfig,
    CpcConfig,
    SslModel,
    architecture,
    attach_classification_head,
    backbone_family,
    build_conv_encoder,
    build_cpc_backbone,
    build_from_architecture,
    count_params,
    layer_group_lrs,
)


def toy_cfg(**kw):
    return CpcConfig(**{"n_channels": 3, "encoder_width": 8, "lstm_hidden": 6, "steps_ahead": 2, "n_negatives": 4, **kw})


def test_cpc_shapes():
    model = build_cpc_backbone(CpcConfig())
    model.eval()
    z, c, preds = model(torch.zeros(2, 20, 12))
    assert z.shape == (2, 20, 512) and c.shape == (2, 20, 512)
    assert len(preds) == 12 and all(p.shape == (2, 20, 512) for p in preds)
    with pytest.raises(ValueError):
        model(torch.zeros(2, 12, 20))


def test_default_parameter_count_near_5_8m():
    clf = attach_classification_head(build_cpc_backbone(CpcConfig()), 71)
    n = count_params(clf)
    assert 0.8 * 5.8e6 <= n <= 1.2 * 5.8e6


def test_no_mlp_head_removes_shared_hidden_layer():
    cfg = toy_cfg()
    with_mlp = count_params(build_cpc_backbone(cfg))
    without = count_params(build_cpc_backbone(toy_cfg(use_mlp_head=False)))
    assert with_mlp - without == cfg.lstm_hidden * cfg.lstm_hidden + cfg.lstm_hidden


@pytest.mark.parametrize("bad", [{"steps_ahead": 0}, {"n_negatives": 0}, {"encoder_width": 0}])
def test_invalid_cpc_config(bad):
    with pytest.raises(ValueError):
        toy_cfg(**bad)


def test_conv_encoder_shapes_and_depth():
    enc = build_conv_encoder(4, 32)
    assert enc.features(torch.zeros(2, 12, 250)).shape == (2, enc.feature_dim)
    counts = [count_params(build_conv_encoder(d, 8)) for d in (1, 2, 4, 8)]
    assert counts == sorted(counts) and len(set(counts)) == 4
    with pytest.raises(ValueError):
        ConvConfig(depth_blocks=0)


def test_linear_head_contract():
    clf = attach_classification_head(build_cpc_backbone(CpcConfig()), 71, "linear")
    params = list(clf.head.parameters())
    assert [tuple(p.shape) for p in params] == [(3 * 512, 71), (71,)]


def test_head_variant_audit():
    backbone = build_cpc_backbone(toy_cfg()).backbone
    d, L, H = backbone.feature_dim, 5, 7
    sizes = {v: count_params(ClassificationHead(d, L, v, hidden=H)) for v in ("full", "no_hidden", "no_bn_dropout", "linear")}
    assert sizes["linear"] == d * L + L
    assert sizes["no_bn_dropout"] == d * H + H + H * L + L
    assert sizes["full"] == sizes["no_bn_dropout"] + 2 * H
    assert sizes["no_hidden"] == sizes["linear"] + 2 * d
    with pytest.raises(ValueError):
        ClassificationHead(d, L, "deep")


@pytest.mark.parametrize("make", ["cpc", "conv", "ssl"])
def test_layer_groups_partition(make):
    if make == "cpc":
        model = build_cpc_backbone(toy_cfg())
    elif make == "conv":
        model = attach_classification_head(build_conv_encoder(3, 4, 3), 2)
    else:
        model = SslModel(build_conv_encoder(2, 4, 3), 8, 4, with_predictor=True)
    model.check_groups()
    assert list(model.layer_groups()) == ["stem", "body", "head"]


def test_layer_group_lrs():
    lrs = layer_group_lrs(1e-3)
    assert lrs == {"stem": pytest.approx(1e-5), "body": pytest.approx(1e-4), "head": 1e-3}
    assert layer_group_lrs(1e-3, 1.0) == {"stem": 1e-3, "body": 1e-3, "head": 1e-3}
    with pytest.raises(ValueError):
        layer_group_lrs(1e-3, 0)


@pytest.mark.parametrize(
    "model",
    [
        build_cpc_backbone(toy_cfg()),
        build_cpc_backbone(toy_cfg()).backbone,
        build_conv_encoder(2, 4, 3),
        SslModel(build_conv_encoder(2, 4, 3), 8, 4, True),
        attach_classification_head(build_cpc_backbone(toy_cfg()), 3, "no_hidden", dropout=0.2),
        attach_classification_head(build_conv_encoder(2, 4, 3), 3, "linear"),
    ],
)
def test_architecture_round_trip(model):
    arch = architecture(model)
    rebuilt = build_from_architecture(arch)
    assert architecture(rebuilt) == arch
    rebuilt.load_state_dict(model.state_dict())
    assert backbone_family(arch) in ("cpc", "conv")
