"""Model assembly: CPC backbone, residual conv encoder, heads and layer groups."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Any, Literal

import torch
from torch import nn

from .nn.layers import BatchNorm, ConvResidualBlock, Dense, Dropout, Lstm, concat_pool

HeadVariant = Literal["full", "no_hidden", "no_bn_dropout", "linear"]
HEAD_VARIANTS = ("full", "no_hidden", "no_bn_dropout", "linear")
GROUP_ORDER = ("stem", "body", "head")


@dataclass(frozen=True)
class CpcConfig:
    n_channels: int = 12
    encoder_layers: int = 4
    encoder_width: int = 512
    lstm_layers: int = 2
    lstm_hidden: int = 512
    steps_ahead: int = 12
    n_negatives: int = 128
    use_mlp_head: bool = True
    # fraction of valid anchors scored per sequence; 1.0 scores all of them
    anchor_fraction: float = 1.0

    def __post_init__(self):
        for name in ("n_channels", "encoder_layers", "encoder_width", "lstm_layers", "lstm_hidden", "steps_ahead", "n_negatives"):
            if getattr(self, name) < 1:
                raise ValueError(f"CpcConfig.{name} must be >= 1, got {getattr(self, name)}")
        if not 0 < self.anchor_fraction <= 1:
            raise ValueError(f"CpcConfig.anchor_fraction must be in (0, 1], got {self.anchor_fraction}")


@dataclass(frozen=True)
class ConvConfig:
    n_channels: int = 12
    depth_blocks: int = 4
    base_channels: int = 32

    def __post_init__(self):
        if self.depth_blocks < 1 or self.base_channels < 1 or self.n_channels < 1:
            raise ValueError("ConvConfig needs depth_blocks, base_channels, n_channels >= 1")


def count_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def _params(*modules: nn.Module) -> list[nn.Parameter]:
    return [p for m in modules for p in m.parameters()]


class EncoderLayer(nn.Module):
    """Per-timestep dense -> batch norm -> relu on ``[B, T, F]``."""

    def __init__(self, d_in: int, d_out: int):
        super().__init__()
        self.dense = Dense(d_in, d_out)
        self.bn = BatchNorm(d_out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        h = self.bn(self.dense(x).reshape(b * t, -1)).reshape(b, t, -1)
        return torch.relu(h)


class CpcBackbone(nn.Module):
    def __init__(self, cfg: CpcConfig):
        super().__init__()
        self.cfg = cfg
        widths = [cfg.n_channels] + [cfg.encoder_width] * cfg.encoder_layers
        self.encoder = nn.Sequential(*(EncoderLayer(a, b) for a, b in zip(widths, widths[1:])))
        self.lstm = Lstm(cfg.encoder_width, cfg.lstm_hidden, cfg.lstm_layers)

    @property
    def n_channels(self) -> int:
        return self.cfg.n_channels

    @property
    def feature_dim(self) -> int:
        return 3 * self.cfg.lstm_hidden

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """``x: [B, T, C]`` -> encodings ``z: [B, T, D]`` and context ``c: [B, T, H]``."""
        if x.dim() != 3 or x.shape[2] != self.cfg.n_channels:
            raise ValueError(f"CPC backbone expects [batch, T, {self.cfg.n_channels}], got {tuple(x.shape)}")
        z = self.encoder(x)
        return z, self.lstm(z)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Channel-major ``[B, C, T]`` input -> pooled ``[B, 3H]``."""
        _, c = self(x.transpose(1, 2))
        return concat_pool(c)

    def groups(self) -> dict[str, list[nn.Parameter]]:
        return {"stem": _params(self.encoder), "body": _params(self.lstm)}


class CpcPredictor(nn.Module):
    """Maps context ``c_t`` to predicted encodings ``z_{t+k}`` for k = 1..steps_ahead."""

    def __init__(self, cfg: CpcConfig):
        super().__init__()
        self.hidden = Dense(cfg.lstm_hidden, cfg.lstm_hidden, "relu") if cfg.use_mlp_head else None
        self.heads = nn.ModuleList(Dense(cfg.lstm_hidden, cfg.encoder_width) for _ in range(cfg.steps_ahead))

    def forward(self, c: torch.Tensor) -> list[torch.Tensor]:
        h = self.hidden(c) if self.hidden is not None else c
        return [head(h) for head in self.heads]


class ModelGraph(nn.Module):
    """Base for assembled models: named layer groups ordered stem -> body -> head."""

    def layer_groups(self) -> "OrderedDict[str, list[nn.Parameter]]":
        raise NotImplementedError

    def check_groups(self) -> None:
        groups = self.layer_groups()
        if tuple(groups) != GROUP_ORDER:
            raise AssertionError(f"layer groups must be ordered {GROUP_ORDER}, got {tuple(groups)}")
        seen: dict[int, str] = {}
        for name, params in groups.items():
            for p in params:
                if id(p) in seen:
                    raise AssertionError(f"parameter in both {seen[id(p)]} and {name}")
                seen[id(p)] = name
        missing = [n for n, p in self.named_parameters() if id(p) not in seen]
        if missing:
            raise AssertionError(f"parameters outside every layer group: {missing}")


class CpcModel(ModelGraph):
    def __init__(self, cfg: CpcConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = CpcBackbone(cfg)
        self.predictor = CpcPredictor(cfg)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, list[torch.Tensor]]:
        z, c = self.backbone(x)
        return z, c, self.predictor(c)

    def layer_groups(self):
        g = self.backbone.groups()
        return OrderedDict(stem=g["stem"], body=g["body"], head=_params(self.predictor))


class ConvEncoder(nn.Module):
    """Stem conv followed by stride-2 residual blocks and global avg+max pooling."""

    def __init__(self, cfg: ConvConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        self.stem = nn.Sequential(
            nn.Conv1d(cfg.n_channels, c, 5, padding=2, bias=False),
            BatchNorm(c),
            nn.ReLU(),
        )
        nn.init.kaiming_uniform_(self.stem[0].weight, nonlinearity="relu")
        blocks = []
        for i in range(cfg.depth_blocks):
            c_out = cfg.base_channels * min(2**i, 8)
            blocks.append(ConvResidualBlock(c, c_out, stride=2))
            c = c_out
        self.blocks = nn.Sequential(*blocks)
        self.out_channels = c

    @property
    def n_channels(self) -> int:
        return self.cfg.n_channels

    @property
    def feature_dim(self) -> int:
        return 2 * self.out_channels

    def features(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3 or x.shape[1] != self.cfg.n_channels:
            raise ValueError(f"conv encoder expects [batch, {self.cfg.n_channels}, T], got {tuple(x.shape)}")
        h = self.blocks(self.stem(x))
        return torch.cat([h.mean(dim=2), h.amax(dim=2)], dim=1)

    forward = features

    def groups(self) -> dict[str, list[nn.Parameter]]:
        return {
            "stem": _params(self.stem, *self.blocks[:-1]),
            "body": _params(self.blocks[-1]),
        }


class ProjectionHead(nn.Module):
    def __init__(self, d_in: int, hidden: int, d_out: int, batch_norm: bool = False):
        super().__init__()
        self.fc1 = Dense(d_in, hidden)
        self.bn = BatchNorm(hidden) if batch_norm else None
        self.fc2 = Dense(hidden, d_out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.fc1(x)
        if self.bn is not None:
            h = self.bn(h)
        return self.fc2(torch.relu(h))


class SslModel(ModelGraph):
    """Backbone plus projector (and, for BYOL, a predictor) for two-view objectives."""

    def __init__(self, backbone: nn.Module, proj_hidden: int = 256, proj_dim: int = 64, with_predictor: bool = False):
        super().__init__()
        self.backbone = backbone
        self.projector = ProjectionHead(backbone.feature_dim, proj_hidden, proj_dim)
        self.predictor = ProjectionHead(proj_dim, proj_hidden, proj_dim, batch_norm=True) if with_predictor else None

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return self.projector(self.backbone.features(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.embed(x)

    def layer_groups(self):
        g = self.backbone.groups()
        head = [self.projector] + ([self.predictor] if self.predictor is not None else [])
        return OrderedDict(stem=g["stem"], body=g["body"], head=_params(*head))


class ClassificationHead(nn.Module):
    def __init__(self, d_in: int, n_labels: int, variant: HeadVariant = "full", hidden: int = 512, dropout: float = 0.5):
        super().__init__()
        if variant not in HEAD_VARIANTS:
            raise ValueError(f"unknown head variant {variant!r}; expected one of {HEAD_VARIANTS}")
        self.variant = variant
        layers: list[nn.Module]
        if variant == "full":
            layers = [Dense(d_in, hidden, "relu"), BatchNorm(hidden), Dropout(dropout), Dense(hidden, n_labels)]
        elif variant == "no_hidden":
            layers = [BatchNorm(d_in), Dropout(dropout), Dense(d_in, n_labels)]
        elif variant == "no_bn_dropout":
            layers = [Dense(d_in, hidden, "relu"), Dense(hidden, n_labels)]
        else:
            layers = [Dense(d_in, n_labels)]
        self.layers = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layers(x)


class Classifier(ModelGraph):
    """Backbone features -> classification head; outputs logits ``[B, n_labels]``."""

    def __init__(self, backbone: nn.Module, head: ClassificationHead):
        super().__init__()
        self.backbone = backbone
        self.head = head

    @property
    def n_channels(self) -> int:
        return self.backbone.n_channels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.backbone.features(x))

    def layer_groups(self):
        g = self.backbone.groups()
        return OrderedDict(stem=g["stem"], body=g["body"], head=_params(self.head))


def build_cpc_backbone(cfg: CpcConfig) -> CpcModel:
    return CpcModel(cfg)


def build_conv_encoder(depth_blocks: int = 4, base_channels: int = 32, n_channels: int = 12) -> ConvEncoder:
    return ConvEncoder(ConvConfig(n_channels, depth_blocks, base_channels))


def backbone_of(model: nn.Module) -> nn.Module:
    return model.backbone if isinstance(model, (CpcModel, SslModel, Classifier)) else model


def attach_classification_head(
    backbone: nn.Module,
    n_labels: int,
    variant: HeadVariant = "full",
    hidden: int = 512,
    dropout: float = 0.5,
) -> Classifier:
    backbone = backbone_of(backbone)
    return Classifier(backbone, ClassificationHead(backbone.feature_dim, n_labels, variant, hidden, dropout))


def layer_group_lrs(base_lr: float, factor: float = 10.0, groups=GROUP_ORDER) -> dict[str, float]:
    """Head gets ``base_lr``; each earlier group gets ``factor`` times less."""
    if factor <= 0:
        raise ValueError(f"learning-rate factor must be positive, got {factor}")
    names = list(groups)
    return {name: base_lr / factor ** (len(names) - 1 - i) for i, name in enumerate(names)}


def architecture(model: nn.Module) -> dict[str, Any]:
    """JSON-able descriptor from which :func:`build_from_architecture` rebuilds ``model``."""
    if isinstance(model, CpcModel):
        return {"kind": "cpc", "config": asdict(model.cfg)}
    if isinstance(model, SslModel):
        return {
            "kind": "ssl",
            "backbone": architecture(model.backbone),
            "proj_hidden": model.projector.fc1.d_out,
            "proj_dim": model.projector.fc2.d_out,
            "with_predictor": model.predictor is not None,
        }
    if isinstance(model, CpcBackbone):
        return {"kind": "cpc_backbone", "config": asdict(model.cfg)}
    if isinstance(model, ConvEncoder):
        return {"kind": "conv", "config": asdict(model.cfg)}
    if isinstance(model, Classifier):
        head = model.head
        first = head.layers[0]
        hidden = first.d_out if head.variant in ("full", "no_bn_dropout") else 0
        drop = next((m.p for m in head.layers if isinstance(m, Dropout)), 0.5)
        return {
            "kind": "classifier",
            "backbone": architecture(model.backbone),
            "n_labels": head.layers[-1].d_out,
            "variant": head.variant,
            "hidden": hidden,
            "dropout": drop,
        }
    raise TypeError(f"no architecture descriptor for {type(model).__name__}")


def build_from_architecture(arch: dict[str, Any]) -> nn.Module:
    kind = arch.get("kind")
    if kind == "cpc":
        return CpcModel(CpcConfig(**arch["config"]))
    if kind == "cpc_backbone":
        return CpcBackbone(CpcConfig(**arch["config"]))
    if kind == "conv":
        return ConvEncoder(ConvConfig(**arch["config"]))
    if kind == "ssl":
        return SslModel(build_from_architecture(arch["backbone"]), arch["proj_hidden"], arch["proj_dim"], arch["with_predictor"])
    if kind == "classifier":
        backbone = build_from_architecture(arch["backbone"])
        return Classifier(
            backbone,
            ClassificationHead(backbone.feature_dim, arch["n_labels"], arch["variant"], arch["hidden"] or 1, arch["dropout"]),
        )
    raise ValueError(f"unknown architecture kind {kind!r}")


def backbone_family(arch: dict[str, Any]) -> str:
    """``"cpc"`` or ``"conv"``: the feature extractor family inside an architecture."""
    kind = arch.get("kind")
    if kind in ("cpc", "cpc_backbone"):
        return "cpc"
    if kind == "conv":
        return "conv"
    if kind in ("ssl", "classifier"):
        return backbone_family(arch["backbone"])
    raise ValueError(f"unknown architecture kind {kind!r}")
