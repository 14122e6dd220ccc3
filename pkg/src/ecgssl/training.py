"""Pretraining loops and the downstream evaluation protocols.

Every protocol is deterministic given ``config.seed``: crops and views draw
from per-record streams keyed by (seed, record id, epoch), negatives and
dropout from seeded torch generators, and training runs on one worker.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import rng as rngs
from .checkpoint import Checkpoint
from .config import RunConfig
from .data import Dataset, split_folds
from .metrics import excluded_labels, macro_auc
from .models import (
    Classifier,
    CpcModel,
    SslModel,
    attach_classification_head,
    backbone_of,
    build_conv_encoder,
    build_cpc_backbone,
    layer_group_lrs,
)
from .nn.layers import set_bn_mode
from .nn.optim import adamw
from .objectives import byol_loss, cpc_outputs, ema_update, info_nce_loss, make_ema, nt_xent_loss
from .physio import NoiseLevel, PhysioParams, apply_physio_noise
from .records import EcgRecord, Segment, nonoverlapping_crops, random_crop, snr_db, zscore_channels
from .transforms import two_views

log = logging.getLogger("ecgssl")


class TrainingError(RuntimeError):
    pass


@dataclass
class MetricsReport:
    macro_auc: float
    per_label_auc: list[float | None]
    curve: list[float]
    selected_epoch: int
    seed: int
    train_loss: list[float] = field(default_factory=list)
    excluded_labels: list[int] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)
    model: nn.Module | None = field(default=None, repr=False, compare=False)

    def to_json(self) -> dict[str, Any]:
        return {
            "macro_auc": self.macro_auc,
            "per_label_auc": self.per_label_auc,
            "excluded_labels": self.excluded_labels,
            "curve": self.curve,
            "train_loss": self.train_loss,
            "selected_epoch": self.selected_epoch,
            "seed": self.seed,
            "extra": self.extra,
        }


# --- batching ------------------------------------------------------------------


def _batches(ids: Sequence[str], batch_size: int, rng: np.random.Generator | None) -> Iterator[list[str]]:
    order = list(ids) if rng is None else [ids[i] for i in rng.permutation(len(ids))]
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    # batch-norm needs two samples per batch
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2].extend(chunks.pop())
    yield from chunks


def _prepare(record: EcgRecord, zscore: bool) -> EcgRecord:
    if not zscore:
        return record
    return EcgRecord(record.id, zscore_channels(record.samples), record.fs, record.labels)


def _tensor(segments: Sequence[Segment]) -> torch.Tensor:
    return torch.from_numpy(np.stack([np.asarray(s.samples, dtype=np.float32) for s in segments]))


def _crops(records: Sequence[EcgRecord], len_s: float, seed: int, epoch: Any) -> list[Segment]:
    return [random_crop(r, len_s, rngs.stream(seed, r.id, epoch, "crop")) for r in records]


def _check_finite(loss: torch.Tensor, where: str) -> None:
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite loss ({loss.item()}) during {where}")


# --- pretraining -------------------------------------------------------------------


def build_pretrain_model(config: RunConfig, n_channels: int) -> nn.Module:
    if config.model == "cpc":
        cpc = config.cpc_config
        if cpc.n_channels != n_channels:
            cpc = type(cpc)(**{**config.cpc, "n_channels": n_channels})
        backbone_model = build_cpc_backbone(cpc)
        if config.objective == "cpc":
            return backbone_model
        backbone = backbone_model.backbone
    else:
        conv = config.conv_config
        backbone = build_conv_encoder(conv.depth_blocks, conv.base_channels, n_channels)
    return SslModel(backbone, config.proj_hidden, config.proj_dim, with_predictor=config.objective == "byol")


def build_backbone(config: RunConfig, n_channels: int) -> nn.Module:
    """Randomly initialised feature extractor, as used by the supervised baseline."""
    return backbone_of(build_pretrain_model(config, n_channels))


class _Objective:
    """One pretraining objective: how to score a batch of records."""

    def __init__(self, model: nn.Module, config: RunConfig, ema_state: dict | None = None):
        self.model = model
        self.config = config
        self.ema = None
        if config.objective == "byol":
            self.ema = make_ema(model, config.ema_tau)
            if ema_state is not None:
                self.ema.target.load_state_dict(ema_state)

    def loss(self, records: Sequence[EcgRecord], key: tuple, training: bool) -> torch.Tensor:
        cfg = self.config
        seed = cfg.seed
        crops = _crops(records, cfg.pretrain_crop, seed, key)
        if cfg.objective == "cpc":
            x = _tensor(crops).transpose(1, 2)
            z, _, preds = self.model(x)
            out = cpc_outputs(
                z,
                preds,
                self.model.cfg.n_negatives,
                rngs.torch_generator(seed, "negatives", *key),
                self.model.cfg.anchor_fraction,
            )
            return info_nce_loss(out, cfg.step_reduction)
        pipeline = cfg.pipeline()
        pairs = [two_views(s, pipeline, rngs.stream(seed, s.source_id, *key, "views")) for s in crops]
        v1 = _tensor([a for a, _ in pairs])
        v2 = _tensor([b for _, b in pairs])
        if cfg.objective == "simclr":
            return nt_xent_loss(self.model.embed(v1), self.model.embed(v2), cfg.temperature)
        target = self.ema.target
        target.train(training)
        with torch.no_grad():
            t1, t2 = target.embed(v1), target.embed(v2)
        p1 = self.model.predictor(self.model.embed(v1))
        p2 = self.model.predictor(self.model.embed(v2))
        return 0.5 * (byol_loss(p1, t2) + byol_loss(p2, t1))

    def after_step(self) -> None:
        if self.ema is not None:
            ema_update(self.model, self.ema)

    @torch.no_grad()
    def validation_loss(self, records: Sequence[EcgRecord]) -> float:
        """Mean loss over fixed crops, views and negatives of ``records`` in eval mode."""
        self.model.eval()
        total, count = 0.0, 0
        for bi, start in enumerate(range(0, len(records), self.config.batch_size)):
            batch = records[start : start + self.config.batch_size]
            loss = self.loss(batch, ("val", bi), training=False)
            _check_finite(loss, "validation")
            total += loss.item() * len(batch)
            count += len(batch)
        return total / count


def _split_records(dataset: Dataset, config: RunConfig) -> tuple[list[EcgRecord], list[EcgRecord]]:
    train_ids, val_ids, _ = split_folds(dataset.manifest, config.train_folds)
    prep = lambda ids: [_prepare(r, config.zscore) for r in dataset.get(ids)]  # noqa: E731
    return prep(train_ids), prep(val_ids)


def validation_loss(checkpoint: Checkpoint, dataset: Dataset, config: RunConfig | None = None) -> float:
    """Pretraining validation loss of a saved model (config defaults to the one it was trained with)."""
    config = config or RunConfig.from_dict(checkpoint.config)
    _, val_records = _split_records(dataset, config)
    return _Objective(checkpoint.build(), config, checkpoint.ema).validation_loss(val_records)


def pretrain(config: RunConfig, dataset: Dataset, on_epoch: Callable[[int, float, float], None] | None = None) -> Checkpoint:
    """Run the configured objective and keep the epoch with the lowest validation loss.

    The returned checkpoint carries both loss curves and the selected epoch in
    ``extra``. A non-finite loss aborts with :class:`TrainingError`.
    """
    train_records, val_records = _split_records(dataset, config)
    if not train_records:
        raise TrainingError("empty training set")
    torch.manual_seed(config.seed)
    model = build_pretrain_model(config, dataset.n_channels)
    objective = _Objective(model, config)
    opt = adamw(model.parameters(), config.lr, config.weight_decay)
    by_id = {r.id: r for r in train_records}

    best_state, best_ema, best_epoch = None, None, -1
    train_curve: list[float] = []
    val_curve: list[float] = []
    for epoch in range(config.epochs):
        model.train()
        total, count = 0.0, 0
        for bi, ids in enumerate(_batches(list(by_id), config.batch_size, rngs.stream(config.seed, "shuffle", epoch))):
            batch = [by_id[i] for i in ids]
            loss = objective.loss(batch, (epoch, bi), training=True)
            _check_finite(loss, f"pretraining epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            objective.after_step()
            total += loss.item() * len(ids)
            count += len(ids)
        train_curve.append(total / count)
        val_curve.append(objective.validation_loss(val_records))
        log.info("pretrain epoch %d train_loss %.5f val_loss %.5f", epoch, train_curve[-1], val_curve[-1])
        if on_epoch is not None:
            on_epoch(epoch, train_curve[-1], val_curve[-1])
        if best_epoch < 0 or val_curve[-1] < val_curve[best_epoch]:
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            if objective.ema is not None:
                best_ema = copy.deepcopy(objective.ema.target.state_dict())

    model.load_state_dict(best_state)
    return Checkpoint.from_model(
        model,
        config.to_dict(),
        optimizer=opt.state_dict(),
        ema=best_ema,
        rng_state={"seed": config.seed, "torch": torch.get_rng_state()},
        extra={"train_loss": train_curve, "val_loss": val_curve, "selected_epoch": best_epoch},
    )


# --- prediction and evaluation ------------------------------------------------------


@torch.no_grad()
def predict_tta_batch(model: nn.Module, records: Sequence[EcgRecord], crop_s: float = 2.5, batch_size: int = 256) -> np.ndarray:
    """Per-record sigmoid probabilities averaged over all non-overlapping crops."""
    was_training = model.training
    model.eval()
    owners: list[int] = []
    segments: list[Segment] = []
    for i, r in enumerate(records):
        crops = nonoverlapping_crops(r, crop_s)
        segments.extend(crops)
        owners.extend([i] * len(crops))
    probs = []
    for start in range(0, len(segments), batch_size):
        x = _tensor(segments[start : start + batch_size])
        probs.append(torch.sigmoid(model(x)).double())
    p = torch.cat(probs).numpy()
    owners_arr = np.asarray(owners)
    out = np.stack([p[owners_arr == i].mean(axis=0) for i in range(len(records))])
    model.train(was_training)
    return out


def predict_tta(model: nn.Module, record: EcgRecord, crop_s: float = 2.5) -> np.ndarray:
    return predict_tta_batch(model, [record], crop_s)[0]


def evaluate(model: nn.Module, records: Sequence[EcgRecord], labels: np.ndarray, crop_s: float = 2.5) -> tuple[float, list[float | None]]:
    return macro_auc(predict_tta_batch(model, records, crop_s), labels)


def _train_classifier(
    model: Classifier,
    dataset: Dataset,
    train_ids: Sequence[str],
    val_ids: Sequence[str],
    config: RunConfig,
    epochs: int,
    lrs: float | dict[str, float],
    trainable: Sequence[str],
    backbone_mode: str,
    stage: str,
) -> tuple[list[float], list[float], int]:
    """Optimise BCE on random crops; keep the epoch with the best validation macro AUC.

    ``trainable`` names the layer groups that receive updates; the others are
    frozen. ``backbone_mode`` is the batch-norm mode of the backbone in training.
    """
    groups = model.layer_groups()
    for name, params in groups.items():
        for p in params:
            p.requires_grad_(name in trainable)
    opt = adamw({n: groups[n] for n in trainable}, lrs, config.weight_decay)
    frozen_backbone = "stem" not in trainable and "body" not in trainable and backbone_mode != "train"
    records = {r.id: _prepare(r, config.zscore) for r in dataset.get(list(train_ids))}
    val_records = [_prepare(r, config.zscore) for r in dataset.get(list(val_ids))]
    val_labels = dataset.label_matrix(val_ids)

    val_curve: list[float] = []
    loss_curve: list[float] = []
    best_state, best_epoch = None, -1
    for epoch in range(epochs):
        model.train()
        set_bn_mode(model.backbone, backbone_mode)
        total, count = 0.0, 0
        for bi, ids in enumerate(_batches(list(train_ids), config.batch_size, rngs.stream(config.seed, stage, "shuffle", epoch))):
            batch = [records[i] for i in ids]
            x = _tensor(_crops(batch, config.crop_s, config.seed, (stage, epoch)))
            y = torch.from_numpy(np.stack([r.label_vector(dataset.n_labels) for r in batch]))
            if frozen_backbone and backbone_mode == "eval":
                with torch.no_grad():
                    feats = model.backbone.features(x)
                logits = model.head(feats)
            else:
                logits = model(x)
            loss = F.binary_cross_entropy_with_logits(logits, y)
            _check_finite(loss, f"{stage} epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(ids)
            count += len(ids)
        loss_curve.append(total / count)
        auc, _ = evaluate(model, val_records, val_labels, config.crop_s)
        val_curve.append(auc)
        log.info("%s epoch %d train_loss %.5f val_macro_auc %.5f", stage, epoch, loss_curve[-1], auc)
        if best_epoch < 0 or auc > val_curve[best_epoch]:
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
    if best_state is not None:
        model.load_state_dict(best_state)
    for p in model.parameters():
        p.requires_grad_(True)
    return loss_curve, val_curve, best_epoch


def _report(model: Classifier, dataset: Dataset, test_ids: Sequence[str], config: RunConfig, curve, loss_curve, epoch, extra=None) -> MetricsReport:
    test_records = [_prepare(r, config.zscore) for r in dataset.get(list(test_ids))]
    auc, per_label = evaluate(model, test_records, dataset.label_matrix(test_ids), config.crop_s)
    return MetricsReport(
        macro_auc=auc,
        per_label_auc=per_label,
        curve=list(curve),
        selected_epoch=epoch,
        seed=config.seed,
        train_loss=list(loss_curve),
        excluded_labels=excluded_labels(per_label),
        extra=extra or {},
        model=model,
    )


def _backbone_from(checkpoint: Checkpoint | None, config: RunConfig, n_channels: int) -> nn.Module:
    if checkpoint is None:
        return build_backbone(config, n_channels)
    backbone = backbone_of(checkpoint.build())
    if backbone.n_channels != n_channels:
        raise TrainingError(f"checkpoint expects {backbone.n_channels} channels, dataset has {n_channels}")
    return backbone


def linear_evaluate(
    checkpoint: Checkpoint | None,
    dataset: Dataset,
    config: RunConfig,
    train_ids: Sequence[str] | None = None,
) -> MetricsReport:
    """Train a single linear layer on frozen features (batch-norm statistics frozen too).

    ``checkpoint=None`` probes a randomly initialised backbone.
    """
    tr, val_ids, test_ids = split_folds(dataset.manifest, config.train_folds)
    train_ids = tr if train_ids is None else train_ids
    torch.manual_seed(config.seed)
    backbone = _backbone_from(checkpoint, config, dataset.n_channels)
    model = attach_classification_head(backbone, dataset.n_labels, "linear")
    loss_curve, curve, epoch = _train_classifier(
        model, dataset, train_ids, val_ids, config, config.linear_epochs,
        config.finetune_lr, ["head"], "eval", "linear",
    )
    return _report(model, dataset, test_ids, config, curve, loss_curve, epoch)


def finetune_two_step(
    checkpoint: Checkpoint | None,
    dataset: Dataset,
    config: RunConfig,
    train_ids: Sequence[str] | None = None,
) -> MetricsReport:
    """Head-only training with backbone batch-norm in stats mode, then full finetuning.

    Step 2 runs at a tenth of ``finetune_lr`` for the head with the factor
    cascade towards the stem. ``config.two_step=False`` skips step 1 and
    finetunes everything at ``finetune_lr``; ``config.discriminative=False``
    uses one learning rate for all groups. ``checkpoint=None`` trains from scratch.
    """
    tr, val_ids, test_ids = split_folds(dataset.manifest, config.train_folds)
    train_ids = tr if train_ids is None else train_ids
    torch.manual_seed(config.seed)
    backbone = _backbone_from(checkpoint, config, dataset.n_channels)
    model = attach_classification_head(backbone, dataset.n_labels, config.head_variant, config.head_hidden, config.head_dropout)
    head_epochs, full_epochs = config.finetune_epochs
    extra: dict[str, Any] = {}
    curve: list[float] = []
    losses: list[float] = []
    epoch = -1

    if config.two_step and head_epochs > 0:
        losses, curve, epoch = _train_classifier(
            model, dataset, train_ids, val_ids, config, head_epochs,
            config.finetune_lr, ["head"], "stats", "finetune-step1",
        )
        step1 = _report(model, dataset, test_ids, config, curve, losses, epoch)
        extra["step1"] = step1.to_json() | {"val_macro_auc": curve[epoch]}
        log.info("finetune step 1 selected epoch %d test macro AUC %.5f", epoch, step1.macro_auc)

    if full_epochs > 0:
        base = config.finetune_lr / 10 if (config.two_step and head_epochs > 0) else config.finetune_lr
        factor = config.lr_factor if config.discriminative else 1.0
        lrs = layer_group_lrs(base, factor)
        extra["step2_lrs"] = lrs
        losses, curve, epoch = _train_classifier(
            model, dataset, train_ids, val_ids, config, full_epochs,
            lrs, ["stem", "body", "head"], "train", "finetune-step2",
        )
        extra["step2"] = {"curve": curve, "selected_epoch": epoch, "val_macro_auc": curve[epoch] if curve else None}
    return _report(model, dataset, test_ids, config, curve, losses, epoch, extra)


def train_supervised(dataset: Dataset, config: RunConfig, train_ids: Sequence[str] | None = None) -> MetricsReport:
    """Randomly initialised backbone trained end to end with one learning rate."""
    head_epochs, full_epochs = config.finetune_epochs
    cfg = config.with_overrides(two_step=False, discriminative=False, finetune_epochs=[0, head_epochs + full_epochs])
    return finetune_two_step(None, dataset, cfg, train_ids)


# --- sweeps ----------------------------------------------------------------------


def noise_robustness_sweep(
    model: nn.Module,
    records: Sequence[EcgRecord],
    labels: np.ndarray,
    levels: Sequence[int | NoiseLevel | PhysioParams] = (1, 2, 3, 4, 5, 6),
    seed: int = 0,
    crop_s: float = 2.5,
) -> list[dict[str, Any]]:
    """Macro AUC and mean SNR of the test set perturbed at each noise level."""
    rows = []
    for level in levels:
        key = level if isinstance(level, (int, np.integer)) else repr(level)
        noisy, snrs = [], []
        for r in records:
            seg, noise = apply_physio_noise(r.as_segment(), level, rngs.stream(seed, "noise", key, r.id), return_noise=True)
            noisy.append(EcgRecord(r.id, seg.samples, r.fs, r.labels))
            snrs.append(snr_db(r.samples, noise))
        auc, per_label = evaluate(model, noisy, labels, crop_s)
        finite = [s for s in snrs if not math.isinf(s)]
        rows.append({
            "level": key,
            "macro_auc": auc,
            "per_label_auc": per_label,
            "mean_snr_db": float(np.mean(finite)) if finite else math.inf,
        })
        log.info("noise level %s macro AUC %.5f mean SNR %.2f dB", key, auc, rows[-1]["mean_snr_db"])
    return rows


def label_efficiency_sweep(
    checkpoint: Checkpoint,
    dataset: Dataset,
    config: RunConfig,
    fold_counts: Sequence[int] | None = None,
    repeats: int | None = None,
) -> dict[str, Any]:
    """Finetune (pretrained) and train from scratch on folds ``1..c`` for each count ``c``."""
    fold_counts = list(fold_counts or config.fold_counts)
    repeats = repeats or config.repeats
    rows = []
    for c in fold_counts:
        train_ids, _, _ = split_folds(dataset.manifest, c)
        for rep in range(repeats):
            cfg = config.with_overrides(seed=config.seed + rep)
            pre = finetune_two_step(checkpoint, dataset, cfg, train_ids)
            scratch = train_supervised(dataset, cfg, train_ids)
            for variant, rep_report in (("pretrained", pre), ("scratch", scratch)):
                rows.append({
                    "fold_count": c,
                    "seed": cfg.seed,
                    "variant": variant,
                    "n_train": len(train_ids),
                    "macro_auc": rep_report.macro_auc,
                })
            log.info("folds %d seed %d pretrained %.4f scratch %.4f", c, cfg.seed, pre.macro_auc, scratch.macro_auc)
    summary = []
    for c in fold_counts:
        for variant in ("pretrained", "scratch"):
            vals = [r["macro_auc"] for r in rows if r["fold_count"] == c and r["variant"] == variant]
            summary.append({"fold_count": c, "variant": variant, "mean": float(np.mean(vals)), "std": float(np.std(vals))})
    return {"rows": rows, "summary": summary}
