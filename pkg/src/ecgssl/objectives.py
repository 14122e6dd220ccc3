"""Contrastive objectives: CPC InfoNCE, SimCLR NT-Xent, BYOL regression with an EMA target."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Literal

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


def sample_negatives(T: int, t: int, k: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` indices drawn with replacement, uniformly from ``{0..T-1}`` minus the positive ``t+k``."""
    if T < 2 or not 0 <= t + k < T:
        raise ValueError(f"no negatives for T={T}, t={t}, k={k}")
    u = rng.integers(0, T - 1, size=n)
    return u + (u >= t + k)


def sample_negative_indices(batch: int, T: int, anchors: torch.Tensor, k: int, n: int, generator: torch.Generator | None = None) -> torch.Tensor:
    """Vectorised :func:`sample_negatives` for every (sample, anchor): ``[batch, len(anchors), n]``."""
    u = torch.randint(0, T - 1, (batch, anchors.numel(), n), generator=generator)
    positive = (anchors + k).view(1, -1, 1)
    return u + (u >= positive).long()


@dataclass
class CpcBatchOutputs:
    z: torch.Tensor
    # preds[k - 1]: predictions of z_{t+k} from c_t, [B, T, D]
    preds: list[torch.Tensor]
    # per step k: anchor positions t and their negatives [B, A_k, n]
    anchors: dict[int, torch.Tensor]
    negatives: dict[int, torch.Tensor]

    @property
    def n_negatives(self) -> int:
        return next(iter(self.negatives.values())).shape[-1]


def cpc_outputs(
    z: torch.Tensor,
    preds: list[torch.Tensor],
    n_negatives: int,
    generator: torch.Generator | None = None,
    anchor_fraction: float = 1.0,
) -> CpcBatchOutputs:
    """Draw anchors and in-sequence negatives for every prediction step."""
    batch, T, _ = z.shape
    anchors: dict[int, torch.Tensor] = {}
    negatives: dict[int, torch.Tensor] = {}
    for k in range(1, len(preds) + 1):
        valid = T - k
        if valid < 1:
            continue
        if anchor_fraction < 1.0:
            count = max(1, int(round(anchor_fraction * valid)))
            t_idx = torch.randperm(valid, generator=generator)[:count].sort().values
        else:
            t_idx = torch.arange(valid)
        anchors[k] = t_idx
        negatives[k] = sample_negative_indices(batch, T, t_idx, k, n_negatives, generator)
    return CpcBatchOutputs(z, preds, anchors, negatives)


def info_nce_loss(out: CpcBatchOutputs, step_reduction: Literal["mean", "sum"] = "mean") -> torch.Tensor:
    """InfoNCE with dot-product scores against in-sequence negatives.

    ``"mean"`` averages over every (sample, anchor, step) triple; ``"sum"``
    adds the per-step means. Sequences no longer than ``steps_ahead`` are
    rejected.
    """
    if out.z.shape[1] <= len(out.preds):
        raise ValueError(f"sequence length {out.z.shape[1]} must exceed steps_ahead={len(out.preds)}")
    batch, T, D = out.z.shape
    z_flat = out.z.reshape(batch * T, D)
    offsets = (torch.arange(batch) * T).view(batch, 1, 1)
    terms = []
    for k, t_idx in out.anchors.items():
        pred = out.preds[k - 1][:, t_idx]
        positive = (pred * out.z[:, t_idx + k]).sum(-1, keepdim=True)
        z_neg = F.embedding(out.negatives[k] + offsets, z_flat)
        negative = (pred.unsqueeze(2) * z_neg).sum(-1)
        logits = torch.cat([positive, negative], dim=-1)
        terms.append((torch.logsumexp(logits, dim=-1) - positive.squeeze(-1)).reshape(-1))
    if step_reduction == "sum":
        return torch.stack([t.mean() for t in terms]).sum()
    if step_reduction != "mean":
        raise ValueError(f"unknown step_reduction {step_reduction!r}")
    return torch.cat(terms).mean()


def nt_xent_loss(view1: torch.Tensor, view2: torch.Tensor, temperature: float = 0.5) -> torch.Tensor:
    """Normalized-temperature cross entropy over the ``2 * batch`` embeddings."""
    if view1.shape != view2.shape or view1.dim() != 2:
        raise ValueError(f"views must share shape [batch, D], got {tuple(view1.shape)} and {tuple(view2.shape)}")
    batch = view1.shape[0]
    if batch < 2:
        raise ValueError("NT-Xent needs batch >= 2")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    e = F.normalize(torch.cat([view1, view2]), dim=1)
    sim = e @ e.T / temperature
    sim = sim.masked_fill(torch.eye(2 * batch, dtype=torch.bool), float("-inf"))
    targets = torch.cat([torch.arange(batch, 2 * batch), torch.arange(batch)])
    return F.cross_entropy(sim, targets)


def _unit(x: torch.Tensor, what: str) -> torch.Tensor:
    norm = x.norm(dim=-1, keepdim=True)
    if torch.any(norm == 0):
        raise ValueError(f"{what} contains a zero-norm embedding")
    return x / norm


def byol_loss(online_pred: torch.Tensor, target_proj: torch.Tensor) -> torch.Tensor:
    """Mean of ``2 - 2 cos(p, t)``; the target side never receives gradient."""
    if online_pred.shape != target_proj.shape:
        raise ValueError("online prediction and target projection shapes differ")
    p = _unit(online_pred, "online prediction")
    t = _unit(target_proj.detach(), "target projection")
    return (2 - 2 * (p * t).sum(-1)).mean()


@dataclass
class EmaState:
    target: nn.Module
    tau: float = 0.99


def make_ema(online: nn.Module, tau: float = 0.99) -> EmaState:
    if not 0 <= tau <= 1:
        raise ValueError(f"EMA decay must be in [0, 1], got {tau}")
    target = copy.deepcopy(online)
    for p in target.parameters():
        p.requires_grad_(False)
    return EmaState(target, tau)


@torch.no_grad()
def ema_update(online: nn.Module, state: EmaState) -> EmaState:
    """``target <- tau * target + (1 - tau) * online``; buffers are copied."""
    t_params = list(state.target.parameters())
    o_params = list(online.parameters())
    if len(t_params) != len(o_params):
        raise ValueError("EMA target and online model have different parameter lists")
    for pt, po in zip(t_params, o_params):
        if pt.shape != po.shape:
            raise ValueError(f"EMA shape mismatch: {tuple(pt.shape)} vs {tuple(po.shape)}")
        pt.mul_(state.tau).add_(po.detach(), alpha=1 - state.tau)
    for bt, bo in zip(state.target.buffers(), online.buffers()):
        bt.copy_(bo)
    return state
