"""Reverse-mode gradients on top of torch autograd."""

from __future__ import annotations

from typing import Mapping

import torch


def backward(loss: torch.Tensor, params: Mapping[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    """Gradients of a scalar ``loss`` for every named tensor in ``params``.

    Tensors the loss does not depend on get an all-zero gradient.
    """
    if loss.numel() != 1:
        raise ValueError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    if not loss.requires_grad or loss.grad_fn is None:
        raise ValueError("loss is not on the autograd tape (no recorded operations)")
    names = list(params)
    tensors = [params[n] for n in names]
    grads = torch.autograd.grad(loss, tensors, allow_unused=True, retain_graph=True)
    return {n: (g if g is not None else torch.zeros_like(t)) for n, t, g in zip(names, tensors, grads)}
