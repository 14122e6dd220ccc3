from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import torch
from torch import nn


def adamw(
    groups: Mapping[str, Sequence[nn.Parameter]] | Iterable[nn.Parameter],
    lr: float | Mapping[str, float],
    weight_decay: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> torch.optim.AdamW:
    """AdamW with decoupled weight decay and a constant learning rate.

    ``groups`` may map layer-group names to parameters, with ``lr`` then a
    mapping of per-group rates. Parameters with ``requires_grad=False`` are skipped.
    """
    if isinstance(groups, Mapping):
        param_groups = []
        for name, params in groups.items():
            params = [p for p in params if p.requires_grad]
            if not params:
                continue
            group_lr = lr[name] if isinstance(lr, Mapping) else lr
            param_groups.append({"params": params, "lr": group_lr, "name": name})
    else:
        param_groups = [{"params": [p for p in groups if p.requires_grad], "lr": lr}]
    return torch.optim.AdamW(param_groups, lr=0.0, betas=betas, eps=eps, weight_decay=weight_decay)
