"""Layer types used by the CPC and convolutional models.

Tensors are plain ``torch.Tensor``; reverse-mode differentiation is torch
autograd. Batch norm carries a third mode, ``"stats"``, which produces
eval-style output while still updating its running statistics.
"""

from __future__ import annotations

import math
from typing import Literal

import torch
import torch.nn.functional as F
from torch import nn

BnMode = Literal["train", "eval", "stats"]
Activation = Literal["none", "relu"]


def dense(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None, activation: Activation = "none") -> torch.Tensor:
    """``act(x @ weight + bias)`` with ``weight`` shaped ``[d_in, d_out]``."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"dense: input width {x.shape[-1]} does not match weight {tuple(weight.shape)}")
    y = x @ weight
    if bias is not None:
        y = y + bias
    if activation == "relu":
        return torch.relu(y)
    if activation != "none":
        raise ValueError(f"unknown activation {activation!r}")
    return y


class Dense(nn.Module):
    def __init__(self, d_in: int, d_out: int, activation: Activation = "none", bias: bool = True):
        super().__init__()
        self.activation = activation
        self.weight = nn.Parameter(torch.empty(d_in, d_out))
        self.bias = nn.Parameter(torch.zeros(d_out)) if bias else None
        # kaiming-uniform over fan_in
        bound = math.sqrt(6.0 / d_in)
        nn.init.uniform_(self.weight, -bound, bound)

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return dense(x, self.weight, self.bias, self.activation)


class BatchNorm(nn.Module):
    """Batch norm over dim 1 of ``[N, F]`` or ``[N, F, T]`` inputs.

    Running statistics follow ``r <- (1 - momentum) * r + momentum * batch``,
    with the unbiased batch variance.
    """

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(num_features))
        self.bias = nn.Parameter(torch.zeros(num_features))
        self.register_buffer("running_mean", torch.zeros(num_features))
        self.register_buffer("running_var", torch.ones(num_features))
        self.stats_only = False

    @property
    def mode(self) -> BnMode:
        if self.training:
            return "train"
        return "stats" if self.stats_only else "eval"

    def set_mode(self, mode: BnMode) -> None:
        if mode not in ("train", "eval", "stats"):
            raise ValueError(f"unknown batch-norm mode {mode!r}")
        self.training = mode == "train"
        self.stats_only = mode == "stats"

    def train(self, mode: bool = True) -> "BatchNorm":
        # module-wide train()/eval() always leaves stats mode
        self.stats_only = False
        return super().train(mode)

    def _values_per_feature(self, x: torch.Tensor) -> int:
        return x.numel() // x.shape[1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mode = self.mode
        if mode == "train":
            if self._values_per_feature(x) < 2:
                raise ValueError("batch norm in train mode needs at least 2 values per feature")
            return F.batch_norm(x, self.running_mean, self.running_var, self.weight, self.bias, True, self.momentum, self.eps)
        out = F.batch_norm(x, self.running_mean.clone(), self.running_var.clone(), self.weight, self.bias, False, 0.0, self.eps)
        if mode == "stats" and self._values_per_feature(x) >= 2:
            with torch.no_grad():
                F.batch_norm(x.detach(), self.running_mean, self.running_var, None, None, True, self.momentum, self.eps)
        return out


def dropout(x: torch.Tensor, p: float, training: bool, generator: torch.Generator | None = None) -> torch.Tensor:
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


class Dropout(nn.Module):
    def __init__(self, p: float = 0.5):
        super().__init__()
        if not 0 <= p < 1:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return dropout(x, self.p, self.training)


def _kaiming_conv(conv: nn.Conv1d) -> None:
    nn.init.kaiming_uniform_(conv.weight, nonlinearity="relu")


class ConvResidualBlock(nn.Module):
    """conv(k=5, stride) -> BN -> relu -> conv(k=3) -> BN, plus skip, then relu."""

    def __init__(self, c_in: int, c_out: int, stride: int = 1, skip: bool = True):
        super().__init__()
        self.conv1 = nn.Conv1d(c_in, c_out, 5, stride=stride, padding=2, bias=False)
        self.bn1 = BatchNorm(c_out)
        self.conv2 = nn.Conv1d(c_out, c_out, 3, stride=1, padding=1, bias=False)
        self.bn2 = BatchNorm(c_out)
        self.skip = skip
        self.proj = None
        if skip and (c_in != c_out or stride != 1):
            self.proj = nn.Conv1d(c_in, c_out, 1, stride=stride, bias=False)
            _kaiming_conv(self.proj)
        _kaiming_conv(self.conv1)
        _kaiming_conv(self.conv2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3 or x.shape[1] != self.conv1.in_channels:
            raise ValueError(f"expected [batch, {self.conv1.in_channels}, T], got {tuple(x.shape)}")
        if x.shape[2] < self.conv1.kernel_size[0]:
            raise ValueError(f"sequence length {x.shape[2]} shorter than kernel")
        h = torch.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        if self.skip:
            h = h + (self.proj(x) if self.proj is not None else x)
        return torch.relu(h)


class Lstm(nn.Module):
    """Stacked LSTM, zero initial state, returns the full output sequence ``[B, T, H]``.

    Weights are uniform in ``±1/sqrt(hidden)`` and the forget-gate bias starts at +1.
    """

    def __init__(self, d_in: int, hidden: int, layers: int = 1):
        super().__init__()
        self.hidden = hidden
        self.rnn = nn.LSTM(d_in, hidden, layers, batch_first=True)
        bound = 1.0 / math.sqrt(hidden)
        with torch.no_grad():
            for name, p in self.rnn.named_parameters():
                nn.init.uniform_(p, -bound, bound)
                if name.startswith("bias_ih"):
                    p[hidden : 2 * hidden] = 1.0
                elif name.startswith("bias_hh"):
                    p[hidden : 2 * hidden] = 0.0

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3 or x.shape[2] != self.rnn.input_size:
            raise ValueError(f"expected [batch, T, {self.rnn.input_size}], got {tuple(x.shape)}")
        out, _ = self.rnn(x)
        return out


def concat_pool(h: torch.Tensor) -> torch.Tensor:
    """``[B, T, H] -> [B, 3H]``: max over time, mean over time, last step.

    The max uses the first index on ties, so its gradient is deterministic.
    """
    if h.dim() != 3 or h.shape[1] < 1:
        raise ValueError(f"concat_pool expects [batch, T>=1, H], got {tuple(h.shape)}")
    idx = h.argmax(dim=1, keepdim=True)
    mx = h.gather(1, idx).squeeze(1)
    return torch.cat([mx, h.mean(dim=1), h[:, -1, :]], dim=1)


def set_bn_mode(module: nn.Module, mode: BnMode) -> None:
    for m in module.modules():
        if isinstance(m, BatchNorm):
            m.set_mode(mode)


def bn_state(module: nn.Module) -> dict[str, torch.Tensor]:
    return {
        name: buf.detach().clone()
        for name, buf in module.named_buffers()
        if name.endswith(("running_mean", "running_var"))
    }
