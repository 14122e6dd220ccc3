"""Finite-difference gradient checks over every layer, loss and composed model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch
from torch import nn

from .models import CpcConfig, CpcModel, build_conv_encoder
from .nn.gradcheck import GradCheckReport, finite_diff_check
from .nn.layers import BatchNorm, ConvResidualBlock, Dense, Dropout, Lstm, concat_pool
from .objectives import byol_loss, cpc_outputs, info_nce_loss, nt_xent_loss


# Fragments with relu after batch norm have kinks within 1e-3 of many
# operating points; a smaller step keeps the stencil on one side of them.
SMOOTH_EPS = 1e-3
KINKED_EPS = 1e-6


@dataclass
class GradCase:
    name: str
    tolerance: float
    report: GradCheckReport
    eps: float = SMOOTH_EPS

    @property
    def passed(self) -> bool:
        return self.report.passed


def _leaf(g: torch.Generator, *shape: int, scale: float = 1.0) -> torch.Tensor:
    return (scale * torch.randn(*shape, generator=g, dtype=torch.float64)).requires_grad_(True)


def _mix(g: torch.Generator, like: torch.Tensor) -> torch.Tensor:
    # random readout so that no gradient is trivially uniform
    return torch.randn(like.shape, generator=g, dtype=torch.float64)


def _module_params(module: nn.Module, **inputs: torch.Tensor) -> dict[str, torch.Tensor]:
    params = {n: p for n, p in module.named_parameters()}
    params.update(inputs)
    return params


def _check(name: str, fn: Callable[[], torch.Tensor], params: dict[str, torch.Tensor], tolerance: float, eps: float = SMOOTH_EPS) -> GradCase:
    return GradCase(name, tolerance, finite_diff_check(fn, params, tolerance, eps), eps)


def grad_check_suite(tolerance: float = 1e-4, bn_tolerance: float = 1e-3, seed: int = 0) -> list[GradCase]:
    """Run the checks in float64; batch-norm-coupled fragments use ``bn_tolerance``."""
    torch.manual_seed(seed)
    g = torch.Generator().manual_seed(seed)
    cases: list[GradCase] = []

    dense = Dense(6, 4).double()
    x = _leaf(g, 5, 6)
    w = _mix(g, torch.empty(5, 4))
    cases.append(_check("dense", lambda: (torch.tanh(dense(x)) * w).sum(), _module_params(dense, input=x), tolerance))

    bn = BatchNorm(4).double()
    with torch.no_grad():
        bn.weight.uniform_(0.5, 1.5, generator=g)
        bn.bias.normal_(generator=g)
    xb = _leaf(g, 8, 4)
    wb = _mix(g, xb)
    cases.append(_check("batchnorm_train", lambda: (torch.tanh(bn(xb)) * wb).sum(), _module_params(bn, input=xb), bn_tolerance))

    d1, drop, d2 = Dense(5, 6).double(), Dropout(0.5).eval(), Dense(6, 3).double()
    xd = _leaf(g, 4, 5)
    wd = _mix(g, torch.empty(4, 3))
    params = {f"fc1.{n}": p for n, p in d1.named_parameters()} | {f"fc2.{n}": p for n, p in d2.named_parameters()}
    cases.append(_check("dropout_off", lambda: (torch.tanh(d2(drop(torch.tanh(d1(xd))))) * wd).sum(), params | {"input": xd}, tolerance))

    block = ConvResidualBlock(3, 4, stride=2).double()
    xc = _leaf(g, 4, 3, 12)
    wc = _mix(g, torch.empty(4, 4, 6))
    cases.append(_check("conv_residual_block", lambda: (block(xc) * wc).sum(), _module_params(block, input=xc), bn_tolerance, KINKED_EPS))

    lstm = Lstm(3, 4, layers=2).double()
    xl = _leaf(g, 2, 5, 3)
    wl = _mix(g, torch.empty(2, 5, 4))
    cases.append(_check("lstm_T5", lambda: (lstm(xl) * wl).sum(), _module_params(lstm, input=xl), tolerance))

    # well-separated values keep the max away from ties under perturbation
    h = (torch.randperm(2 * 6 * 3, generator=g).double().reshape(2, 6, 3) * 0.1).requires_grad_(True)
    wp = _mix(g, torch.empty(2, 9))
    cases.append(_check("concat_pool", lambda: (concat_pool(h) * wp).sum(), {"input": h}, tolerance))

    z = _leaf(g, 2, 7, 4, scale=0.5)
    preds = [_leaf(g, 2, 7, 4, scale=0.5) for _ in range(3)]
    out_gen = torch.Generator().manual_seed(seed + 1)
    fixed = cpc_outputs(z, preds, 5, out_gen)

    def nce() -> torch.Tensor:
        return info_nce_loss(type(fixed)(z, preds, fixed.anchors, fixed.negatives))

    cases.append(_check("info_nce", nce, {"z": z} | {f"pred{k + 1}": p for k, p in enumerate(preds)}, tolerance))

    v1, v2 = _leaf(g, 4, 5), _leaf(g, 4, 5)
    cases.append(_check("nt_xent", lambda: nt_xent_loss(v1, v2, 0.5), {"view1": v1, "view2": v2}, tolerance))

    p_on, t_proj = _leaf(g, 4, 5), _leaf(g, 4, 5)
    cases.append(_check("byol", lambda: byol_loss(p_on, t_proj), {"online": p_on}, tolerance))

    cpc = CpcModel(CpcConfig(n_channels=3, encoder_layers=2, encoder_width=4, lstm_layers=1, lstm_hidden=4, steps_ahead=2, n_negatives=3)).double()
    xs = _leaf(g, 2, 6, 3)
    with torch.no_grad():
        z0, _, p0 = cpc(xs)
    sampled = cpc_outputs(z0, p0, 3, torch.Generator().manual_seed(seed + 2))

    def cpc_loss() -> torch.Tensor:
        z, _, preds = cpc(xs)
        return info_nce_loss(type(sampled)(z, preds, sampled.anchors, sampled.negatives))

    cases.append(_check("cpc_backbone", cpc_loss, _module_params(cpc, input=xs), bn_tolerance, KINKED_EPS))

    conv = build_conv_encoder(2, 3, n_channels=2).double()
    xe = _leaf(g, 3, 2, 16)
    we = _mix(g, torch.empty(3, conv.feature_dim))
    cases.append(_check("conv_encoder", lambda: (conv.features(xe) * we).sum(), _module_params(conv, input=xe), bn_tolerance, KINKED_EPS))
    return cases


def format_cases(cases: list[GradCase]) -> list[str]:
    lines = []
    for c in cases:
        status = "ok" if c.passed else "FAIL"
        lines.append(f"{c.name}: max relative error {c.report.max_error:.3e} (tolerance {c.tolerance:.0e}, eps {c.eps:.0e}) {status}")
        lines.extend("  " + line for line in c.report.lines())
    return lines
