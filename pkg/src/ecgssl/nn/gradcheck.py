"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import torch

from .autodiff import backward


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def lines(self, label: str = "") -> list[str]:
        prefix = f"{label}." if label else ""
        return [f"{prefix}{k}: {v:.3e}" for k, v in self.errors.items()]


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor, floor: float = 1e-5) -> float:
    """Max absolute deviation scaled by the largest gradient magnitude in the tensor.

    The scale never drops below ``floor``, so a gradient that is analytically
    zero (a bias feeding batch norm) is not judged against round-off noise.
    """
    scale = max(analytic.abs().max().item(), numeric.abs().max().item(), floor)
    return (analytic - numeric).abs().max().item() / scale


def numeric_grad(fn: Callable[[], torch.Tensor], p: torch.Tensor, eps: float) -> torch.Tensor:
    grad = torch.zeros_like(p)
    flat = p.data.view(-1)
    gflat = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            f_plus = fn().item()
            flat[i] = orig - eps
            f_minus = fn().item()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2 * eps)
    return grad


def finite_diff_check(
    fn: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    tolerance: float = 1e-4,
    eps: float = 1e-3,
) -> GradCheckReport:
    """Compare autograd against central differences for every tensor in ``params``.

    ``fn`` recomputes the scalar loss from the current parameter values; the
    tensors should be float64 leaves with ``requires_grad=True``.
    """
    analytic = backward(fn(), params)
    report = GradCheckReport(tolerance)
    for name, p in params.items():
        report.errors[name] = relative_error(analytic[name].detach(), numeric_grad(fn, p, eps))
    return report
