from .autodiff import backward
from .gradcheck import GradCheckReport, finite_diff_check
from .layers import (
    BatchNorm,
    ConvResidualBlock,
    Dense,
    Dropout,
    Lstm,
    bn_state,
    concat_pool,
    dense,
    dropout,
    set_bn_mode,
)
from .optim import adamw

__all__ = [
    "BatchNorm",
    "ConvResidualBlock",
    "Dense",
    "Dropout",
    "GradCheckReport",
    "Lstm",
    "adamw",
    "backward",
    "bn_state",
    "concat_pool",
    "dense",
    "dropout",
    "finite_diff_check",
    "set_bn_mode",
]
