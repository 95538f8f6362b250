from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core import functional as F
from ..core.tensor import Tensor, as_tensor
from ..util.exceptions import ContractError, DimensionError


def soft_dice(pred, target, eps=1e-5, axis=None) -> Tensor:
    """ (2 sum(p t) + eps) / (sum(p^2) + sum(t^2) + eps), reduced over `axis` (all axes by default) """
    pred, target = as_tensor(pred), as_tensor(target, dtype=as_tensor(pred).dtype)
    if pred.shape != target.shape:
        raise DimensionError(f'dice operands differ in shape: {pred.shape} vs {target.shape}')
    overlap = F.sum(pred * target, axis=axis)
    denom = F.sum(pred * pred, axis=axis) + F.sum(target * target, axis=axis)
    return (2 * overlap + eps) / (denom + eps)


def dice_loss(pred, target, eps=1e-5) -> Tensor:
    return 1 - soft_dice(pred, target, eps)


def slope_loss(pred, truth) -> Tensor:
    """ mean absolute error over the 3 components (and the batch) """
    pred = as_tensor(pred)
    truth = as_tensor(np.broadcast_to(np.asarray(getattr(truth, 'data', truth), dtype=pred.dtype), pred.shape))
    return F.mean(F.abs(pred - truth))


@dataclass
class LossReport:
    dice_loss: float
    slope_loss: float
    total: float
    tensor: Optional[Tensor] = field(default=None, compare=False, repr=False)

    def to_dict(self):
        return dict(dice_loss=self.dice_loss, slope_loss=self.slope_loss, total=self.total)


def total_loss(dice: Tensor, slope: Optional[Tensor], lambda_slope=1.0, scp_enabled=True) -> LossReport:
    """ total = dice + lambda * slope; the slope term is zero when SCP is off """
    if lambda_slope < 0:
        raise ContractError(f'lambda must be >= 0, got {lambda_slope}')
    dice = as_tensor(dice)
    if not scp_enabled or slope is None:
        return LossReport(float(dice.item()), 0.0, float(dice.item()), dice)
    slope = as_tensor(slope)
    total = dice + lambda_slope * slope if lambda_slope else dice
    dice_value, slope_value = float(dice.item()), float(slope.item())
    # reported in float64 from the reported parts, whatever the graph dtype
    return LossReport(dice_value, slope_value, dice_value + lambda_slope * slope_value, total)
