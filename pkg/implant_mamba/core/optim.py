import math
from typing import Sequence

import numpy as np

from .module import Parameter
from ..util.exceptions import ContractError


class Adam:
    """ adaptive moment estimation with bias correction """

    def __init__(self, params: Sequence[Parameter], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for param in self.params:
            param.zero_grad()

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction1 = 1 - b1 ** self.t
        correction2 = 1 - b2 ** self.t
        for param, m, v in zip(self.params, self.m, self.v):
            if param.grad is None:
                continue
            grad = param.grad.data
            # first moment
            m *= b1
            m += (1 - b1) * grad
            # second moment
            v *= b2
            v += (1 - b2) * grad * grad
            # 3) bias correction + update
            m_hat = m / correction1
            v_hat = v / correction2
            param.data -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(param.dtype)


def cosine_warmup_lr(step: int, total_steps: int, lr: float, warmup_frac=0.1, min_lr_frac=0.01) -> float:
    """
    Linear ramp 0 -> lr over warmup_frac * total_steps, then cosine decay to min_lr_frac * lr at total_steps.
    """
    if lr <= 0:
        raise ContractError(f'lr must be positive, got {lr}')
    if not 0 <= warmup_frac < 1:
        raise ContractError(f'warmup_frac must lie in [0, 1), got {warmup_frac}')
    if total_steps < 1:
        raise ContractError(f'total_steps must be positive, got {total_steps}')
    step = min(max(step, 0), total_steps)
    warmup = warmup_frac * total_steps
    if step < warmup:
        return lr * step / warmup
    min_lr = min_lr_frac * lr
    span = total_steps - warmup
    progress = (step - warmup) / span if span > 0 else 1.0
    return min_lr + (lr - min_lr) * 0.5 * (1 + math.cos(math.pi * progress))
