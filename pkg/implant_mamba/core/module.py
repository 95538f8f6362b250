"""
Parameter containers and the layers the network is assembled from.
"""
import math
from collections import OrderedDict
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from . import functional as F
from .tensor import Tensor, DEFAULT_DTYPE
from ..util.exceptions import DimensionError, IntegrityError


class Parameter(Tensor):
    """ trainable leaf """

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)

    def __repr__(self):
        return f'Parameter(shape={self.shape}, dtype={self.dtype})'


class Module:
    def __init__(self):
        object.__setattr__(self, '_parameters', OrderedDict())
        object.__setattr__(self, '_modules', OrderedDict())

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix='') -> Iterator[Tuple[str, Parameter]]:
        for name, param in self._parameters.items():
            yield prefix + name, param
        for name, module in self._modules.items():
            yield from module.named_parameters(prefix + name + '.')

    def parameters(self):
        return [param for _, param in self.named_parameters()]

    def named_modules(self, prefix=''):
        yield prefix.rstrip('.'), self
        for name, module in self._modules.items():
            yield from module.named_modules(prefix + name + '.')

    def param_count(self) -> int:
        return int(sum(param.size for param in self.parameters()))

    def zero_grad(self):
        for param in self.parameters():
            param.zero_grad()

    def astype(self, dtype):
        """ in-place cast of every parameter, used to run gradient checks at f64 """
        for param in self.parameters():
            param.data = param.data.astype(dtype)
            param.grad = None
        return self

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, param.data) for name, param in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        own = OrderedDict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise IntegrityError(f'parameter names differ: missing {missing[:5]}, unexpected {unexpected[:5]}')
        for name, param in own.items():
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise IntegrityError(f'parameter {name} has shape {value.shape}, model expects {param.shape}')
            param.data = value.astype(param.dtype, copy=True)
            param.grad = None


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for module in modules:
            self.append(module)

    def append(self, module: Optional[Module]):
        if module is not None:
            self._modules[str(len(self._items))] = module
        self._items.append(module)

    def __getitem__(self, index):
        return self._items[index]

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)


# ---------------------------------------------------------------- initializers

def uniform(rng: np.random.Generator, shape, bound, dtype=DEFAULT_DTYPE):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in, dtype=DEFAULT_DTYPE):
    # relu gain, He et al. bound sqrt(6 / fan_in)
    return uniform(rng, shape, math.sqrt(6.0 / fan_in), dtype)


# ---------------------------------------------------------------- layers

class Conv3d(Module):
    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=None, bias=True,
                 rng=None, dtype=DEFAULT_DTYPE):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride = kernel_size, stride
        self.padding = kernel_size // 2 if padding is None else padding
        fan_in = in_channels * kernel_size ** 3
        shape = (out_channels, in_channels, kernel_size, kernel_size, kernel_size)
        self.weight = Parameter(kaiming_uniform(rng, shape, fan_in, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x):
        return F.conv3d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    @staticmethod
    def count(in_channels, out_channels, kernel_size, bias=True):
        return out_channels * in_channels * kernel_size ** 3 + (out_channels if bias else 0)


class InstanceNorm3d(Module):
    def __init__(self, channels, eps=1e-5, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))

    def forward(self, x):
        return F.instance_norm(x, self.gamma, self.beta, self.eps)

    @staticmethod
    def count(channels):
        return 2 * channels


class ChannelNorm(Module):
    """ normalization over the channel axis of a sequence [N, L, C] """

    def __init__(self, channels, eps=1e-5, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))

    def forward(self, x):
        return F.channel_norm(x, self.gamma, self.beta, self.eps)

    @staticmethod
    def count(channels):
        return 2 * channels


class Linear(Module):
    def __init__(self, in_features, out_features, bias=True, rng=None, dtype=DEFAULT_DTYPE):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_features, self.out_features = in_features, out_features
        bound = 1.0 / math.sqrt(in_features)
        self.weight = Parameter(uniform(rng, (out_features, in_features), bound, dtype))
        self.bias = Parameter(uniform(rng, (out_features,), bound, dtype)) if bias else None

    def forward(self, x):
        if x.shape[-1] != self.in_features:
            raise DimensionError(f'linear expects {self.in_features} input features, got {x.shape[-1]}')
        return F.linear(x, self.weight, self.bias)

    @staticmethod
    def count(in_features, out_features, bias=True):
        return out_features * in_features + (out_features if bias else 0)
