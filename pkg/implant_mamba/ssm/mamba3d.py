"""
Mamba layer over 3D feature volumes: flatten to a voxel sequence, gated selective-scan mixing, unflatten.
"""
import math
from typing import Sequence, Union

import numpy as np

from .selective_scan import DEFAULT_CHUNK, selective_scan
from ..core import functional as F
from ..core.module import ChannelNorm, Linear, Module, Parameter, uniform
from ..core.tensor import DEFAULT_DTYPE, Tensor, as_tensor
from ..util import Log
from ..util.exceptions import ContractError, DimensionError
from ..util.variables import LOG, ScanOrder

log = Log.getLogger(LOG.Mamba.value)

# [N, C, D, H, W] -> [N, *outer-to-inner spatial axes, C]
_SEQUENCE_AXES = {
    ScanOrder.RasterDHW: (0, 2, 3, 4, 1),
    ScanOrder.RasterWHD: (0, 4, 3, 2, 1),
}


def scan_order(order: Union[ScanOrder, str]) -> ScanOrder:
    try:
        return ScanOrder(order)
    except ValueError:
        raise ContractError(f'unknown scan order {order!r}, expected one of {[o.value for o in ScanOrder]}')


def flatten_volume(x, order=ScanOrder.RasterDHW) -> Tensor:
    """ [N, C, D, H, W] -> [N, D*H*W, C]; raster-DHW index = (d*H + h)*W + w """
    axes = _SEQUENCE_AXES[scan_order(order)]
    x = as_tensor(x)
    if x.ndim != 5:
        raise DimensionError(f'flatten_volume expects [N, C, D, H, W], got {x.shape}')
    N, C, D, H, W = x.shape
    return F.reshape(F.transpose(x, axes), (N, D * H * W, C))


def unflatten_volume(seq, dims: Sequence[int], order=ScanOrder.RasterDHW) -> Tensor:
    axes = _SEQUENCE_AXES[scan_order(order)]
    seq = as_tensor(seq)
    D, H, W = dims
    if seq.ndim != 3 or seq.shape[1] != D * H * W:
        raise ContractError(f'sequence {seq.shape} does not hold a {D}x{H}x{W} volume')
    N, _, C = seq.shape
    spatial = dict(zip((2, 3, 4), (D, H, W)))
    shaped = F.reshape(seq, (N,) + tuple(spatial[a] for a in axes[1:4]) + (C,))
    return F.transpose(shaped, tuple(np.argsort(axes)))


def inverse_softplus(value):
    return math.log(math.expm1(value))


class MambaLayer(Module):
    """
    x + out_proj(silu(gate) * scan(silu(dw_conv(value)))), (value, gate) = in_proj(norm(flatten(x)))

    out_proj starts at zero, so a fresh layer is the identity map.
    """

    def __init__(self, channels, d_state=16, expand=2, d_conv=4, dt_rank=None, dt_init=0.1,
                 order=ScanOrder.RasterDHW, bidirectional=False, chunk=DEFAULT_CHUNK, rng=None, dtype=DEFAULT_DTYPE):
        super().__init__()
        if expand < 1 or d_conv < 1 or d_state < 1:
            raise ContractError(f'invalid mamba layer sizes expand={expand} d_conv={d_conv} d_state={d_state}')
        rng = rng or np.random.default_rng(0)
        self.channels = channels
        self.d_inner = inner = expand * channels
        self.d_state = d_state
        self.d_conv = d_conv
        self.dt_rank = dt_rank or math.ceil(channels / 16)
        self.order = scan_order(order)
        self.bidirectional = bidirectional
        self.chunk = chunk

        self.norm = ChannelNorm(channels, dtype=dtype)
        self.in_proj = Linear(channels, 2 * inner, bias=False, rng=rng, dtype=dtype)
        bound = 1.0 / math.sqrt(d_conv)
        self.conv_weight = Parameter(uniform(rng, (inner, d_conv), bound, dtype))
        self.conv_bias = Parameter(uniform(rng, (inner,), bound, dtype))
        self.x_proj = Linear(inner, self.dt_rank + 2 * d_state, bias=False, rng=rng, dtype=dtype)
        self.dt_proj = Linear(self.dt_rank, inner, bias=True, rng=rng, dtype=dtype)
        self.dt_proj.weight.data[...] = uniform(rng, (inner, self.dt_rank), self.dt_rank ** -0.5, dtype)
        self.dt_proj.bias.data[...] = inverse_softplus(dt_init)
        # -A spans 1..N per channel
        self.A_log = Parameter(np.log(np.tile(np.arange(1, d_state + 1, dtype=np.float64), (inner, 1))).astype(dtype))
        self.D = Parameter(np.ones(inner, dtype=dtype))
        self.out_proj = Linear(inner, channels, bias=False, rng=rng, dtype=dtype)
        self.out_proj.weight.data[...] = 0

    @staticmethod
    def count(channels, d_state=16, expand=2, d_conv=4, dt_rank=None):
        """ closed-form trainable-scalar count """
        inner = expand * channels
        rank = dt_rank or math.ceil(channels / 16)
        return (2 * channels                        # norm
                + channels * 2 * inner              # in_proj
                + inner * d_conv + inner            # depthwise conv + bias
                + inner * (rank + 2 * d_state)      # x_proj
                + rank * inner + inner              # dt_proj
                + inner * d_state                   # A_log
                + inner                             # D
                + inner * channels)                 # out_proj

    def _mix(self, value):
        """ causal conv + selective scan over [N, L, inner] """
        u = F.silu(F.depthwise_conv1d_causal(value, self.conv_weight, self.conv_bias))
        rank, n = self.dt_rank, self.d_state
        x_dbl = self.x_proj(u)
        delta = F.softplus(self.dt_proj(x_dbl[:, :, :rank]))
        Bm = x_dbl[:, :, rank:rank + n]
        Cm = x_dbl[:, :, rank + n:]
        A = -F.exp(self.A_log)
        return selective_scan(u, delta, A, Bm, Cm, self.D, chunk=self.chunk)

    def forward(self, x):
        x = as_tensor(x)
        if x.ndim != 5 or x.shape[1] != self.channels:
            raise ContractError(f'mamba layer expects [N, {self.channels}, D, H, W], got {x.shape}')
        dims = x.shape[2:]
        seq = flatten_volume(x, self.order)
        xz = self.in_proj(self.norm(seq))
        inner = self.d_inner
        value, gate = xz[:, :, :inner], xz[:, :, inner:]
        y = self._mix(value)
        if self.bidirectional:
            reverse = (slice(None), slice(None, None, -1), slice(None))
            y = 0.5 * (y + self._mix(value[reverse])[reverse])
        out = self.out_proj(y * F.silu(gate))
        return x + unflatten_volume(out, dims, self.order)
