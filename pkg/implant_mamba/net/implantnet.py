"""
ImplantNet: hybrid Conv-Mamba encoder, position decoder supervised by Dice, and the
slope-coupled branch (heatmap -> attention over fused features -> slope vector).
"""
from collections import OrderedDict
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .config import ModelConfig
from .geometry import Endpoints
from .heatmap import Heatmap, heatmap_from_endpoints, heatmap_generate
from .losses import LossReport, dice_loss, slope_loss, total_loss
from ..core import functional as F
from ..core.module import Conv3d, InstanceNorm3d, Linear, Module, ModuleList
from ..core.tensor import DEFAULT_DTYPE, Tensor, as_tensor
from ..ssm.mamba3d import MambaLayer
from ..util import Log
from ..util.exceptions import ContractError, DimensionError
from ..util.variables import LOG

log = Log.getLogger(LOG.Net.value)


def _rng_factory(seed, *tags):
    # one stream per component, so toggling a block never shifts the others
    def make(part):
        return np.random.default_rng([seed, *tags, part])
    return make


class FeaturePyramid(NamedTuple):
    """ encoder outputs at strides 2, 4, 8, 16 """
    m1: Tensor
    m2: Tensor
    m3: Tensor
    m4: Tensor


class NetOutput(NamedTuple):
    prob: Tensor
    pyramid: FeaturePyramid
    slope: Optional[Tensor]
    heatmap: Optional[Heatmap]


class ConvNormAct(Module):
    def __init__(self, cin, cout, kernel_size=3, stride=1, rng=None, eps=1e-5, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.conv = Conv3d(cin, cout, kernel_size, stride=stride, rng=rng, dtype=dtype)
        self.norm = InstanceNorm3d(cout, eps=eps, dtype=dtype)

    def forward(self, x):
        return F.relu(self.norm(self.conv(x)))

    @staticmethod
    def count(cin, cout, kernel_size=3):
        return Conv3d.count(cin, cout, kernel_size) + InstanceNorm3d.count(cout)


class ConvMambaBlock(Module):
    """ conv(stride 2) -> norm -> relu -> conv -> norm -> relu [-> mamba layer] """

    def __init__(self, cin, cout, mamba: bool, config: ModelConfig, seed=0, stage=0, dtype=DEFAULT_DTYPE):
        super().__init__()
        rng = _rng_factory(seed, 1, stage)
        self.down = ConvNormAct(cin, cout, stride=2, rng=rng(0), eps=config.norm_eps, dtype=dtype)
        self.conv = ConvNormAct(cout, cout, rng=rng(1), eps=config.norm_eps, dtype=dtype)
        self.mamba = None
        if mamba:
            self.mamba = MambaLayer(cout, d_state=config.d_state, expand=config.expand, d_conv=config.d_conv,
                                    order=config.scan_order, bidirectional=config.bidirectional_scan,
                                    chunk=config.scan_chunk, rng=rng(2), dtype=dtype)

    def forward(self, x):
        x = self.conv(self.down(x))
        return self.mamba(x) if self.mamba is not None else x


class UpBlock(Module):
    """ trilinear x2 -> 1-kernel conv [-> concat skip] -> conv -> norm -> relu """

    def __init__(self, cin, cout, skip_channels, config: ModelConfig, seed=0, stage=0, dtype=DEFAULT_DTYPE):
        super().__init__()
        rng = _rng_factory(seed, 2, stage)
        self.skip_channels = skip_channels
        self.up = Conv3d(cin, cout, 1, rng=rng(0), dtype=dtype)
        self.fuse = ConvNormAct(cout + skip_channels, cout, rng=rng(1), eps=config.norm_eps, dtype=dtype)

    def forward(self, x, skip=None):
        target = tuple(2 * s for s in x.shape[2:])
        x = self.up(F.trilinear_resize(x, target))
        if skip is not None:
            if skip.shape[2:] != x.shape[2:] or skip.shape[1] != self.skip_channels:
                raise ContractError(f'skip {skip.shape} does not match upsampled {x.shape}')
            x = F.concat([x, skip], axis=1)
        return self.fuse(x)

    @staticmethod
    def count(cin, cout, skip_channels):
        return Conv3d.count(cin, cout, 1) + ConvNormAct.count(cout + skip_channels, cout)


class SlopeBranch(Module):
    """ fuse the pyramid on the stride-8 grid, gate it with heatmap attention, regress a 3-vector """

    def __init__(self, widths: Sequence[int], config: ModelConfig, seed=0, dtype=DEFAULT_DTYPE):
        super().__init__()
        rng = _rng_factory(seed, 3)
        c, ca = config.scp_channels, config.attention_channels
        self.channels = c
        self.proj = ModuleList(Conv3d(w, c, 1, rng=rng(i), dtype=dtype) for i, w in enumerate(widths))
        self.norm = InstanceNorm3d(c, eps=config.norm_eps, dtype=dtype)
        self.att1 = Conv3d(1, ca, 3, rng=rng(4), dtype=dtype)
        self.att2 = Conv3d(ca, 1, 3, rng=rng(5), dtype=dtype)
        self.fc1 = Linear(c, c, rng=rng(6), dtype=dtype)
        self.fc2 = Linear(c, 3, rng=rng(7), dtype=dtype)

    @staticmethod
    def count(widths, channels, attention_channels):
        return (sum(Conv3d.count(w, channels, 1) for w in widths)
                + InstanceNorm3d.count(channels)
                + Conv3d.count(1, attention_channels, 3) + Conv3d.count(attention_channels, 1, 3)
                + Linear.count(channels, channels) + Linear.count(channels, 3))

    def fuse(self, pyramid: FeaturePyramid) -> Tensor:
        grid = pyramid.m3.shape[2:]
        total = None
        for proj, feature in zip(self.proj, pyramid):
            mapped = F.trilinear_resize(proj(feature), grid)
            total = mapped if total is None else total + mapped
        return F.relu(self.norm(total))

    def attention(self, heat) -> Tensor:
        return F.sigmoid(self.att2(F.relu(self.att1(heat))))

    def head(self, ms: Tensor, heat) -> Tensor:
        heat = as_tensor(heat, dtype=ms.dtype)
        if heat.ndim != 5 or heat.shape[1] != 1 or heat.shape[2:] != ms.shape[2:] or heat.shape[0] != ms.shape[0]:
            raise ContractError(f'heatmap {heat.shape} is not on the fused grid {ms.shape}')
        attended = self.attention(heat) * ms
        pooled = F.global_avg_pool(attended)
        return self.fc2(F.relu(self.fc1(pooled)))


class ImplantNet(Module):
    def __init__(self, config: ModelConfig, seed=0, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.config = config
        w = config.widths
        self.encoder = ModuleList(
            ConvMambaBlock(cin, cout, flag, config, seed=seed, stage=i, dtype=dtype)
            for i, (cin, cout, flag) in enumerate(zip((1,) + w[:3], w, config.mamba_enabled)))
        self.decoder = ModuleList([
            UpBlock(w[3], w[2], w[2], config, seed=seed, stage=0, dtype=dtype),
            UpBlock(w[2], w[1], w[1], config, seed=seed, stage=1, dtype=dtype),
            UpBlock(w[1], w[0], w[0], config, seed=seed, stage=2, dtype=dtype),
            UpBlock(w[0], w[0], 0, config, seed=seed, stage=3, dtype=dtype),
        ])
        self.head = Conv3d(w[0], 1, 1, rng=np.random.default_rng([seed, 4]), dtype=dtype)
        self.scp = SlopeBranch(w, config, seed=seed, dtype=dtype) if config.scp_enabled else None

    # ---- encoder
    def encode(self, volume) -> FeaturePyramid:
        volume = as_tensor(volume)
        if volume.ndim != 5 or volume.shape[1] != 1:
            raise DimensionError(f'volume must be [N, 1, D, H, W], got {volume.shape}')
        if any(s % 16 for s in volume.shape[2:]):
            raise ContractError(f'volume extents {volume.shape[2:]} are not divisible by 16')
        features, x = [], volume
        for block in self.encoder:
            x = block(x)
            features.append(x)
        return FeaturePyramid(*features)

    # ---- position branch
    def decode(self, pyramid: FeaturePyramid) -> Tensor:
        x = pyramid.m4
        for block, skip in zip(self.decoder, (pyramid.m3, pyramid.m2, pyramid.m1, None)):
            x = block(x, skip)
        return F.sigmoid(self.head(x))

    # ---- full graph
    def forward(self, volume, heatmap: Optional[Heatmap] = None) -> NetOutput:
        pyramid = self.encode(volume)
        prob = self.decode(pyramid)
        if self.scp is None:
            return NetOutput(prob, pyramid, None, None)
        if heatmap is None:
            cfg = self.config
            heatmap = heatmap_generate(prob.detach(), cfg.threshold, cfg.heatmap_sigma, pyramid.m3.shape[2:])
        ms = self.scp.fuse(pyramid)
        return NetOutput(prob, pyramid, self.scp.head(ms, heatmap.h), heatmap)

    def teacher_heatmap(self, endpoints: Sequence[Endpoints], volume_shape) -> Heatmap:
        """ heatmap rendered from ground-truth endpoints instead of the prediction """
        grid = tuple(s // 8 for s in volume_shape)
        return heatmap_from_endpoints(endpoints, volume_shape, grid, self.config.heatmap_sigma,
                                      dtype=self.parameters()[0].dtype)

    def loss(self, output: NetOutput, mask, slope=None) -> LossReport:
        """ mask [N, 1, D, H, W]; slope [N, 3] canonical unit vectors """
        cfg = self.config
        dice = dice_loss(output.prob, mask, cfg.dice_eps)
        if self.scp is None or output.slope is None:
            return total_loss(dice, None, cfg.lambda_slope, scp_enabled=False)
        if slope is None:
            raise ContractError('SCP is enabled but no slope target was given')
        return total_loss(dice, slope_loss(output.slope, slope), cfg.lambda_slope)

    def param_breakdown(self):
        parts = OrderedDict(encoder=0, mamba=0, decoder=0, scp=0)
        for name, param in self.named_parameters():
            if '.mamba.' in name:
                parts['mamba'] += param.size
            elif name.startswith('encoder.'):
                parts['encoder'] += param.size
            elif name.startswith('scp.'):
                parts['scp'] += param.size
            else:
                parts['decoder'] += param.size
        return parts


# ---- functional entry points

def encoder_forward(volume, net: ImplantNet) -> FeaturePyramid:
    return net.encode(volume)


def position_branch(pyramid: FeaturePyramid, net: ImplantNet) -> Tensor:
    return net.decode(pyramid)


def scp_fuse(pyramid: FeaturePyramid, net: ImplantNet) -> Tensor:
    if net.scp is None:
        raise ContractError('SCP is disabled in this model')
    return net.scp.fuse(pyramid)


def scp_slope_head(ms: Tensor, heat, net: ImplantNet) -> Tensor:
    if net.scp is None:
        raise ContractError('SCP is disabled in this model')
    return net.scp.head(ms, heat.h if isinstance(heat, Heatmap) else heat)


def param_breakdown(config: ModelConfig):
    """ closed-form trainable-scalar counts per part """
    w = config.widths
    encoder = sum(ConvNormAct.count(cin, cout, 3) + ConvNormAct.count(cout, cout, 3)
                  for cin, cout in zip((1,) + w[:3], w))
    mamba = sum(MambaLayer.count(c, config.d_state, config.expand, config.d_conv)
                for c, flag in zip(w, config.mamba_enabled) if flag)
    decoder = (UpBlock.count(w[3], w[2], w[2]) + UpBlock.count(w[2], w[1], w[1])
               + UpBlock.count(w[1], w[0], w[0]) + UpBlock.count(w[0], w[0], 0)
               + Conv3d.count(w[0], 1, 1))
    scp = SlopeBranch.count(w, config.scp_channels, config.attention_channels) if config.scp_enabled else 0
    return OrderedDict(encoder=encoder, mamba=mamba, decoder=decoder, scp=scp)


def param_count(config: ModelConfig) -> int:
    return int(sum(param_breakdown(config).values()))
