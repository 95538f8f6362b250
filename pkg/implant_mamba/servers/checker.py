"""
梯度检查: finite differences against backward() for every primitive, the selective scan,
a Mamba layer and the whole network on a 16^3 volume, all at f64.
"""
import contextlib
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..core import functional as F
from ..core.gradcheck import GradCheckReport, grad_check
from ..core.tensor import Tensor
from ..net.config import preset
from ..net.geometry import Endpoints
from ..net.implantnet import ImplantNet
from ..net.losses import dice_loss, slope_loss
from ..phantom.phantom import generate
from ..ssm.mamba3d import MambaLayer
from ..ssm.selective_scan import selective_scan
from ..util.exceptions import GradCheckError

F64 = np.float64
TOLERANCE = 1e-4
ATOL = 1e-9

SUITES = ('primitives', 'scan', 'mamba', 'network')


@dataclass
class CheckCase:
    name: str
    f: Callable[..., Tensor]
    inputs: Sequence[np.ndarray]
    mask_near_zero: bool = False
    max_coords: Optional[int] = None


@dataclass
class SuiteReport:
    reports: List[GradCheckReport] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self):
        return all(r.passed for r in self.reports)

    @property
    def failures(self):
        return [r for r in self.reports if not r.passed]

    def to_dict(self):
        return dict(passed=self.passed, seconds=self.seconds, checks=len(self.reports),
                    max_rel_err=max((r.max_rel_err for r in self.reports), default=0.0),
                    failures=[r.to_dict() for r in self.failures],
                    results=[dict(name=r.name, max_rel_err=r.max_rel_err, checked=r.checked,
                                  masked=len(r.masked), passed=r.passed) for r in self.reports])


def _resolve(module, dotted):
    *path, attr = dotted.split('.')
    owner = module
    for part in path:
        owner = owner._modules[part]
    return owner, attr


@contextlib.contextmanager
def substituted(module, names: Sequence[str], tensors: Sequence[Tensor]):
    """ temporarily route the named parameters of `module` through the given tensors """
    saved = []
    try:
        for name, tensor in zip(names, tensors):
            owner, attr = _resolve(module, name)
            saved.append((owner, attr, getattr(owner, attr)))
            object.__setattr__(owner, attr, tensor)
        yield module
    finally:
        for owner, attr, old in reversed(saved):
            object.__setattr__(owner, attr, old)


def _weighting(rng, shape):
    """ fixed random weights, so the checked scalar depends on every output element differently """
    weights = rng.normal(size=shape)
    return lambda out: F.sum(out * weights)


# ---------------------------------------------------------------- cases

def primitive_cases(rng) -> List[CheckCase]:
    normal = lambda *shape: rng.normal(size=shape)
    positive = lambda *shape: rng.uniform(0.5, 2.0, size=shape)
    away = lambda *shape: rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    cases = []

    def unary(name, op, x, **kwargs):
        weigh = _weighting(rng, op(Tensor(x)).shape)
        cases.append(CheckCase(name, lambda a: weigh(op(a)), [x], **kwargs))

    def binary(name, op, a, b):
        weigh = _weighting(rng, op(Tensor(a), Tensor(b)).shape)
        cases.append(CheckCase(name, lambda u, v: weigh(op(u, v)), [a, b]))

    binary('add', F.add, normal(2, 3), normal(3))
    binary('sub', F.sub, normal(2, 3), normal(2, 1))
    binary('mul', F.mul, normal(2, 3), normal(2, 3))
    binary('div', F.div, normal(2, 3), positive(3))
    binary('matmul', F.matmul, normal(2, 3, 4), normal(4, 5))
    unary('neg', F.neg, normal(4))
    unary('power', lambda a: F.power(a, 3.0), normal(2, 3))
    unary('exp', F.exp, normal(2, 3))
    unary('log', F.log, positive(2, 3))
    unary('sqrt', F.sqrt, positive(2, 3))
    unary('abs', F.abs, away(2, 3))
    unary('relu', F.relu, away(2, 3), mask_near_zero=True)
    unary('sigmoid', F.sigmoid, normal(2, 3))
    unary('silu', F.silu, normal(2, 3))
    unary('softplus', F.softplus, normal(2, 3))
    unary('sum', lambda a: F.sum(a, axis=1), normal(2, 3, 4))
    unary('mean', lambda a: F.mean(a, axis=(0, 2), keepdims=True), normal(2, 3, 4))
    unary('reshape', lambda a: F.reshape(a, (4, 6)), normal(2, 3, 4))
    unary('transpose', lambda a: F.transpose(a, (2, 0, 1)), normal(2, 3, 4))
    unary('getitem', lambda a: a[:, 1:3], normal(2, 4, 2))
    unary('getitem_fancy', lambda a: a[np.array([0, 2, 2])], normal(3, 2))

    a, b = normal(2, 3), normal(2, 2)
    weigh_cat = _weighting(rng, (2, 5))
    cases.append(CheckCase('concat', lambda u, v: weigh_cat(F.concat([u, v], axis=1)), [a, b]))

    weigh_lin = _weighting(rng, (2, 4, 3))
    cases.append(CheckCase('linear', lambda x, w, c: weigh_lin(F.linear(x, w, c)),
                           [normal(2, 4, 5), normal(3, 5), normal(3)]))

    for name, shape, kernel, stride, padding in (('conv3d', (1, 2, 4, 4, 4), 3, 1, 1),
                                                 ('conv3d_stride2', (1, 2, 5, 5, 5), 3, 2, 1),
                                                 ('conv3d_direct', (1, 1, 6, 6, 6), 5, 1, 2)):
        x, w, c = normal(*shape), normal(3, shape[1], kernel, kernel, kernel), normal(3)
        out = F.conv3d(Tensor(x), Tensor(w), Tensor(c), stride=stride, padding=padding)
        weigh = _weighting(rng, out.shape)
        cases.append(CheckCase(name, lambda u, v, bb, s=stride, p=padding, pr=weigh: pr(F.conv3d(u, v, bb, s, p)),
                               [x, w, c]))

    weigh_dw = _weighting(rng, (2, 6, 3))
    cases.append(CheckCase('depthwise_conv1d_causal',
                           lambda x, w, c: weigh_dw(F.depthwise_conv1d_causal(x, w, c)),
                           [normal(2, 6, 3), normal(3, 4), normal(3)]))

    unary('trilinear_up', lambda u: F.trilinear_resize(u, (4, 6, 4)), normal(1, 2, 2, 3, 2))
    unary('trilinear_down', lambda u: F.trilinear_resize(u, (2, 3, 2)), normal(1, 1, 4, 4, 4))

    weigh_in = _weighting(rng, (2, 3, 3, 3, 3))
    cases.append(CheckCase('instance_norm', lambda x, g, bb: weigh_in(F.instance_norm(x, g, bb)),
                           [normal(2, 3, 3, 3, 3), normal(3), normal(3)]))
    weigh_cn = _weighting(rng, (2, 5, 4))
    cases.append(CheckCase('channel_norm', lambda x, g, bb: weigh_cn(F.channel_norm(x, g, bb)),
                           [normal(2, 5, 4), normal(4), normal(4)]))
    unary('global_avg_pool', F.global_avg_pool, normal(2, 3, 2, 2, 2))

    target = (rng.uniform(size=(2, 1, 3, 3, 3)) > 0.5).astype(F64)
    cases.append(CheckCase('dice_loss', lambda p: dice_loss(p, target),
                           [rng.uniform(0.1, 0.9, size=(2, 1, 3, 3, 3))]))
    truth = np.array([0.6, 0.0, 0.8])
    cases.append(CheckCase('slope_loss', lambda p: slope_loss(p, truth), [normal(2, 3)]))
    return cases


def scan_cases(rng) -> List[CheckCase]:
    B, L, D, N = 2, 7, 3, 4
    inputs = [rng.normal(size=(B, L, D)), rng.uniform(0.1, 1.0, size=(B, L, D)), -rng.uniform(0.1, 2.0, size=(D, N)),
              rng.normal(size=(B, L, N)), rng.normal(size=(B, L, N)), rng.normal(size=D)]
    cases = []
    for name, chunk in (('selective_scan_sequential', None), ('selective_scan_chunk1', 1),
                        ('selective_scan_chunk3', 3)):
        weigh = _weighting(rng, (B, L, D))
        cases.append(CheckCase(name, lambda *t, c=chunk, pr=weigh: pr(selective_scan(*t, chunk=c)), inputs))
    return cases


def _randomize_out_proj(net, rng, scale=0.1):
    # out_proj starts at zero; give the layers a non-trivial output branch
    for name, param in net.named_parameters():
        if name.endswith('out_proj.weight'):
            param.data[...] = rng.normal(0, scale, size=param.shape)


def mamba_cases(rng) -> List[CheckCase]:
    cases = []
    for bidirectional in (False, True):
        layer = MambaLayer(4, d_state=4, expand=2, d_conv=3, chunk=5, bidirectional=bidirectional,
                           rng=np.random.default_rng(int(rng.integers(1 << 31))), dtype=F64)
        _randomize_out_proj(layer, rng)
        names = ['in_proj.weight', 'conv_weight', 'x_proj.weight', 'dt_proj.weight', 'dt_proj.bias', 'A_log', 'D',
                 'out_proj.weight', 'norm.gamma']
        x = rng.normal(size=(1, 4, 2, 3, 2))
        weigh = _weighting(rng, x.shape)

        def f(volume, *params, layer=layer, names=names, weigh=weigh):
            with substituted(layer, names, params):
                return weigh(layer(volume))

        state = dict(layer.named_parameters())
        suffix = '_bidirectional' if bidirectional else ''
        cases.append(CheckCase('mamba_layer' + suffix, f, [x] + [state[n].data.copy() for n in names],
                               max_coords=150))
    return cases


NETWORK_PARAMS = ('encoder.0.down.conv.weight', 'encoder.0.mamba.in_proj.weight', 'encoder.0.mamba.A_log',
                  'encoder.0.mamba.dt_proj.bias', 'encoder.2.conv.norm.gamma', 'decoder.0.up.weight',
                  'decoder.3.fuse.conv.weight', 'head.weight', 'head.bias', 'scp.proj.0.weight',
                  'scp.att1.weight', 'scp.fc1.weight', 'scp.fc2.bias')


def network_cases(rng, seed=0, max_coords=96) -> List[CheckCase]:
    config = preset('gradcheck')
    net = ImplantNet(config, seed=seed, dtype=F64)
    _randomize_out_proj(net, rng)
    phantom = generate(seed, config.input_extent)
    volume = phantom.volume[None].astype(F64)
    mask = phantom.mask[None, None].astype(F64)
    slope = phantom.slope.as_array()[None]
    # heatmap detached: built once from the ground-truth endpoints
    heatmap = net.teacher_heatmap([Endpoints(phantom.apex, phantom.base)], volume.shape[2:])
    state = dict(net.named_parameters())

    def loss(vol):
        return net.loss(net(vol, heatmap), mask, slope).tensor

    def of_params(*params):
        with substituted(net, NETWORK_PARAMS, params):
            return loss(volume)

    return [CheckCase('implantnet_16_input', loss, [volume], max_coords=max_coords // 4),
            CheckCase('implantnet_16_params', of_params, [state[n].data.copy() for n in NETWORK_PARAMS],
                      max_coords=max_coords)]


class GradCheckService(object):
    def __init__(self, seed=0, tol=TOLERANCE, atol=ATOL, network_coords=96, logger=None):
        self.logger = logger or logging.getLogger(__name__)
        self.seed = seed
        self.tol = tol
        self.atol = atol
        # parameter coordinates of the 16^3 network case; its input case checks a quarter as many
        self.network_coords = network_coords

    def cases(self, suites: Sequence[str] = SUITES) -> List[CheckCase]:
        rng = np.random.default_rng(self.seed)
        builders: Dict[str, Callable[[np.random.Generator], object]] = {
            'primitives': primitive_cases, 'scan': scan_cases, 'mamba': mamba_cases,
            'network': lambda r: network_cases(r, self.seed, self.network_coords),
        }
        out = []
        for suite in suites:
            if suite not in builders:
                raise GradCheckError(f'unknown suite {suite!r}, expected one of {SUITES}')
            out.extend(builders[suite](rng))
        return out

    def check(self, case: CheckCase) -> GradCheckReport:
        inputs = [Tensor(np.asarray(a, dtype=F64)) for a in case.inputs]
        report = grad_check(case.f, inputs, tol=self.tol, atol=self.atol, max_coords=case.max_coords,
                            seed=self.seed, mask_near_zero=case.mask_near_zero, name=case.name)
        level = logging.INFO if report.passed else logging.ERROR
        self.logger.log(level, f'{case.name}: max rel err {report.max_rel_err:.2e} over {report.checked} '
                               f'coordinates ({len(report.masked)} masked) {"ok" if report.passed else "FAILED"}')
        return report

    def run(self, suites: Sequence[str] = SUITES) -> SuiteReport:
        start = time.perf_counter()
        result = SuiteReport([self.check(case) for case in self.cases(suites)])
        result.seconds = time.perf_counter() - start
        return result
