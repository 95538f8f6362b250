"""
Finite-difference verification of the analytic gradients.
"""
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .tensor import Graph, Tensor, backward
from ..util import Log
from ..util.exceptions import ContractError, GradCheckError
from ..util.variables import LOG

log = Log.getLogger(LOG.Check.value)

KINK_RTOL = 1e-3


@dataclass
class Mismatch:
    input_index: int
    coord: Tuple[int, ...]
    analytic: float
    numeric: float
    rel_err: float

    def to_dict(self):
        return dict(input=self.input_index, coord=list(self.coord), analytic=self.analytic,
                    numeric=self.numeric, rel_err=self.rel_err)


@dataclass
class GradCheckReport:
    name: str
    max_rel_err: float
    passed: bool
    checked: int
    masked: List[Tuple[int, Tuple[int, ...]]] = field(default_factory=list)
    worst: Optional[Mismatch] = None
    failures: List[Mismatch] = field(default_factory=list)

    def to_dict(self):
        return dict(name=self.name, max_rel_err=self.max_rel_err, passed=self.passed, checked=self.checked,
                    masked=[dict(input=i, coord=list(c)) for i, c in self.masked],
                    worst=self.worst.to_dict() if self.worst else None,
                    failures=[m.to_dict() for m in self.failures])


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def _evaluate(f, arrays, name):
    value = f(*[Tensor(a) for a in arrays])
    value = float(np.asarray(getattr(value, 'data', value)).reshape(-1)[0])
    if not np.isfinite(value):
        raise GradCheckError(f'{name}: f returned non-finite value {value}')
    return value


def grad_check(f: Callable[..., Tensor], x: Union[Tensor, Sequence[Tensor]], h=1e-5, tol=1e-4, atol=0.0,
               max_coords: Optional[int] = None, seed=0, mask_near_zero=False, name='f') -> GradCheckReport:
    """
    Compare backward() against central differences (f(x + h e_i) - f(x - h e_i)) / 2h.

    :param f: scalar-valued function of one Tensor per entry of x
    :param x: f64 tensor, or a sequence of them
    :param atol: absolute floor; a coordinate whose |analytic - numeric| <= atol counts as passed
    :param max_coords: check a seeded random subset of coordinates instead of all of them
    :param mask_near_zero: also mask coordinates with |x_i| < 10 h (relu directly on the input)
    :return: GradCheckReport; coordinates where the one-sided differences disagree are kinks and are masked
    """
    inputs = [x] if isinstance(x, Tensor) else list(x)
    for tensor in inputs:
        if tensor.dtype != np.float64:
            raise ContractError(f'grad_check requires f64 inputs, got {tensor.dtype}')
        if not np.isfinite(tensor.data).all():
            raise ContractError('grad_check requires finite inputs')

    leaves = [Tensor(t.data.copy(), requires_grad=True) for t in inputs]
    with Graph() as graph:
        out = f(*leaves)
        if not np.isfinite(out.data).all():
            raise GradCheckError(f'{name}: f returned non-finite value {out.data}')
        backward(out, graph)
    analytic = [leaf.grad.data if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

    coords = [(i, idx) for i, t in enumerate(inputs) for idx in np.ndindex(*t.shape)]
    if max_coords is not None and len(coords) > max_coords:
        picks = np.random.default_rng(seed).choice(len(coords), size=max_coords, replace=False)
        coords = [coords[p] for p in sorted(picks)]

    arrays = [t.data.copy() for t in inputs]
    base = _evaluate(f, arrays, name)
    report = GradCheckReport(name=name, max_rel_err=0.0, passed=True, checked=0)
    for i, idx in coords:
        original = arrays[i][idx]
        if mask_near_zero and abs(original) < 10 * h:
            report.masked.append((i, idx))
            continue
        arrays[i][idx] = original + h
        plus = _evaluate(f, arrays, name)
        arrays[i][idx] = original - h
        minus = _evaluate(f, arrays, name)
        arrays[i][idx] = original

        forward_diff, backward_diff = (plus - base) / h, (base - minus) / h
        if abs(forward_diff - backward_diff) > KINK_RTOL * max(1.0, abs(forward_diff), abs(backward_diff)):
            report.masked.append((i, idx))
            continue

        numeric = (plus - minus) / (2 * h)
        a = float(analytic[i][idx])
        report.checked += 1
        if abs(a - numeric) <= atol:
            continue
        err = rel_err(a, numeric)
        mismatch = Mismatch(i, tuple(int(v) for v in idx), a, numeric, err)
        if err > report.max_rel_err:
            report.max_rel_err = err
            report.worst = mismatch
        if err >= tol:
            report.failures.append(mismatch)

    report.passed = not report.failures
    if report.masked:
        log.debug(f'{name}: {len(report.masked)} kink coordinates masked')
    log.debug(f'{name}: checked {report.checked} coordinates, max rel err {report.max_rel_err:.3e}')
    return report
