"""
Selective state-space scan: input-dependent discretization and the linear recurrence,
as a sequential oracle and as a chunked scan that composes per-chunk affine maps.
"""
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np

from . import kernels
from ..core import functional as F
from ..core.tensor import Function, Tensor, as_tensor
from ..util import Log
from ..util.exceptions import ContractError, DimensionError
from ..util.variables import LOG

log = Log.getLogger(LOG.Scan.value)

DEFAULT_CHUNK = 64


@dataclass
class ScanInputs:
    """
    x, delta [B, L, Din]; A [Din, N] (A = -exp(logA)); Bmat, Cmat [B, L, N]; Dskip [Din]
    """
    x: Tensor
    delta: Tensor
    A: Tensor
    Bmat: Tensor
    Cmat: Tensor
    Dskip: Tensor

    def __post_init__(self):
        for name in ('x', 'delta', 'A', 'Bmat', 'Cmat', 'Dskip'):
            setattr(self, name, as_tensor(getattr(self, name)))

    def tensors(self):
        return self.x, self.delta, self.A, self.Bmat, self.Cmat, self.Dskip

    def arrays(self):
        return tuple(t.data for t in self.tensors())


class ScanGrads(NamedTuple):
    x: np.ndarray
    delta: np.ndarray
    A: np.ndarray
    Bmat: np.ndarray
    Cmat: np.ndarray
    Dskip: np.ndarray


def validate(x, delta, A, Bm, Cm, Dskip):
    """ shape and sign preconditions; returns (B, L, Din, N) """
    if x.ndim != 3:
        raise DimensionError(f'x must be [B, L, Din], got {x.shape}')
    B, L, D = x.shape
    if L < 1:
        raise ContractError('scan needs L >= 1')
    if A.ndim != 2 or A.shape[0] != D or A.shape[1] < 1:
        raise DimensionError(f'A must be [{D}, N>=1], got {A.shape}')
    N = A.shape[1]
    if delta.shape != x.shape:
        raise DimensionError(f'delta {delta.shape} differs from x {x.shape}')
    if Bm.shape != (B, L, N) or Cm.shape != (B, L, N):
        raise DimensionError(f'Bmat/Cmat must be {(B, L, N)}, got {Bm.shape}, {Cm.shape}')
    if Dskip.shape != (D,):
        raise DimensionError(f'Dskip must be [{D}], got {Dskip.shape}')
    if not (delta > 0).all():
        raise ContractError('delta must be positive everywhere')
    if not (A <= 0).all():
        raise ContractError('A must be non-positive everywhere')
    return B, L, D, N


def discretize_zoh(delta, A, Bmat) -> Tuple[Tensor, Tensor]:
    """
    Abar = exp(delta A), Bbar = delta B, both [B, L, Din, N]
    """
    delta, A, Bmat = as_tensor(delta), as_tensor(A), as_tensor(Bmat)
    if not (delta.data > 0).all():
        raise ContractError('delta must be positive everywhere')
    B, L, D = delta.shape
    dt = F.reshape(delta, (B, L, D, 1))
    abar = F.exp(dt * A)
    bbar = dt * F.reshape(Bmat, (B, L, 1, Bmat.shape[-1]))
    return abar, bbar


def compose_affine(first, second):
    """ (a2, b2) after (a1, b1): h -> a2 (a1 h + b1) + b2 """
    a1, b1 = first
    a2, b2 = second
    return a2 * a1, a2 * b1 + b2


def apply_affine(affine, h):
    a, b = affine
    return a * h + b


def _n_chunks(L, chunk):
    return int(math.ceil(L / chunk))


def _forward(arrays, chunk):
    """ returns (y, boundary states h0 [B, n_chunks, Din, N]) """
    x, delta, A, Bm, Cm, Dskip = arrays
    B, L, D, N = validate(*arrays)
    y = np.empty_like(x)
    if chunk >= L:
        kernels.scan_forward_sequential(x, delta, A, Bm, Cm, Dskip, y)
        return y, np.zeros((B, 1, D, N), dtype=x.dtype)
    n_chunks = _n_chunks(L, chunk)
    decay = np.empty((B, n_chunks, D, N), dtype=x.dtype)
    local = np.empty_like(decay)
    h0 = np.empty_like(decay)
    kernels.chunk_summaries(x, delta, A, Bm, chunk, decay, local)
    kernels.compose_boundaries(decay, local, h0)
    kernels.scan_forward_chunks(x, delta, A, Bm, Cm, Dskip, h0, chunk, y)
    return y, h0


def _backward(arrays, h0, chunk, y_grad) -> ScanGrads:
    x, delta, A, Bm, Cm, Dskip = arrays
    B, L, D = x.shape
    N = A.shape[1]
    chunk = min(chunk, L)
    n_chunks = h0.shape[1]
    gy = np.ascontiguousarray(y_grad, dtype=x.dtype)
    kappa = np.zeros((B, n_chunks, D, N), dtype=x.dtype)
    if n_chunks > 1:
        decay = np.empty_like(kappa)
        carry = np.empty_like(kappa)
        kernels.adjoint_summaries(delta, A, Cm, gy, chunk, decay, carry)
        kernels.compose_adjoints(decay, carry, kappa)
    gx = np.empty_like(x)
    gdelta = np.empty_like(x)
    gB = np.zeros_like(Bm)
    gC = np.zeros_like(Cm)
    gA_part = np.zeros((B, n_chunks, D, N), dtype=x.dtype)
    gD_part = np.zeros((B, n_chunks, D), dtype=x.dtype)
    kernels.scan_backward_chunks(x, delta, A, Bm, Cm, Dskip, h0, kappa, gy, chunk,
                                 gx, gdelta, gB, gC, gA_part, gD_part)
    return ScanGrads(gx, gdelta, gA_part.sum(axis=(0, 1)), gB, gC, gD_part.sum(axis=(0, 1)))


def _contiguous(arrays):
    return tuple(np.ascontiguousarray(a) for a in arrays)


class SelectiveScan(Function):
    def forward(self, x, delta, A, Bm, Cm, Dskip, chunk=None):
        arrays = _contiguous((x, delta, A, Bm, Cm, Dskip))
        L = x.shape[1]
        self.chunk = L if chunk is None else chunk
        y, h0 = _forward(arrays, self.chunk)
        self.save_for_backward(*arrays)
        self.h0 = h0
        return y

    def backward(self, grad):
        return tuple(scan_backward_arrays(self.saved, self.h0, self.chunk, grad))


def scan_forward_arrays(arrays, chunk):
    """ raw forward on numpy arrays, returns (y, boundary states) """
    return _forward(_contiguous(arrays), chunk)


def scan_backward_arrays(arrays, h0, chunk, y_grad) -> ScanGrads:
    return _backward(arrays, h0, chunk, y_grad)


def scan_sequential(inputs: ScanInputs) -> Tensor:
    """ reference recurrence from h = 0, one step at a time """
    return SelectiveScan.apply(*inputs.tensors(), chunk=None)


def scan_chunked(inputs: ScanInputs, chunk: int = DEFAULT_CHUNK) -> Tensor:
    L = inputs.x.shape[1]
    if not 1 <= chunk <= L:
        raise ContractError(f'chunk must lie in [1, {L}], got {chunk}')
    return SelectiveScan.apply(*inputs.tensors(), chunk=chunk)


def selective_scan(x, delta, A, Bmat, Cmat, Dskip, chunk: Optional[int] = DEFAULT_CHUNK) -> Tensor:
    """ differentiable scan; chunk None or >= L runs the sequential path """
    L = as_tensor(x).shape[1]
    if chunk is not None and chunk < 1:
        raise ContractError(f'chunk must be positive, got {chunk}')
    chunk = None if chunk is None or chunk >= L else chunk
    return SelectiveScan.apply(x, delta, A, Bmat, Cmat, Dskip, chunk=chunk)


def scan_backward(inputs: ScanInputs, y_grad, chunk: Optional[int] = None) -> ScanGrads:
    """
    Gradients of sum(y * y_grad) for x, delta, A, Bmat, Cmat, Dskip.
    Boundary states are rebuilt by a forward pass, states inside a chunk are recomputed.
    """
    arrays = _contiguous(inputs.arrays())
    L = arrays[0].shape[1]
    chunk = L if chunk is None else chunk
    if not 1 <= chunk <= L:
        raise ContractError(f'chunk must lie in [1, {L}], got {chunk}')
    _, h0 = _forward(arrays, chunk)
    return scan_backward_arrays(arrays, h0, chunk, np.asarray(getattr(y_grad, 'data', y_grad)))
