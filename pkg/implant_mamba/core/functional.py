"""
Differentiable primitives. Layout is row-major NCDHW for volumes and [N, L, C] for sequences.
"""
from typing import Optional, Sequence, Tuple

import numpy as np

from .tensor import Function, Tensor, as_tensor, unbroadcast
from ..util.exceptions import ContractError, DimensionError


def _axes(axis, ndim) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


# ---------------------------------------------------------------- elementwise

class Add(Function):
    def forward(self, a, b):
        self.shapes = a.shape, b.shape
        return a + b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        self.shapes = a.shape, b.shape
        return a - b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.save_for_backward(a, b)
        return a * b

    def backward(self, grad):
        a, b = self.saved
        return unbroadcast(grad * b, a.shape), unbroadcast(grad * a, b.shape)


class Div(Function):
    def forward(self, a, b):
        self.save_for_backward(a, b)
        return a / b

    def backward(self, grad):
        a, b = self.saved
        return unbroadcast(grad / b, a.shape), unbroadcast(-grad * a / (b * b), b.shape)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return -grad


class Power(Function):
    def forward(self, a, exponent):
        self.save_for_backward(a)
        self.exponent = exponent
        return a ** exponent

    def backward(self, grad):
        a, = self.saved
        return grad * self.exponent * a ** (self.exponent - 1)


class Exp(Function):
    def forward(self, a):
        out = np.exp(a)
        self.save_for_backward(out)
        return out

    def backward(self, grad):
        out, = self.saved
        return grad * out


class Log(Function):
    def forward(self, a):
        self.save_for_backward(a)
        return np.log(a)

    def backward(self, grad):
        a, = self.saved
        return grad / a


class Abs(Function):
    def forward(self, a):
        self.save_for_backward(a)
        return np.abs(a)

    def backward(self, grad):
        a, = self.saved
        return grad * np.sign(a)


class Sqrt(Function):
    def forward(self, a):
        out = np.sqrt(a)
        self.save_for_backward(out)
        return out

    def backward(self, grad):
        out, = self.saved
        return grad / (2.0 * out)


def add(a, b):
    return Add.apply(a, b)


def sub(a, b):
    return Sub.apply(a, b)


def mul(a, b):
    return Mul.apply(a, b)


def div(a, b):
    return Div.apply(a, b)


def neg(a):
    return Neg.apply(a)


def power(a, exponent: float):
    return Power.apply(a, exponent=exponent)


def exp(a):
    return Exp.apply(a)


def log(a):
    return Log.apply(a)


def abs(a):
    return Abs.apply(a)


def sqrt(a):
    return Sqrt.apply(a)


# ---------------------------------------------------------------- activations

def _sigmoid(x):
    # tanh form: exact 0.5 at 0 and no overflow
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Relu(Function):
    def forward(self, x):
        self.save_for_backward(x)
        return np.maximum(x, 0)

    def backward(self, grad):
        x, = self.saved
        return grad * (x > 0)


class Sigmoid(Function):
    def forward(self, x):
        out = _sigmoid(x)
        self.save_for_backward(out)
        return out

    def backward(self, grad):
        out, = self.saved
        return grad * out * (1 - out)


class Silu(Function):
    def forward(self, x):
        s = _sigmoid(x)
        self.save_for_backward(x, s)
        return x * s

    def backward(self, grad):
        x, s = self.saved
        return grad * (s + x * s * (1 - s))


class Softplus(Function):
    def forward(self, x):
        self.save_for_backward(x)
        return np.logaddexp(0, x)

    def backward(self, grad):
        x, = self.saved
        return grad * _sigmoid(x)


def relu(x):
    return Relu.apply(x)


def sigmoid(x):
    return Sigmoid.apply(x)


def silu(x):
    return Silu.apply(x)


def softplus(x):
    return Softplus.apply(x)


# ---------------------------------------------------------------- reductions / shape

class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.shape = x.shape
        self.axes = _axes(axis, x.ndim)
        self.keepdims = keepdims
        return np.sum(x, axis=self.axes, keepdims=keepdims)

    def backward(self, grad):
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axes)
        return np.broadcast_to(grad, self.shape)


class Mean(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.shape = x.shape
        self.axes = _axes(axis, x.ndim)
        self.keepdims = keepdims
        self.count = int(np.prod([x.shape[a] for a in self.axes])) if self.axes else 1
        return np.mean(x, axis=self.axes, keepdims=keepdims)

    def backward(self, grad):
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axes)
        return np.broadcast_to(grad / self.count, self.shape)


class Reshape(Function):
    def forward(self, x, shape=()):
        self.shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return grad.reshape(self.shape)


class Transpose(Function):
    def forward(self, x, axes=None):
        self.axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
        return np.transpose(x, self.axes)

    def backward(self, grad):
        return np.transpose(grad, np.argsort(self.axes))


class GetItem(Function):
    def forward(self, x, index=None):
        self.shape = x.shape
        self.dtype = x.dtype
        self.index = index
        return np.array(x[index], copy=True)

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=self.dtype)
        if _is_basic_index(self.index):
            out[self.index] += grad
        else:
            np.add.at(out, self.index, grad)
        return out


def _is_basic_index(index):
    # slices and integers never select an element twice
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, type(Ellipsis), type(None))) for p in parts)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        bounds = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, bounds, axis=self.axis))


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise DimensionError('matmul needs operands of rank >= 2')
        if a.shape[-1] != b.shape[-2]:
            raise DimensionError(f'matmul inner extents differ: {a.shape} @ {b.shape}')
        self.save_for_backward(a, b)
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.saved
        grad_a = np.matmul(grad, np.swapaxes(b, -1, -2))
        grad_b = np.matmul(np.swapaxes(a, -1, -2), grad)
        return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)


def sum(x, axis=None, keepdims=False):
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False):
    return Mean.apply(x, axis=axis, keepdims=keepdims)


def reshape(x, shape):
    return Reshape.apply(x, shape=tuple(shape))


def transpose(x, axes=None):
    return Transpose.apply(x, axes=axes)


def getitem(x, index):
    return GetItem.apply(x, index=index)


def concat(tensors: Sequence[Tensor], axis=0):
    return Concat.apply(*tensors, axis=axis)


def matmul(a, b):
    return MatMul.apply(a, b)


def linear(x, weight, bias=None):
    """ x[..., in] -> x @ weight.T + bias, weight [out, in] """
    out = matmul(x, transpose(weight, (1, 0)))
    return out + bias if bias is not None else out


# ---------------------------------------------------------------- convolution

def _conv_output_shape(spatial, kernel, stride, padding):
    out = []
    for extent, k in zip(spatial, kernel):
        padded = extent + 2 * padding
        if padded < k:
            raise DimensionError(f'kernel {tuple(kernel)} larger than padded input {tuple(spatial)}')
        out.append((padded - k) // stride + 1)
    return tuple(out)


def _window(offset, extent, stride):
    return slice(offset, offset + stride * (extent - 1) + 1, stride)


class Conv3d(Function):
    """
    im2col for kernels up to 3 per axis, direct accumulation over kernel offsets otherwise.
    Both paths share the same offset loop in backward.
    """
    IM2COL_MAX_KERNEL = 3

    def forward(self, x, w, stride=1, padding=0):
        if x.ndim != 5 or w.ndim != 5:
            raise DimensionError(f'conv3d expects 5-D input and weight, got {x.shape}, {w.shape}')
        if stride < 1 or padding < 0:
            raise ContractError(f'invalid stride {stride} / padding {padding}')
        N, C, D, H, W = x.shape
        O, Cw, kd, kh, kw = w.shape
        if C != Cw:
            raise DimensionError(f'conv3d input has {C} channels, weight expects {Cw}')
        Do, Ho, Wo = _conv_output_shape((D, H, W), (kd, kh, kw), stride, padding)
        if min(Do, Ho, Wo) < 1:
            raise DimensionError('conv3d output would be empty')
        xp = np.pad(x, [(0, 0), (0, 0)] + [(padding, padding)] * 3) if padding else x
        self.stride, self.padding = stride, padding
        self.x_shape, self.xp_shape, self.out_spatial = x.shape, xp.shape, (Do, Ho, Wo)
        self.im2col = max(kd, kh, kw) <= self.IM2COL_MAX_KERNEL
        self.save_for_backward(xp, w)

        if self.im2col:
            cols = np.empty((N, C, kd, kh, kw, Do, Ho, Wo), dtype=x.dtype)
            for i in range(kd):
                for j in range(kh):
                    for k in range(kw):
                        cols[:, :, i, j, k] = xp[:, :, _window(i, Do, stride), _window(j, Ho, stride),
                                                 _window(k, Wo, stride)]
            cols = cols.reshape(N, C * kd * kh * kw, Do * Ho * Wo)
            self.cols = cols
            out = np.matmul(w.reshape(O, -1), cols)
            return out.reshape(N, O, Do, Ho, Wo)

        out = np.zeros((N, O, Do, Ho, Wo), dtype=np.result_type(x, w))
        for i in range(kd):
            for j in range(kh):
                for k in range(kw):
                    patch = xp[:, :, _window(i, Do, stride), _window(j, Ho, stride), _window(k, Wo, stride)]
                    out += np.moveaxis(np.tensordot(patch, w[:, :, i, j, k], axes=([1], [1])), -1, 1)
        return out

    def backward(self, grad):
        xp, w = self.saved
        O, C, kd, kh, kw = w.shape
        N = grad.shape[0]
        Do, Ho, Wo = self.out_spatial
        s, p = self.stride, self.padding
        grad_xp = np.zeros(self.xp_shape, dtype=grad.dtype)

        if self.im2col:
            g = grad.reshape(N, O, Do * Ho * Wo)
            grad_w = np.tensordot(g, self.cols, axes=([0, 2], [0, 2])).reshape(w.shape)
            grad_cols = np.matmul(w.reshape(O, -1).T, g).reshape(N, C, kd, kh, kw, Do, Ho, Wo)
            for i in range(kd):
                for j in range(kh):
                    for k in range(kw):
                        grad_xp[:, :, _window(i, Do, s), _window(j, Ho, s), _window(k, Wo, s)] += \
                            grad_cols[:, :, i, j, k]
        else:
            grad_w = np.zeros_like(w)
            for i in range(kd):
                for j in range(kh):
                    for k in range(kw):
                        window = (slice(None), slice(None), _window(i, Do, s), _window(j, Ho, s), _window(k, Wo, s))
                        grad_w[:, :, i, j, k] = np.tensordot(grad, xp[window], axes=([0, 2, 3, 4], [0, 2, 3, 4]))
                        grad_xp[window] += np.moveaxis(np.tensordot(w[:, :, i, j, k], grad, axes=([0], [1])), 0, 1)

        if p:
            grad_xp = grad_xp[:, :, p:-p, p:-p, p:-p]
        return grad_xp, grad_w


def conv3d(x, weight, bias=None, stride=1, padding=0):
    out = Conv3d.apply(x, weight, stride=stride, padding=padding)
    if bias is not None:
        out = out + reshape(bias, (1, -1, 1, 1, 1))
    return out


class DepthwiseCausalConv1d(Function):
    """ x [N, L, C], w [C, k]: out[n, t, c] = sum_j w[c, j] * x[n, t + j - k + 1, c] """

    def forward(self, x, w):
        if x.ndim != 3 or w.ndim != 2 or x.shape[2] != w.shape[0]:
            raise DimensionError(f'depthwise conv1d shape mismatch: {x.shape} vs {w.shape}')
        k = w.shape[1]
        L = x.shape[1]
        xp = np.pad(x, [(0, 0), (k - 1, 0), (0, 0)])
        self.save_for_backward(xp, w)
        out = np.zeros(x.shape, dtype=np.result_type(x, w))
        for j in range(k):
            out += xp[:, j:j + L, :] * w[:, j]
        return out

    def backward(self, grad):
        xp, w = self.saved
        k = w.shape[1]
        L = grad.shape[1]
        grad_xp = np.zeros_like(xp)
        grad_w = np.empty_like(w)
        for j in range(k):
            grad_w[:, j] = np.einsum('ntc,ntc->c', grad, xp[:, j:j + L, :])
            grad_xp[:, j:j + L, :] += grad * w[:, j]
        return grad_xp[:, k - 1:, :], grad_w


def depthwise_conv1d_causal(x, weight, bias=None):
    out = DepthwiseCausalConv1d.apply(x, weight)
    return out + bias if bias is not None else out


# ---------------------------------------------------------------- resampling

class Resize1d(Function):
    """ linear resampling of one axis, align-corners-false, source coordinate clamped """

    def forward(self, x, axis=0, size=1):
        in_size = x.shape[axis]
        self.axis, self.shape = axis, x.shape
        scale = in_size / size
        src = np.clip((np.arange(size) + 0.5) * scale - 0.5, 0, in_size - 1)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, in_size - 1)
        frac = (src - i0).astype(x.dtype)
        self.i0, self.i1 = i0, i1
        view = [1] * x.ndim
        view[axis] = size
        self.frac = frac.reshape(view)
        x0 = np.take(x, i0, axis=axis)
        x1 = np.take(x, i1, axis=axis)
        # x0 + w (x1 - x0) keeps constants exact
        return x0 + self.frac * (x1 - x0)

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=grad.dtype)
        moved = np.moveaxis(out, self.axis, 0)
        np.add.at(moved, self.i0, np.moveaxis(grad * (1 - self.frac), self.axis, 0))
        np.add.at(moved, self.i1, np.moveaxis(grad * self.frac, self.axis, 0))
        return out


def trilinear_resize(x, target: Sequence[int]):
    """ x [N, C, D, H, W] -> [N, C, *target] """
    x = as_tensor(x)
    if x.ndim != 5 or len(target) != 3:
        raise DimensionError(f'trilinear_resize expects 5-D input and 3 target extents, got {x.shape}, {target}')
    if min(target) < 1:
        raise DimensionError(f'target extents must be positive, got {tuple(target)}')
    for offset, size in enumerate(target):
        axis = 2 + offset
        if x.shape[axis] != size:
            x = Resize1d.apply(x, axis=axis, size=int(size))
    return x


# ---------------------------------------------------------------- normalization

class Normalize(Function):
    """ zero mean / unit variance over `axes` (biased variance, eps inside the root) """

    def forward(self, x, axes=(), eps=1e-5):
        self.axes = axes
        # a 1-element slice normalizes to 0; eps keeps the root finite
        mu = x.mean(axis=axes, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std
        self.save_for_backward(xhat, inv_std)
        return xhat

    def backward(self, grad):
        xhat, inv_std = self.saved
        mean_grad = grad.mean(axis=self.axes, keepdims=True)
        mean_grad_xhat = (grad * xhat).mean(axis=self.axes, keepdims=True)
        return inv_std * (grad - mean_grad - xhat * mean_grad_xhat)


def instance_norm(x, gamma, beta, eps=1e-5):
    """ per (n, c) slice of x [N, C, D, H, W] """
    x = as_tensor(x)
    if x.ndim != 5:
        raise DimensionError(f'instance_norm expects [N, C, D, H, W], got {x.shape}')
    xhat = Normalize.apply(x, axes=(2, 3, 4), eps=eps)
    return xhat * reshape(gamma, (1, -1, 1, 1, 1)) + reshape(beta, (1, -1, 1, 1, 1))


def channel_norm(x, gamma, beta, eps=1e-5):
    """ over the channel axis of a sequence x [..., C], one statistic per position """
    xhat = Normalize.apply(x, axes=(as_tensor(x).ndim - 1,), eps=eps)
    return xhat * gamma + beta


def global_avg_pool(x):
    """ [N, C, D, H, W] -> [N, C] """
    return mean(x, axis=(2, 3, 4))
