"""
Dense N-D tensor with tape-based reverse-mode automatic differentiation.

Operations record onto the `Graph` active in the current thread (`with Graph() as graph:`).
Outside a graph nothing is recorded and results never require grad.
"""
import threading
from typing import List, Optional, Sequence

import numpy as np

from ..util import Log, is_debug
from ..util.exceptions import ContractError, DimensionError, NumericalError
from ..util.variables import LOG

log = Log.getLogger(LOG.Core.value)

DEFAULT_DTYPE = np.dtype(np.float32)
_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_local = threading.local()


def _graph_stack():
    stack = getattr(_local, 'stack', None)
    if stack is None:
        stack = _local.stack = []
    return stack


class Node:
    """ one recorded primitive application """
    __slots__ = ('index', 'ctx', 'inputs', 'output')

    def __init__(self, index, ctx, inputs, output):
        self.index = index
        self.ctx = ctx
        self.inputs = inputs
        self.output = output

    def __repr__(self):
        return f'Node({self.index}, {type(self.ctx).__name__})'


class Graph:
    """ append-only tape; append order is a topological order """

    def __init__(self):
        self.nodes: List[Node] = []

    def __enter__(self):
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        _graph_stack().remove(self)

    def __len__(self):
        return len(self.nodes)

    @staticmethod
    def current() -> Optional['Graph']:
        stack = _graph_stack()
        return stack[-1] if stack else None

    def record(self, ctx, inputs, output):
        node = Node(len(self.nodes), ctx, inputs, output)
        self.nodes.append(node)
        return node


class Tensor:
    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            array = np.asarray(data, dtype=dtype)
        else:
            array = np.asarray(data)
            if array.dtype not in _FLOAT_DTYPES:
                array = array.astype(DEFAULT_DTYPE)
        if array.dtype not in _FLOAT_DTYPES:
            raise ContractError(f'unsupported dtype {array.dtype}, expected f32 or f64')
        self.data: np.ndarray = array
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Tensor] = None
        self._node: Optional[Node] = None

    # ---- introspection
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._node is None

    def __repr__(self):
        return f'Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})'

    def __len__(self):
        return self.shape[0]

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad: np.ndarray):
        grad = np.asarray(grad, dtype=self.dtype).reshape(self.shape)
        if self.grad is None:
            self.grad = Tensor(grad.copy())
        else:
            self.grad = Tensor(self.grad.data + grad)

    def backward(self, graph: Optional['Graph'] = None):
        backward(self, graph or Graph.current())

    # ---- operators
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F
        return F.div(self, other)

    def __rtruediv__(self, other):
        from . import functional as F
        return F.div(other, self)

    def __neg__(self):
        from . import functional as F
        return F.neg(self)

    def __pow__(self, power):
        from . import functional as F
        return F.power(self, power)

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)

    def __getitem__(self, index):
        from . import functional as F
        return F.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes):
        from . import functional as F
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return F.transpose(self, axes or None)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


class Function:
    """
    Primitive with an explicit adjoint. Subclasses implement

        forward(ctx, *arrays, **kwargs) -> ndarray
        backward(ctx, grad) -> tuple of ndarray | None, one per input
    """

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        dtype = next((t.dtype for t in inputs if isinstance(t, Tensor)), DEFAULT_DTYPE)
        tensors = [t if isinstance(t, Tensor) else Tensor(np.asarray(t, dtype=dtype)) for t in inputs]
        ctx = cls()
        ctx.needs_grad = tuple(t.requires_grad for t in tensors)
        output = np.asarray(ctx.forward(*[t.data for t in tensors], **kwargs))
        if output.dtype not in _FLOAT_DTYPES:
            output = output.astype(dtype)
        if is_debug():
            _check_finite(cls.__name__, tensors, output)
        graph = Graph.current()
        result = Tensor(output)
        if graph is not None and any(ctx.needs_grad):
            result.requires_grad = True
            result._node = graph.record(ctx, tensors, result)
        return result

    def save_for_backward(self, *arrays):
        self.saved = arrays

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


def _check_finite(name, inputs, output):
    if all(np.isfinite(t.data).all() for t in inputs) and not np.isfinite(output).all():
        raise NumericalError(f'{name} produced non-finite values from finite inputs')


def backward(loss: Tensor, graph: Optional[Graph]):
    """
    Reverse sweep over `graph`. Leaf grads accumulate across calls until `zero_grad`.
    :param loss: scalar tensor recorded on `graph`
    :param graph: tape holding the forward computation
    """
    if loss.size != 1:
        raise DimensionError(f'backward needs a scalar loss, got shape {loss.shape}')
    if loss.is_leaf:
        if loss.requires_grad:
            loss._accumulate(np.ones_like(loss.data))
        return
    if graph is None or loss._node.index >= len(graph.nodes) or graph.nodes[loss._node.index] is not loss._node:
        raise ContractError('loss was not recorded on the given graph')

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes[:loss._node.index + 1]):
        grad = grads.pop(id(node.output), None)
        if grad is None:
            continue
        input_grads = node.ctx.backward(grad)
        if not isinstance(input_grads, (tuple, list)):
            input_grads = (input_grads,)
        for tensor, needs, input_grad in zip(node.inputs, node.ctx.needs_grad, input_grads):
            if not needs or input_grad is None:
                continue
            if tensor.is_leaf:
                tensor._accumulate(input_grad)
            else:
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + input_grad
                else:
                    grads[key] = np.asarray(input_grad, dtype=tensor.dtype).reshape(tensor.shape)


def unbroadcast(grad: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, extent in enumerate(shape) if extent == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)
