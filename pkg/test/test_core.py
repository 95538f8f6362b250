"""
@Date    : 2026-10-18
自动微分核心: tensor, primitives, layers, optimizer, finite differences
"""
import math

import numpy as np
import pytest

from implant_mamba.core import functional as F
from implant_mamba.core.gradcheck import grad_check
from implant_mamba.core.module import Conv3d, Linear, Parameter
from implant_mamba.core.optim import Adam, cosine_warmup_lr
from implant_mamba.core.tensor import Graph, Tensor, backward
from implant_mamba.util.exceptions import ContractError, DimensionError, GradCheckError, IntegrityError

rng = np.random.default_rng(7)


def leaf(value):
    return Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)


def test_tensor_rejects_integer_storage():
    assert Tensor([1, 2, 3]).dtype == np.float32
    with pytest.raises(ContractError):
        Tensor(np.arange(3), dtype=np.int64)


def test_backward_of_sum_is_ones():
    x = leaf(rng.normal(size=(2, 3, 4)))
    with Graph() as graph:
        loss = x.sum()
        backward(loss, graph)
    assert np.array_equal(x.grad.data, np.ones((2, 3, 4)))


def test_backward_of_square():
    x = leaf([1.0, 2.0, 3.0])
    with Graph() as graph:
        (x * x).sum().backward(graph)
    assert np.allclose(x.grad.data, [2.0, 4.0, 6.0])


def test_backward_sums_over_diamond_paths():
    # a feeds both b and c, and x reaches c directly as well
    x = leaf([0.5, -1.0, 2.0])
    with Graph() as graph:
        a = F.exp(x)
        b = a * a
        c = a * x
        (b + c).sum().backward(graph)
    ea = np.exp(x.data)
    assert np.allclose(x.grad.data, 2 * ea * ea + ea * x.data + ea, rtol=1e-12)


def test_util_does_not_import_upper_layers():
    import pathlib
    import implant_mamba.util as util
    for path in pathlib.Path(util.__file__).parent.glob('*.py'):
        source = path.read_text(encoding='utf8')
        for layer in ('core', 'ssm', 'net', 'phantom', 'servers', 'cli'):
            assert f'from ..{layer}' not in source and f'implant_mamba.{layer}' not in source, path.name


def test_numerics_sources_comment_in_english():
    import pathlib
    import re
    import implant_mamba
    root = pathlib.Path(implant_mamba.__file__).parent
    cjk = re.compile('[一-鿿]')
    for package in ('core', 'ssm', 'net', 'phantom'):
        for path in (root / package).glob('*.py'):
            assert not cjk.search(path.read_text(encoding='utf8')), f'{package}/{path.name}'


def test_unreachable_leaf_has_no_grad():
    x, y = leaf([1.0, 2.0]), leaf([3.0])
    with Graph() as graph:
        backward(x.sum(), graph)
    assert y.grad is None


def test_backward_needs_scalar():
    x = leaf([1.0, 2.0])
    with Graph() as graph:
        with pytest.raises(ContractError):
            backward(x * 2, graph)


def test_nothing_recorded_outside_graph():
    x = leaf([1.0, 2.0])
    y = x * 3
    assert not y.requires_grad and y.is_leaf


def test_grads_accumulate_until_zero_grad():
    x = leaf([1.0, 2.0])
    for _ in range(2):
        with Graph() as graph:
            backward(x.sum(), graph)
    assert np.array_equal(x.grad.data, [2.0, 2.0])
    x.zero_grad()
    assert x.grad is None


def test_broadcast_grads_are_reduced():
    a, b = leaf(np.ones((3, 1))), leaf(np.ones((1, 4)))
    with Graph() as graph:
        backward((a + b).sum(), graph)
    assert np.array_equal(a.grad.data, np.full((3, 1), 4.0))
    assert np.array_equal(b.grad.data, np.full((1, 4), 3.0))


def test_repeated_fancy_index_accumulates():
    x = leaf([1.0, 2.0, 3.0])
    with Graph() as graph:
        backward(x[np.array([0, 0, 1])].sum(), graph)
    assert np.array_equal(x.grad.data, [2.0, 1.0, 0.0])


def test_conv3d_identity_kernel():
    x = rng.normal(size=(2, 1, 3, 4, 5))
    out = F.conv3d(Tensor(x), Tensor(np.ones((1, 1, 1, 1, 1))))
    assert np.array_equal(out.data, x)


def test_conv3d_window_sum():
    out = F.conv3d(Tensor(np.ones((1, 1, 4, 4, 4))), Tensor(np.ones((1, 1, 3, 3, 3))))
    assert out.shape == (1, 1, 2, 2, 2)
    assert np.all(out.data == 27)


def test_conv3d_zero_kernel_with_bias():
    out = F.conv3d(Tensor(rng.normal(size=(1, 2, 3, 3, 3))), Tensor(np.zeros((4, 2, 3, 3, 3))),
                   Tensor(np.full(4, 5.0)), padding=1)
    assert np.all(out.data == 5)


def test_conv3d_shape_errors():
    with pytest.raises(DimensionError):
        F.conv3d(Tensor(np.ones((1, 2, 4, 4, 4))), Tensor(np.ones((1, 3, 3, 3, 3))))
    with pytest.raises(DimensionError):
        F.conv3d(Tensor(np.ones((1, 1, 2, 2, 2))), Tensor(np.ones((1, 1, 3, 3, 3))))


def test_conv3d_is_linear_in_input():
    w = Tensor(rng.normal(size=(3, 2, 3, 3, 3)))
    x, y = rng.normal(size=(2, 1, 2, 5, 5, 5))
    lhs = F.conv3d(Tensor(2.5 * x - 0.5 * y), w, padding=1).data
    rhs = 2.5 * F.conv3d(Tensor(x), w, padding=1).data - 0.5 * F.conv3d(Tensor(y), w, padding=1).data
    assert np.max(np.abs(lhs - rhs)) < 1e-6


def test_conv3d_direct_path_matches_im2col(monkeypatch):
    x = Tensor(rng.normal(size=(2, 2, 5, 6, 5)))
    w = Tensor(rng.normal(size=(3, 2, 3, 3, 3)))
    expected = F.conv3d(x, w, stride=2, padding=1).data
    monkeypatch.setattr(F.Conv3d, 'IM2COL_MAX_KERNEL', 0)
    assert np.allclose(F.conv3d(x, w, stride=2, padding=1).data, expected, atol=1e-12)


def test_trilinear_identity_and_constant():
    x = rng.normal(size=(1, 2, 3, 4, 5))
    assert np.array_equal(F.trilinear_resize(Tensor(x), (3, 4, 5)).data, x)
    out = F.trilinear_resize(Tensor(np.full((1, 1, 2, 3, 2), 4.25)), (5, 2, 7))
    assert np.allclose(out.data, 4.25, atol=1e-12)


def test_trilinear_half_pixel_centres():
    # source coordinates are clamped to the edge voxels
    out = F.trilinear_resize(Tensor(np.array([0.0, 1.0]).reshape(1, 1, 1, 1, 2)), (1, 1, 4))
    assert np.allclose(out.data.reshape(-1), [0.0, 0.25, 0.75, 1.0])


def test_instance_norm_examples():
    one, zero = np.ones(1), np.zeros(1)
    flat = F.instance_norm(Tensor(np.full((1, 1, 2, 2, 2), 3.0)), Tensor(one), Tensor(zero))
    assert np.allclose(flat.data, 0)
    pair = F.instance_norm(Tensor(np.array([1.0, 3.0]).reshape(1, 1, 1, 1, 2)), Tensor(one), Tensor(zero), eps=1e-12)
    assert np.allclose(pair.data.reshape(-1), [-1.0, 1.0])
    collapsed = F.instance_norm(Tensor(rng.normal(size=(2, 1, 2, 2, 2))), Tensor(zero), Tensor(np.full(1, 7.0)))
    assert np.allclose(collapsed.data, 7.0)


def test_activation_values():
    zero = Tensor(np.zeros(1))
    assert F.sigmoid(zero).item() == 0.5
    assert F.silu(zero).item() == 0.0
    assert math.isclose(F.softplus(zero).item(), math.log(2))
    assert F.relu(Tensor(np.array([-1.0]))).item() == 0.0


def test_relu_slope_via_backward():
    x = leaf([2.0])
    with Graph() as graph:
        backward(F.relu(x).sum(), graph)
    assert x.grad.item() == 1.0


def test_grad_check_square_and_linear():
    x = Tensor(rng.normal(size=(3, 4)))
    assert grad_check(lambda t: (t * t).sum(), x, h=1e-5).max_rel_err < 1e-6
    linear = grad_check(lambda t: t.sum(), x)
    assert linear.passed and linear.max_rel_err < 1e-8


def test_grad_check_masks_relu_kink():
    x = Tensor(np.array([-1.0, 0.0, 2.0]))
    report = grad_check(lambda t: F.relu(t).sum(), x)
    assert report.passed
    assert (0, (1,)) in report.masked
    assert report.checked == 2


def test_grad_check_reports_nan():
    with np.errstate(invalid='ignore'):
        with pytest.raises(GradCheckError):
            grad_check(lambda t: F.log(t).sum(), Tensor(np.array([-1.0, 2.0])))


def test_grad_check_needs_f64():
    with pytest.raises(ContractError):
        grad_check(lambda t: t.sum(), Tensor(np.ones(2, dtype=np.float32)))


def test_conv_param_count():
    assert Conv3d(1, 8, 3).param_count() == 224
    assert Conv3d.count(1, 8, 3) == 224
    assert Linear(5, 3).param_count() == Linear.count(5, 3) == 18


def test_load_state_dict_checks_names_and_shapes():
    layer = Conv3d(1, 2, 3)
    state = dict(layer.state_dict())
    other = Conv3d(1, 2, 3, rng=np.random.default_rng(3))
    other.load_state_dict(state)
    assert np.array_equal(other.weight.data, layer.weight.data)
    with pytest.raises(IntegrityError):
        other.load_state_dict({'weight': state['weight']})
    with pytest.raises(IntegrityError):
        other.load_state_dict(dict(state, bias=np.zeros(3)))


def test_adam_first_step_moves_by_lr():
    p = Parameter(np.array([1.0]))
    optimizer = Adam([p])
    with Graph() as graph:
        backward(((p - 3.0) * (p - 3.0)).sum(), graph)
    optimizer.step(0.1)
    assert math.isclose(p.data[0], 1.1, rel_tol=1e-6)
    optimizer.zero_grad()
    assert p.grad is None


def test_cosine_warmup_endpoints():
    lr, total = 1e-3, 100
    assert cosine_warmup_lr(0, total, lr) == 0.0
    assert math.isclose(cosine_warmup_lr(10, total, lr), lr)
    assert math.isclose(cosine_warmup_lr(total, total, lr), 0.01 * lr)
    assert cosine_warmup_lr(5, total, lr) == pytest.approx(0.5 * lr)
    assert 0.01 * lr < cosine_warmup_lr(55, total, lr) < lr


def test_cosine_warmup_rejects_bad_arguments():
    with pytest.raises(ContractError):
        cosine_warmup_lr(0, 10, 0.0)
    with pytest.raises(ContractError):
        cosine_warmup_lr(0, 10, 1e-3, warmup_frac=1.0)
