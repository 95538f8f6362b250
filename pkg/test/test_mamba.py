"""
@Date    : 2026-10-18
"""
import numpy as np
import pytest

from implant_mamba.core.gradcheck import grad_check
from implant_mamba.core.tensor import Tensor
from implant_mamba.servers.checker import GradCheckService
from implant_mamba.ssm.mamba3d import MambaLayer, flatten_volume, inverse_softplus, unflatten_volume
from implant_mamba.util.exceptions import ContractError
from implant_mamba.util.variables import ScanOrder

rng = np.random.default_rng(21)


def test_flatten_raster_order():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 1, 2, 2)
    assert np.array_equal(flatten_volume(Tensor(x)).data.reshape(-1), [1.0, 2.0, 3.0, 4.0])
    assert np.array_equal(flatten_volume(Tensor(x), ScanOrder.RasterWHD).data.reshape(-1), [1.0, 3.0, 2.0, 4.0])


def test_unflatten_raster_order():
    seq = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1)
    out = unflatten_volume(Tensor(seq), (1, 2, 2))
    assert np.array_equal(out.data[0, 0, 0], [[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(unflatten_volume(Tensor(seq), (1, 1, 4)).data.reshape(-1), seq.reshape(-1))


@pytest.mark.parametrize('order', [o.value for o in ScanOrder])
def test_flatten_round_trip(order):
    x = rng.normal(size=(2, 3, 2, 4, 3))
    seq = flatten_volume(Tensor(x), order)
    assert seq.shape == (2, 24, 3)
    assert np.array_equal(unflatten_volume(seq, (2, 4, 3), order).data, x)


def test_single_voxel_volume():
    x = rng.normal(size=(1, 5, 1, 1, 1))
    assert flatten_volume(Tensor(x)).shape == (1, 1, 5)


def test_flatten_errors():
    with pytest.raises(ContractError):
        flatten_volume(Tensor(np.ones((1, 1, 2, 2, 2))), 'zigzag')
    with pytest.raises(ContractError):
        unflatten_volume(Tensor(np.ones((1, 7, 2))), (2, 2, 2))


def test_identity_at_init():
    layer = MambaLayer(4, d_state=4, d_conv=3, rng=np.random.default_rng(0), dtype=np.float64)
    x = rng.normal(size=(1, 4, 2, 3, 2))
    assert np.array_equal(layer(x).data, x)


def test_nonzero_out_proj_changes_output():
    layer = MambaLayer(4, d_state=4, rng=np.random.default_rng(0), dtype=np.float64)
    layer.out_proj.weight.data[...] = rng.normal(0, 0.1, size=layer.out_proj.weight.shape)
    x = rng.normal(size=(1, 4, 2, 2, 2))
    assert not np.allclose(layer(x).data, x)


@pytest.mark.parametrize('chunk', [3, 64])
def test_layer_is_causal_in_raster_order(chunk):
    layer = MambaLayer(4, d_state=4, d_conv=3, chunk=chunk, rng=np.random.default_rng(2), dtype=np.float64)
    layer.out_proj.weight.data[...] = rng.normal(0, 0.1, size=layer.out_proj.weight.shape)
    x = rng.normal(size=(1, 4, 2, 3, 4))
    before = flatten_volume(layer(x)).data
    for t in (5, 13, 23):
        moved = x.copy()
        moved[0, :, t // 12, t // 4 % 3, t % 4] += 1.0
        after = flatten_volume(layer(moved)).data
        assert np.max(np.abs(after[:, :t] - before[:, :t]), initial=0.0) < 1e-12
        assert np.max(np.abs(after[:, t] - before[:, t])) > 1e-6


def test_layer_rejects_wrong_channels():
    layer = MambaLayer(4)
    with pytest.raises(ContractError):
        layer(np.ones((1, 3, 2, 2, 2), dtype=np.float32))


def test_dt_bias_initial_step():
    layer = MambaLayer(8, dt_init=0.1)
    assert np.allclose(np.logaddexp(0, layer.dt_proj.bias.data), 0.1, rtol=1e-5)
    assert np.isclose(inverse_softplus(0.1), np.log(np.expm1(0.1)))


def test_closed_form_count():
    for channels, d_state, expand, d_conv in ((4, 4, 2, 3), (8, 16, 2, 4), (40, 16, 2, 4)):
        layer = MambaLayer(channels, d_state=d_state, expand=expand, d_conv=d_conv)
        assert layer.param_count() == MambaLayer.count(channels, d_state, expand, d_conv)


def test_layer_input_gradient():
    layer = MambaLayer(4, d_state=4, d_conv=3, chunk=3, rng=np.random.default_rng(1), dtype=np.float64)
    layer.out_proj.weight.data[...] = rng.normal(0, 0.1, size=layer.out_proj.weight.shape)
    weights = rng.normal(size=(1, 4, 2, 2, 2))
    report = grad_check(lambda v: (layer(v) * weights).sum(), Tensor(rng.normal(size=(1, 4, 2, 2, 2))))
    assert report.passed and report.max_rel_err < 1e-4


def test_mamba_suite_passes():
    result = GradCheckService(seed=0).run(['mamba'])
    assert result.passed, [r.to_dict() for r in result.failures]
