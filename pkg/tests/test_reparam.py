# tests/test_reparam.py
"""
Tests for the conv -> GPSA surgery and the equivalence checks.
"""
import sys
import os
import math
import numpy as np
import pytest
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))
from tcnn.core.exceptions import SurgeryError, UnsupportedError
from tcnn.model.resnet import build_cnn, forward_classify, gpsa_layers
from tcnn.nn.gpsa import attention_span, gating_values
from tcnn.nn.layers import Conv2d, conv_forward
from tcnn.reparam.surgery import (PaddedGpsa, added_parameters, conv_to_gpsa, head_centers,
                                  transform_last_stage, verify_equivalence)
from tcnn.schemas.model import ModelConfig, StageSpec, reference_config
from tcnn.schemas.reparam import InitMode, SurgeryReport
from tcnn.tensor.tensor import Tensor, set_default_dtype


@pytest.fixture(scope="module")
def tiny_cnn():
    """Reference tiny CNN at 16 x 16 (f32)"""
    set_default_dtype("f32")
    return build_cnn(reference_config("tiny", resolution=16, seed=3))


def random_conv(d_in, d_out, k=3, stride=1, seed=0, dtype=np.float32):
    conv = Conv2d(d_in, d_out, k, stride=stride, padding=(k - 1) // 2, bias=True,
                  rng=np.random.default_rng(seed), dtype=dtype)
    conv.bias.assign(np.random.default_rng(seed + 100).standard_normal(d_out))
    return conv


def test_head_centers():
    """k = 1 is a single centered head; k = 3 enumerates row-major offsets with the center fifth"""
    assert head_centers(1) == [(0.0, 0.0)]
    centers = head_centers(3)
    assert len(centers) == 9
    assert centers[0] == (-1.0, -1.0) and centers[-1] == (1.0, 1.0)
    assert centers[4] == (0.0, 0.0)
    assert all(max(abs(r), abs(c)) <= 1 for r, c in centers)
    with pytest.raises(UnsupportedError):
        head_centers(2)


def test_conv_to_gpsa_loads_filter_slices():
    """9 heads, identity values, W_out_h is the filter at pixel h, zero queries and keys"""
    conv = random_conv(4, 8)
    layer = conv_to_gpsa(conv, InitMode.paper())
    assert layer.n_heads == 9
    np.testing.assert_array_equal(layer.w_val.data, np.eye(4))
    assert not layer.w_qry.data.any() and not layer.w_key.data.any()
    for h in range(9):
        kr, kc = divmod(h, 3)
        np.testing.assert_array_equal(layer.w_out.data[h], conv.weight.data[:, :, kr, kc].T)
    np.testing.assert_array_equal(layer.bias.data, conv.bias.data)


def test_paper_mode_init_constants():
    """Paper mode: every head starts with gate sigmoid(1) and span 1"""
    layer = conv_to_gpsa(random_conv(4, 4), InitMode.paper())
    np.testing.assert_allclose(gating_values(layer), 0.7311, atol=1e-4)
    np.testing.assert_allclose(attention_span(layer), 1.0, atol=1e-6)


def test_pointwise_conv_single_head():
    """A 1 x 1 convolution maps to one head at offset 0 and is reproduced exactly"""
    conv = random_conv(3, 5, k=1)
    padded = PaddedGpsa.from_conv(conv, InitMode.strict())
    assert padded.gpsa.n_heads == 1
    x = Tensor(np.random.default_rng(1).standard_normal((2, 3, 6, 6)))
    np.testing.assert_allclose(padded(x).data, conv_forward(conv, x).data, atol=1e-4)


@pytest.mark.parametrize("d_in", [4, 8, 16])
@pytest.mark.parametrize("widen", [1, 2])
@pytest.mark.parametrize("stride", [1, 2])
def test_strict_layer_matches_conv_f32(d_in, widen, stride):
    """Strict surgery reproduces random convolutions on random inputs (f32, 1e-4)"""
    seed = d_in * 10 + widen + stride
    conv = random_conv(d_in, widen * d_in, stride=stride, seed=seed)
    size = 8 + (seed % 9)
    x = Tensor(np.random.default_rng(seed).standard_normal((2, d_in, size, size)).astype(np.float32))
    padded = PaddedGpsa.from_conv(conv, InitMode.strict())
    out = padded(x)
    expected = conv_forward(conv, x)
    assert out.shape == expected.shape
    assert np.max(np.abs(out.data - expected.data)) <= 1e-4


def test_strict_layer_matches_conv_f64():
    """With saturated locality (alpha = lambda = 25) the f64 deviation is below 1e-9"""
    set_default_dtype("f64")
    conv = random_conv(4, 8, seed=11, dtype=np.float64)
    x = Tensor(np.random.default_rng(11).standard_normal((2, 4, 10, 10)))
    padded = PaddedGpsa.from_conv(conv, InitMode.strict(25.0, 25.0))
    assert np.max(np.abs(padded(x).data - conv_forward(conv, x).data)) <= 1e-9


def test_strict_mode_bounds():
    """Strict mode refuses unsaturated constants"""
    with pytest.raises(ValueError):
        InitMode.strict(alpha_init=5.0)
    with pytest.raises(ValueError):
        InitMode.strict(lambda_init=3.0)


def test_even_kernel_unsupported():
    """Only odd kernels have a centered head layout"""
    conv = Conv2d(2, 2, 2, padding=0)
    with pytest.raises(UnsupportedError):
        PaddedGpsa.from_conv(conv, InitMode.paper())


def test_strict_model_equivalence(tiny_cnn):
    """Strict T-CNN matches the CNN within 1e-3 including the strided block and borders"""
    hybrid, report = transform_last_stage(tiny_cnn, InitMode.strict())
    assert report.layers_replaced == ["stages.1.0.conv1", "stages.1.0.conv2", "stages.1.1.conv1", "stages.1.1.conv2"]
    result = verify_equivalence(tiny_cnn, hybrid, n_probes=16, tol=1e-3)
    assert result.passed, result.to_text()


@pytest.mark.parametrize("resolution", [16, 24, 32])
def test_resolution_transfer(tiny_cnn, resolution):
    """The same strict T-CNN stays equivalent at other input resolutions"""
    hybrid, _ = transform_last_stage(tiny_cnn, InitMode.strict())
    before = {n: p.data.copy() for n, p in hybrid.named_parameters()}
    result = verify_equivalence(tiny_cnn, hybrid, n_probes=4, tol=1e-3, resolution=resolution)
    assert result.passed, result.to_text()
    assert result.resolution == resolution
    for name, p in hybrid.named_parameters():
        np.testing.assert_array_equal(p.data, before[name])


def test_paper_mode_deviates(tiny_cnn):
    """Paper mode trades exactness for trainability: finite deviation above 1e-3"""
    hybrid, _ = transform_last_stage(tiny_cnn, InitMode.paper())
    result = verify_equivalence(tiny_cnn, hybrid, n_probes=4, tol=1e-3)
    assert not result.passed
    assert math.isfinite(result.max_abs_dev) and result.max_abs_dev > 1e-3


@pytest.mark.parametrize("mode", [InitMode.paper(), InitMode.strict()])
def test_odd_resolution_shapes(mode):
    """Both modes keep the strided block's ceil(17 / 2) grid, so the residual add and logits line up"""
    cnn = build_cnn(reference_config("tiny", resolution=17, seed=5))
    hybrid, _ = transform_last_stage(cnn, mode)
    x = Tensor(np.random.default_rng(0).standard_normal((2, 3, 17, 17)))
    cnn.eval()
    hybrid.eval()
    assert forward_classify(hybrid, x).shape == forward_classify(cnn, x).shape == (2, 10)
    conv = cnn.stages[1][0].conv1
    replaced = hybrid.stages[1][0].conv1
    h = Tensor(np.random.default_rng(1).standard_normal((1, conv.in_channels, 17, 17)))
    assert replaced(h).shape == conv(h).shape == (1, conv.out_channels, 9, 9)


def test_model_vs_itself(tiny_cnn):
    """Zero deviation against itself"""
    result = verify_equivalence(tiny_cnn, tiny_cnn, n_probes=4)
    assert result.max_abs_dev == 0.0 and result.passed


def test_surgery_leaves_original_untouched(tiny_cnn):
    """The input model keeps its convolutions and parameters"""
    names = [n for n, _ in tiny_cnn.named_parameters()]
    hybrid, _ = transform_last_stage(tiny_cnn, InitMode.paper())
    assert [n for n, _ in tiny_cnn.named_parameters()] == names
    assert not gpsa_layers(tiny_cnn)
    assert len(gpsa_layers(hybrid)) == 4
    assert hybrid.transform["kind"] == "paper"


def test_double_transform_refused(tiny_cnn):
    """A transformed stage cannot be transformed again"""
    hybrid, _ = transform_last_stage(tiny_cnn, InitMode.paper())
    with pytest.raises(SurgeryError):
        transform_last_stage(hybrid, InitMode.paper())


def test_gate_scalar_count(tiny_cnn):
    """Four GPSA layers of nine heads give 36 gates"""
    hybrid, _ = transform_last_stage(tiny_cnn, InitMode.paper())
    gates = [n for n, _ in hybrid.named_parameters() if n.endswith("gpsa.gate")]
    assert sum(dict(hybrid.named_parameters())[n].size for n in gates) == 36


def test_parameter_count_closed_form():
    """With D_in = D_out = 36 each replaced layer adds 3 * D_in^2 + 36 parameters"""
    set_default_dtype("f32")
    config = ModelConfig(stages=[StageSpec(blocks=1, channels=36, stride=1),
                                 StageSpec(blocks=1, channels=36, stride=1)],
                         stem_channels=36, resolution=8)
    _, report = transform_last_stage(build_cnn(config), InitMode.paper())
    assert report.params_added == 2 * (3 * 36 * 36 + 36)
    assert 0.0 < report.relative_increase < 1.0


def test_added_parameters_general_width(tiny_cnn):
    """The report's increase equals the per-layer count for widths not divisible by 9"""
    hybrid, report = transform_last_stage(tiny_cnn, InitMode.paper())
    assert report.params_added == sum(added_parameters(layer) for _, layer in gpsa_layers(hybrid))


def test_report_rejects_inconsistent_counts():
    """An expected increase that does not match is a validation error"""
    with pytest.raises(ValueError):
        SurgeryReport(params_before=10, params_after=20, params_added_expected=5)
