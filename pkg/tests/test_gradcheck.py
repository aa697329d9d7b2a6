# tests/test_gradcheck.py
"""
Tests for finite-difference gradient checking of the primitives and the GPSA layer.
"""
import sys
import os
import numpy as np
import pytest
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))
from tcnn.cli.commands import gpsa_gradcheck, model_gradcheck
from tcnn.core.exceptions import UsageError
from tcnn.tensor import functional as F
from tcnn.tensor.gradcheck import gradcheck
from tcnn.tensor.tensor import Tensor, set_default_dtype


@pytest.fixture
def rng():
    """Seeded generator, double precision default"""
    set_default_dtype("f64")
    return np.random.default_rng(7)


def test_sum_of_squares(rng):
    """Quadratic loss in f64 matches finite differences far below tolerance"""
    x = Tensor(rng.standard_normal(6))
    report = gradcheck(lambda t: (t * t).sum(), x, eps=1e-5)
    assert report.passed
    assert report.max_rel_err < 1e-7


def test_constant_function(rng):
    """Both gradients of a constant are zero and the check passes"""
    x = Tensor(rng.standard_normal(4))
    report = gradcheck(lambda t: Tensor(np.array(3.0)), x)
    assert report.passed
    assert report.max_abs_err == 0.0


def test_requires_grad_is_restored(rng):
    """gradcheck leaves the checked tensors as it found them"""
    x = Tensor(rng.standard_normal(3))
    gradcheck(lambda t: (t * 2.0).sum(), x)
    assert not x.requires_grad
    assert x.grad is None


def test_non_scalar_function_rejected(rng):
    """Only scalar-valued functions can be checked"""
    x = Tensor(rng.standard_normal(3))
    with pytest.raises(UsageError):
        gradcheck(lambda t: t * 2.0, x)


@pytest.mark.parametrize("op", ["conv2d", "avg_pool2d", "softmax", "sigmoid", "softplus", "batch_norm"])
def test_primitive_gradients(rng, op):
    """Every differentiable primitive passes at f64"""
    x = Tensor(rng.standard_normal((2, 2, 4, 4)))
    w = Tensor(rng.standard_normal((3, 2, 3, 3)))
    weights = Tensor(rng.standard_normal((2, 3, 4, 4)))
    gamma = Tensor(rng.uniform(0.5, 1.5, 2))
    beta = Tensor(rng.standard_normal(2))

    def loss(*ts):
        if op == "conv2d":
            return (F.conv2d(ts[0], ts[1], stride=1, padding=1) * weights).sum()
        if op == "avg_pool2d":
            return (F.avg_pool2d(ts[0], 2, 2) * weights[:, :2, :2, :2]).sum()
        if op == "softmax":
            return (F.softmax(ts[0], axis=-1) * weights[:, :2]).sum()
        if op == "sigmoid":
            return (F.sigmoid(ts[0]) * weights[:, :2]).sum()
        if op == "softplus":
            return (F.softplus(ts[0], 5.0) * weights[:, :2]).sum()
        mean = ts[0].data.mean(axis=(0, 2, 3))
        var = ts[0].data.var(axis=(0, 2, 3))
        return (F.batch_norm(ts[0], ts[1], ts[2], mean, var, 1e-5) * weights[:, :2]).sum()

    at = [x, w] if op == "conv2d" else [x, gamma, beta] if op == "batch_norm" else [x]
    # batch statistics are recomputed from the perturbed input on every call
    report = gradcheck(loss, at)
    assert report.passed, report.to_text()


def test_avg_pool_ceil_mode_gradient(rng):
    """Partial edge windows route gradient to the real pixels only"""
    x = Tensor(rng.standard_normal((2, 2, 5, 5)))
    weights = Tensor(rng.standard_normal((2, 2, 3, 3)))
    report = gradcheck(lambda t: (F.avg_pool2d(t, 2, 2, ceil_mode=True) * weights).sum(), x)
    assert report.passed, report.to_text()


def test_attention_primitives(rng):
    """Content and positional attention backward passes"""
    q = Tensor(rng.standard_normal((2, 2, 5, 3)))
    k = Tensor(rng.standard_normal((2, 2, 5, 3)))
    v = Tensor(rng.standard_normal((2, 5, 4)))
    p = Tensor(rng.dirichlet(np.ones(5), size=(2, 5)))
    weights = Tensor(rng.standard_normal((2, 2, 5, 4)))
    report = gradcheck(lambda a, b, c: (F.content_attention(a, b, c, 0.7) * weights).sum(), [q, k, v])
    assert report.passed, report.to_text()
    report = gradcheck(lambda a, b: (F.positional_attention(a, b) * weights).sum(), [p, v])
    assert report.passed, report.to_text()


def test_gpsa_layer_every_parameter_class():
    """W_qry, W_key, W_val, W_out, alpha_raw, centers, gate and bias all pass at 1e-5"""
    report = gpsa_gradcheck(seed=0)
    names = {e.name for e in report.entries}
    assert names == {"w_qry", "w_key", "w_val", "w_out", "alpha_raw", "centers", "gate", "bias"}
    assert report.passed, report.to_text()
    assert report.max_rel_err <= 1e-5


def test_two_block_hybrid_end_to_end():
    """Cross-entropy of a small transformed network passes at 1e-4"""
    report = model_gradcheck(seed=0)
    assert any("gpsa.gate" in e.name for e in report.entries)
    assert report.passed, report.to_text()
