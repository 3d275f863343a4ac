import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from scfeat import oracles
from scfeat.nn import (Bundle, ConvLayer, ConvUnit, NormLayer, activate, conv2d, init_conv, init_unit,
                       load_bundle, normalize_features, save_bundle, seeded_init, softplus)
from scfeat.tensor import FormatError, ShapeError, Tensor


def rand(shape, seed=0):
    return np.random.default_rng(seed).normal(size=shape)


def test_identity_conv():
    x = Tensor(rand((4, 5, 3)))
    kernel = np.eye(3).reshape(3, 3, 1, 1)
    assert conv2d(x, ConvLayer(kernel, np.zeros(3))) == x


def test_zero_kernel_gives_bias():
    x = Tensor(rand((4, 4, 2)))
    out = conv2d(x, ConvLayer(np.zeros((3, 2, 3, 3)), [1.0, -2.0, 0.5], padding=1))
    assert out.shape == (4, 4, 3)
    assert_array_equal(out.array, np.broadcast_to(np.float32([1.0, -2.0, 0.5]), (4, 4, 3)))


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1), (1, 0), (2, 0)])
def test_conv_matches_loop_oracle(stride, padding):
    x, kernel, bias = rand((5, 5, 3), 1), rand((4, 3, 3, 3), 2), rand(4, 3)
    layer = ConvLayer(kernel, bias, stride=stride, padding=padding)
    got = conv2d(Tensor(x), layer).array
    want = oracles.conv2d(Tensor(x).array, layer.kernel, layer.bias, stride, padding)
    assert got.shape == want.shape
    assert_allclose(got, want, atol=1e-5)


def test_conv_output_size_and_errors():
    x = Tensor(rand((8, 6, 2)))
    assert conv2d(x, init_conv(2, 5, 3, 0, stride=2)).shape == (4, 3, 5)
    with pytest.raises(ShapeError):
        conv2d(x, init_conv(3, 5, 3, 0))
    with pytest.raises(ShapeError):
        ConvLayer(np.zeros((1, 1, 5, 5)), [0.0])
    with pytest.raises(ShapeError):
        ConvLayer(np.zeros((2, 1, 3, 3)), [0.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.floats(-5, 5).filter(lambda a: abs(a) > 1e-3))
def test_conv_linear_without_bias(seed, alpha):
    x = rand((5, 4, 2), seed)
    layer = ConvLayer(rand((3, 2, 3, 3), seed + 1), np.zeros(3), padding=1)
    lhs = conv2d(Tensor(alpha * x), layer).array.astype(np.float64)
    rhs = alpha * conv2d(Tensor(x), layer).array.astype(np.float64)
    assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-5 * abs(alpha))


def test_norm_constant_input_is_zero():
    out = normalize_features(Tensor.full(3, 3, 8, 4.2), NormLayer.identity(8))
    assert_array_equal(out.array, 0.0)


def test_instance_norm_zero_mean():
    out = normalize_features(Tensor(rand((5, 6, 4)) * 3 + 7), NormLayer.identity(4, kind="instance"))
    assert np.all(np.abs(out.array.astype(np.float64).mean(axis=(0, 1))) < 1e-5)


def test_group_norm_two_groups_oracle():
    x = rand((2, 2, 4), 5)
    gain, shift = rand(4, 6), rand(4, 7)
    out = normalize_features(Tensor(x), NormLayer(gain, shift, groups=2)).array
    xx = Tensor(x).array.astype(np.float64)
    want = np.zeros_like(xx)
    for g in range(2):
        vals = [xx[i, j, k] for i in range(2) for j in range(2) for k in (2 * g, 2 * g + 1)]
        mu = sum(vals) / len(vals)
        var = sum((v - mu) ** 2 for v in vals) / len(vals)
        for k in (2 * g, 2 * g + 1):
            want[:, :, k] = (xx[:, :, k] - mu) / math.sqrt(var + 1e-5) * np.float32(gain[k]) + np.float32(shift[k])
    assert_allclose(out, want, atol=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.floats(1.0, 10), st.floats(-10, 10))
def test_group_norm_affine_invariance(seed, a, c):
    x = rand((4, 4, 8), seed)
    layer = NormLayer.identity(8, groups=2)
    assert_allclose(normalize_features(Tensor(a * x + c), layer).array,
                    normalize_features(Tensor(x), layer).array, atol=1e-4)


def test_norm_validation():
    with pytest.raises(ShapeError):
        NormLayer.identity(6, groups=4)
    with pytest.raises(ValueError):
        NormLayer(np.ones(2), np.zeros(2), kind="batch")
    with pytest.raises(ValueError):
        NormLayer(np.ones(2), np.zeros(2), groups=1, eps=0.0)


def test_activations_closed_forms():
    assert_allclose(softplus(0.0), math.log(2))
    assert abs(float(softplus(30.0)) - (30.0 + math.log1p(math.exp(-30.0)))) < 1e-9
    assert abs(float(softplus(30.0)) - 30.0) < 1e-9
    assert np.isfinite(softplus(1e4)) and softplus(1e4) == 1e4
    v = Tensor([[0.0, 1.5, 3.0]])
    assert activate(v, "elu") == v
    assert_allclose(activate(Tensor([[-1.0]]), "elu").data, [math.expm1(-1.0)], rtol=1e-6)
    assert_allclose(activate(Tensor([[-2.0, 2.0]]), "prelu").data, [-0.5, 2.0])
    assert_allclose(activate(Tensor([[-2.0]]), "prelu", slope=0.1).data, [-0.2], rtol=1e-6)
    with pytest.raises(ValueError):
        activate(v, "relu")


@given(st.lists(st.floats(-80, 80), min_size=2, max_size=20))
def test_softplus_positive_and_monotone(values):
    v = np.sort(np.array(values))
    out = activate(Tensor(v.reshape(1, -1)), "softplus").data
    assert np.all(out > 0)
    assert np.all(np.diff(out) >= 0)


def test_seeded_init_properties():
    a = seeded_init((8, 1, 3, 3), 17)
    assert np.array_equal(a, seeded_init((8, 1, 3, 3), 17))
    assert not np.array_equal(a, seeded_init((8, 1, 3, 3), 18))
    big = seeded_init((64, 1, 3, 3), 3, fan_in=9)
    assert np.all(np.abs(big) <= 1.0 / 3.0)
    assert np.abs(big).max() > 0.3


def test_bundle_roundtrip(tmp_path):
    unit = init_unit(4, 8, 3, seed=9, stride=2, norm="instance", act="prelu")
    b = Bundle({**unit.to_arrays("u"), "vec": np.arange(3.0)}, {**unit.to_meta("u"), "note": "x"})
    save_bundle(tmp_path / "w", b)
    back = load_bundle(tmp_path / "w")
    assert back.meta["note"] == "x"
    assert_array_equal(back.arrays["vec"], [0, 1, 2])
    unit2 = ConvUnit.from_bundle(back, "u")
    x = Tensor(rand((6, 6, 4)))
    assert unit2(x) == unit(x)
    assert unit2.conv.stride == 2 and unit2.norm.kind == "instance" and unit2.act == "prelu"


def test_bundle_errors(tmp_path):
    with pytest.raises(FormatError):
        load_bundle(tmp_path)
    (tmp_path / "manifest.txt").write_text("tensor.a=a.scft\n")
    with pytest.raises(FormatError):
        load_bundle(tmp_path)
    with pytest.raises(FormatError):
        ConvUnit.from_bundle(Bundle(), "missing")
