import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from scfeat import oracles
from scfeat.bridge import l2_normalize
from scfeat.detector import KeypointSet
from scfeat.fixtures import offset_fixture
from scfeat.matching import (THRESHOLDS, DescriptorSet, MatchSet, UndefinedMetricError, apply_homography,
                             extract_descriptors, feature_coords, mma, mma_weights, mutual_nn_match)
from scfeat.tensor import Tensor, grid_sample


def kps(points):
    return KeypointSet(points, np.ones(len(points)))


def unit_map(seed, h=8, w=8, c=16):
    v = np.random.default_rng(seed).normal(size=(h, w, c))
    return Tensor(v / np.linalg.norm(v, axis=2, keepdims=True))


def test_feature_coords_quarter_mapping():
    assert_allclose(feature_coords([[0, 0], [1.5, 5.5], [31, 31]], (32, 32), (8, 8)),
                    [[-0.375, -0.375], [0.0, 1.0], [7.375, 7.375]])


def test_lattice_descriptor_is_stored_vector():
    d = unit_map(0)
    # pixel (4r + 1.5, 4c + 1.5) maps to lattice point (r, c)
    ds = extract_descriptors(d, kps([[4 * 3 + 1.5, 4 * 5 + 1.5]]), (32, 32))
    assert_allclose(ds.descriptors[0], d.array[3, 5], atol=1e-6)


def test_descriptors_unit_norm_and_composition():
    d = Tensor(np.random.default_rng(1).normal(size=(8, 8, 16)))
    pts = np.random.default_rng(2).uniform(0, 31, size=(50, 2))
    ds = extract_descriptors(d, kps(pts), (32, 32))
    assert ds.descriptors.shape == (50, 16)
    assert_allclose(np.linalg.norm(ds.descriptors, axis=1), 1.0, atol=1e-5)
    want = l2_normalize(grid_sample(d, feature_coords(pts, (32, 32), (8, 8))))
    assert_allclose(ds.descriptors, want, atol=1e-6)
    scaled = extract_descriptors(Tensor(3.7 * d.array), kps(pts), (32, 32))
    assert_allclose(scaled.descriptors, ds.descriptors, atol=1e-5)
    assert len(extract_descriptors(d, kps(np.zeros((0, 2))), (32, 32))) == 0


def test_self_match_is_identity():
    v = l2_normalize(np.random.default_rng(3).normal(size=(20, 8)))
    m = mutual_nn_match(v, v)
    assert_array_equal(m.pairs, np.column_stack([np.arange(20), np.arange(20)]))
    assert_allclose(m.distances, 0.0, atol=1e-7)
    assert len(mutual_nn_match(v, v, ratio=0.0)) == 0


@pytest.mark.parametrize("ratio", [None, 0.8, 0.95])
def test_mutual_nn_oracle(ratio):
    rng = np.random.default_rng(4)
    a = l2_normalize(rng.normal(size=(64, 8)))
    b = l2_normalize(a + 0.3 * rng.normal(size=(64, 8)))
    got = mutual_nn_match(a, b, ratio)
    assert [tuple(p) for p in got.pairs] == oracles.mutual_nn(a, b, ratio)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1), st.sampled_from([None, 0.8]))
def test_mutual_nn_symmetric_with_ties(n, m, seed, ratio):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 3, size=(n, 3)).astype(float)  # small lattice: many ties
    b = rng.integers(0, 3, size=(m, 3)).astype(float)
    ab = mutual_nn_match(a, b, ratio)
    ba = mutual_nn_match(b, a, ratio)
    assert {tuple(p) for p in ab.pairs} == {(j, i) for i, j in ba.pairs}
    assert [tuple(p) for p in ab.pairs] == oracles.mutual_nn(a, b, ratio)


def test_ratio_filter_is_subset():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(40, 6)), rng.normal(size=(40, 6))
    plain = {tuple(p) for p in mutual_nn_match(a, b).pairs}
    assert {tuple(p) for p in mutual_nn_match(a, b, 0.8).pairs} <= plain


def test_empty_inputs():
    assert len(mutual_nn_match(np.zeros((0, 4)), np.ones((3, 4)))) == 0


def test_mma_weights():
    w = mma_weights()
    assert_allclose(w, [1.9, 1.8, 1.7, 1.6, 1.5, 1.4, 1.3, 1.2, 1.1, 1.0])
    assert_allclose(w.sum(), 14.5)


def test_mma_identity():
    pts = np.random.default_rng(6).uniform(0, 60, (30, 2))
    rep = mma(pts, pts, np.column_stack([np.arange(30)] * 2), np.eye(3))
    assert rep.score == 1.0
    assert all(rep.accuracy[t] == 1.0 for t in THRESHOLDS)


def test_mma_offset_fixture():
    p1, p2, pairs, H = offset_fixture(offset=5.5)
    rep = mma(p1, p2, pairs, H)
    assert [rep.accuracy[t] for t in THRESHOLDS] == [0.0] * 5 + [1.0] * 5
    # 1.4 + 1.3 + 1.2 + 1.1 + 1.0 = 6.0 over the weight total 14.5
    assert_allclose(rep.score, 6.0 / 14.5, atol=1e-12)
    assert rep.format().splitlines()[-1] == "MMAscore 0.41379"


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 15))
def test_mma_monotone_and_bounded(seed, noise):
    rng = np.random.default_rng(seed)
    p1 = rng.uniform(0, 100, (20, 2))
    H = np.array([[1.0, 0.05, 3.0], [-0.02, 0.98, -2.0], [1e-4, 0.0, 1.0]])
    p2 = apply_homography(H, p1) + rng.normal(scale=noise, size=(20, 2))
    rep = mma(p1, p2, np.column_stack([np.arange(20)] * 2), H)
    acc = [rep.accuracy[t] for t in THRESHOLDS]
    assert all(x <= y for x, y in zip(acc, acc[1:]))
    assert 0.0 <= rep.score <= 1.0
    assert (rep.score == 1.0) == (acc[0] == 1.0)


def test_mma_report_grammar():
    p1, p2, pairs, H = offset_fixture()
    lines = mma(p1, p2, MatchSet(pairs, np.zeros(len(pairs))), H).format().splitlines()
    assert lines[0] == "matches 25"
    for t, line in zip(THRESHOLDS, lines[1:11]):
        key, value = line.split()
        assert key == f"MMA@{t}" and len(value.split(".")[1]) == 5
    assert lines[11].startswith("MMAscore ") and len(lines) == 12


def test_mma_errors():
    with pytest.raises(UndefinedMetricError):
        mma(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((0, 2), int), np.eye(3))
    with pytest.raises(ValueError):
        mma(np.zeros((2, 2)), np.zeros((2, 2)), [[0, 0]], np.zeros((3, 3)))


def test_homography_row_col_convention():
    H = np.array([[1.0, 0, 10.0], [0, 1.0, -2.0], [0, 0, 1.0]])  # x += 10, y -= 2
    assert_allclose(apply_homography(H, [[5.0, 7.0]]), [[3.0, 17.0]])


def test_descriptor_set_validation():
    with pytest.raises(ValueError):
        DescriptorSet(np.zeros((2, 4)), kps(np.zeros((3, 2))))
