import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from uadet.geometry import Box
from uadet.mc_uncertainty import (EmptySamplesError, McDetectionSamples, aggregate_mc,
                                  candidate_from_mc, candidates_for_image,
                                  normalize_uncertainties, predictive_uncertainty)
from uadet.records import Uncertainty

BOX = [0.5, 0.5, 0.2, 0.2]


def softmax_samples(rng, T, n, scale=3.0):
    z = rng.normal(0, scale, (T, n))
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def test_single_pass_aggregate():
    s = McDetectionSamples([[0.7, 0.3]], [BOX])
    mean, box = aggregate_mc(s)
    np.testing.assert_array_equal(mean, [0.7, 0.3])
    assert box == Box(*BOX)


def test_symmetric_mean():
    s = McDetectionSamples([[1.0, 0.0], [0.0, 1.0]], [BOX, BOX])
    np.testing.assert_array_equal(aggregate_mc(s)[0], [0.5, 0.5])


def test_mean_box_by_summation():
    boxes = [[cx, 0.5, 0.2, 0.2] for cx in (0.4, 0.5, 0.5, 0.6)]
    s = McDetectionSamples([[0.5, 0.5]] * 4, boxes)
    assert aggregate_mc(s)[1].cx == pytest.approx(sum(b[0] for b in boxes) / 4)


def test_hand_variance():
    u = predictive_uncertainty(McDetectionSamples([[1.0, 0.0], [0.0, 1.0]], [BOX, BOX]))
    assert u.u_c == pytest.approx(0.5)
    assert u.u_l == 0.0
    assert u.u_raw == pytest.approx(0.5)


def test_identical_passes_give_exact_zero(rng):
    g = softmax_samples(rng, 1, 4)[0]
    box = [0.31, 0.47, 0.123, 0.271]
    u = predictive_uncertainty(McDetectionSamples([g] * 16, [box] * 16))
    assert u.u_c == 0.0 and u.u_l == 0.0 and u.u_raw == 0.0


def test_u_raw_is_sum():
    rng = np.random.default_rng(3)
    s = McDetectionSamples(softmax_samples(rng, 8, 3), rng.uniform(0.2, 0.4, (8, 4)))
    u = predictive_uncertainty(s)
    assert u.u_raw == u.u_c + u.u_l


@given(st.integers(1, 30), st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_centered_form_identity(T, n, seed):
    rng = np.random.default_rng(seed)
    g = softmax_samples(rng, T, n)
    u = predictive_uncertainty(McDetectionSamples(g, np.tile(BOX, (T, 1))))
    centered = np.mean(np.sum((g - g.mean(axis=0)) ** 2, axis=1))
    assert abs(u.u_c - centered) < 1e-9
    assert 0.0 <= u.u_c <= 2.0


@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_aggregate_permutation_invariant(T, seed):
    rng = np.random.default_rng(seed)
    g, b = softmax_samples(rng, T, 3), rng.uniform(0.2, 0.4, (T, 4))
    perm = rng.permutation(T)
    m1, b1 = aggregate_mc(McDetectionSamples(g, b))
    m2, b2 = aggregate_mc(McDetectionSamples(g[perm], b[perm]))
    np.testing.assert_allclose(m1, m2, atol=1e-15)
    np.testing.assert_allclose(b1.as_array(), b2.as_array(), atol=1e-15)
    assert abs(m1.sum() - 1.0) < 1e-6


def test_validation():
    with pytest.raises(EmptySamplesError):
        McDetectionSamples(np.zeros((0, 2)), np.zeros((0, 4)))
    with pytest.raises(ValueError):
        McDetectionSamples([[0.5, 0.5]], [BOX, BOX])
    with pytest.raises(ValueError):
        McDetectionSamples([[0.6, 0.6]], [BOX])
    with pytest.raises(ValueError):
        McDetectionSamples([[1.0]], [BOX])
    with pytest.raises(ValueError):
        McDetectionSamples([[1.2, -0.2]], [BOX])


def _u(raw):
    return Uncertainty(raw, 0.0, raw)


def test_normalize_examples():
    assert [u.u_norm for u in normalize_uncertainties([_u(0.4)])] == [0.0]
    got = [u.u_norm for u in normalize_uncertainties([_u(0.1), _u(0.3), _u(0.5)])]
    np.testing.assert_allclose(got, [0.0, 0.5, 1.0])
    assert all(u.u_norm == 0 for u in normalize_uncertainties([_u(0.2)] * 3))
    with pytest.raises(ValueError):
        normalize_uncertainties([])


@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=20))
def test_normalize_order_preserving(raws):
    us = normalize_uncertainties([_u(r) for r in raws])
    for a, ua in zip(raws, us):
        assert 0.0 <= ua.u_norm <= 1.0
        for b, ub in zip(raws, us):
            if a < b:
                assert ua.u_norm <= ub.u_norm


def test_candidate_background_dropped():
    assert candidate_from_mc(McDetectionSamples([[0.9, 0.1]], [BOX])) is None


def test_candidate_argmax():
    c = candidate_from_mc(McDetectionSamples([[0.1, 0.6, 0.3]], [BOX]))
    assert c.label == 1 and c.detection_score == pytest.approx(0.6)
    assert c.selection_score == c.detection_score


def test_candidate_tie_lowest_foreground():
    c = candidate_from_mc(McDetectionSamples([[0.2, 0.4, 0.4]], [BOX]))
    assert c.label == 1


def test_candidate_box_is_clipped():
    c = candidate_from_mc(McDetectionSamples([[0.1, 0.9]], [[0.0, 0.5, 0.4, 0.2]]))
    assert c.box.corners()[0] == pytest.approx(0.0)


def test_candidates_for_image_normalizes():
    rng = np.random.default_rng(1)
    samples = []
    for k in range(5):
        g = softmax_samples(rng, 8, 3, scale=0.5 + k)
        g[:, 0] = 0.0
        g /= g.sum(axis=1, keepdims=True)
        samples.append(McDetectionSamples(g, np.tile(BOX, (8, 1))))
    cands = candidates_for_image(samples)
    norms = sorted(c.u_norm for c in cands)
    assert norms[0] == 0.0 and norms[-1] == 1.0
    assert candidates_for_image([]) == []
