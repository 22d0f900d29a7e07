import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uadet.geometry import Box
from uadet.records import CandidatePseudoLabel, Uncertainty
from uadet.selection import (SelectionParams, penalty_soft_nms, penalty_uncertainty_aware,
                             select_by_score, select_pseudo_labels)

import oracles
from conftest import random_boxes

unit = st.floats(0.0, 1.0)
sigma = st.floats(1e-3, 10.0)


def cand(box, score, u=0.0, label=1):
    return CandidatePseudoLabel(box=Box(*box), label=label, detection_score=score,
                                uncertainty=Uncertainty(u, 0.0, u, u_norm=u))


def random_cands(rng, n, u=None):
    boxes = random_boxes(rng, n, 0.05, 0.4)
    scores = rng.uniform(0.0, 1.0, n)
    us = rng.uniform(0, 1, n) if u is None else np.full(n, u)
    return [cand(b, s, v) for b, s, v in zip(boxes, scores, us)], boxes, scores


def test_soft_nms_penalty_examples():
    assert penalty_soft_nms(0.9, 0.0, 0.4) == 0.9
    assert penalty_soft_nms(0.9, 1.0, 0.4) == pytest.approx(0.9 * math.exp(-2.5))
    assert penalty_soft_nms(0.9, 1.0, 0.4) == pytest.approx(0.07388, abs=1e-5)
    assert penalty_soft_nms(0.0, 0.7, 0.4) == 0.0
    with pytest.raises(ValueError):
        penalty_soft_nms(0.9, 0.5, 0.0)


def test_uncertainty_penalty_examples():
    assert penalty_uncertainty_aware(0.9, 0.5, 0.4, 0.0) == 0.9 * math.exp(-0.625)
    assert 0.9 * math.exp(-0.625) == pytest.approx(0.48178, abs=1e-4)
    exact = 0.9 * math.exp(-0.625 * math.e)
    assert penalty_uncertainty_aware(0.9, 0.5, 0.4, 1.0) == pytest.approx(exact, rel=1e-15)
    assert exact == pytest.approx(0.16462, abs=1e-4)
    assert penalty_uncertainty_aware(0.9, 0.0, 0.4, 0.7) == 0.9
    for bad in (-0.1, 1.1):
        with pytest.raises(ValueError):
            penalty_uncertainty_aware(0.9, 0.5, 0.4, bad)


@given(unit, unit, sigma)
def test_reduction_bitwise(s, ov, sg):
    assert penalty_uncertainty_aware(s, ov, sg, 0.0) == penalty_soft_nms(s, ov, sg)


@given(unit, unit, sigma, unit, unit)
def test_monotone_in_u(s, ov, sg, u1, u2):
    lo, hi = sorted((u1, u2))
    assert penalty_uncertainty_aware(s, ov, sg, hi) <= penalty_uncertainty_aware(s, ov, sg, lo)


@given(st.floats(0.01, 1.0), st.floats(0.01, 1.0), sigma, st.floats(0.01, 1.0))
def test_strictly_smaller_with_uncertainty(s, ov, sg, u):
    a = penalty_uncertainty_aware(s, ov, sg, u)
    b = penalty_soft_nms(s, ov, sg)
    assert a <= b
    if b > 1e-300:
        assert a < b or math.isclose(ov * ov / sg * (math.exp(u) - 1), 0.0, abs_tol=1e-15)


@given(unit, unit, unit, sigma)
def test_soft_nms_penalty_decreasing_in_overlap(s, o1, o2, sg):
    lo, hi = sorted((o1, o2))
    assert penalty_soft_nms(s, hi, sg) <= penalty_soft_nms(s, lo, sg)


def test_params_validation():
    for kw in ({"tau1": 1.5}, {"tau2": -1}, {"sigma": 0}, {"k_max": 0}, {"k_max": 2.5}):
        with pytest.raises(ValueError):
            SelectionParams(**kw)
    assert SelectionParams() == SelectionParams(0.3, 0.001, 0.4, 20)


def test_empty_input():
    assert select_pseudo_labels([]) == []
    assert select_by_score([]) == []


def test_two_identical_boxes_hand_trace():
    b = (0.5, 0.5, 0.2, 0.2)
    out = select_pseudo_labels([cand(b, 0.9), cand(b, 0.8)])
    assert [c.detection_score for c in out] == [0.9, 0.8]
    assert out[0].selection_score == 0.9
    assert out[1].selection_score == pytest.approx(0.8 * math.exp(-2.5))
    assert out[1].selection_score == pytest.approx(0.0657, abs=1e-4)


def test_two_identical_boxes_hard_limit():
    b = (0.5, 0.5, 0.2, 0.2)
    out = select_pseudo_labels([cand(b, 0.9), cand(b, 0.8)], SelectionParams(sigma=1e-6))
    assert len(out) == 1 and out[0].selection_score == 0.9


def test_three_box_hand_trace():
    # A and B overlap with IoU 1/3, C is isolated
    a, b, c = (0.5, 0.5, 0.2, 0.2), (0.6, 0.5, 0.2, 0.2), (0.1, 0.1, 0.1, 0.1)
    cands = [cand(a, 0.9, 0.0), cand(b, 0.8, 1.0), cand(c, 0.7, 0.5)]
    out = select_pseudo_labels(cands)
    # pop A (0.9); B is penalized: 0.8 * exp(-(1/9)/0.4 * e); C untouched
    sb = 0.8 * math.exp(-(1 / 9) / 0.4 * math.e)
    assert sb == pytest.approx(0.376, abs=1e-3)
    assert [x.box.cx for x in out] == [0.5, 0.1, 0.6]
    np.testing.assert_allclose([x.selection_score for x in out], [0.9, 0.7, sb], rtol=1e-12)


def test_uncertainty_lowers_score_under_overlap():
    a, b = (0.5, 0.5, 0.2, 0.2), (0.55, 0.5, 0.2, 0.2)
    certain = select_pseudo_labels([cand(a, 0.9), cand(b, 0.8, 0.0)])[1].selection_score
    unsure = select_pseudo_labels([cand(a, 0.9), cand(b, 0.8, 1.0)])[1].selection_score
    assert unsure < certain


def test_gate_below_tau1_not_penalized():
    a, b = (0.5, 0.5, 0.2, 0.2), (0.65, 0.5, 0.2, 0.2)  # IoU 1/7 < 0.3
    out = select_pseudo_labels([cand(a, 0.9), cand(b, 0.8, 1.0)])
    assert out[1].selection_score == 0.8


def test_matches_reference_soft_nms(rng):
    for _ in range(200):
        n = int(rng.integers(1, 51))
        cands, boxes, scores = random_cands(rng, n, u=0.0)
        p = SelectionParams()
        got = [(c.box.as_array().tolist(), c.selection_score) for c in select_pseudo_labels(cands, p)]
        want = [(boxes[i].tolist(), s) for i, s in
                oracles.soft_nms(boxes.tolist(), scores.tolist(), p.tau1, p.tau2, p.sigma, p.k_max)]
        assert len(got) == len(want)
        for (gb, gs), (wb, ws) in zip(got, want):
            np.testing.assert_allclose(gb, wb, atol=0)
            assert abs(gs - ws) <= 1e-12


def test_tiny_sigma_is_hard_nms(rng):
    for _ in range(200):
        n = int(rng.integers(1, 51))
        cands, boxes, scores = random_cands(rng, n, u=0.0)
        p = SelectionParams(sigma=1e-6)
        got = [c.box.as_array().tolist() for c in select_pseudo_labels(cands, p)]
        keep = oracles.hard_nms(boxes.tolist(), scores.tolist(), p.tau1, len(scores))
        want = [boxes[i].tolist() for i in keep][: p.k_max]
        assert sorted(got) == sorted(want)


@given(st.integers(0, 2**32 - 1), st.integers(1, 25))
def test_output_invariants(seed, k):
    rng = np.random.default_rng(seed)
    cands, _, _ = random_cands(rng, int(rng.integers(1, 40)))
    out = select_pseudo_labels(cands, SelectionParams(k_max=k))
    assert len(out) <= k
    scores = [c.selection_score for c in out]
    assert scores == sorted(scores, reverse=True)
    for c in out:
        assert c.selection_score <= c.detection_score
    again = select_pseudo_labels(cands, SelectionParams(k_max=k))
    assert [(c.box, c.selection_score) for c in again] == [(c.box, c.selection_score) for c in out]


def test_top_k_by_selection_score():
    far = [(0.1 + 0.2 * i, 0.5, 0.05, 0.05) for i in range(5)]
    cands = [cand(b, s) for b, s in zip(far, [0.5, 0.9, 0.7, 0.6, 0.8])]
    out = select_pseudo_labels(cands, SelectionParams(k_max=3))
    assert [c.detection_score for c in out] == [0.9, 0.8, 0.7]


def test_tie_break_detection_then_index():
    b1, b2 = (0.2, 0.2, 0.1, 0.1), (0.8, 0.8, 0.1, 0.1)
    out = select_pseudo_labels([cand(b1, 0.5), cand(b2, 0.5)])
    assert [c.box.cx for c in out] == [0.2, 0.8]


def test_select_by_score_examples():
    b = (0.5, 0.5, 0.2, 0.2)
    assert len(select_by_score([cand(b, 0.9)], threshold=0.5)) == 1
    assert select_by_score([cand(b, 0.3)], threshold=0.5) == []
    out = select_by_score([cand(b, 0.9), cand(b, 0.8)], threshold=0.5)
    assert [c.detection_score for c in out] == [0.9]


def test_select_by_score_reference(rng):
    for _ in range(100):
        cands, boxes, scores = random_cands(rng, int(rng.integers(1, 40)))
        got = [c.box.as_array().tolist() for c in select_by_score(cands, 0.5, 7, 0.3)]
        keep = oracles.hard_nms(boxes.tolist(), scores.tolist(), 0.3, len(scores))
        want = [boxes[i].tolist() for i in keep if scores[i] >= 0.5][:7]
        assert got == want


def test_candidate_invariants():
    with pytest.raises(ValueError):
        cand((0.5, 0.5, 0.1, 0.1), 0.5, label=0)
    with pytest.raises(ValueError):
        CandidatePseudoLabel(Box(0.5, 0.5, 0.1, 0.1), 1, 0.5, Uncertainty(0, 0, 0), 0.6)
