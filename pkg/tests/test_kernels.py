"""Compiled kernels against their pure-Python twin and independent references."""
import os
import subprocess
import sys

import numpy as np
import pytest

from uadet import _kernels_py as py
from uadet import kernels

from conftest import random_boxes

try:
    from uadet import _kernels as cy
except ImportError:  # extension not built
    cy = None

needs_ext = pytest.mark.skipif(cy is None, reason="compiled extension not built")


def reference_hard_nms(boxes, scores, thr):
    from uadet.geometry import Box, iou
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    keep = []
    for i in order:
        if all(iou(Box.from_array(boxes[i]), Box.from_array(boxes[k])) < thr for k in keep):
            keep.append(i)
    return keep


@needs_ext
def test_backend_prefers_extension():
    expected = "python" if os.environ.get("UADET_PURE_PYTHON") else "cython"
    assert kernels.BACKEND == expected


def test_env_forces_python_backend():
    env = {**os.environ, "UADET_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", "import uadet; print(uadet.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"


@needs_ext
def test_iou_parity(rng):
    for _ in range(20):
        a, b = random_boxes(rng, 13), random_boxes(rng, 9)
        assert np.array_equal(cy.iou_matrix(a, b), py.iou_matrix(a, b))


@needs_ext
def test_soft_nms_parity(rng):
    for _ in range(50):
        n = int(rng.integers(1, 40))
        boxes = random_boxes(rng, n)
        det = rng.uniform(0, 1, n)
        unc = rng.uniform(0, 1, n)
        args = (boxes, det.copy(), det, unc, 0.3, 0.001, 0.4)
        o1, f1 = cy.soft_nms_select(*args)
        o2, f2 = py.soft_nms_select(*args)
        assert np.array_equal(o1, o2)
        assert np.array_equal(f1, f2)


@needs_ext
def test_hard_nms_parity(rng):
    for _ in range(50):
        n = int(rng.integers(1, 40))
        boxes, sc = random_boxes(rng, n), rng.uniform(0, 1, n)
        assert np.array_equal(cy.hard_nms(boxes, sc, 0.5), py.hard_nms(boxes, sc, 0.5))


@pytest.mark.parametrize("impl", [py, cy] if cy is not None else [py])
def test_hard_nms_reference(impl, rng):
    for _ in range(50):
        n = int(rng.integers(1, 30))
        boxes, sc = random_boxes(rng, n), rng.uniform(0, 1, n)
        assert impl.hard_nms(boxes, sc, 0.3).tolist() == reference_hard_nms(boxes, sc, 0.3)


@pytest.mark.parametrize("impl", [py, cy] if cy is not None else [py])
def test_empty_inputs(impl):
    z = np.zeros((0, 4))
    assert impl.iou_matrix(z, z).shape == (0, 0)
    assert impl.hard_nms(z, np.zeros(0), 0.5).size == 0
    order, final = impl.soft_nms_select(z, np.zeros(0), np.zeros(0), np.zeros(0), 0.3, 0.001, 0.4)
    assert order.size == 0 and final.size == 0
