import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uadet.synth import (SOURCE, TARGET, ShiftParams, apply_shift, generate_scene,
                         make_dataset, read_split, render_scene, scene_rng, write_split)


def test_identity_shift_pixel_exact():
    a = generate_scene(scene_rng(0, 0, 0), domain=SOURCE)
    b = generate_scene(scene_rng(0, 0, 0), domain=TARGET, shift=ShiftParams.identity())
    assert np.array_equal(a.image, b.image)
    assert a.annotations == b.annotations


def test_full_haze_saturates():
    sc = generate_scene(scene_rng(0, 0, 1), domain=TARGET, shift=ShiftParams(1.0, 0.6, 0.05))
    assert np.all(sc.image == 1.0)


def test_scene_deterministic():
    a = generate_scene(scene_rng(5, 1, 2), domain=TARGET)
    b = generate_scene(scene_rng(5, 1, 2), domain=TARGET)
    assert np.array_equal(a.image, b.image) and a.annotations == b.annotations


@given(st.integers(0, 10_000))
def test_scene_invariants(seed):
    sc = generate_scene(scene_rng(seed, 0, 0), n_classes=4, domain=TARGET)
    assert sc.image.shape == (32, 32)
    assert sc.image.min() >= 0.0 and sc.image.max() <= 1.0
    assert 1 <= len(sc.annotations) <= 4
    for label, box in sc.annotations:
        assert 1 <= label <= 4
        x1, y1, x2, y2 = box.corners()
        assert x1 >= 0 and y1 >= 0 and x2 <= 1 + 1e-12 and y2 <= 1 + 1e-12


@given(st.floats(0, 1), st.floats(0.01, 1), st.floats(0, 0.5), st.integers(0, 1000))
def test_shift_keeps_range_and_geometry(haze, contrast, noise, seed):
    clean, anns = render_scene(np.random.default_rng(seed), 3)
    out = apply_shift(clean, ShiftParams(haze, contrast, noise), np.random.default_rng(1))
    assert out.min() >= 0.0 and out.max() <= 1.0
    shifted = generate_scene(np.random.default_rng(seed), 3, TARGET, ShiftParams(haze, contrast, noise))
    assert shifted.annotations == anns


def test_shift_validation():
    for args in ((1.2, 0.5, 0.0), (0.1, 0.0, 0.0), (0.1, 0.5, -1.0)):
        with pytest.raises(ValueError):
            ShiftParams(*args)
    with pytest.raises(ValueError):
        generate_scene(scene_rng(0, 0, 0), n_classes=0)


def test_dataset_counts_and_determinism():
    a = make_dataset(3, 100, 100)
    assert len(a.source) + len(a.target) == 200
    b = make_dataset(3, 100, 100)
    for x, y in zip(a.source + a.target, b.source + b.target):
        assert np.array_equal(x.image, y.image)
    with pytest.raises(ValueError):
        make_dataset(0, 0, 1)


def test_target_labels_are_held_out():
    ds = make_dataset(0, 2, 3, n_eval=2)
    assert all(not s.held_out for s in ds.source)
    assert all(s.held_out for s in ds.target + ds.target_eval)
    assert sum(ds.audit.values()) == 0
    assert "hidden" in repr(ds.target[0].annotations)
    ds.target[0].labels("eval")
    ds.target[1].labels("eval")
    assert ds.audit["eval"] == 2


def test_zero_shift_distributionally_identical():
    ds = make_dataset(11, 1000, 1000, ShiftParams.identity())
    s = np.array([sc.image.mean() for sc in ds.source])
    t = np.array([sc.image.mean() for sc in ds.target])
    se = np.sqrt(s.var(ddof=1) / s.size + t.var(ddof=1) / t.size)
    assert abs(s.mean() - t.mean()) < 3 * se


def test_default_shift_changes_statistics():
    ds = make_dataset(11, 200, 200)
    s = np.mean([sc.image.mean() for sc in ds.source])
    t = np.mean([sc.image.mean() for sc in ds.target])
    assert t > s + 0.1


def test_split_roundtrip(tmp_path):
    ds = make_dataset(2, 3, 3)
    write_split(tmp_path / "s.json", ds.source, "source")
    write_split(tmp_path / "t.json", ds.target, "target")
    src, audit = read_split(tmp_path / "s.json")
    assert all(np.array_equal(a.image, b.image) for a, b in zip(src, ds.source))
    assert [a.annotations for a in src] == [b.annotations for b in ds.source]
    tgt, audit = read_split(tmp_path / "t.json")
    assert all(s.held_out for s in tgt)
    assert sum(audit.values()) == 0
    assert ds.audit["export"] == 3


def test_split_rejects_schema(tmp_path):
    (tmp_path / "x.json").write_text('{"schema": 2, "scenes": []}')
    with pytest.raises(ValueError):
        read_split(tmp_path / "x.json")
