"""Synthetic corpus checks: determinism, attribute separation, geometry."""
import dataclasses

import numpy as np
import pytest
from scipy.ndimage import distance_transform_edt

from sketchlite.raster import rasterize
from sketchlite.synth import (PHOTO_CANVAS, class_spec, generate_dataset,
                              generate_synthetic_pair, instance_spec,
                              make_photo, make_sketch, pair_name, shape_radius)


def test_generation_is_bitwise_deterministic():
    a_pid, a_photo, a_sketches = generate_synthetic_pair(0, 4, 7)
    b_pid, b_photo, b_sketches = generate_synthetic_pair(0, 4, 7)
    assert a_pid == b_pid == "c04i07"
    assert np.array_equal(a_photo.pixels, b_photo.pixels)
    for sa, sb in zip(a_sketches, b_sketches):
        assert sa.id == sb.id and np.array_equal(sa.points, sb.points)
    # a different seed moves the sketches but not the photo
    _, c_photo, c_sketches = generate_synthetic_pair(1, 4, 7)
    assert np.array_equal(a_photo.pixels, c_photo.pixels)
    assert not np.array_equal(a_sketches[0].points, c_sketches[0].points)


def test_instance_attribute_table_pairwise_distinct():
    for class_id in range(20):
        specs = [instance_spec(class_id, i) for i in range(10)]
        for i in range(10):
            for j in range(i + 1, 10):
                a, b = dataclasses.asdict(specs[i]), dataclasses.asdict(specs[j])
                assert any(a[k] != b[k] for k in a), (class_id, i, j)


def test_class_archetypes_differ():
    specs = [class_spec(c) for c in range(20)]
    assert len({(s.k1, s.k2, round(s.a1, 6), round(s.phase1, 6))
                for s in specs}) == 20
    # silhouettes of different classes overlap imperfectly
    a = make_photo(0, 0).pixels[:, :, 0] < 0.5
    b = make_photo(1, 0).pixels[:, :, 0] < 0.5
    iou = (a & b).sum() / (a | b).sum()
    assert iou < 0.9


def test_shape_radius_positive_and_bounded():
    theta = np.linspace(0, 2 * np.pi, 720)
    for class_id in range(20):
        cls = class_spec(class_id)
        for i in range(10):
            r = shape_radius(theta, cls, instance_spec(class_id, i))
            assert (r > 0.05).all()
            assert (r <= 0.40 + 1e-12).all()


def test_photo_contract():
    photo = make_photo(3, 5)
    assert photo.canvas == PHOTO_CANVAS
    assert photo.pixels.shape == (256, 256, 3)
    assert set(np.unique(photo.pixels)) <= {0.0, 1.0}
    ink = 1.0 - photo.pixels[:, :, 0]
    assert 0.05 < ink.mean() < 0.6
    assert photo.pixels[128, 128, 0] == 0.0  # shape interior is dark
    from sketchlite.synth import _hole_center
    hx, hy = _hole_center(class_spec(3), instance_spec(3, 5))
    assert photo.pixels[int(hy * 256), int(hx * 256), 0] == 1.0  # hole is light


def test_sketches_valid_and_sized():
    lengths = []
    for c in range(0, 20, 5):
        for i in range(0, 10, 3):
            for s in range(3):
                sk = make_sketch(c, i, s)
                sk.validate()
                lengths.append(len(sk))
                assert sk.pair_id == pair_name(c, i)
                assert sk.points[:, :2].min() >= 0.01
                assert sk.points[:, :2].max() <= 0.99
                spans = sk.strokes()
                assert len(spans) in (3, 4)  # at most one outline stroke drops
    assert 20 <= min(lengths) and max(lengths) <= 60


def test_dataset_split_layout():
    b = generate_dataset(seed=0, n_classes=4, n_instances=5)
    assert len(b.photos) == 20
    assert len(b.test_sketches) == 20 and len(b.train_sketches) == 40
    assert all(sk.id.endswith("s0") for sk in b.test_sketches)
    for sk in b.sketches:
        assert sk.pair_id in b.photos
    with pytest.raises(ValueError, match="two sketches"):
        generate_dataset(n_sketches=1)


def test_sketch_traces_its_own_photo():
    # chamfer distance from sketch ink to the paired photo's silhouette must
    # beat a random other photo almost always.
    b = generate_dataset(seed=0, n_classes=10, n_instances=5)
    ids = sorted(b.photos)
    dts = {pid: distance_transform_edt(b.photos[pid].pixels[:, :, 0] > 0.5)
           for pid in ids}

    def chamfer(sk, pid):
        ink = rasterize(sk, 256).pixels[:, :, 0] < 0.5
        return dts[pid][ink].mean()

    rng = np.random.default_rng(1)
    wins = 0
    for _ in range(100):
        sk = b.sketches[rng.integers(0, len(b.sketches))]
        while True:
            other = ids[rng.integers(0, len(ids))]
            if other != sk.pair_id:
                break
        wins += chamfer(sk, sk.pair_id) < chamfer(sk, other)
    assert wins >= 90
