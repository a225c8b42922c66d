import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketchlite.sketch import (
    CanvasSet,
    SketchError,
    SketchVector,
    dp_keep_mask,
    from_strokes,
    render_partial,
    simplify_dp,
    to_absolute,
    to_offset,
)


def make_sketch(*stroke_lengths, rng=None):
    rng = rng or np.random.default_rng(0)
    strokes = [rng.uniform(0.05, 0.95, size=(n, 2)) for n in stroke_lengths]
    return from_strokes(strokes, id="s", pair_id="p")


# ---------------------------------------------------------------------------
# Reference Douglas-Peucker, written independently of the implementation:
# scalar recursion with clipped point-to-segment distance.
# ---------------------------------------------------------------------------

def _ref_seg_dist(p, a, b):
    abx, aby = b[0] - a[0], b[1] - a[1]
    denom = abx * abx + aby * aby
    if denom == 0.0:
        return math.hypot(p[0] - a[0], p[1] - a[1])
    t = ((p[0] - a[0]) * abx + (p[1] - a[1]) * aby) / denom
    t = min(1.0, max(0.0, t))
    qx, qy = a[0] + t * abx, a[1] + t * aby
    return math.hypot(p[0] - qx, p[1] - qy)


def ref_dp(xy, eps):
    keep = {0, len(xy) - 1}

    def rec(i, j):
        if j - i < 2:
            return
        best_d, best_k = -1.0, -1
        for k in range(i + 1, j):
            d = _ref_seg_dist(xy[k], xy[i], xy[j])
            if d > best_d:
                best_d, best_k = d, k
        if best_d > eps:
            keep.add(best_k)
            rec(i, best_k)
            rec(best_k, j)

    rec(0, len(xy) - 1)
    mask = np.zeros(len(xy), dtype=bool)
    mask[sorted(keep)] = True
    return mask


def dp_thresholds(xy):
    """All chord deviations the recursion can ever compare against eps."""
    out = []

    def rec(i, j):
        if j - i < 2:
            return
        best_d, best_k = -1.0, -1
        for k in range(i + 1, j):
            d = _ref_seg_dist(xy[k], xy[i], xy[j])
            if d > best_d:
                best_d, best_k = d, k
        if best_d > 0.0:
            out.append(best_d)
            rec(i, best_k)
            rec(best_k, j)

    rec(0, len(xy) - 1)
    return sorted(out)


coord = st.floats(min_value=0.0, max_value=1.0, allow_nan=False, width=32)
polyline = st.lists(st.tuples(coord, coord), min_size=2, max_size=12).map(np.asarray)


@given(polyline, st.floats(min_value=0.0, max_value=0.5, allow_nan=False))
def test_dp_matches_reference_recursion(xy, eps):
    got = dp_keep_mask(xy, eps)
    want = ref_dp(xy, eps)
    assert np.array_equal(got, want)


@given(polyline, st.floats(min_value=0.0, max_value=0.5, allow_nan=False))
def test_dp_dropped_points_stay_within_eps_of_kept_chords(xy, eps):
    mask = dp_keep_mask(xy, eps)
    kept = np.flatnonzero(mask)
    for i, j in zip(kept, kept[1:]):
        for k in range(i + 1, j):
            assert _ref_seg_dist(xy[k], xy[i], xy[j]) <= eps + 1e-12


def test_dp_keeps_endpoints_always():
    xy = np.array([[0.0, 0.0], [0.5, 0.9], [1.0, 0.0]])
    mask = dp_keep_mask(xy, 10.0)  # huge tolerance: only the chord survives
    assert mask[0] and mask[-1] and not mask[1]


def test_dp_zero_eps_keeps_offline_points():
    xy = np.array([[0.0, 0.0], [0.5, 0.25], [1.0, 0.0]])
    assert dp_keep_mask(xy, 0.0).all()
    # collinear interior point is dropped even at eps 0
    line = np.array([[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]])
    assert np.array_equal(dp_keep_mask(line, 0.0), [True, False, True])


# ---------------------------------------------------------------------------
# Budgeted simplification.
# ---------------------------------------------------------------------------

def test_simplify_returns_copy_when_within_budget():
    s = make_sketch(5, 4)
    out = simplify_dp(s, 20)
    assert np.array_equal(out.points, s.points)
    assert out.points is not s.points


def test_simplify_respects_budget_and_contract():
    rng = np.random.default_rng(7)
    s = make_sketch(40, 30, 30, rng=rng)
    out = simplify_dp(s, 25)
    assert len(out) <= 25
    out.validate()
    # kept coordinates form a subsequence of the original coordinates
    orig = s.points[:, :2]
    i = 0
    for q in out.points[:, :2]:
        while i < len(orig) and not np.array_equal(orig[i], q):
            i += 1
        assert i < len(orig), "output point missing from input order"
        i += 1


def test_simplify_retains_stroke_endpoints():
    rng = np.random.default_rng(3)
    s = make_sketch(50, 50, rng=rng)
    out = simplify_dp(s, 12)
    spans_in = s.strokes()
    spans_out = out.strokes()
    assert len(spans_out) == len(spans_in)
    for (a, b), (c, d) in zip(spans_in, spans_out):
        assert np.array_equal(s.points[a, :2], out.points[c, :2])
        assert np.array_equal(s.points[b - 1, :2], out.points[d - 1, :2])


def test_simplify_finds_smallest_feasible_tolerance():
    # Oracle: enumerate every deviation threshold the recursion can compare
    # against and pick the largest retained count that fits the budget.
    rng = np.random.default_rng(11)
    s = make_sketch(20, 15, rng=rng)
    spans = s.strokes()
    stroke_xy = [s.points[a:b, :2] for a, b in spans]

    cand = sorted(set(t for xy in stroke_xy for t in dp_thresholds(xy)))
    probes = [0.0] + [c + 1e-12 for c in cand] + [cand[-1] + 1.0]
    best = None
    for eps in probes:
        n = sum(int(ref_dp(xy, eps).sum()) for xy in stroke_xy)
        if n <= 18 and (best is None or n > best):
            best = n
    out = simplify_dp(s, 18)
    assert len(out) == best


def test_simplify_drops_whole_strokes_when_endpoints_alone_overflow():
    strokes = [np.array([[i / 40, 0.1], [i / 40, 0.9]]) for i in range(20)]
    s = from_strokes(strokes)
    out = simplify_dp(s, 10)  # 40 endpoints can never fit otherwise
    assert len(out) <= 10
    out.validate()
    assert len(out.strokes()) == 5


def test_simplify_rejects_tiny_budget():
    with pytest.raises(ValueError):
        simplify_dp(make_sketch(5), 1)


@given(st.integers(min_value=5, max_value=60), st.integers(min_value=4, max_value=30))
@settings(max_examples=30, deadline=None)
def test_simplify_budget_property(n, t_max):
    rng = np.random.default_rng(n * 131 + t_max)
    s = make_sketch(n, rng=rng)
    out = simplify_dp(s, t_max)
    assert 2 <= len(out) <= max(len(s), 2) and len(out) <= max(t_max, len(s))
    if len(s) > t_max:
        assert len(out) <= t_max
    out.validate()


# ---------------------------------------------------------------------------
# Offset/absolute round trip.
# ---------------------------------------------------------------------------

@given(st.lists(st.tuples(coord, coord), min_size=1, max_size=30))
def test_offset_roundtrip(pts):
    s = from_strokes([np.asarray(pts)])
    back = to_absolute(to_offset(s))
    assert np.allclose(back.points, s.points, atol=1e-9)
    assert np.array_equal(back.points[:, 2:], s.points[:, 2:])


def test_offset_leaves_first_point():
    s = make_sketch(6)
    off = to_offset(s)
    assert np.array_equal(off.points[0], s.points[0])
    assert np.allclose(off.points[1:, :2],
                       s.points[1:, :2] - s.points[:-1, :2])


# ---------------------------------------------------------------------------
# Partial rendering.
# ---------------------------------------------------------------------------

def test_render_partial_prefix_length():
    s = make_sketch(10)
    assert len(render_partial(s, 0.35)) == 4   # ceil(3.5)
    assert len(render_partial(s, 0.05)) == 1
    assert len(render_partial(s, 1.0)) == 10


def test_render_partial_full_is_identity():
    s = make_sketch(8)
    assert np.array_equal(render_partial(s, 1.0).points, s.points)


def test_render_partial_reterminates():
    s = make_sketch(10)
    part = render_partial(s, 0.5)
    assert np.array_equal(part.points[:-1], s.points[:4])
    assert np.array_equal(part.points[-1, 2:], [0.0, 0.0, 1.0])
    assert np.array_equal(part.points[-1, :2], s.points[4, :2])
    part.validate()


@given(st.floats(min_value=0.01, max_value=1.0), st.integers(min_value=1, max_value=40))
def test_render_partial_always_valid(completion, n):
    s = make_sketch(n, rng=np.random.default_rng(n))
    part = render_partial(s, completion)
    assert 1 <= len(part) <= n
    part.validate()


def test_render_partial_rejects_bad_completion():
    s = make_sketch(5)
    for bad in (0.0, -0.1, 1.2):
        with pytest.raises(ValueError):
            render_partial(s, bad)


# ---------------------------------------------------------------------------
# Contract validation and stroke spans.
# ---------------------------------------------------------------------------

def test_validate_accepts_well_formed():
    make_sketch(4, 3).validate()


def test_validate_rejects_bad_one_hot():
    pts = np.zeros((2, 5))
    pts[:, 0] = (0.1, 0.2)
    pts[0, 2:] = (1.0, 1.0, 0.0)
    pts[1, 2:] = (0.0, 0.0, 1.0)
    with pytest.raises(SketchError):
        SketchVector(pts).validate()


def test_validate_rejects_missing_terminator():
    pts = np.zeros((2, 5))
    pts[:, 2] = 1.0
    with pytest.raises(SketchError):
        SketchVector(pts).validate()


def test_validate_rejects_early_terminator():
    pts = np.zeros((3, 5))
    pts[0, 4] = 1.0
    pts[1, 2] = 1.0
    pts[2, 4] = 1.0
    with pytest.raises(SketchError):
        SketchVector(pts).validate()


def test_validate_range_check_is_optional():
    pts = np.zeros((2, 5))
    pts[0, :2] = (-0.5, 2.0)
    pts[0, 2] = 1.0
    pts[1, 4] = 1.0
    s = SketchVector(pts)
    with pytest.raises(SketchError):
        s.validate()
    s.validate(check_range=False)


def test_wrong_shape_rejected_at_construction():
    with pytest.raises(SketchError):
        SketchVector(np.zeros((4, 3)))


def test_strokes_spans():
    s = make_sketch(3, 2, 4)
    assert s.strokes() == [(0, 3), (3, 5), (5, 9)]


def test_strokes_cover_all_points():
    s = make_sketch(5, 1, 2)
    spans = s.strokes()
    assert spans[0][0] == 0 and spans[-1][1] == len(s)
    for (a, b), (c, d) in zip(spans, spans[1:]):
        assert b == c and a < b


# ---------------------------------------------------------------------------
# Canvas sets.
# ---------------------------------------------------------------------------

def test_canvas_set_defaults():
    cs = CanvasSet()
    assert cs.sizes == (32, 64, 128, 256)
    assert cs.smallest == 32 and cs.largest == 256
    assert cs.index_of(128) == 2
    assert list(cs) == [32, 64, 128, 256]
    assert len(cs) == 4


def test_canvas_set_validation():
    with pytest.raises(ValueError):
        CanvasSet((64,))
    with pytest.raises(ValueError):
        CanvasSet((64, 64))
    with pytest.raises(ValueError):
        CanvasSet((64, 32))
    with pytest.raises(ValueError):
        CanvasSet((32, 64)).index_of(100)
