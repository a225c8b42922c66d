"""Stroke-5 vector sketch model and the geometry ops that act on it.

A sketch is an ordered sequence of points ``(x, y, q1, q2, q3)``: absolute
coordinates in the unit square plus a 3-way one-hot pen state.  ``q1`` marks
a point whose segment to the next point is drawn, ``q2`` ends a stroke, and
``q3`` ends the sketch.  All ops here are pure functions of their inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

# Column indices of the pen-state one-hot inside a stroke-5 point.
COL_X, COL_Y, COL_DRAW, COL_UP, COL_END = 0, 1, 2, 3, 4


class SketchError(ValueError):
    """Raised when a point sequence violates the stroke-5 contract."""


@dataclass
class SketchVector:
    """Ordered stroke-5 point sequence with sample / photo-pair identity."""

    points: np.ndarray  # (T, 5) float64
    id: str = ""
    pair_id: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 5:
            raise SketchError(f"expected (T, 5) points, got {self.points.shape}")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]

    @property
    def pen(self) -> np.ndarray:
        return self.points[:, 2:]

    def copy(self) -> "SketchVector":
        return replace(self, points=self.points.copy())

    def validate(self, check_range: bool = True) -> None:
        """Raise SketchError unless all stroke-5 invariants hold."""
        pts = self.points
        if len(self) < 1:
            raise SketchError("sketch must contain at least one point")
        pen = pts[:, 2:]
        if not np.isin(pen, (0.0, 1.0)).all() or not (pen.sum(axis=1) == 1.0).all():
            raise SketchError("pen states must be one-hot over (q1, q2, q3)")
        if pts[-1, COL_END] != 1.0:
            raise SketchError("final point must carry the sketch-end state")
        if pts[:-1, COL_END].any():
            raise SketchError("sketch-end state may only appear on the final point")
        if check_range:
            xy = pts[:, :2]
            if (xy < 0.0).any() or (xy > 1.0).any():
                raise SketchError("coordinates must lie in the unit square")

    def strokes(self) -> list[tuple[int, int]]:
        """Half-open index ranges [start, end) of each stroke, in order.

        A stroke ends at every q2/q3 marker; every range holds >= 1 point.
        """
        ends = np.flatnonzero(self.points[:, COL_UP] + self.points[:, COL_END])
        out, start = [], 0
        for e in ends:
            out.append((start, int(e) + 1))
            start = int(e) + 1
        if start < len(self):  # trailing run without marker (partial sketches)
            out.append((start, len(self)))
        return out


def _draw_state(n: int) -> np.ndarray:
    pen = np.zeros((n, 3))
    pen[:, 0] = 1.0
    return pen


def from_strokes(strokes: list[np.ndarray], id: str = "", pair_id: str = "") -> SketchVector:
    """Assemble a SketchVector from per-stroke (n, 2) coordinate arrays."""
    if not strokes:
        raise SketchError("at least one stroke required")
    parts = []
    for xy in strokes:
        xy = np.asarray(xy, dtype=np.float64)
        pen = _draw_state(len(xy))
        pen[-1] = (0.0, 1.0, 0.0)
        parts.append(np.hstack([xy, pen]))
    pts = np.vstack(parts)
    pts[-1, 2:] = (0.0, 0.0, 1.0)
    return SketchVector(pts, id=id, pair_id=pair_id)


def to_offset(sketch: SketchVector) -> SketchVector:
    """Convert absolute coordinates to per-step deltas (point 0 unchanged).

    The result intentionally escapes the unit square; it is the alternate
    input format for the sequence encoder, not a canonical sketch.
    """
    pts = sketch.points.copy()
    pts[1:, :2] = sketch.points[1:, :2] - sketch.points[:-1, :2]
    return replace(sketch, points=pts)


def to_absolute(sketch: SketchVector) -> SketchVector:
    """Inverse of :func:`to_offset`: cumulative-sum deltas back to absolutes."""
    pts = sketch.points.copy()
    pts[:, :2] = np.cumsum(sketch.points[:, :2], axis=0)
    return replace(sketch, points=pts)


def render_partial(sketch: SketchVector, completion: float) -> SketchVector:
    """Prefix of ceil(completion * T) points, re-terminated with sketch-end."""
    if not 0.0 < completion <= 1.0:
        raise ValueError(f"completion must be in (0, 1], got {completion}")
    n = int(np.ceil(completion * len(sketch)))
    pts = sketch.points[:n].copy()
    pts[-1, 2:] = (0.0, 0.0, 1.0)
    return replace(sketch, points=pts)


# ---------------------------------------------------------------------------
# Douglas-Peucker simplification capped at a global point budget.
# ---------------------------------------------------------------------------

def _segment_distances(xy: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each row of xy to the segment a-b."""
    ab = b - a
    denom = float(ab @ ab)
    if denom <= 0.0:
        return np.linalg.norm(xy - a, axis=1)
    t = np.clip((xy - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(xy - proj, axis=1)


def dp_keep_mask(xy: np.ndarray, eps: float) -> np.ndarray:
    """Douglas-Peucker retention mask for one polyline at tolerance eps.

    Keeps both endpoints; recursively keeps the point of maximum deviation
    from the current chord whenever that deviation exceeds eps.  Deviation
    is measured to the chord *segment* so closed or degenerate chords stay
    well defined.
    """
    n = len(xy)
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    if n <= 2:
        return keep
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        d = _segment_distances(xy[i + 1:j], xy[i], xy[j])
        k = int(np.argmax(d))
        if d[k] > eps:
            split = i + 1 + k
            keep[split] = True
            stack.append((i, split))
            stack.append((split, j))
    return keep


def _stroke_max_deviation(xy: np.ndarray) -> float:
    """Largest deviation DP could ever act on within one stroke."""
    if len(xy) <= 2:
        return 0.0
    best, stack = 0.0, [(0, len(xy) - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        d = _segment_distances(xy[i + 1:j], xy[i], xy[j])
        k = int(np.argmax(d))
        if d[k] > 0.0:
            best = max(best, float(d[k]))
            split = i + 1 + k
            stack.append((i, split))
            stack.append((split, j))
    return best


def simplify_dp(sketch: SketchVector, t_max: int) -> SketchVector:
    """Cap a sketch at t_max points via per-stroke Douglas-Peucker.

    The tolerance is shared across strokes and found by bisection as the
    smallest eps whose total retained count fits the budget.  Sketches
    already within budget are returned unchanged.  If even stroke endpoints
    alone exceed the budget, whole strokes are dropped shortest-first (a
    pathological case the tolerance cannot reach).
    """
    if t_max < 2:
        raise ValueError(f"t_max must be >= 2, got {t_max}")
    if len(sketch) <= t_max:
        return sketch.copy()

    spans = sketch.strokes()
    stroke_xy = [sketch.points[a:b, :2] for a, b in spans]

    def retained(eps: float) -> list[np.ndarray]:
        return [dp_keep_mask(xy, eps) for xy in stroke_xy]

    def count(masks: list[np.ndarray]) -> int:
        return int(sum(m.sum() for m in masks))

    masks = retained(0.0)
    if count(masks) > t_max:
        lo, hi = 0.0, max(_stroke_max_deviation(xy) for xy in stroke_xy) + 1e-9
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if count(retained(mid)) <= t_max:
                hi = mid
            else:
                lo = mid
        masks = retained(hi)

    kept_strokes: list[tuple[tuple[int, int], np.ndarray]] = []
    for (a, b), mask in zip(spans, masks):
        kept_strokes.append(((a, b), np.flatnonzero(mask) + a))

    # Endpoint-only retention can still blow the budget when the sketch has
    # more than t_max/2 strokes; drop shortest strokes until it fits.
    while count(masks) > t_max and len(kept_strokes) > 1:
        lengths = [len(idx) for _, idx in kept_strokes]
        drop = int(np.argmin(lengths))
        kept_strokes.pop(drop)
        masks = [m for i, m in enumerate(masks) if i != drop]

    pieces = []
    for (a, b), idx in kept_strokes:
        pts = sketch.points[idx].copy()
        pts[:, 2:] = (1.0, 0.0, 0.0)
        pts[-1, 2:] = sketch.points[b - 1, 2:]  # original stroke marker
        pieces.append(pts)
    out = np.vstack(pieces)
    out[-1, 2:] = (0.0, 0.0, 1.0)
    return replace(sketch, points=out)


@dataclass(frozen=True)
class CanvasSet:
    """Ordered ascending canvas side lengths the pipeline may rasterize at."""

    sizes: tuple[int, ...] = (32, 64, 128, 256)

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if len(self.sizes) < 2:
            raise ValueError("canvas set needs at least two sizes")
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise ValueError(f"canvas sizes must be strictly increasing: {self.sizes}")

    def __len__(self) -> int:
        return len(self.sizes)

    def __iter__(self):
        return iter(self.sizes)

    @property
    def largest(self) -> int:
        return self.sizes[-1]

    @property
    def smallest(self) -> int:
        return self.sizes[0]

    def index_of(self, size: int) -> int:
        try:
            return self.sizes.index(size)
        except ValueError:
            raise ValueError(f"canvas {size} not in set {self.sizes}") from None
