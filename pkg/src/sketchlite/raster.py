"""Deterministic rasterization of stroke-5 sketches onto square canvases.

Lines are drawn with integer Bresenham stepping and no anti-aliasing so the
same (sketch, canvas) pair yields bit-identical pixels on every platform.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sketch import COL_DRAW, SketchVector

MIN_CANVAS = 8
# Fraction of the canvas left blank on each side before scaling coordinates.
MARGIN_FRACTION = 0.025


@dataclass
class RasterImage:
    """c x c x 3 intensity grid; background 1.0, strokes 0.0."""

    canvas: int
    pixels: np.ndarray  # (c, c, 3) float64 in [0, 1]

    def __post_init__(self):
        if self.pixels.shape != (self.canvas, self.canvas, 3):
            raise ValueError(
                f"pixels shape {self.pixels.shape} != ({self.canvas}, {self.canvas}, 3)"
            )


def stroke_thickness(c: int) -> int:
    """Stroke width in pixels; grows with the canvas so lines stay visible."""
    return max(1, round(c / 128))


def _to_pixel(v: np.ndarray, margin: int, span: int) -> np.ndarray:
    # Half-up rounding (not banker's) keeps the mapping platform-stable.
    return np.floor(margin + v * span + 0.5).astype(np.int64)


def _stamp(grid: np.ndarray, x: int, y: int, t: int, c: int) -> None:
    lo = -(t // 2)
    x0, x1 = max(0, x + lo), min(c, x + lo + t)
    y0, y1 = max(0, y + lo), min(c, y + lo + t)
    if x0 < x1 and y0 < y1:
        grid[y0:y1, x0:x1] = 0.0


def _draw_segment(grid: np.ndarray, x0: int, y0: int, x1: int, y1: int, t: int) -> None:
    """Bresenham line from (x0, y0) to (x1, y1), stamped at thickness t."""
    c = grid.shape[0]
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    while True:
        _stamp(grid, x, y, t, c)
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy


def rasterize(sketch: SketchVector, c: int) -> RasterImage:
    """Render a sketch onto a c x c canvas.

    Coordinates are scaled into the canvas with a 2.5% margin; every point
    carrying the draw state is joined to its successor by a line segment.
    A sketch with no draw segments produces an all-background canvas.
    """
    if c < MIN_CANVAS:
        raise ValueError(f"canvas side must be >= {MIN_CANVAS}, got {c}")
    grid = np.ones((c, c), dtype=np.float64)
    margin = round(MARGIN_FRACTION * c)
    span = c - 1 - 2 * margin
    t = stroke_thickness(c)

    pts = sketch.points
    px = _to_pixel(pts[:, 0], margin, span)
    py = _to_pixel(pts[:, 1], margin, span)
    draw = pts[:, COL_DRAW] == 1.0
    for i in range(len(pts) - 1):
        if draw[i]:
            _draw_segment(grid, int(px[i]), int(py[i]), int(px[i + 1]), int(py[i + 1]), t)

    return RasterImage(canvas=c, pixels=np.repeat(grid[:, :, None], 3, axis=2))
