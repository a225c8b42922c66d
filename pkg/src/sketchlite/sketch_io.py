"""Disk formats: newline-delimited JSON for sketches, PNG + index for photos."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .raster import RasterImage
from .sketch import SketchError, SketchVector


class SketchIOError(ValueError):
    """Raised for unreadable records, with the offending line number."""


@dataclass
class LoadReport:
    """Counts of what a load accepted, rescaled into range, or skipped."""

    loaded: int = 0
    rescaled: int = 0
    skipped: int = 0


def _rescale_unit(points: np.ndarray) -> np.ndarray:
    """Per-axis min-max map of the coordinates into [0, 1]."""
    pts = points.copy()
    for axis in range(2):
        lo, hi = pts[:, axis].min(), pts[:, axis].max()
        span = hi - lo
        if span < 1e-12:
            pts[:, axis] = 0.5
        else:
            pts[:, axis] = (pts[:, axis] - lo) / span
    return pts


def load_sketches(path) -> tuple[list[SketchVector], LoadReport]:
    """Read one sketch per NDJSON line.

    Records whose coordinates escape the unit square are min-max rescaled
    (counted in ``rescaled``); records with broken pen states are skipped
    (counted in ``skipped``); unparseable lines raise with their line number.
    """
    report = LoadReport()
    sketches = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise SketchIOError(f"line {ln}: invalid JSON ({e.msg})") from None
            try:
                pts = np.asarray(rec["points"], dtype=np.float64)
                sk = SketchVector(points=pts, id=str(rec["id"]),
                                  pair_id=str(rec.get("pair_id", "")))
            except (KeyError, TypeError) as e:
                raise SketchIOError(f"line {ln}: malformed record ({e})") from None
            except (SketchError, ValueError):
                report.skipped += 1
                continue
            try:
                sk.validate(check_range=False)
            except SketchError:
                report.skipped += 1
                continue
            if pts[:, :2].min() < 0.0 or pts[:, :2].max() > 1.0:
                sk = SketchVector(points=_rescale_unit(pts), id=sk.id,
                                  pair_id=sk.pair_id)
                report.rescaled += 1
            sk.validate()
            sketches.append(sk)
            report.loaded += 1
    return sketches, report


def save_sketches(path, sketches: list[SketchVector]) -> None:
    """One compact JSON object per line; rewrites are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for sk in sketches:
            rec = {"id": sk.id, "pair_id": sk.pair_id,
                   "points": sk.points.tolist()}
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


# ---------------------------------------------------------------------------
# Photo store: one PNG per pair id plus an index file.
# ---------------------------------------------------------------------------

INDEX_NAME = "index.json"


def save_photos(directory, photos: dict[str, RasterImage]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {}
    for pid in sorted(photos):
        arr = np.round(photos[pid].pixels * 255.0).astype(np.uint8)
        name = f"{pid}.png"
        Image.fromarray(arr).save(directory / name)
        index[pid] = name
    (directory / INDEX_NAME).write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n")


def load_photos(directory) -> dict[str, RasterImage]:
    directory = Path(directory)
    index_path = directory / INDEX_NAME
    if not index_path.exists():
        raise SketchIOError(f"photo index not found: {index_path}")
    index = json.loads(index_path.read_text())
    photos = {}
    for pid, name in index.items():
        arr = np.asarray(Image.open(directory / name), dtype=np.float64) / 255.0
        photos[pid] = RasterImage(canvas=arr.shape[0], pixels=arr)
    return photos
