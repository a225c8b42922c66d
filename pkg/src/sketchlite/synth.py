"""Procedural fine-grained sketch/photo pairs.

Each class is a star-convex silhouette built from radial harmonics; the ten
instances of a class share that silhouette but differ in part attributes —
aspect ratio, the size and vertical placement of an interior hole, and a
coarse notch orientation.  Photos are filled 256x256 renders; sketches are
noisy contour traces of the same geometry.  Aspect is legible at any canvas
size while the hole cue needs a few pixels of resolution, so retrieval
degrades gracefully as the raster shrinks.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .raster import RasterImage
from .sketch import SketchVector, from_strokes

PHOTO_CANVAS = 256
_CLASS_SALT = 7
_SKETCH_SALT = 11
_R_MAX = 0.40  # largest silhouette radius in unit-square units


@dataclass(frozen=True)
class ClassSpec:
    """Silhouette archetype: two radial harmonics on a base circle."""

    k1: int
    a1: float
    k2: int
    a2: float
    phase1: float
    phase2: float


@dataclass(frozen=True)
class InstanceSpec:
    """Fine-grained attributes distinguishing instances within a class."""

    aspect: float
    notch_angle: float
    notch_depth: float
    notch_width: float
    hole_angle: float
    hole_frac: float
    hole_radius: float


def class_spec(class_id: int) -> ClassSpec:
    rng = np.random.default_rng([_CLASS_SALT, class_id])
    return ClassSpec(
        k1=2 + class_id % 5,
        a1=float(rng.uniform(0.16, 0.26)),
        k2=6 + class_id % 7,
        a2=float(rng.uniform(0.05, 0.10)),
        phase1=float(rng.uniform(0.0, 2.0 * np.pi)),
        phase2=float(rng.uniform(0.0, 2.0 * np.pi)),
    )


def instance_spec(class_id: int, instance_id: int) -> InstanceSpec:
    """Deterministic attribute grid; any two instances differ somewhere.

    The grid is 5 aspect levels x (small hole above center | large hole below
    center), plus a coarse notch orientation.  Aspect survives any canvas; the
    hole cue needs a few pixels of resolution, so accuracy degrades gracefully
    as the raster shrinks.  Notch angles keep a margin from the vertical hole
    axis so the hole disk always stays inside the silhouette.
    """
    i = instance_id
    offset = float(np.random.default_rng([_CLASS_SALT, class_id, 999])
                   .uniform(-np.pi / 12, np.pi / 12))
    return InstanceSpec(
        aspect=0.55 + 0.11 * (i % 5),
        notch_angle=(offset + np.pi / 4 + np.pi / 2 * (i % 4)) % (2.0 * np.pi),
        notch_depth=0.28,
        notch_width=0.50,
        hole_angle=np.pi / 2 if i < 5 else 3 * np.pi / 2,
        hole_frac=0.38,
        hole_radius=0.055 if i < 5 else 0.095,
    )


def _wrap(angle):
    """Signed angular difference folded into [-pi, pi)."""
    return (angle + np.pi) % (2.0 * np.pi) - np.pi


def shape_radius(theta, cls: ClassSpec, inst: InstanceSpec):
    """Silhouette radius at each angle, notch applied, in unit-square units."""
    theta = np.asarray(theta, dtype=np.float64)
    r = 1.0 + cls.a1 * np.cos(cls.k1 * theta + cls.phase1) \
        + cls.a2 * np.cos(cls.k2 * theta + cls.phase2)
    r = r / (1.0 + cls.a1 + cls.a2) * _R_MAX
    delta = _wrap(theta - inst.notch_angle)
    window = np.where(np.abs(delta) < inst.notch_width,
                      np.cos(np.pi * delta / (2.0 * inst.notch_width)) ** 2, 0.0)
    return r * (1.0 - inst.notch_depth * window)


def _hole_center(cls: ClassSpec, inst: InstanceSpec) -> np.ndarray:
    r = float(shape_radius(inst.hole_angle, cls, inst)) * inst.hole_frac
    return np.array([0.5 + inst.aspect * r * np.cos(inst.hole_angle),
                     0.5 + (1.0 / inst.aspect) * r * np.sin(inst.hole_angle)])


def make_photo(class_id: int, instance_id: int) -> RasterImage:
    """Filled silhouette with the instance hole, dark on white, 256x256."""
    cls, inst = class_spec(class_id), instance_spec(class_id, instance_id)
    c = PHOTO_CANVAS
    # pixel centers in unit coordinates; pixels[y, x] like the raster module
    xs = (np.arange(c) + 0.5) / c
    ux, uy = np.meshgrid(xs, xs)
    dx = (ux - 0.5) / inst.aspect
    dy = (uy - 0.5) * inst.aspect
    rho = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)
    inside = rho <= shape_radius(theta, cls, inst)
    hx, hy = _hole_center(cls, inst)
    hole = (ux - hx) ** 2 + (uy - hy) ** 2 <= inst.hole_radius ** 2
    grid = np.where(inside & ~hole, 0.0, 1.0)
    return RasterImage(canvas=c, pixels=np.repeat(grid[:, :, None], 3, axis=2))


def pair_name(class_id: int, instance_id: int) -> str:
    return f"c{class_id:02d}i{instance_id:02d}"


def category_of(pair_id: str) -> str:
    """Class part of a pair id: retrieval ranks within one class's gallery."""
    return pair_id.split("i", 1)[0]


def make_sketch(class_id: int, instance_id: int, sketch_idx: int,
                seed: int = 0, *, n_outline: int = 30, n_hole: int = 8,
                jitter: float = 0.01, dropout: float = 0.05) -> SketchVector:
    """Noisy contour trace: outline split into three strokes (one may drop
    out) plus a small circle over the hole."""
    cls, inst = class_spec(class_id), instance_spec(class_id, instance_id)
    rng = np.random.default_rng([_SKETCH_SALT, seed, class_id, instance_id,
                                 sketch_idx])
    start = rng.uniform(0.0, 2.0 * np.pi)
    theta = start + 2.0 * np.pi * np.arange(n_outline) / n_outline
    r = shape_radius(theta, cls, inst)
    outline = np.stack([0.5 + inst.aspect * r * np.cos(theta),
                        0.5 + (1.0 / inst.aspect) * r * np.sin(theta)], axis=1)
    strokes = [seg for seg in np.array_split(outline, 3)]
    if rng.random() < dropout:
        drop = int(rng.integers(0, len(strokes)))
        strokes = [s for j, s in enumerate(strokes) if j != drop]
    hx, hy = _hole_center(cls, inst)
    phi = rng.uniform(0.0, 2.0 * np.pi) \
        + 2.0 * np.pi * np.arange(n_hole + 1) / n_hole
    strokes.append(np.stack([hx + inst.hole_radius * np.cos(phi),
                             hy + inst.hole_radius * np.sin(phi)], axis=1))
    noisy = [np.clip(s + rng.normal(0.0, jitter, size=s.shape), 0.01, 0.99)
             for s in strokes]
    return from_strokes(noisy, id=f"{pair_name(class_id, instance_id)}s{sketch_idx}",
                        pair_id=pair_name(class_id, instance_id))


def generate_synthetic_pair(seed: int, class_id: int, instance_id: int,
                            n_sketches: int = 3):
    """(pair id, photo, sketches) for one instance; bitwise deterministic."""
    photo = make_photo(class_id, instance_id)
    sketches = [make_sketch(class_id, instance_id, s, seed)
                for s in range(n_sketches)]
    return pair_name(class_id, instance_id), photo, sketches


@dataclass
class DatasetBundle:
    """Full corpus plus the held-out split (sketch 0 of every instance)."""

    photos: dict[str, RasterImage]
    train_sketches: list[SketchVector] = field(default_factory=list)
    test_sketches: list[SketchVector] = field(default_factory=list)

    @property
    def sketches(self) -> list[SketchVector]:
        return self.train_sketches + self.test_sketches


def generate_dataset(seed: int = 0, n_classes: int = 20, n_instances: int = 10,
                     n_sketches: int = 3) -> DatasetBundle:
    if n_sketches < 2:
        raise ValueError("need at least two sketches per instance to split")
    bundle = DatasetBundle(photos={})
    for c in range(n_classes):
        for i in range(n_instances):
            pid, photo, sketches = generate_synthetic_pair(seed, c, i, n_sketches)
            bundle.photos[pid] = photo
            bundle.test_sketches.append(sketches[0])
            bundle.train_sketches.extend(sketches[1:])
    return bundle
