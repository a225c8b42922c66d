"""Relational distillation: match teacher triplet distances across canvas sizes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .encoders import Encoder, batch_to_tensor
from .raster import RasterImage
from .retrieval import (RasterCache, RetrievalError, TripletBatch, build_gallery,
                        evaluate, sample_triplets, sq_dist, triplet_loss)
from .sketch import SketchVector


class DistillError(ValueError):
    """Raised for bad loss weights or diverging distillation runs."""


def huber(a: torch.Tensor, b: torch.Tensor, beta: float = 1.0) -> torch.Tensor:
    """Smooth-L1 penalty: quadratic below beta, linear above."""
    if beta <= 0:
        raise DistillError(f"beta must be positive, got {beta}")
    d = (a - b).abs()
    return torch.where(d < beta, 0.5 * d * d, beta * (d - 0.5 * beta))


@dataclass
class DistanceTriple:
    """Squared distances within a triplet: anchor-positive, anchor-negative,
    positive-negative."""

    sp: torch.Tensor
    sn: torch.Tensor
    pn: torch.Tensor


def distance_triple(f_s: torch.Tensor, f_p: torch.Tensor,
                    f_n: torch.Tensor) -> DistanceTriple:
    return DistanceTriple(sp=sq_dist(f_s, f_p), sn=sq_dist(f_s, f_n),
                          pn=sq_dist(f_p, f_n))


def rkd_loss(teacher: DistanceTriple, student: DistanceTriple,
             beta: float = 1.0) -> torch.Tensor:
    """Per-triplet sum of Huber gaps between teacher and student distances."""
    return (huber(teacher.sp, student.sp, beta)
            + huber(teacher.sn, student.sn, beta)
            + huber(teacher.pn, student.pn, beta))


def combined_loss(tri: torch.Tensor, rkd: torch.Tensor, lam: float) -> torch.Tensor:
    """Convex mix lam * triplet + (1 - lam) * relational term."""
    if not 0.0 <= lam <= 1.0:
        raise DistillError(f"lam must lie in [0, 1], got {lam}")
    return lam * tri + (1.0 - lam) * rkd


# ---------------------------------------------------------------------------
# Teacher embedding cache: the teacher is frozen, so its embeddings are
# computed once per run at the largest canvas and reused every step.
# ---------------------------------------------------------------------------

class TeacherCache:
    """Frozen teacher embeddings for every sketch (largest canvas) and photo."""

    def __init__(self, sketch_emb: dict[str, torch.Tensor],
                 photo_emb: dict[str, torch.Tensor], canvas: int):
        self.sketch_emb = sketch_emb
        self.photo_emb = photo_emb
        self.canvas = canvas

    def triple(self, tb: TripletBatch) -> DistanceTriple:
        f_s = torch.stack([self.sketch_emb[sk.id] for sk in tb.sketches])
        f_p = torch.stack([self.photo_emb[sk.pair_id] for sk in tb.sketches])
        f_n = torch.stack([self.photo_emb[nid] for nid in tb.neg_ids])
        return distance_triple(f_s, f_p, f_n)


def build_teacher_cache(teacher: Encoder, sketches: list[SketchVector],
                        photos: dict[str, RasterImage], canvas: int,
                        raster_cache: RasterCache | None = None,
                        batch: int = 32) -> TeacherCache:
    cache = raster_cache or RasterCache()
    teacher.eval()
    dtype = next(teacher.parameters()).dtype
    sketch_emb: dict[str, torch.Tensor] = {}
    photo_emb: dict[str, torch.Tensor] = {}
    with torch.no_grad():
        for i in range(0, len(sketches), batch):
            part = sketches[i:i + batch]
            f = teacher(batch_to_tensor([cache.get(sk, canvas) for sk in part], dtype))
            for sk, e in zip(part, f):
                sketch_emb[sk.id] = e.clone()
        pids = sorted(photos)
        for i in range(0, len(pids), batch):
            part = pids[i:i + batch]
            f = teacher(batch_to_tensor([photos[p] for p in part], dtype))
            for pid, e in zip(part, f):
                photo_emb[pid] = e.clone()
    return TeacherCache(sketch_emb, photo_emb, canvas)


# ---------------------------------------------------------------------------
# Multi-canvas training step and loop.
# ---------------------------------------------------------------------------

def multi_canvas_step(student: Encoder, tb: TripletBatch, canvases,
                      teacher_cache: TeacherCache | None, *, lam: float,
                      margin: float, beta: float,
                      raster_cache: RasterCache) -> tuple[torch.Tensor, dict]:
    """Mean over canvases of lam * L_tri + (1 - lam) * L_rkd.

    Photos go through the student at native resolution once; only the sketch
    branch is re-rendered per canvas. Teacher distances come from the cache.
    """
    if teacher_cache is None and lam != 1.0:
        raise DistillError("relational term requires a teacher cache")
    dtype = next(student.parameters()).dtype
    f_p = student(batch_to_tensor(tb.positives, dtype))
    f_n = student(batch_to_tensor(tb.negatives, dtype))
    t_triple = teacher_cache.triple(tb) if teacher_cache is not None else None
    per_canvas, tri_parts, rkd_parts = [], [], []
    for c in canvases:
        xs = batch_to_tensor([raster_cache.get(sk, c) for sk in tb.sketches], dtype)
        f_s = student(xs)
        tri_c = triplet_loss(f_s, f_p, f_n, margin).mean()
        if t_triple is not None:
            t_cast = DistanceTriple(sp=t_triple.sp.to(dtype), sn=t_triple.sn.to(dtype),
                                    pn=t_triple.pn.to(dtype))
            rkd_c = rkd_loss(t_cast, distance_triple(f_s, f_p, f_n), beta).mean()
        else:
            rkd_c = torch.zeros((), dtype=dtype)
        per_canvas.append(combined_loss(tri_c, rkd_c, lam))
        tri_parts.append(tri_c.item())
        rkd_parts.append(rkd_c.detach().item())
    loss = torch.stack(per_canvas).mean()
    parts = {f"loss_c{c}": per_canvas[i].item() for i, c in enumerate(canvases)}
    parts["tri"] = float(np.mean(tri_parts))
    parts["rkd"] = float(np.mean(rkd_parts))
    return loss, parts


def evaluate_multi_canvas(student: Encoder, sketches: list[SketchVector],
                          photos: dict[str, RasterImage], canvases,
                          raster_cache: RasterCache | None = None,
                          scope=None) -> dict:
    """Acc@1/Acc@10 at each canvas against a native-resolution photo gallery."""
    cache = raster_cache or RasterCache()
    gallery = build_gallery(student, photos)
    out: dict = {}
    acc1s, acc10s = [], []
    for c in canvases:
        ev = evaluate(student, sketches, gallery, c, cache, scope)
        out[f"acc1_c{c}"] = ev["acc1"]
        out[f"acc10_c{c}"] = ev["acc10"]
        acc1s.append(ev["acc1"])
        acc10s.append(ev["acc10"])
    out["acc1"] = float(np.mean(acc1s))
    out["acc10"] = float(np.mean(acc10s))
    return out


def train_student(student: Encoder, teacher: Encoder | None,
                  sketches: list[SketchVector], photos: dict[str, RasterImage], *,
                  canvases, epochs: int, batch: int, lr: float, lam: float,
                  margin: float, beta: float, seed: int,
                  eval_sketches: list[SketchVector] | None = None,
                  steps_per_epoch: int | None = None, scope=None) -> list[dict]:
    """Distill at several canvas sizes; lam=1 trains without a teacher.

    Returns per-epoch metric rows; the final row carries retrieval accuracy
    when an evaluation split is supplied.
    """
    if epochs < 1:
        raise DistillError(f"epochs must be >= 1, got {epochs}")
    if teacher is None and lam != 1.0:
        raise DistillError("lam < 1 requires a teacher")
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(student.parameters(), lr=lr)
    raster_cache = RasterCache()
    c_max = max(canvases)
    teacher_cache = None
    if teacher is not None and lam != 1.0:
        teacher_cache = build_teacher_cache(teacher, sketches, photos, c_max,
                                            raster_cache)
    steps = steps_per_epoch or max(1, len(sketches) // batch)
    history = []
    for epoch in range(1, epochs + 1):
        student.train()
        rows = []
        for _ in range(steps):
            tb = sample_triplets(sketches, photos, batch, rng)
            loss, parts = multi_canvas_step(student, tb, canvases, teacher_cache,
                                            lam=lam, margin=margin, beta=beta,
                                            raster_cache=raster_cache)
            if not torch.isfinite(loss):
                raise DistillError(f"loss diverged at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            parts["loss"] = loss.item()
            rows.append(parts)
        row = {"epoch": epoch}
        for key in rows[0]:
            row[key] = float(np.mean([r[key] for r in rows]))
        if eval_sketches is not None and epoch == epochs:
            row.update(evaluate_multi_canvas(student, eval_sketches, photos,
                                             canvases, raster_cache, scope))
        history.append(row)
    return history
