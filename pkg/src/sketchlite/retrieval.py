"""Triplet-loss retrieval training, gallery store, ranking, and Acc@k."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .encoders import Encoder, batch_to_tensor
from .raster import RasterImage, rasterize
from .sketch import SketchVector


class RetrievalError(ValueError):
    """Raised for malformed batches, galleries, or diverging runs."""


def sq_dist(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Squared Euclidean distance along the last axis."""
    if a.shape[-1] != b.shape[-1]:
        raise RetrievalError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    d = a - b
    return (d * d).sum(dim=-1)


def triplet_loss(f_s: torch.Tensor, f_p: torch.Tensor, f_n: torch.Tensor,
                 m: float = 0.2) -> torch.Tensor:
    """max{0, m + d(s,p) - d(s,n)} per triplet."""
    if m <= 0:
        raise RetrievalError(f"margin must be positive, got {m}")
    return torch.clamp(m + sq_dist(f_s, f_p) - sq_dist(f_s, f_n), min=0.0)


# ---------------------------------------------------------------------------
# Triplet sampling.
# ---------------------------------------------------------------------------

@dataclass
class TripletBatch:
    """Anchor sketches with matching and uniformly sampled non-matching photos."""

    sketches: list[SketchVector]
    positives: list[RasterImage]
    negatives: list[RasterImage]
    neg_ids: tuple[str, ...]

    def __post_init__(self):
        if not (len(self.sketches) == len(self.positives) == len(self.negatives)
                == len(self.neg_ids)):
            raise RetrievalError("triplet lists must share one length")
        for sk, nid in zip(self.sketches, self.neg_ids):
            if sk.pair_id == nid:
                raise RetrievalError(f"negative equals anchor pair {nid!r}")

    def __len__(self) -> int:
        return len(self.sketches)


def sample_triplets(sketches: list[SketchVector], photos: dict[str, RasterImage],
                    batch: int, rng: np.random.Generator) -> TripletBatch:
    """Uniform anchors; negatives uniform among photos of other instances."""
    if len(photos) < 2:
        raise RetrievalError("need at least two photos to form a negative")
    ids = sorted(photos)
    anchors = [sketches[i] for i in rng.integers(0, len(sketches), size=batch)]
    negs = []
    for sk in anchors:
        while True:
            cand = ids[rng.integers(0, len(ids))]
            if cand != sk.pair_id:
                negs.append(cand)
                break
    return TripletBatch(
        sketches=anchors,
        positives=[photos[sk.pair_id] for sk in anchors],
        negatives=[photos[n] for n in negs],
        neg_ids=tuple(negs),
    )


# ---------------------------------------------------------------------------
# Gallery.
# ---------------------------------------------------------------------------

@dataclass
class GalleryStore:
    """Frozen photo embeddings keyed by pair id, with encoder provenance."""

    ids: tuple[str, ...]
    embeddings: np.ndarray  # (N, d) float32, unit rows
    encoder_hash: str = ""

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise RetrievalError("duplicate photo ids in gallery")
        if self.embeddings.shape[0] != len(self.ids):
            raise RetrievalError("one embedding per id required")
        norms = np.linalg.norm(self.embeddings, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-5):
            raise RetrievalError("gallery embeddings must be unit-norm")

    def __len__(self) -> int:
        return len(self.ids)

    def index_of(self, pid: str) -> int:
        try:
            return self.ids.index(pid)
        except ValueError:
            raise RetrievalError(f"photo id {pid!r} not in gallery") from None

    def save(self, path) -> None:
        save_checkpoint(path, kind="gallery",
                        spec={"encoder_hash": self.encoder_hash, "ids": list(self.ids)},
                        tensors={"embeddings": self.embeddings})
        Path(str(path) + ".ids.json").write_text(
            json.dumps({"ids": list(self.ids)}, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "GalleryStore":
        ck = load_checkpoint(path, expect_kind="gallery")
        return cls(ids=tuple(ck.spec["ids"]),
                   embeddings=ck.tensors["embeddings"],
                   encoder_hash=ck.spec["encoder_hash"])


def build_gallery(encoder: Encoder, photos: dict[str, RasterImage],
                  encoder_hash: str = "", batch: int = 32) -> GalleryStore:
    if not photos:
        raise RetrievalError("cannot build a gallery from zero photos")
    ids = tuple(sorted(photos))
    encoder.eval()
    dtype = next(encoder.parameters()).dtype
    chunks = []
    with torch.no_grad():
        for i in range(0, len(ids), batch):
            x = batch_to_tensor([photos[p] for p in ids[i:i + batch]], dtype)
            chunks.append(encoder(x).numpy())
    return GalleryStore(ids=ids, embeddings=np.concatenate(chunks).astype(np.float32),
                        encoder_hash=encoder_hash)


class CategoryView:
    """Memoized per-category sub-galleries.

    Fine-grained retrieval ranks a query against its own category's photos;
    ``scope`` maps a photo id to its category key.  Sub-galleries are plain
    GalleryStores, so ranking code is identical with or without scoping.
    """

    def __init__(self, gallery: GalleryStore, scope):
        self.gallery = gallery
        self.scope = scope
        self._subs: dict[str, GalleryStore] = {}

    def sub(self, pid: str) -> GalleryStore:
        key = self.scope(pid)
        if key not in self._subs:
            keep = [i for i, g in enumerate(self.gallery.ids)
                    if self.scope(g) == key]
            if not keep:
                raise RetrievalError(f"no gallery photos in category {key!r}")
            self._subs[key] = GalleryStore(
                ids=tuple(self.gallery.ids[i] for i in keep),
                embeddings=self.gallery.embeddings[keep],
                encoder_hash=self.gallery.encoder_hash)
        return self._subs[key]


def gallery_for(gallery: GalleryStore, scope) -> "callable":
    """pid -> gallery to rank against: the category's slice, or everything."""
    if scope is None:
        return lambda pid: gallery
    view = CategoryView(gallery, scope)
    return view.sub


@dataclass
class RankResult:
    rank: int
    distances: np.ndarray  # per-gallery squared distances, id order


def rank_query(f_s, gallery: GalleryStore, true_id: str) -> RankResult:
    """Rank of the true photo; distance ties broken by id order."""
    q = np.asarray(f_s.detach().numpy() if isinstance(f_s, torch.Tensor) else f_s,
                   dtype=np.float64)
    emb = gallery.embeddings.astype(np.float64)
    d = ((emb - q[None, :]) ** 2).sum(axis=1)
    t = gallery.index_of(true_id)
    ahead = int((d < d[t]).sum()) + int((d[:t] == d[t]).sum())
    return RankResult(rank=1 + ahead, distances=d)


def acc_at_k(ranks: list[int], k: int) -> float:
    if k < 1:
        raise RetrievalError(f"k must be >= 1, got {k}")
    if not ranks:
        raise RetrievalError("empty rank list")
    return 100.0 * sum(1 for r in ranks if r <= k) / len(ranks)


# ---------------------------------------------------------------------------
# Training and evaluation.
# ---------------------------------------------------------------------------

class RasterCache:
    """Memoizes rasterizations as packed uint8 grids (they are 0/1 anyway)."""

    def __init__(self):
        self._store: dict[tuple[str, int], np.ndarray] = {}

    def get(self, sketch: SketchVector, c: int) -> RasterImage:
        key = (sketch.id, c)
        if key not in self._store:
            self._store[key] = rasterize(sketch, c).pixels[:, :, 0].astype(np.uint8)
        grid = self._store[key].astype(np.float64)
        return RasterImage(canvas=c, pixels=np.repeat(grid[:, :, None], 3, axis=2))


def evaluate(encoder: Encoder, sketches: list[SketchVector],
             gallery: GalleryStore, canvas: int,
             cache: RasterCache | None = None, scope=None) -> dict:
    """Acc@1/Acc@10 of fixed-canvas retrieval over a sketch set.

    ``scope`` (photo id -> category key) restricts each query's ranking to
    its own category's gallery slice; None ranks against everything.
    """
    cache = cache or RasterCache()
    encoder.eval()
    dtype = next(encoder.parameters()).dtype
    gal_of = gallery_for(gallery, scope)
    ranks = []
    with torch.no_grad():
        for i in range(0, len(sketches), 32):
            part = sketches[i:i + 32]
            x = batch_to_tensor([cache.get(sk, canvas) for sk in part], dtype)
            f = encoder(x)
            for sk, e in zip(part, f):
                ranks.append(rank_query(e, gal_of(sk.pair_id), sk.pair_id).rank)
    return {"acc1": acc_at_k(ranks, 1), "acc10": acc_at_k(ranks, 10), "ranks": ranks}


def train_baseline(encoder: Encoder, sketches: list[SketchVector],
                   photos: dict[str, RasterImage], *, epochs: int, batch: int,
                   lr: float, margin: float, seed: int, canvas: int,
                   eval_sketches: list[SketchVector] | None = None,
                   steps_per_epoch: int | None = None, scope=None) -> list[dict]:
    """Plain triplet training at a fixed canvas; returns per-epoch metrics."""
    if epochs < 1:
        raise RetrievalError(f"epochs must be >= 1, got {epochs}")
    if lr <= 0:
        raise RetrievalError(f"lr must be positive, got {lr}")
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(encoder.parameters(), lr=lr)
    cache = RasterCache()
    steps = steps_per_epoch or max(1, len(sketches) // batch)
    history = []
    for epoch in range(1, epochs + 1):
        encoder.train()
        losses = []
        for _ in range(steps):
            tb = sample_triplets(sketches, photos, batch, rng)
            dtype = next(encoder.parameters()).dtype
            xs = batch_to_tensor([cache.get(sk, canvas) for sk in tb.sketches], dtype)
            xp = batch_to_tensor(tb.positives, dtype)
            xn = batch_to_tensor(tb.negatives, dtype)
            f_s = encoder(xs)  # sketches and photos may use different canvases
            f_pn = encoder(torch.cat([xp, xn]))
            f_p, f_n = f_pn.split(len(tb))
            loss = triplet_loss(f_s, f_p, f_n, margin).mean()
            if not torch.isfinite(loss):
                raise RetrievalError(f"loss diverged at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        row = {"epoch": epoch, "loss": float(np.mean(losses))}
        if eval_sketches is not None:
            gal = build_gallery(encoder, photos)
            ev = evaluate(encoder, eval_sketches, gal, canvas, cache, scope)
            row.update(acc1=ev["acc1"], acc10=ev["acc10"])
        history.append(row)
    return history
