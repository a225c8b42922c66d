"""Distance, triplet-loss, ranking, and sampling checks with independent oracles."""
import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchlite.encoders import Encoder, EncoderSpec
from sketchlite.profiler import LayerSpec
from sketchlite.raster import RasterImage, rasterize
from sketchlite.retrieval import (GalleryStore, RetrievalError, acc_at_k,
                                  build_gallery, evaluate, rank_query,
                                  sample_triplets, sq_dist, train_baseline,
                                  triplet_loss)
from sketchlite.sketch import SketchVector


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _photo(seed, c=16):
    rng = np.random.default_rng(seed)
    grid = (rng.random((c, c)) > 0.5).astype(np.float64)
    return RasterImage(canvas=c, pixels=np.repeat(grid[:, :, None], 3, axis=2))


def _sketch(pair_id, seed=0):
    rng = np.random.default_rng(seed)
    n = 6
    pts = np.zeros((n, 5))
    pts[:, 0] = rng.uniform(0.1, 0.9, size=n)
    pts[:, 1] = rng.uniform(0.1, 0.9, size=n)
    pts[:-1, 2] = 1.0
    pts[-1, 4] = 1.0
    return SketchVector(points=pts, id=f"sk-{pair_id}-{seed}", pair_id=pair_id)


# ---------------------------------------------------------------------------
# sq_dist against a naive per-coordinate sum.
# ---------------------------------------------------------------------------

def test_sq_dist_matches_naive_sum():
    rng = np.random.default_rng(3)
    for _ in range(100):
        a = rng.normal(size=64)
        b = rng.normal(size=64)
        want = sum((x - y) ** 2 for x, y in zip(a, b))
        got = sq_dist(torch.tensor(a), torch.tensor(b)).item()
        assert got == pytest.approx(want, abs=1e-9)


def test_sq_dist_batched_and_mismatch():
    a = torch.zeros(5, 8)
    assert sq_dist(a, torch.ones(5, 8)).shape == (5,)
    assert torch.allclose(sq_dist(a, torch.ones(5, 8)), torch.full((5,), 8.0))
    with pytest.raises(RetrievalError, match="mismatch"):
        sq_dist(torch.zeros(4), torch.zeros(5))


# ---------------------------------------------------------------------------
# Triplet loss arithmetic.
# ---------------------------------------------------------------------------

def test_triplet_loss_goldens():
    # d_sp=0.1, d_sn=0.5, m=0.2 -> max(0, 0.2+0.1-0.5) = 0
    # d_sp=0.4, d_sn=0.3, m=0.2 -> 0.2+0.4-0.3 = 0.3
    s = torch.zeros(2, 1)
    p = torch.tensor([[0.1], [0.4]]).sqrt()
    n = torch.tensor([[0.5], [0.3]]).sqrt()
    out = triplet_loss(s, p, n, m=0.2)
    assert out[0].item() == pytest.approx(0.0, abs=1e-7)
    assert out[1].item() == pytest.approx(0.3, abs=1e-7)


def test_triplet_loss_margin_validation():
    z = torch.zeros(1, 4)
    with pytest.raises(RetrievalError, match="margin"):
        triplet_loss(z, z, z, m=0.0)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_triplet_loss_nonnegative_and_zero_when_separated(seed):
    rng = np.random.default_rng(seed)
    s = torch.tensor(rng.normal(size=(4, 8)))
    p = torch.tensor(rng.normal(size=(4, 8)))
    n = torch.tensor(rng.normal(size=(4, 8)))
    out = triplet_loss(s, p, n, m=0.2)
    assert (out >= 0).all()
    # anchor == positive, negative far away -> exactly zero
    far = s + 10.0
    assert triplet_loss(s, s, far, m=0.2).abs().max().item() == 0.0


# ---------------------------------------------------------------------------
# Ranking against a full-sort oracle.
# ---------------------------------------------------------------------------

def _oracle_rank(q, emb, ids, true_id):
    d = [float(((e - q) ** 2).sum()) for e in emb]
    order = sorted(range(len(ids)), key=lambda i: (d[i], ids[i]))
    return 1 + order.index(ids.index(true_id))


def test_rank_query_matches_sort_oracle():
    rng = np.random.default_rng(11)
    n, dim = 40, 16
    emb = rng.normal(size=(n, dim))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    ids = tuple(f"p{i:03d}" for i in range(n))
    gal = GalleryStore(ids=ids, embeddings=emb.astype(np.float32))
    for _ in range(100):
        q = _unit(rng.normal(size=dim))
        true_id = ids[rng.integers(0, n)]
        got = rank_query(torch.tensor(q), gal, true_id).rank
        want = _oracle_rank(q, gal.embeddings.astype(np.float64), list(ids), true_id)
        assert got == want


def test_rank_query_exact_match_is_rank_one():
    emb = np.eye(4, dtype=np.float32)
    gal = GalleryStore(ids=("a", "b", "c", "d"), embeddings=emb)
    assert rank_query(torch.tensor(emb[2]), gal, "c").rank == 1


def test_rank_query_tie_breaks_by_id_order():
    # two gallery rows equidistant from the query; the true photo sorts after
    # the other id, so its rank is 2.
    emb = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
    gal = GalleryStore(ids=("a", "b"), embeddings=emb)
    q = _unit([1.0, 1.0])
    assert rank_query(torch.tensor(q), gal, "b").rank == 2
    assert rank_query(torch.tensor(q), gal, "a").rank == 1


def test_acc_at_k_cases():
    assert acc_at_k([1, 2, 1], 1) == pytest.approx(66.66666666666667)
    assert acc_at_k([1, 2, 1], 2) == 100.0
    assert acc_at_k([11, 12], 10) == 0.0
    with pytest.raises(RetrievalError):
        acc_at_k([], 1)
    with pytest.raises(RetrievalError):
        acc_at_k([1], 0)


@given(st.lists(st.integers(1, 50), min_size=1, max_size=30),
       st.integers(1, 49))
@settings(max_examples=50, deadline=None)
def test_acc_at_k_monotone_in_k(ranks, k):
    assert acc_at_k(ranks, k) <= acc_at_k(ranks, k + 1)
    assert 0.0 <= acc_at_k(ranks, k) <= 100.0


# ---------------------------------------------------------------------------
# Triplet sampling: anchor never paired with its own photo as negative,
# negatives uniform over the remaining ids.
# ---------------------------------------------------------------------------

def test_sample_triplets_excludes_own_photo():
    photos = {f"p{i}": _photo(i) for i in range(5)}
    sketches = [_sketch(f"p{i}", seed=i) for i in range(5)]
    rng = np.random.default_rng(0)
    for _ in range(50):
        tb = sample_triplets(sketches, photos, batch=8, rng=rng)
        for sk, nid in zip(tb.sketches, tb.neg_ids):
            assert nid != sk.pair_id


def test_sample_triplets_uniform_negatives():
    # single anchor, 11 photos -> 10 candidate negatives; 1000 draws should
    # put every candidate within 3 sigma of 100.
    photos = {f"p{i:02d}": _photo(i) for i in range(11)}
    sketches = [_sketch("p00")]
    rng = np.random.default_rng(7)
    counts = {}
    for _ in range(125):
        tb = sample_triplets(sketches, photos, batch=8, rng=rng)
        for nid in tb.neg_ids:
            counts[nid] = counts.get(nid, 0) + 1
    assert "p00" not in counts
    n, p = 1000, 1 / 10
    sigma = (n * p * (1 - p)) ** 0.5
    for nid in photos:
        if nid == "p00":
            continue
        assert abs(counts.get(nid, 0) - n * p) <= 3 * sigma


def test_sample_triplets_deterministic_under_seed():
    photos = {f"p{i}": _photo(i) for i in range(4)}
    sketches = [_sketch(f"p{i}", seed=i) for i in range(4)]
    a = sample_triplets(sketches, photos, 6, np.random.default_rng(42))
    b = sample_triplets(sketches, photos, 6, np.random.default_rng(42))
    assert a.neg_ids == b.neg_ids
    assert [s.id for s in a.sketches] == [s.id for s in b.sketches]


def test_sample_triplets_needs_two_photos():
    photos = {"p0": _photo(0)}
    with pytest.raises(RetrievalError, match="two photos"):
        sample_triplets([_sketch("p0")], photos, 2, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# Gallery store.
# ---------------------------------------------------------------------------

def _tiny_encoder(seed=0):
    spec = EncoderSpec(name="tiny", embed_dim=6, layers=(
        LayerSpec(kind="conv", kernel=3, in_ch=3, out_ch=4, stride=2, padding=1),
        LayerSpec(kind="activation"),
        LayerSpec(kind="conv", kernel=1, in_ch=4, out_ch=6, stride=1, padding=0),
        LayerSpec(kind="pooling", global_pool=True),
    ))
    enc = Encoder(spec)
    enc.reset_parameters(seed)
    return enc


def test_gallery_roundtrip_bit_exact(tmp_path):
    enc = _tiny_encoder()
    photos = {f"p{i}": _photo(i) for i in range(7)}
    gal = build_gallery(enc, photos, encoder_hash="abc123")
    path = tmp_path / "gallery.sklc"
    gal.save(path)
    back = GalleryStore.load(path)
    assert back.ids == gal.ids
    assert back.encoder_hash == "abc123"
    assert back.embeddings.tobytes() == gal.embeddings.tobytes()
    assert (tmp_path / "gallery.sklc.ids.json").exists()


def test_gallery_validation():
    ok = np.eye(3, dtype=np.float32)
    with pytest.raises(RetrievalError, match="duplicate"):
        GalleryStore(ids=("a", "a", "b"), embeddings=ok)
    with pytest.raises(RetrievalError, match="one embedding"):
        GalleryStore(ids=("a", "b"), embeddings=ok)
    with pytest.raises(RetrievalError, match="unit-norm"):
        GalleryStore(ids=("a", "b", "c"), embeddings=ok * 2.0)
    gal = GalleryStore(ids=("a", "b", "c"), embeddings=ok)
    with pytest.raises(RetrievalError, match="not in gallery"):
        gal.index_of("zzz")


def test_build_gallery_sorted_ids_and_unit_rows():
    enc = _tiny_encoder()
    photos = {"z": _photo(1), "a": _photo(2), "m": _photo(3)}
    gal = build_gallery(enc, photos)
    assert gal.ids == ("a", "m", "z")
    assert np.allclose(np.linalg.norm(gal.embeddings, axis=1), 1.0, atol=1e-5)


# ---------------------------------------------------------------------------
# End-to-end smoke: a couple of epochs on a linearly separable toy set must
# drive the loss down and rank the matching photo first.
# ---------------------------------------------------------------------------

def test_train_baseline_improves_toy_retrieval():
    # two photos separated by ink density (a signal global pooling keeps);
    # sketches mirror the density of their photo.
    c = 16
    photos = {}
    for pid, density, seed in [("dark", 0.7, 1), ("light", 0.05, 2)]:
        rng = np.random.default_rng(seed)
        grid = np.where(rng.random((c, c)) < density, 0.0, 1.0)
        photos[pid] = RasterImage(canvas=c,
                                  pixels=np.repeat(grid[:, :, None], 3, axis=2))

    def density_sketch(pid, seed):
        rng = np.random.default_rng(seed)
        n = 30 if pid == "dark" else 4
        pts = np.zeros((n, 5))
        pts[:, 0] = rng.uniform(0.05, 0.95, size=n)
        pts[:, 1] = rng.uniform(0.05, 0.95, size=n)
        pts[:-1, 2] = 1.0
        pts[-1, 4] = 1.0
        return SketchVector(points=pts, id=f"s-{pid}-{seed}", pair_id=pid)

    sketches = [density_sketch(pid, 10 * k + j)
                for k, pid in enumerate(photos) for j in range(3)]
    enc = _tiny_encoder(seed=1)
    hist = train_baseline(enc, sketches, photos, epochs=3, batch=8, lr=3e-3,
                          margin=0.2, seed=0, canvas=c, steps_per_epoch=12)
    assert len(hist) == 3
    assert hist[-1]["loss"] < hist[0]["loss"]
    gal = build_gallery(enc, photos)
    ev = evaluate(enc, sketches, gal, canvas=c)
    # chance Acc@1 with two photos is 50%; density is linearly separable.
    assert ev["acc1"] >= 75.0


def test_train_baseline_validation():
    photos = {f"p{i}": _photo(i) for i in range(3)}
    sketches = [_sketch(f"p{i}", seed=i) for i in range(3)]
    enc = _tiny_encoder()
    with pytest.raises(RetrievalError, match="epochs"):
        train_baseline(enc, sketches, photos, epochs=0, batch=2, lr=1e-3,
                       margin=0.2, seed=0, canvas=16)
    with pytest.raises(RetrievalError, match="lr"):
        train_baseline(enc, sketches, photos, epochs=1, batch=2, lr=0.0,
                       margin=0.2, seed=0, canvas=16)
