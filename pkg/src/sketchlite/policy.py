"""Recurrent canvas selector trained with policy gradients.

A single-layer GRU reads a (possibly partial) point sequence and a linear
head scores each canvas size.  Training rewards retrieval quality while a
normalized expected-compute term pushes probability mass toward small
canvases; inference picks the argmax.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, load_module_tensors, module_tensors, \
    save_checkpoint
from .encoders import Encoder, batch_to_tensor
from .profiler import FlopsTable, LayerSpec
from .raster import rasterize
from .retrieval import GalleryStore, gallery_for, rank_query
from .sketch import CanvasSet, SketchVector, render_partial, simplify_dp

DEFAULT_COMPLETIONS = tuple(round(0.30 + 0.05 * i, 2) for i in range(15))


class PolicyError(ValueError):
    """Raised for empty sequences, bad weights, or diverging runs."""


class CanvasPolicy(nn.Module):
    """GRU(5 -> hidden) + linear head over canvas sizes."""

    def __init__(self, canvases: CanvasSet, hidden: int = 128):
        super().__init__()
        self.canvases = canvases
        self.hidden = hidden
        self.gru = nn.GRU(input_size=5, hidden_size=hidden, num_layers=1,
                          batch_first=True)
        self.head = nn.Linear(hidden, len(canvases))

    def selector_layers(self, steps: int = 100) -> list[LayerSpec]:
        """Analytical layer list matching this module, for the profiler."""
        return [
            LayerSpec(kind="recurrent-gated", in_dim=5, hidden=self.hidden,
                      steps=steps),
            LayerSpec(kind="linear", in_dim=self.hidden,
                      out_dim=len(self.canvases)),
        ]

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for p in self.parameters():
            fan_in = p.shape[-1] if p.dim() > 1 else p.shape[0]
            bound = 1.0 / float(fan_in) ** 0.5
            with torch.no_grad():
                p.uniform_(-bound, bound, generator=gen)

    def forward(self, padded: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """(B, T, 5) padded batch + lengths -> (B, n_canvases) logits."""
        packed = nn.utils.rnn.pack_padded_sequence(
            padded, lengths.cpu(), batch_first=True, enforce_sorted=False)
        _, h_n = self.gru(packed)
        return self.head(h_n[-1])


def _pad_batch(seqs: list[np.ndarray], dtype) -> tuple[torch.Tensor, torch.Tensor]:
    if not seqs:
        raise PolicyError("empty batch")
    lengths = torch.tensor([len(s) for s in seqs], dtype=torch.int64)
    if int(lengths.min()) < 1:
        raise PolicyError("empty point sequence")
    padded = torch.zeros(len(seqs), int(lengths.max()), 5, dtype=dtype)
    for i, s in enumerate(seqs):
        padded[i, : len(s)] = torch.as_tensor(np.asarray(s), dtype=dtype)
    return padded, lengths


def encode_sequence(policy: CanvasPolicy, points: np.ndarray) -> torch.Tensor:
    """Final hidden state for one (T, 5) sequence."""
    if len(points) == 0:
        raise PolicyError("empty point sequence")
    dtype = next(policy.parameters()).dtype
    x = torch.as_tensor(np.asarray(points), dtype=dtype).unsqueeze(0)
    _, h_n = policy.gru(x)
    return h_n[-1, 0]


def policy_forward(policy: CanvasPolicy, seqs: list[np.ndarray]) -> torch.Tensor:
    """Canvas probabilities, one row per sequence."""
    dtype = next(policy.parameters()).dtype
    padded, lengths = _pad_batch(seqs, dtype)
    return torch.softmax(policy(padded, lengths), dim=-1)


def sample_canvas(probs: torch.Tensor,
                  gen: torch.Generator) -> tuple[torch.Tensor, torch.Tensor]:
    """Categorical draw per row -> (indices, log-probabilities)."""
    idx = torch.multinomial(probs, 1, generator=gen).squeeze(1)
    logp = torch.log(probs.gather(1, idx.unsqueeze(1)).squeeze(1))
    return idx, logp


def select_canvas(policy: CanvasPolicy, sketch: SketchVector) -> int:
    """Greedy (argmax) canvas side for one capped sketch."""
    policy.eval()
    with torch.no_grad():
        probs = policy_forward(policy, [sketch.points])
    return policy.canvases.sizes[int(probs.argmax(dim=-1)[0])]


# ---------------------------------------------------------------------------
# Rewards.
# ---------------------------------------------------------------------------

def flops_regularizer(probs: torch.Tensor, flops) -> torch.Tensor:
    """Expected canvas cost normalized by the cost spread: sum_j p_j q_j / (q_max - q_min)."""
    q = torch.as_tensor(np.asarray(flops, dtype=np.float64), dtype=probs.dtype)
    if q.numel() != probs.shape[-1]:
        raise PolicyError(f"{q.numel()} costs for {probs.shape[-1]} canvases")
    spread = q.max() - q.min()
    if spread <= 0:
        raise PolicyError("canvas costs must not be flat")
    return (probs * q).sum(dim=-1) / spread


def accuracy_reward(rank, tri, *, lam_r: float = 0.4, lam_tri: float = 0.48,
                    use_rank: bool = True, use_tri: bool = True) -> torch.Tensor:
    """lam_r * 1/rank - lam_tri * triplet loss, with ablation toggles."""
    rank = torch.as_tensor(rank, dtype=torch.float64)
    tri = torch.as_tensor(tri, dtype=torch.float64)
    if (rank < 1).any():
        raise PolicyError("ranks start at 1")
    out = torch.zeros_like(tri)
    if use_rank:
        out = out + lam_r / rank
    if use_tri:
        out = out - lam_tri * tri
    return out


def total_reward(r_acc: torch.Tensor, l_f: torch.Tensor,
                 lam_f: float) -> torch.Tensor:
    """Convex mix of compute saving (-l_f) and accuracy reward."""
    if not 0.0 <= lam_f <= 1.0:
        raise PolicyError(f"lam_f must lie in [0, 1], got {lam_f}")
    return lam_f * (-l_f) + (1.0 - lam_f) * r_acc


def reinforce_loss(logp: torch.Tensor, reward: torch.Tensor) -> torch.Tensor:
    """Score-function surrogate: -(1/B) sum_i log p_i * R_i (rewards frozen)."""
    if logp.shape != reward.shape:
        raise PolicyError("one reward per log-probability required")
    return -(logp * reward.detach()).mean()


# ---------------------------------------------------------------------------
# Frozen-student embedding cache for selector training.
# ---------------------------------------------------------------------------

class EmbedCache:
    """Memoizes frozen-encoder embeddings keyed by (sketch id, length, canvas)."""

    def __init__(self, encoder: Encoder):
        self.encoder = encoder
        self.encoder.eval()
        self._store: dict[tuple[str, int, int], np.ndarray] = {}

    def get_many(self, items: list[tuple[SketchVector, int]]) -> torch.Tensor:
        """Embeddings for (capped sketch, canvas) pairs, batched per canvas."""
        missing: dict[int, list[tuple[int, SketchVector]]] = {}
        for i, (sk, c) in enumerate(items):
            if (sk.id, len(sk), c) not in self._store:
                missing.setdefault(c, []).append((i, sk))
        dtype = next(self.encoder.parameters()).dtype
        with torch.no_grad():
            for c, group in missing.items():
                x = batch_to_tensor([rasterize(sk, c) for _, sk in group], dtype)
                f = self.encoder(x).numpy()
                for (_, sk), e in zip(group, f):
                    self._store[(sk.id, len(sk), c)] = e
        out = np.stack([self._store[(sk.id, len(sk), c)] for sk, c in items])
        return torch.from_numpy(out)


# ---------------------------------------------------------------------------
# Training.
# ---------------------------------------------------------------------------

@dataclass
class SelectorConfig:
    epochs: int = 10
    batch: int = 32
    lr: float = 1e-4
    lam_f: float = 0.35
    lam_r: float = 0.4
    lam_tri: float = 0.48
    margin: float = 0.2
    t_max: int = 100
    completions: tuple = DEFAULT_COMPLETIONS
    use_rank: bool = True
    use_tri: bool = True
    use_baseline: bool = False
    baseline_momentum: float = 0.9
    steps_per_epoch: int | None = None


def _capped_partial(sketch: SketchVector, completion: float,
                    t_max: int) -> SketchVector:
    return simplify_dp(render_partial(sketch, completion), t_max)


def train_selector(policy: CanvasPolicy, student: Encoder,
                   sketches: list[SketchVector], gallery: GalleryStore,
                   table: FlopsTable, cfg: SelectorConfig, seed: int,
                   eval_sketches: list[SketchVector] | None = None,
                   scope=None) -> list[dict]:
    """REINFORCE over canvas choices on partially completed sketches.

    The student encoder and photo gallery stay frozen; only the policy
    updates.  Each sample draws a completion level, caps the prefix, picks a
    canvas stochastically, and is rewarded for retrieval quality minus the
    normalized expected compute of its canvas distribution.
    """
    if cfg.epochs < 1:
        raise PolicyError(f"epochs must be >= 1, got {cfg.epochs}")
    canvases = policy.canvases
    if tuple(table.sizes) != tuple(canvases.sizes):
        raise PolicyError("cost table does not cover the policy's canvases")
    q = [table.flops_at(c) for c in canvases.sizes]
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(policy.parameters(), lr=cfg.lr)
    cache = EmbedCache(student)
    gal_of = gallery_for(gallery, scope)
    gal_emb = torch.from_numpy(gallery.embeddings.astype(np.float32))
    steps = cfg.steps_per_epoch or max(1, len(sketches) // cfg.batch)
    baseline = 0.0
    history = []
    for epoch in range(1, cfg.epochs + 1):
        policy.train()
        agg = {k: [] for k in ("reward", "r_acc", "l_f", "canvas", "completion",
                               "expected_flops", "loss")}
        for _ in range(steps):
            picks = rng.integers(0, len(sketches), size=cfg.batch)
            comps = [cfg.completions[i] for i in
                     rng.integers(0, len(cfg.completions), size=cfg.batch)]
            capped = [_capped_partial(sketches[i], comp, cfg.t_max)
                      for i, comp in zip(picks, comps)]
            probs = policy_forward(policy, [sk.points for sk in capped])
            idx, logp = sample_canvas(probs, gen)
            chosen = [canvases.sizes[int(j)] for j in idx]
            f_s = cache.get_many(list(zip(capped, chosen)))
            ranks, tris = [], []
            for i, f in enumerate(f_s):
                true_id = sketches[picks[i]].pair_id
                ranks.append(rank_query(f, gal_of(true_id), true_id).rank)
                t = gallery.index_of(true_id)
                while True:
                    n = int(rng.integers(0, len(gallery)))
                    if n != t:
                        break
                d_sp = ((f - gal_emb[t]) ** 2).sum()
                d_sn = ((f - gal_emb[n]) ** 2).sum()
                tris.append(float(torch.clamp(cfg.margin + d_sp - d_sn, min=0.0)))
            r_acc = accuracy_reward(ranks, tris, lam_r=cfg.lam_r,
                                    lam_tri=cfg.lam_tri, use_rank=cfg.use_rank,
                                    use_tri=cfg.use_tri)
            l_f = flops_regularizer(probs.detach(), q).double()
            reward = total_reward(r_acc, l_f, cfg.lam_f)
            shifted = reward - baseline if cfg.use_baseline else reward
            loss = reinforce_loss(logp, shifted.to(logp.dtype))
            if not torch.isfinite(loss):
                raise PolicyError(f"policy loss diverged at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            if cfg.use_baseline:
                m = cfg.baseline_momentum
                baseline = m * baseline + (1 - m) * float(reward.mean())
            agg["reward"].append(float(reward.mean()))
            agg["r_acc"].append(float(r_acc.mean()))
            agg["l_f"].append(float(l_f.mean()))
            agg["canvas"].append(float(np.mean(chosen)))
            agg["completion"].append(float(np.mean(comps)))
            agg["expected_flops"].append(
                float((probs.detach() * torch.tensor(q, dtype=probs.dtype))
                      .sum(dim=-1).mean()))
            agg["loss"].append(loss.detach().item())
        row = {"epoch": epoch}
        row.update({f"mean_{k}": float(np.mean(v)) for k, v in agg.items()})
        if eval_sketches is not None and epoch == cfg.epochs:
            row.update(evaluate_selector(policy, student, eval_sketches, gallery,
                                         table, t_max=cfg.t_max, cache=cache,
                                         scope=scope))
        history.append(row)
    return history


def evaluate_selector(policy: CanvasPolicy, student: Encoder,
                      sketches: list[SketchVector], gallery: GalleryStore,
                      table: FlopsTable, *, t_max: int = 100,
                      cache: EmbedCache | None = None, scope=None) -> dict:
    """Greedy-policy retrieval accuracy and mean per-query cost (selector
    cost at each sketch's capped length plus the chosen canvas's encoder
    cost), on complete sketches."""
    if not sketches:
        raise PolicyError("empty evaluation set")
    from .profiler import profile_layers
    cache = cache or EmbedCache(student)
    gal_of = gallery_for(gallery, scope)
    policy.eval()
    ranks, flops, chosen = [], [], []
    for sk in sketches:
        capped = simplify_dp(sk, t_max)
        c = select_canvas(policy, capped)
        chosen.append(c)
        sel = profile_layers(policy.selector_layers(steps=len(capped)), 1)
        flops.append(sel.total_flops + table.flops_at(c))
        f = cache.get_many([(capped, c)])[0]
        ranks.append(rank_query(f, gal_of(sk.pair_id), sk.pair_id).rank)
    from .retrieval import acc_at_k
    return {"acc1": acc_at_k(ranks, 1), "acc10": acc_at_k(ranks, 10),
            "mean_flops": float(np.mean(flops)),
            "mean_canvas": float(np.mean(chosen))}


# ---------------------------------------------------------------------------
# Persistence.
# ---------------------------------------------------------------------------

def save_policy(path, policy: CanvasPolicy, meta: dict | None = None) -> None:
    spec = {"hidden": policy.hidden, "canvases": list(policy.canvases.sizes)}
    save_checkpoint(path, kind="policy", spec=spec,
                    tensors=module_tensors(policy), meta=meta or {})


def load_policy(path) -> CanvasPolicy:
    ck = load_checkpoint(path, expect_kind="policy")
    policy = CanvasPolicy(CanvasSet(tuple(ck.spec["canvases"])),
                          hidden=ck.spec["hidden"])
    load_module_tensors(policy, ck.tensors)
    return policy
