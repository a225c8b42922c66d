"""Teacher and student image encoders built from profiler layer specs.

The torch module mirrors the LayerSpec list exactly, so the analytical
parameter count equals ``sum(p.numel())`` and the FLOPs table produced by
the profiler describes the network that actually runs.  Both encoders are
fully convolutional with a global-average-pooled, L2-normalized embedding,
so one set of weights serves every canvas size.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .profiler import LayerSpec, count_params
from .raster import RasterImage

MIN_SIDE = 8


class EncoderError(ValueError):
    """Raised for spec/shape violations in encoder construction or use."""


@dataclass(frozen=True)
class EncoderSpec:
    """Layer list plus embedding width for one encoder.

    ``coords=True`` appends two normalized coordinate planes to the input
    before the first layer (the spec's first conv must then expect five
    channels).  Global average pooling is translation invariant, so without
    them the embedding cannot express *where* a part sits on the silhouette.
    """

    name: str
    layers: tuple[LayerSpec, ...]
    embed_dim: int
    coords: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.embed_dim < 1:
            raise EncoderError("embed_dim must be positive")
        width = None
        for l in self.layers:
            if l.kind in ("conv", "depthwise-conv"):
                if width is None and l.in_ch != 3 + 2 * self.coords:
                    raise EncoderError(
                        f"first conv expects {l.in_ch} channels; input supplies "
                        f"{3 + 2 * self.coords} (coords={self.coords})"
                    )
                width = l.out_ch
            elif l.kind == "linear":
                width = l.out_dim
            elif l.kind in ("recurrent-gated",):
                raise EncoderError("recurrent layers do not belong in an image encoder")
            if l.parallel:
                raise EncoderError("parallel branches are not supported in encoders")
        if width != self.embed_dim:
            raise EncoderError(
                f"last weighted layer emits {width} values, embed_dim is {self.embed_dim}"
            )

    def param_count(self) -> int:
        return count_params(self.layers)


def l2_normalize(v: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """v / ||v||; rejects zero vectors rather than inventing a direction."""
    norm = v.norm(dim=dim, keepdim=True)
    if (norm == 0).any():
        raise EncoderError("cannot normalize a zero embedding")
    return v / norm


def _build_module(layer: LayerSpec, width: int | None) -> nn.Module:
    if layer.kind == "conv":
        return nn.Conv2d(layer.in_ch, layer.out_ch, layer.kernel,
                         stride=layer.stride, padding=layer.padding)
    if layer.kind == "depthwise-conv":
        return nn.Conv2d(layer.in_ch, layer.out_ch, layer.kernel,
                         stride=layer.stride, padding=layer.padding,
                         groups=layer.in_ch)
    if layer.kind == "activation":
        # Stateless normalization in front of the nonlinearity: these stacks
        # carry no batch norm, and depthwise towers drift into dead channels
        # without it.  affine=False keeps the torch parameter count equal to
        # the analytic one.
        if width is None:
            return nn.ReLU()
        return nn.Sequential(nn.GroupNorm(1, width, affine=False), nn.ReLU())
    if layer.kind == "pooling":
        if layer.global_pool:
            return nn.AdaptiveAvgPool2d(1)
        return nn.MaxPool2d(layer.kernel, stride=layer.stride, padding=layer.padding)
    if layer.kind == "linear":
        return nn.Linear(layer.in_dim, layer.out_dim)
    raise EncoderError(f"cannot realize layer kind {layer.kind!r}")


class Encoder(nn.Module):
    """Runs a LayerSpec chain and emits unit-norm embeddings."""

    def __init__(self, spec: EncoderSpec, seed: int | None = None):
        super().__init__()
        self.spec = spec
        blocks, width = [], None
        for layer in spec.layers:
            blocks.append(_build_module(layer, width))
            if layer.kind in ("conv", "depthwise-conv"):
                width = layer.out_ch
            elif layer.kind == "linear":
                width = layer.out_dim
        self.blocks = nn.ModuleList(blocks)
        if seed is not None:
            self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        """Deterministic Kaiming-uniform init, independent of global RNG state.

        The ReLU gain matters here: these stacks carry no normalization
        layers, so smaller init scales let activations decay to nothing by
        the embedding layer and training stalls.
        """
        g = torch.Generator().manual_seed(seed)
        for m in self.blocks:
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                fan_in = m.weight.shape[1:].numel()
                bound = math.sqrt(6.0 / fan_in)
                with torch.no_grad():
                    m.weight.uniform_(-bound, bound, generator=g)
                    m.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise EncoderError(f"expected (B, 3, c, c) input, got {tuple(x.shape)}")
        if x.shape[-1] < MIN_SIDE or x.shape[-2] < MIN_SIDE:
            raise EncoderError(f"input side must be >= {MIN_SIDE}, got {tuple(x.shape)}")
        # Rasters arrive ink-dark on a white (=1) ground; flip so a blank
        # canvas is zero signal and pooled features respond to ink only.
        x = 1.0 - x
        if self.spec.coords:
            x = torch.cat([x, _coord_planes(x)], dim=1)
        for m in self.blocks:
            if isinstance(m, nn.Linear) and x.ndim == 4:
                x = x.flatten(1)
            x = m(x)
        x = x.flatten(1)
        return l2_normalize(x, dim=1)


def _coord_planes(x: torch.Tensor) -> torch.Tensor:
    """(B, 2, H, W) pixel-center coordinates in [0, 1], matching the raster grid."""
    b, _, h, w = x.shape
    ys = (torch.arange(h, dtype=x.dtype) + 0.5) / h
    xs = (torch.arange(w, dtype=x.dtype) + 0.5) / w
    yy = ys.view(1, 1, h, 1).expand(b, 1, h, w)
    xx = xs.view(1, 1, 1, w).expand(b, 1, h, w)
    return torch.cat([xx, yy], dim=1)


def image_to_tensor(image: RasterImage, dtype=torch.float32) -> torch.Tensor:
    """(c, c, 3) numpy grid -> (3, c, c) torch tensor."""
    return torch.from_numpy(np.ascontiguousarray(image.pixels.transpose(2, 0, 1))).to(dtype)


def batch_to_tensor(images: list[RasterImage], dtype=torch.float32) -> torch.Tensor:
    return torch.stack([image_to_tensor(im, dtype) for im in images])


def embed(encoder: Encoder, image: RasterImage) -> torch.Tensor:
    """Unit-norm embedding of a single raster, without gradient tracking."""
    encoder.eval()
    with torch.no_grad():
        dtype = next(encoder.parameters()).dtype
        return encoder(batch_to_tensor([image], dtype))[0]


# ---------------------------------------------------------------------------
# Default desk-scale architectures.
# ---------------------------------------------------------------------------

def _conv_block(k, cin, cout, stride, padding):
    return [LayerSpec(kind="conv", kernel=k, in_ch=cin, out_ch=cout,
                      stride=stride, padding=padding),
            LayerSpec(kind="activation")]


def _dw_block(cin, cout, stride):
    return [LayerSpec(kind="depthwise-conv", kernel=3, in_ch=cin, out_ch=cin,
                      stride=stride, padding=1),
            LayerSpec(kind="activation"),
            LayerSpec(kind="conv", kernel=1, in_ch=cin, out_ch=cout),
            LayerSpec(kind="activation")]


def default_teacher(embed_dim: int = 64) -> EncoderSpec:
    """Six stride-2 conv blocks over coordinate-augmented input, ~0.42M params."""
    layers, cin = [], 5
    for cout in (16, 32, 64, 96, 128, 192):
        layers += _conv_block(3, cin, cout, 2, 1)
        cin = cout
    layers.append(LayerSpec(kind="conv", kernel=1, in_ch=cin, out_ch=embed_dim))
    layers.append(LayerSpec(kind="pooling", global_pool=True))
    return EncoderSpec(name="teacher", layers=tuple(layers), embed_dim=embed_dim,
                       coords=True)


def default_student(embed_dim: int = 64) -> EncoderSpec:
    """Conv stem + four stride-2 depthwise-separable blocks, ~0.03M params.

    The stem is a regular conv: grouped 3-channel convs at full resolution
    are disproportionately slow on CPU for no accuracy benefit.
    """
    layers = _conv_block(3, 5, 16, 2, 1)
    cin = 16
    for cout in (32, 48, 96, 128):
        layers += _dw_block(cin, cout, 2)
        cin = cout
    layers.append(LayerSpec(kind="conv", kernel=1, in_ch=cin, out_ch=embed_dim))
    layers.append(LayerSpec(kind="pooling", global_pool=True))
    return EncoderSpec(name="student", layers=tuple(layers), embed_dim=embed_dim,
                       coords=True)


# ---------------------------------------------------------------------------
# Persistence.
# ---------------------------------------------------------------------------

def spec_to_dict(spec: EncoderSpec) -> dict:
    return {"name": spec.name, "embed_dim": spec.embed_dim,
            "coords": spec.coords, "layers": [l.to_dict() for l in spec.layers]}


def spec_from_dict(d: dict) -> EncoderSpec:
    return EncoderSpec(name=d["name"], embed_dim=d["embed_dim"],
                       coords=bool(d.get("coords", False)),
                       layers=tuple(LayerSpec.from_dict(l) for l in d["layers"]))


def save_encoder(path, encoder: Encoder, meta: dict | None = None) -> None:
    from .checkpoint import module_tensors, save_checkpoint
    save_checkpoint(path, kind="encoder", spec=spec_to_dict(encoder.spec),
                    tensors=module_tensors(encoder), meta=meta)


def load_encoder(path) -> Encoder:
    from .checkpoint import load_checkpoint, load_module_tensors
    ckpt = load_checkpoint(path, expect_kind="encoder")
    enc = Encoder(spec_from_dict(ckpt.spec))
    load_module_tensors(enc, ckpt.tensors)
    return enc
