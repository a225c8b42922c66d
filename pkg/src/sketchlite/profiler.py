"""Analytical FLOPs and parameter accounting for layer-spec models.

Convention: FLOPs = 2 x multiply-accumulates, counting only the matrix work
of conv / linear / recurrent layers.  Bias adds, normalization, pooling and
activations cost zero.  This is the convention that reproduces the usual
published compute figures for VGG-16 / ResNet-18 / MobileNetV2 backbones.

All counts are exact Python integers.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

CONV_KINDS = ("conv", "depthwise-conv")
LAYER_KINDS = CONV_KINDS + ("linear", "recurrent-gated", "pooling", "activation")


class ProfileError(ValueError):
    """Raised for malformed layer specs or incompatible input sizes."""


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a profile-able model.

    ``parallel`` marks a side branch (residual downsample): the layer reads
    the current chain input — the same tensor the next sequential layer
    reads — and its output merges back later, so it is counted but does not
    advance the spatial chain.  List it before the block it bypasses.
    """

    kind: str
    kernel: int = 0
    in_ch: int = 0
    out_ch: int = 0
    stride: int = 1
    padding: int = 0
    in_dim: int = 0
    out_dim: int = 0
    hidden: int = 0
    steps: int = 0
    global_pool: bool = False
    parallel: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ProfileError(f"unknown layer kind {self.kind!r}")
        if self.kind in CONV_KINDS:
            if self.kernel < 1 or self.in_ch < 1 or self.out_ch < 1:
                raise ProfileError(f"conv shape parameters must be positive: {self}")
            if self.stride < 1:
                raise ProfileError(f"conv stride must be positive: {self}")
            if self.kind == "depthwise-conv" and self.in_ch != self.out_ch:
                raise ProfileError("depthwise-conv requires in_ch == out_ch")
        elif self.kind == "linear":
            if self.in_dim < 1 or self.out_dim < 1:
                raise ProfileError(f"linear dims must be positive: {self}")
        elif self.kind == "recurrent-gated":
            if self.in_dim < 1 or self.hidden < 1 or self.steps < 1:
                raise ProfileError(f"recurrent shape parameters must be positive: {self}")
        elif self.kind == "pooling":
            if not self.global_pool and (self.kernel < 1 or self.stride < 1):
                raise ProfileError(f"pooling needs kernel and stride >= 1, or global_pool: {self}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for name in ("kernel", "in_ch", "out_ch", "in_dim", "out_dim", "hidden", "steps"):
            v = getattr(self, name)
            if v:
                d[name] = v
        if self.kind in CONV_KINDS or (self.kind == "pooling" and not self.global_pool):
            d["stride"] = self.stride
            d["padding"] = self.padding
        if self.global_pool:
            d["global_pool"] = True
        if self.parallel:
            d["parallel"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        allowed = set(cls.__dataclass_fields__)
        bad = set(d) - allowed
        if bad:
            raise ProfileError(f"unknown layer fields {sorted(bad)}")
        return cls(**d)


def conv_out_side(side: int, kernel: int, stride: int, padding: int) -> int:
    out = (side + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ProfileError(
            f"kernel {kernel} stride {stride} padding {padding} does not fit side {side}"
        )
    return out


def flops_of_layer(layer: LayerSpec, side: int) -> tuple[int, int]:
    """(flops, params) of one layer at a square input of the given side."""
    if layer.kind == "conv":
        out = conv_out_side(side, layer.kernel, layer.stride, layer.padding)
        k2 = layer.kernel * layer.kernel
        flops = 2 * k2 * layer.in_ch * layer.out_ch * out * out
        params = k2 * layer.in_ch * layer.out_ch + layer.out_ch
        return flops, params
    if layer.kind == "depthwise-conv":
        out = conv_out_side(side, layer.kernel, layer.stride, layer.padding)
        k2 = layer.kernel * layer.kernel
        flops = 2 * k2 * layer.out_ch * out * out  # one filter per channel
        params = k2 * layer.out_ch + layer.out_ch
        return flops, params
    if layer.kind == "linear":
        return 2 * layer.in_dim * layer.out_dim, layer.in_dim * layer.out_dim + layer.out_dim
    if layer.kind == "recurrent-gated":
        per_step = 2 * 3 * (layer.in_dim + layer.hidden) * layer.hidden
        params = 3 * ((layer.in_dim + layer.hidden) * layer.hidden + 2 * layer.hidden)
        return per_step * layer.steps, params
    # pooling / activation carry no counted work
    return 0, 0


def layer_out_side(layer: LayerSpec, side: int) -> int:
    if layer.kind in CONV_KINDS:
        return conv_out_side(side, layer.kernel, layer.stride, layer.padding)
    if layer.kind == "pooling":
        return 1 if layer.global_pool else conv_out_side(side, layer.kernel, layer.stride, layer.padding)
    if layer.kind in ("linear", "recurrent-gated"):
        return 1
    return side


@dataclass
class LayerProfile:
    index: int
    kind: str
    flops: int
    params: int
    out_side: int


@dataclass
class ProfileReport:
    input_side: int
    layers: list[LayerProfile]
    total_flops: int
    total_params: int

    def as_rows(self) -> list[dict]:
        return [
            {"layer": p.index, "kind": p.kind, "flops": p.flops,
             "params": p.params, "out_side": p.out_side}
            for p in self.layers
        ]

    def pretty(self) -> str:
        lines = [f"{'layer':>5}  {'kind':<16} {'out':>5} {'params':>12} {'flops':>16}"]
        for p in self.layers:
            lines.append(
                f"{p.index:>5}  {p.kind:<16} {p.out_side:>5} {p.params:>12,} {p.flops:>16,}"
            )
        lines.append(
            f"{'':>5}  {'TOTAL':<16} {'':>5} {self.total_params:>12,} {self.total_flops:>16,}"
        )
        return "\n".join(lines)


def profile_layers(layers: list[LayerSpec], side: int) -> ProfileReport:
    """Chain layers spatially and sum their FLOPs / parameter counts."""
    rows: list[LayerProfile] = []
    chain_side = side
    for i, layer in enumerate(layers):
        flops, params = flops_of_layer(layer, chain_side)
        out_side = layer_out_side(layer, chain_side)
        rows.append(LayerProfile(i, layer.kind, flops, params, out_side))
        if not layer.parallel:
            chain_side = out_side
    return ProfileReport(
        input_side=side,
        layers=rows,
        total_flops=sum(r.flops for r in rows),
        total_params=sum(r.params for r in rows),
    )


def profile_model(spec, side: int) -> ProfileReport:
    """Profile anything exposing ``.layers`` (or a raw LayerSpec list)."""
    layers = spec.layers if hasattr(spec, "layers") else list(spec)
    return profile_layers(layers, side)


def count_params(spec) -> int:
    layers = spec.layers if hasattr(spec, "layers") else list(spec)
    return sum(flops_of_layer(l, 1024)[1] for l in layers)  # params are size-free


# ---------------------------------------------------------------------------
# Per-canvas FLOPs tables.
# ---------------------------------------------------------------------------

@dataclass
class FlopsTable:
    """Precomputed encoder cost per canvas size, strictly increasing."""

    sizes: tuple[int, ...]
    q: tuple[float, ...]

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        self.q = tuple(float(v) for v in self.q)
        if len(self.sizes) != len(self.q) or len(self.q) < 2:
            raise ProfileError("table needs >= 2 (size, flops) pairs")
        if any(b <= a for a, b in zip(self.q, self.q[1:])):
            raise ProfileError(f"FLOPs must increase strictly with canvas size: {self.q}")

    @property
    def q_min(self) -> float:
        return self.q[0]

    @property
    def q_max(self) -> float:
        return self.q[-1]

    def flops_at(self, size: int) -> float:
        return self.q[self.sizes.index(size)]

    def to_json(self) -> str:
        return json.dumps({"sizes": list(self.sizes), "flops": list(self.q)}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FlopsTable":
        d = json.loads(text)
        return cls(sizes=tuple(d["sizes"]), q=tuple(d["flops"]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "FlopsTable":
        return cls.from_json(Path(path).read_text())


def precompute_canvas_flops(spec, canvases) -> FlopsTable:
    """FLOPs of a fully-convolutional spec at every canvas size."""
    sizes = tuple(canvases)
    q = [float(profile_model(spec, s).total_flops) for s in sizes]
    if any(b <= a for a, b in zip(q, q[1:])):
        raise ProfileError("spec is not resolution-dependent; per-canvas table is flat")
    return FlopsTable(sizes=sizes, q=tuple(q))


def average_flops_metric(select_canvas, selector_layers, student_spec, sketches,
                         canvases, t_max: int = 100) -> float:
    """Mean per-query cost: selector at the sample's capped length + encoder
    at the canvas the selector picks.

    ``select_canvas`` maps a capped SketchVector to a canvas side;
    ``selector_layers`` must contain exactly one recurrent-gated layer whose
    step count is re-bound to each sample's length.
    """
    from .sketch import simplify_dp  # local import to keep this module torch-free

    table = precompute_canvas_flops(student_spec, canvases)
    total = 0.0
    n = 0
    for sk in sketches:
        capped = simplify_dp(sk, t_max)
        bound = [
            LayerSpec(**{**l.to_dict(), "steps": len(capped)})
            if l.kind == "recurrent-gated" else l
            for l in selector_layers
        ]
        sel_flops = profile_layers(bound, 1).total_flops
        c = select_canvas(capped)
        total += sel_flops + table.flops_at(c)
        n += 1
    if n == 0:
        raise ProfileError("empty evaluation set")
    return total / n


# ---------------------------------------------------------------------------
# JSON (de)serialization of whole layer lists.
# ---------------------------------------------------------------------------

def layers_to_json(layers: list[LayerSpec]) -> str:
    return json.dumps([l.to_dict() for l in layers], indent=2)

def layers_from_json(text: str) -> list[LayerSpec]:
    data = json.loads(text)
    if not isinstance(data, list):
        raise ProfileError("layer spec JSON must be a list")
    return [LayerSpec.from_dict(d) for d in data]


def load_layers(path) -> list[LayerSpec]:
    return layers_from_json(Path(path).read_text())


REFERENCE_NAMES = ("vgg16", "resnet18", "mobilenet_v2", "selector")


def load_reference(name: str) -> list[LayerSpec]:
    """Load one of the bundled reference architecture specs."""
    if name not in REFERENCE_NAMES:
        raise ProfileError(f"unknown reference spec {name!r}; have {REFERENCE_NAMES}")
    from importlib import resources
    text = resources.files("sketchlite").joinpath("data", f"{name}.json").read_text()
    return layers_from_json(text)
