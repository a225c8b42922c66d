"""Probe: which student design choice causes the ~38 Acc@1 ceiling?"""
import time

import torch
from torch import nn

torch.set_num_threads(1)

from sketchlite.encoders import Encoder, EncoderSpec, default_student
from sketchlite.profiler import LayerSpec
from sketchlite.retrieval import RasterCache, build_gallery, evaluate, train_baseline
from sketchlite.synth import category_of, generate_dataset

bundle = generate_dataset(seed=0)


def strip_gn(enc):
    for i, m in enumerate(enc.blocks):
        if isinstance(m, nn.Sequential):
            enc.blocks[i] = nn.ReLU()
    return enc


def dw_spec(name, stem, widths, coords=True):
    layers = [LayerSpec(kind="conv", kernel=3, in_ch=3 + 2 * coords,
                        out_ch=stem, stride=2, padding=1),
              LayerSpec(kind="activation")]
    cin = stem
    for cout in widths:
        layers += [LayerSpec(kind="depthwise-conv", kernel=3, in_ch=cin,
                             out_ch=cin, stride=2, padding=1),
                   LayerSpec(kind="activation"),
                   LayerSpec(kind="conv", kernel=1, in_ch=cin, out_ch=cout),
                   LayerSpec(kind="activation")]
        cin = cout
    layers += [LayerSpec(kind="conv", kernel=1, in_ch=cin, out_ch=64),
               LayerSpec(kind="pooling", global_pool=True)]
    return EncoderSpec(name=name, layers=tuple(layers), embed_dim=64,
                       coords=coords)


def conv_spec(name, widths, coords=True):
    layers, cin = [], 3 + 2 * coords
    for cout in widths:
        layers += [LayerSpec(kind="conv", kernel=3, in_ch=cin, out_ch=cout,
                             stride=2, padding=1),
                   LayerSpec(kind="activation")]
        cin = cout
    layers += [LayerSpec(kind="conv", kernel=1, in_ch=cin, out_ch=64),
               LayerSpec(kind="pooling", global_pool=True)]
    return EncoderSpec(name=name, layers=tuple(layers), embed_dim=64,
                       coords=coords)


def arm(name, spec, surgery=None, lr=1e-3, epochs=15):
    enc = Encoder(spec)
    enc.reset_parameters(seed=0)
    if surgery:
        enc = surgery(enc)
    t0 = time.time()
    hist = train_baseline(enc, bundle.train_sketches, bundle.photos,
                          epochs=epochs, batch=16, lr=lr, margin=0.2, seed=0,
                          canvas=256)
    gal = build_gallery(enc, bundle.photos, encoder_hash="probe")
    cache = RasterCache()
    m = evaluate(enc, bundle.test_sketches, gal, 256, cache, scope=category_of)
    tr = evaluate(enc, bundle.train_sketches[:200], gal, 256, cache,
                  scope=category_of)
    print(f"{name:14s} params={spec.param_count():6d} {time.time()-t0:.0f}s "
          f"loss {hist[-1]['loss']:.4f} test={m['acc1']:.1f} train={tr['acc1']:.1f}",
          flush=True)


arm("dw-base", default_student())
arm("dw-nogn", default_student(), surgery=strip_gn)
arm("dw-nocoord", dw_spec("s", 16, (32, 48, 96, 128), coords=False))
arm("dw-wide", dw_spec("s", 24, (40, 64, 96, 128)))
arm("conv-mini", conv_spec("s", (8, 16, 24, 32, 48, 64)))
