"""Probe: teacher and student@256 ceilings, coordinate stems + scoped eval."""
import time

import torch

torch.set_num_threads(1)

from sketchlite.encoders import Encoder, default_student, default_teacher, save_encoder
from sketchlite.retrieval import RasterCache, build_gallery, evaluate, train_baseline
from sketchlite.synth import category_of, generate_dataset

bundle = generate_dataset(seed=0)
cache = RasterCache()


def arm(name, spec, lr, epochs, save=None):
    enc = Encoder(spec)
    enc.reset_parameters(seed=0)
    t0 = time.time()
    hist = train_baseline(enc, bundle.train_sketches, bundle.photos,
                          epochs=epochs, batch=16, lr=lr, margin=0.2, seed=0,
                          canvas=256)
    gal = build_gallery(enc, bundle.photos, encoder_hash="probe")
    m = evaluate(enc, bundle.test_sketches, gal, 256, cache, scope=category_of)
    g = evaluate(enc, bundle.test_sketches, gal, 256, cache)
    tr = evaluate(enc, bundle.train_sketches[:200], gal, 256, cache,
                  scope=category_of)
    print(f"{name} lr={lr} ep={epochs} {time.time()-t0:.0f}s "
          f"loss {hist[-1]['loss']:.4f} cat acc1={m['acc1']:.1f} "
          f"(global {g['acc1']:.1f}) train acc1={tr['acc1']:.1f}", flush=True)
    if save:
        save_encoder(save, enc, meta={})
    return enc, m["acc1"]


arm("teacher", default_teacher(), 1e-3, 18, save="/tmp/probe_teacher.sklc")
arm("student@256", default_student(), 3e-3, 18)
