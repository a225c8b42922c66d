"""Probe: student@256 lr arms under coordinate stems."""
import sys
import time

import torch

torch.set_num_threads(1)

from sketchlite.encoders import Encoder, default_student
from sketchlite.retrieval import RasterCache, build_gallery, evaluate, train_baseline
from sketchlite.synth import category_of, generate_dataset

bundle = generate_dataset(seed=0)
cache = RasterCache()

for lr in (float(a) for a in sys.argv[1:]):
    enc = Encoder(default_student())
    enc.reset_parameters(seed=0)
    t0 = time.time()
    hist = train_baseline(enc, bundle.train_sketches, bundle.photos,
                          epochs=18, batch=16, lr=lr, margin=0.2, seed=0,
                          canvas=256)
    gal = build_gallery(enc, bundle.photos, encoder_hash="probe")
    m = evaluate(enc, bundle.test_sketches, gal, 256, cache, scope=category_of)
    tr = evaluate(enc, bundle.train_sketches[:200], gal, 256, cache,
                  scope=category_of)
    print(f"student@256 lr={lr} ep=18 {time.time()-t0:.0f}s "
          f"loss {hist[-1]['loss']:.4f} cat acc1={m['acc1']:.1f} "
          f"train acc1={tr['acc1']:.1f}", flush=True)
