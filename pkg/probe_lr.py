"""Probe: teacher lr sweep on the full corpus, train vs test accuracy."""
import sys
import time

import torch

torch.set_num_threads(1)

from sketchlite.encoders import Encoder, default_teacher
from sketchlite.retrieval import RasterCache, build_gallery, evaluate, train_baseline
from sketchlite.synth import generate_dataset

lr = float(sys.argv[1]) if len(sys.argv) > 1 else 1e-3
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 15

bundle = generate_dataset(seed=0)
enc = Encoder(default_teacher())
enc.reset_parameters(seed=0)
cache = RasterCache()

t0 = time.time()
hist = train_baseline(enc, bundle.train_sketches, bundle.photos,
                      epochs=epochs, batch=16, lr=lr, margin=0.2, seed=0,
                      canvas=256)
print(f"lr={lr} epochs={epochs} train {time.time()-t0:.1f}s "
      f"loss {hist[0]['loss']:.4f} -> {hist[-1]['loss']:.4f}", flush=True)

gal = build_gallery(enc, bundle.photos, encoder_hash="probe")
for name, sks in [("test", bundle.test_sketches),
                  ("train", bundle.train_sketches[:200])]:
    for c in (32, 64, 128, 256):
        m = evaluate(enc, sks, gal, c, cache)
        print(f"  {name:5s} c={c:3d} acc1={m['acc1']:5.1f} acc10={m['acc10']:5.1f}",
              flush=True)
