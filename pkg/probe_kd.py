"""Probe: teacher vs distilled/solo student on the graded-attribute data."""
import time

import torch

torch.set_num_threads(1)

from sketchlite.distillation import evaluate_multi_canvas, train_student
from sketchlite.encoders import (Encoder, default_student, default_teacher,
                                 load_encoder, save_encoder)
from sketchlite.retrieval import RasterCache, build_gallery, evaluate, train_baseline
from sketchlite.synth import category_of, generate_dataset

bundle = generate_dataset(seed=0)
CANVASES = (32, 64, 128, 256)

enc = Encoder(default_teacher())
enc.reset_parameters(seed=0)
t0 = time.time()
train_baseline(enc, bundle.train_sketches, bundle.photos,
               epochs=18, batch=16, lr=1e-3, margin=0.2, seed=0, canvas=256)
gal = build_gallery(enc, bundle.photos, encoder_hash="probe")
m = evaluate(enc, bundle.test_sketches, gal, 256, RasterCache(), scope=category_of)
print(f"teacher ep=18 {time.time()-t0:.0f}s cat acc1={m['acc1']:.1f}", flush=True)
save_encoder("/tmp/probe_teacher2.sklc", enc, meta={})
teacher = load_encoder("/tmp/probe_teacher2.sklc")


def arm(name, lam, lr, epochs):
    st = Encoder(default_student())
    st.reset_parameters(seed=0)
    t0 = time.time()
    hist = train_student(st, None if lam == 1.0 else teacher,
                         bundle.train_sketches, bundle.photos,
                         canvases=CANVASES, epochs=epochs, batch=16, lr=lr,
                         lam=lam, margin=0.2, beta=1.0, seed=0)
    m = evaluate_multi_canvas(st, bundle.test_sketches, bundle.photos,
                              CANVASES, RasterCache(), category_of)
    accs = " ".join(f"c{c}={m[f'acc1_c{c}']:.1f}" for c in CANVASES)
    print(f"{name} lam={lam} lr={lr} ep={epochs} {time.time()-t0:.0f}s "
          f"loss {hist[-1]['loss']:.4f} {accs}", flush=True)


arm("kd", 0.5, 1e-3, 25)
arm("nokd", 1.0, 1e-3, 25)
