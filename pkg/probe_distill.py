"""Probe: teacher lr arms on bolder data, then KD vs no-KD distillation."""
import time

import torch

torch.set_num_threads(1)

from sketchlite.distillation import train_student
from sketchlite.encoders import Encoder, default_student, default_teacher
from sketchlite.retrieval import RasterCache, build_gallery, evaluate, train_baseline
from sketchlite.synth import generate_dataset

bundle = generate_dataset(seed=0)
cache = RasterCache()
CANVASES = (32, 64, 128, 256)


def teacher_arm(lr, epochs):
    enc = Encoder(default_teacher())
    enc.reset_parameters(seed=0)
    t0 = time.time()
    hist = train_baseline(enc, bundle.train_sketches, bundle.photos,
                          epochs=epochs, batch=16, lr=lr, margin=0.2, seed=0,
                          canvas=256)
    gal = build_gallery(enc, bundle.photos, encoder_hash="probe")
    m = evaluate(enc, bundle.test_sketches, gal, 256, cache)
    tr = evaluate(enc, bundle.train_sketches[:200], gal, 256, cache)
    print(f"teacher lr={lr} ep={epochs} {time.time()-t0:.0f}s "
          f"loss {hist[-1]['loss']:.4f} test acc1={m['acc1']:.1f} "
          f"acc10={m['acc10']:.1f} train acc1={tr['acc1']:.1f}", flush=True)
    return enc, m["acc1"]


t3, acc3 = teacher_arm(3e-4, 18)
t5, acc5 = teacher_arm(5e-4, 18)
teacher = t3 if acc3 >= acc5 else t5

for lam, name in ((0.5, "kd"), (1.0, "no-kd")):
    stu = Encoder(default_student())
    stu.reset_parameters(seed=0)
    t0 = time.time()
    hist = train_student(stu, teacher if lam < 1 else None,
                         bundle.train_sketches, bundle.photos,
                         canvases=CANVASES, epochs=15, batch=16, lr=1e-3,
                         lam=lam, margin=0.2, beta=1.0, seed=0,
                         eval_sketches=bundle.test_sketches)
    row = hist[-1]
    accs = " ".join(f"c{c}={row[f'acc1_c{c}']:.1f}" for c in CANVASES)
    print(f"student {name} {time.time()-t0:.0f}s loss {row['loss']:.4f} "
          f"{accs} acc10_c256={row['acc10_c256']:.1f}", flush=True)
