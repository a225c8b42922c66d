"""Probe: teacher lr arms and KD vs no-KD student arms, post-norm stacks."""
import sys
import time

import torch

torch.set_num_threads(1)

from sketchlite.distillation import train_student
from sketchlite.encoders import Encoder, default_student, default_teacher, \
    load_encoder, save_encoder
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


def student_arm(teacher, lam, lr, epochs, name):
    stu = Encoder(default_student())
    stu.reset_parameters(seed=0)
    t0 = time.time()
    hist = train_student(stu, teacher if lam < 1 else None,
                         bundle.train_sketches, bundle.photos,
                         canvases=CANVASES, epochs=epochs, batch=16, lr=lr,
                         lam=lam, margin=0.2, beta=1.0, seed=0,
                         eval_sketches=bundle.test_sketches)
    row = hist[-1]
    accs = " ".join(f"c{c}={row[f'acc1_c{c}']:.1f}" for c in CANVASES)
    print(f"student {name} lam={lam} lr={lr} ep={epochs} {time.time()-t0:.0f}s "
          f"loss {row['loss']:.4f} {accs} acc10_c256={row['acc10_c256']:.1f}",
          flush=True)


if "teachers" in sys.argv:
    best, best_acc, best_lr = None, -1.0, None
    for lr in (5e-4, 1e-3, 2e-3):
        enc, acc = teacher_arm(lr, 18)
        if acc > best_acc:
            best, best_acc, best_lr = enc, acc, lr
    save_encoder("/tmp/probe_teacher.sklc", best, meta={})
    print(f"cached teacher lr={best_lr} acc1={best_acc:.1f}", flush=True)

if "students" in sys.argv:
    teacher = load_encoder("/tmp/probe_teacher.sklc")
    for lam, lr, ep in ((0.5, 3e-3, 25), (1.0, 3e-3, 25),
                        (0.5, 1e-3, 25), (1.0, 1e-3, 25)):
        student_arm(teacher, lam, lr, ep, "kd" if lam < 1 else "no-kd")
