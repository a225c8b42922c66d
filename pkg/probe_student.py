"""Probe: student width/lr/epoch arms against one cached teacher."""
import sys
import time
from pathlib import Path

import torch

torch.set_num_threads(1)

from sketchlite.distillation import train_student
from sketchlite.encoders import (Encoder, EncoderSpec, LayerSpec, _conv_block,
                                 _dw_block, default_student, default_teacher,
                                 load_encoder, save_encoder)
from sketchlite.profiler import profile_layers
from sketchlite.retrieval import train_baseline
from sketchlite.synth import generate_dataset

TEACHER_PATH = Path("/tmp/probe_teacher.sklc")
CANVASES = (32, 64, 128, 256)

bundle = generate_dataset(seed=0)

if TEACHER_PATH.exists():
    teacher = load_encoder(TEACHER_PATH)
    print("teacher loaded from cache", flush=True)
else:
    teacher = Encoder(default_teacher())
    teacher.reset_parameters(seed=0)
    t0 = time.time()
    train_baseline(teacher, bundle.train_sketches, bundle.photos,
                   epochs=18, batch=16, lr=5e-4, margin=0.2, seed=0, canvas=256)
    save_encoder(TEACHER_PATH, teacher, meta={})
    print(f"teacher trained {time.time()-t0:.0f}s", flush=True)


def wide_student(embed_dim: int = 64) -> EncoderSpec:
    layers = _conv_block(3, 3, 24, 2, 1)
    cin = 24
    for cout in (48, 72, 128, 192):
        layers += _dw_block(cin, cout, 2)
        cin = cout
    layers.append(LayerSpec(kind="conv", kernel=1, in_ch=cin, out_ch=embed_dim))
    layers.append(LayerSpec(kind="pooling", global_pool=True))
    return EncoderSpec(name="student", layers=tuple(layers), embed_dim=embed_dim)


ARMS = [
    ("narrow kd    lr3e-3", default_student, 0.5, 3e-3, 40),
    ("narrow no-kd lr3e-3", default_student, 1.0, 3e-3, 40),
    ("wide   kd    lr3e-3", wide_student, 0.5, 3e-3, 40),
    ("wide   no-kd lr3e-3", wide_student, 1.0, 3e-3, 40),
    ("wide   kd    lr1e-3", wide_student, 0.5, 1e-3, 40),
]

pick = [int(a) for a in sys.argv[1:]] or range(len(ARMS))
for i in pick:
    name, mk, lam, lr, epochs = ARMS[i]
    spec = mk()
    rep = profile_layers(spec.layers, 256)
    stu = Encoder(spec)
    stu.reset_parameters(seed=0)
    t0 = time.time()
    try:
        hist = train_student(stu, teacher if lam < 1 else None,
                             bundle.train_sketches, bundle.photos,
                             canvases=CANVASES, epochs=epochs, batch=16, lr=lr,
                             lam=lam, margin=0.2, beta=1.0, seed=0,
                             eval_sketches=bundle.test_sketches)
    except Exception as exc:  # divergence arms report and move on
        print(f"{name}: FAILED {exc}", flush=True)
        continue
    row = hist[-1]
    accs = " ".join(f"c{c}={row[f'acc1_c{c}']:.1f}" for c in CANVASES)
    print(f"{name} params={spec.param_count()} {rep.total_flops/1e9:.4f}G "
          f"{time.time()-t0:.0f}s loss={row['loss']:.4f} {accs} "
          f"acc10_c256={row['acc10_c256']:.1f}", flush=True)
