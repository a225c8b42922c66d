"""Command-line pipeline: data generation, training stages, evaluation,
sweeps, and the analytical profiler."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig, load_config, replace
from .distillation import evaluate_multi_canvas, train_student
from .encoders import (Encoder, default_student, default_teacher, load_encoder,
                       save_encoder)
from .policy import (CanvasPolicy, SelectorConfig, evaluate_selector,
                     load_policy, save_policy, train_selector)
from .profiler import (FlopsTable, count_params, load_reference,
                       precompute_canvas_flops, profile_layers)
from .retrieval import GalleryStore, build_gallery, evaluate, train_baseline
from .sketch import CanvasSet
from .sketch_io import load_photos, load_sketches, save_photos, save_sketches
from .synth import category_of, generate_dataset

LAMBDA_F_GRID = (0.0, 0.2, 0.35, 0.5, 0.7, 0.9)


class PipelineError(RuntimeError):
    """Raised when a stage is missing one of its input artifacts."""


# ---------------------------------------------------------------------------
# Artifact layout under the output directory.
# ---------------------------------------------------------------------------

def paths(out: Path, seed: int) -> dict[str, Path]:
    return {
        "train": out / "data" / "train.ndjson",
        "test": out / "data" / "test.ndjson",
        "photos": out / "data" / "photos",
        "teacher": out / f"teacher_s{seed}.sklc",
        "student_kd": out / f"student_kd_s{seed}.sklc",
        "student_nokd": out / f"student_nokd_s{seed}.sklc",
        "gallery": out / f"gallery_s{seed}.sklc",
        "table": out / "flops_table.json",
        "policy": out / f"policy_s{seed}.sklc",
    }


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise PipelineError(
            f"missing artifact {path} - run `sketchlite {produced_by}` first")
    return path


def write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    columns: list[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, restval="")
        writer.writeheader()
        writer.writerows(rows)


def _load_corpus(p: dict[str, Path]):
    train, _ = load_sketches(_require(p["train"], "gen-data"))
    test, _ = load_sketches(_require(p["test"], "gen-data"))
    photos = load_photos(_require(p["photos"], "gen-data"))
    return train, test, photos


def _selector_cfg(cfg: ExperimentConfig) -> SelectorConfig:
    return SelectorConfig(
        epochs=cfg.selector_epochs, batch=cfg.selector_batch, lr=cfg.lr,
        lam_f=cfg.lam_f, lam_r=cfg.lam_r, lam_tri=cfg.lam_tri,
        margin=cfg.margin, t_max=cfg.t_max, completions=cfg.completions,
        use_rank=cfg.use_rank, use_tri=cfg.use_tri,
        use_baseline=cfg.use_baseline,
        steps_per_epoch=cfg.steps_per_epoch or None)


# ---------------------------------------------------------------------------
# Stages.
# ---------------------------------------------------------------------------

def cmd_gen_data(cfg: ExperimentConfig, args) -> int:
    out = cfg.resolved_out()
    p = paths(out, cfg.seed)
    bundle = generate_dataset(seed=cfg.data_seed, n_classes=cfg.n_classes,
                              n_instances=cfg.n_instances,
                              n_sketches=cfg.n_sketches)
    save_sketches(p["train"], bundle.train_sketches)
    save_sketches(p["test"], bundle.test_sketches)
    save_photos(p["photos"], bundle.photos)
    print(f"wrote {len(bundle.train_sketches)} train / "
          f"{len(bundle.test_sketches)} test sketches and "
          f"{len(bundle.photos)} photos under {out / 'data'}")
    return 0


def cmd_train_teacher(cfg: ExperimentConfig, args) -> int:
    p = paths(cfg.resolved_out(), cfg.seed)
    train, test, photos = _load_corpus(p)
    teacher = Encoder(default_teacher(cfg.embed_dim))
    teacher.reset_parameters(cfg.seed)
    hist = train_baseline(teacher, train, photos, epochs=cfg.teacher_epochs,
                          batch=cfg.triplet_batch, lr=cfg.lr,
                          margin=cfg.margin, seed=cfg.seed,
                          canvas=max(cfg.canvases), eval_sketches=None,
                          steps_per_epoch=cfg.steps_per_epoch or None)
    gallery = build_gallery(teacher, photos)
    ev = evaluate(teacher, test, gallery, max(cfg.canvases), scope=category_of)
    hist[-1].update(acc1=ev["acc1"], acc10=ev["acc10"])
    save_encoder(p["teacher"], teacher, meta={"seed": cfg.seed})
    write_csv(p["teacher"].with_suffix(".metrics.csv"),
              [{k: v for k, v in row.items() if k != "ranks"} for row in hist])
    print(f"teacher acc1={ev['acc1']:.1f} acc10={ev['acc10']:.1f} "
          f"-> {p['teacher']}")
    return 0


def cmd_distill(cfg: ExperimentConfig, args) -> int:
    p = paths(cfg.resolved_out(), cfg.seed)
    train, test, photos = _load_corpus(p)
    lam = 1.0 if args.mode == "no-kd" else cfg.lam
    teacher = None
    if lam != 1.0:
        teacher = load_encoder(_require(p["teacher"], "train-teacher"))
    student = Encoder(default_student(cfg.embed_dim))
    student.reset_parameters(cfg.seed)
    hist = train_student(student, teacher, train, photos,
                         canvases=cfg.canvases, epochs=cfg.distill_epochs,
                         batch=cfg.triplet_batch, lr=cfg.lr, lam=lam,
                         margin=cfg.margin, beta=cfg.beta, seed=cfg.seed,
                         eval_sketches=test,
                         steps_per_epoch=cfg.steps_per_epoch or None,
                         scope=category_of)
    key = "student_nokd" if args.mode == "no-kd" else "student_kd"
    save_encoder(p[key], student, meta={"seed": cfg.seed, "lam": lam})
    write_csv(p[key].with_suffix(".metrics.csv"), hist)
    if args.mode != "no-kd":
        gallery = build_gallery(student, photos)
        gallery.save(p["gallery"])
        table = precompute_canvas_flops(default_student(cfg.embed_dim),
                                        CanvasSet(cfg.canvases))
        table.save(p["table"])
    last = hist[-1]
    print(f"student[{args.mode}] mean acc1={last.get('acc1', float('nan')):.1f} "
          f"-> {p[key]}")
    return 0


def cmd_train_selector(cfg: ExperimentConfig, args) -> int:
    p = paths(cfg.resolved_out(), cfg.seed)
    train, test, _ = _load_corpus(p)
    student = load_encoder(_require(p["student_kd"], "distill"))
    gallery = GalleryStore.load(_require(p["gallery"], "distill"))
    table = FlopsTable.load(_require(p["table"], "distill"))
    policy = CanvasPolicy(CanvasSet(cfg.canvases), hidden=cfg.policy_hidden)
    policy.reset_parameters(cfg.seed)
    hist = train_selector(policy, student, train, gallery, table,
                          _selector_cfg(cfg), seed=cfg.seed,
                          eval_sketches=test, scope=category_of)
    suffix = args.tag or ""
    path = p["policy"] if not suffix else \
        p["policy"].with_name(p["policy"].stem + f"_{suffix}.sklc")
    save_policy(path, policy, meta={"seed": cfg.seed, "lam_f": cfg.lam_f,
                                    "tag": suffix})
    write_csv(path.with_suffix(".metrics.csv"), hist)
    last = hist[-1]
    print(f"selector acc1={last.get('acc1', float('nan')):.1f} "
          f"mean_flops={last.get('mean_flops', float('nan')):.3e} -> {path}")
    return 0


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    p = paths(cfg.resolved_out(), cfg.seed)
    _, test, photos = _load_corpus(p)
    student = load_encoder(_require(p["student_kd"], "distill"))
    table = FlopsTable.load(_require(p["table"], "distill"))
    rows = []
    if args.mode == "fixed-canvas":
        canvases = [args.canvas] if args.canvas else list(cfg.canvases)
        out = evaluate_multi_canvas(student, test, photos, canvases,
                                    scope=category_of)
        params = count_params(default_student(cfg.embed_dim))
        for c in canvases:
            rows.append({"mode": f"fixed-{c}", "acc1": out[f"acc1_c{c}"],
                         "acc10": out[f"acc10_c{c}"],
                         "mean_flops": table.flops_at(c), "params": params})
    else:
        policy = load_policy(_require(p["policy"], "train-selector"))
        gallery = GalleryStore.load(_require(p["gallery"], "distill"))
        out = evaluate_selector(policy, student, test, gallery, table,
                                t_max=cfg.t_max, scope=category_of)
        params = count_params(default_student(cfg.embed_dim)) \
            + sum(q.numel() for q in policy.parameters())
        rows.append({"mode": "selector", "acc1": out["acc1"],
                     "acc10": out["acc10"], "mean_flops": out["mean_flops"],
                     "params": params, "mean_canvas": out["mean_canvas"]})
    write_csv(cfg.resolved_out() / f"eval_{args.mode}_s{cfg.seed}.csv", rows)
    for row in rows:
        print("  ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                        for k, v in row.items()))
    return 0


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    p = paths(cfg.resolved_out(), cfg.seed)
    _, test, photos = _load_corpus(p)
    student = load_encoder(_require(p["student_kd"], "distill"))
    table = FlopsTable.load(_require(p["table"], "distill"))
    out_png = cfg.resolved_out() / f"sweep_{args.kind}_s{cfg.seed}.png"
    out_csv = cfg.resolved_out() / f"sweep_{args.kind}_s{cfg.seed}.csv"
    rows = []
    if args.kind == "resolution":
        res = evaluate_multi_canvas(student, test, photos, cfg.canvases,
                                    scope=category_of)
        for c in cfg.canvases:
            rows.append({"canvas": c, "acc1": res[f"acc1_c{c}"],
                         "acc10": res[f"acc10_c{c}"],
                         "gflops": table.flops_at(c) / 1e9})
        xs = [r["gflops"] for r in rows]
        ys = [r["acc1"] for r in rows]
        labels = [str(r["canvas"]) for r in rows]
    else:
        train, _ = load_sketches(p["train"])
        gallery = GalleryStore.load(_require(p["gallery"], "distill"))
        for lam_f in LAMBDA_F_GRID:
            policy = CanvasPolicy(CanvasSet(cfg.canvases),
                                  hidden=cfg.policy_hidden)
            policy.reset_parameters(cfg.seed)
            sel_cfg = _selector_cfg(replace(cfg, lam_f=lam_f))
            train_selector(policy, student, train, gallery, table, sel_cfg,
                           seed=cfg.seed, scope=category_of)
            res = evaluate_selector(policy, student, test, gallery, table,
                                    t_max=cfg.t_max, scope=category_of)
            rows.append({"lam_f": lam_f, "acc1": res["acc1"],
                         "acc10": res["acc10"],
                         "gflops": res["mean_flops"] / 1e9,
                         "mean_canvas": res["mean_canvas"]})
        xs = [r["gflops"] for r in rows]
        ys = [r["acc1"] for r in rows]
        labels = [f"{r['lam_f']:.2f}" for r in rows]
    write_csv(out_csv, rows)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(xs, ys, "o-")
    for x, y, lab in zip(xs, ys, labels):
        ax.annotate(lab, (x, y), textcoords="offset points", xytext=(4, 4))
    ax.set_xlabel("mean GFLOPs per query")
    ax.set_ylabel("Acc@1 (%)")
    ax.set_title(f"{args.kind} sweep")
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    print(f"wrote {out_csv} and {out_png}")
    return 0


PUBLISHED = {  # model -> (GFLOPs at 256, MParams, flops tol, param tol)
    "vgg16": (40.18, 14.71, 0.05, 0.02),
    "resnet18": (4.76, 11.18, 0.05, 0.02),
    "mobilenet_v2": (0.83, 2.22, 0.05, 0.02),
}


def cmd_profile(cfg: ExperimentConfig, args) -> int:
    failures = 0
    for name in ("vgg16", "resnet18", "mobilenet_v2"):
        layers = load_reference(name)
        rep = profile_layers(layers, 256)
        print(f"== {name} @256: {rep.total_flops / 1e9:.3f} GFLOPs, "
              f"{rep.total_params / 1e6:.3f} M params")
        if args.verbose:
            print(rep.pretty())
        if args.golden:
            gf, mp, ftol, ptol = PUBLISHED[name]
            ok_f = abs(rep.total_flops / 1e9 - gf) <= ftol * gf
            ok_p = abs(rep.total_params / 1e6 - mp) <= ptol * mp
            status = "pass" if ok_f and ok_p else "FAIL"
            failures += status == "FAIL"
            print(f"   golden {status}: published {gf} GFLOPs / {mp} MParams")
    sel = load_reference("selector")
    rep = profile_layers(sel, 1)
    print(f"== selector @T=100: {rep.total_flops / 1e6:.3f} MFLOPs, "
          f"{rep.total_params} params")
    for spec, label in ((default_teacher(cfg.embed_dim), "teacher"),
                        (default_student(cfg.embed_dim), "student")):
        rep = profile_layers(spec.layers, max(cfg.canvases))
        print(f"== {label} @{max(cfg.canvases)}: "
              f"{rep.total_flops / 1e9:.4f} GFLOPs, {rep.total_params} params")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# Argument parsing.
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="sketchlite",
        description="two-stage efficient sketch retrieval pipeline")
    sub = top.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=str, default=None,
                        help="key=value config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", type=str, default=None,
                        help="output directory (or $SKETCHLITE_OUT)")

    common(sub.add_parser("gen-data", help="write the synthetic corpus"))
    common(sub.add_parser("train-teacher", help="train the full-size encoder"))
    sp = sub.add_parser("distill", help="train the compact encoder")
    common(sp)
    sp.add_argument("--mode", choices=("kd", "no-kd"), default="kd")
    sp = sub.add_parser("train-selector", help="train the canvas policy")
    common(sp)
    sp.add_argument("--lam-f", type=float, default=None,
                    help="compute-saving weight in the reward")
    sp.add_argument("--no-rank", action="store_true",
                    help="ablation: drop the rank term from the reward")
    sp.add_argument("--no-tri", action="store_true",
                    help="ablation: drop the triplet term from the reward")
    sp.add_argument("--tag", type=str, default="",
                    help="suffix for the saved policy artifact")
    sp = sub.add_parser("eval", help="score a trained pipeline")
    common(sp)
    sp.add_argument("--mode", choices=("fixed-canvas", "selector"),
                    default="fixed-canvas")
    sp.add_argument("--canvas", type=int, default=None,
                    help="restrict fixed-canvas mode to one size")
    sp = sub.add_parser("sweep", help="accuracy/compute trade-off curves")
    common(sp)
    sp.add_argument("--kind", choices=("resolution", "lambda_f"),
                    default="resolution")
    sp = sub.add_parser("profile", help="analytical compute/parameter tables")
    common(sp)
    sp.add_argument("--golden", action="store_true",
                    help="check reference backbones against published totals")
    sp.add_argument("--verbose", action="store_true",
                    help="print per-layer tables")
    return top


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "train-selector": cmd_train_selector,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "profile": cmd_profile,
}


def main(argv=None) -> int:
    torch.set_num_threads(1)
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "out_dir": args.out}
    if getattr(args, "lam_f", None) is not None:
        overrides["lam_f"] = args.lam_f
    if getattr(args, "no_rank", False):
        overrides["use_rank"] = False
    if getattr(args, "no_tri", False):
        overrides["use_tri"] = False
    cfg = load_config(args.config, overrides)
    np.random.seed(cfg.seed)
    torch.manual_seed(cfg.seed)
    try:
        return COMMANDS[args.command](cfg, args)
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
