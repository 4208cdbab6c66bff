"""Seeded desk-scale benchmark comparing supervised-only, bootstrapped and self-only training.

Each seed renders a 400-frame training video of one scene with ground truth
kept only on every 100th frame, plus a held-out trajectory through the same
scene for evaluation.  The three training arms share the supervised
checkpoint where applicable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .evalmetrics import evaluate_depth, evaluate_seg, outlier_contrast
from .losses import LossWeights
from .synthdata import VideoView, generate_sequence, sparse_label_view
from .training import TrainConfig, train_selfonly, train_selfsup, train_supervised

# Loss weights used for the desk-scale benchmark.  Priors, smoothness and the
# mask term are sums over pixels while the consistency terms are means, so
# the same-domain preset is rescaled by the pixel count of a 48x48 training
# crop so that every term is a per-pixel average.
CROP_PIXELS = 48 * 48
BENCH_WEIGHTS = LossWeights(1.0, 0.15, 0.8, 0.025 / CROP_PIXELS, 0.08 / CROP_PIXELS, 0.08 / CROP_PIXELS,
                            1.5 / CROP_PIXELS)


@dataclass
class BenchSpec:
    train_frames: int = 400
    label_stride: int = 100
    heldout_frames: int = 60
    heldout_every: int = 3
    sup_steps: int = 400
    sup_lr: float = 3e-3
    selfsup_steps: int = 250
    pose_warmup_steps: int = 100
    pose_lr: float = 3e-3
    selfonly_steps: int = 150
    batch_size: int = 4
    snippet_batch: int = 2
    snippet_stride: int = 1
    snippet_skip: int = 10
    weights: LossWeights = field(default_factory=lambda: BENCH_WEIGHTS)
    selfsup_lr: float = 2e-4
    selfonly_lr: float = 1e-3
    dynamic: bool = False


def make_benchmark_data(seed: int, spec: BenchSpec):
    train = generate_sequence(seed, spec.train_frames, scene_seed=seed, dynamic=spec.dynamic)
    # Held-out: a different trajectory through the very same scene.
    for k in range(1, 50):
        try:
            heldout = generate_sequence(seed + 7919 * k, spec.heldout_frames, scene=train.scene, dynamic=spec.dynamic)
            break
        except RuntimeError:
            continue
    else:
        raise RuntimeError(f"no valid held-out trajectory for seed {seed}")
    return sparse_label_view(train, spec.label_stride), VideoView(train), heldout


def run_seed(seed: int, spec: BenchSpec | None = None, arms=("supervised", "bootstrapped", "selfonly"), log=print):
    spec = spec or BenchSpec()
    t0 = time.perf_counter()
    labeled, video, heldout = make_benchmark_data(seed, spec)
    eval_idx = list(range(0, len(heldout.frames), spec.heldout_every))
    out = {"seed": seed, "timing": {"data": time.perf_counter() - t0}}

    # The outlier mask weights the training video itself, so its contrast is
    # measured on training frames in which the moving object is visible.
    dyn_idx = [i for i, f in enumerate(labeled.frames)
               if i % 5 == 0 and f.dynamic is not None and f.dynamic.any()]

    def evaluate(name, params):
        med = evaluate_depth(params, heldout, "median", eval_idx)["summary"]
        raw = evaluate_depth(params, heldout, "none", eval_idx)["summary"]
        seg = evaluate_seg(params, heldout, eval_idx)
        res = {"median": med.as_dict(), "none": raw.as_dict(), "miou": seg.mean_iou}
        if spec.dynamic:
            res["outlier"] = outlier_contrast(params, labeled, dyn_idx)
        out[name] = res
        log(f"seed {seed} {name}: absrel {med.abs_rel:.4f} raw {raw.abs_rel:.4f} scale {med.scale:.3f} "
            f"miou {100 * seg.mean_iou:.2f}" + (f" outlier dyn {res['outlier']['dynamic_mean']:.3f} "
                                                 f"static {res['outlier']['static_mean']:.3f}" if spec.dynamic else ""))

    t = time.perf_counter()
    sup_cfg = TrainConfig(stage="supervised", steps=spec.sup_steps, batch_size=spec.batch_size, seed=seed,
                          lr=spec.sup_lr)
    sup, _ = train_supervised(sup_cfg, labeled)
    out["timing"]["supervised"] = time.perf_counter() - t
    evaluate("supervised", sup.params)
    out["checkpoints"] = {"supervised": sup}

    base = TrainConfig(stage="selfsup", steps=spec.selfsup_steps, batch_size=spec.snippet_batch, seed=seed,
                       snippet_stride=spec.snippet_stride, snippet_skip=spec.snippet_skip,
                       weights=spec.weights, lr=spec.selfsup_lr,
                       pose_lr=spec.pose_lr, pose_warmup_steps=spec.pose_warmup_steps)
    if "bootstrapped" in arms:
        t = time.perf_counter()
        boot, _ = train_selfsup(base, sup, video=video)
        out["timing"]["bootstrapped"] = time.perf_counter() - t
        evaluate("bootstrapped", boot.params)
        out["checkpoints"]["bootstrapped"] = boot
    if "selfonly" in arms:
        t = time.perf_counter()
        only, _ = train_selfonly(replace(base, steps=spec.selfonly_steps, lr=spec.selfonly_lr, pose_lr=spec.selfonly_lr,
                                               pose_warmup_steps=0), video=video)
        out["timing"]["selfonly"] = time.perf_counter() - t
        evaluate("selfonly", only.params)
        out["checkpoints"]["selfonly"] = only
    out["timing"]["total"] = time.perf_counter() - t0
    return out


def seed_checks(r: dict, miou_margin: float = 0.005, mask_margin: float = 0.1, scale_range=(0.8, 1.25)) -> dict:
    """Per-seed trend checks on one ``run_seed`` result (without checkpoints)."""
    out = {}
    if "bootstrapped" in r:
        sup, boot = r["supervised"], r["bootstrapped"]
        depth = {
            "absrel_boot_lt_sup": boot["median"]["abs_rel"] < sup["median"]["abs_rel"],
            "boot_scale_in_range": scale_range[0] <= boot["median"]["scale"] <= scale_range[1],
        }
        if "selfonly" in r:
            depth["raw_boot_lt_selfonly"] = boot["none"]["abs_rel"] < r["selfonly"]["none"]["abs_rel"]
        out["depth"] = dict(depth, ok=all(depth.values()))
        out["seg"] = {"miou_gain": boot["miou"] - sup["miou"], "ok": boot["miou"] - sup["miou"] >= miou_margin}
        if "outlier" in boot:
            o = boot["outlier"]
            gap = o["static_mean"] - o["dynamic_mean"]
            out["outlier"] = {"gap": gap, "ok": gap >= mask_margin}
    return out


def summarize(results: list[dict]) -> dict:
    checks = [seed_checks(r) for r in results]
    summary = {"per_seed": {str(r["seed"]): c for r, c in zip(results, checks)}}
    for key in ("depth", "seg", "outlier"):
        oks = [c[key]["ok"] for c in checks if key in c]
        if oks:
            summary[key] = {"passed": int(sum(oks)), "of": len(oks)}
    summary["total_seconds"] = float(sum(r["timing"]["total"] for r in results))
    return summary
