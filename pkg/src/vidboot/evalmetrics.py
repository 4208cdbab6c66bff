"""Depth, segmentation and ego-motion evaluation.

Depth metrics follow the usual monocular-depth conventions with optional
median scaling; segmentation uses per-class intersection-over-union with
void pixels ignored; odometry uses a snippet-level translation error after
least-squares scale alignment.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError
from .losses import VOID

PRED_CLAMP = (0.1, 100.0)
SCALE_MODES = ("median", "none")


@dataclass
class DepthEvalReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    scale: float
    scale_mode: str = "median"
    pixel_count: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SegEvalReport:
    """``per_class[c]`` is an IoU in [0, 1] or None for classes absent from both maps."""

    per_class: list
    mean_iou: float
    pixel_count: int = 0

    def as_dict(self) -> dict:
        return {
            "per_class": ["n/a" if v is None else v for v in self.per_class],
            "mean_iou": self.mean_iou,
            "pixel_count": self.pixel_count,
        }


def depth_metrics(pred, gt, valid=None, scale_mode: str = "median") -> DepthEvalReport:
    if scale_mode not in SCALE_MODES:
        raise ContractError(f"scale_mode must be one of {SCALE_MODES}")
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ContractError(f"pred {pred.shape} and gt {gt.shape} differ in shape")
    mask = np.ones(gt.shape, bool) if valid is None else np.asarray(valid, bool)
    if not mask.any():
        raise ContractError("empty valid mask")
    g = gt[mask]
    if np.any(g <= 0):
        raise ContractError("ground-truth depth must be positive on the valid mask")
    p = np.clip(pred[mask], *PRED_CLAMP)
    scale = float(np.median(g / p))
    if scale_mode == "median":
        p = p * scale
    err = p - g
    ratio = np.maximum(p / g, g / p)
    return DepthEvalReport(
        abs_rel=float(np.mean(np.abs(err) / g)),
        sq_rel=float(np.mean(err**2 / g)),
        rmse=float(np.sqrt(np.mean(err**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25**2)),
        delta3=float(np.mean(ratio < 1.25**3)),
        scale=scale,
        scale_mode=scale_mode,
        pixel_count=int(g.size),
    )


def confusion(pred, gt, num_classes: int, void: int = VOID) -> np.ndarray:
    """Confusion matrix [gt, pred] over non-void pixels.

    Predictions outside ``[0, C)`` count as wrong for every class (they add
    to FN of the gt class only).
    """
    pred = np.asarray(pred).astype(np.int64).ravel()
    gt = np.asarray(gt).astype(np.int64).ravel()
    if pred.shape != gt.shape:
        raise ContractError("pred and gt label maps differ in shape")
    keep = gt != void
    pred, gt = pred[keep], gt[keep]
    if np.any((gt < 0) | (gt >= num_classes)):
        raise ContractError("gt labels outside [0, C) and not void")
    pred = np.where((pred >= 0) & (pred < num_classes), pred, num_classes)
    cm = np.bincount(gt * (num_classes + 1) + pred, minlength=num_classes * (num_classes + 1))
    return cm.reshape(num_classes, num_classes + 1)[:, :num_classes]


def iou_from_confusion(cm: np.ndarray, pixel_count: int | None = None) -> SegEvalReport:
    tp = np.diag(cm).astype(np.float64)
    fn = cm.sum(axis=1) - tp
    fp = cm.sum(axis=0) - tp
    per_class = []
    for c in range(cm.shape[0]):
        denom = tp[c] + fp[c] + fn[c]
        per_class.append(None if denom == 0 else float(tp[c] / denom))
    present = [v for v in per_class if v is not None]
    mean = float(np.mean(present)) if present else float("nan")
    n = int(cm.sum()) if pixel_count is None else pixel_count
    return SegEvalReport(per_class, mean, n)


def iou(pred, gt, num_classes: int, void: int = VOID) -> SegEvalReport:
    """Per-class IoU = TP / (TP + FP + FN) over non-void pixels."""
    pred_a = np.asarray(pred)
    gt_a = np.asarray(gt)
    cm = confusion(pred_a, gt_a, num_classes, void)
    # A prediction outside [0, C) still counts as a gt pixel for the FN tally.
    n = int(np.sum(gt_a != void))
    return iou_from_confusion(cm, n)


def _centers(traj) -> np.ndarray:
    """Camera centres of world-to-camera 4x4 poses, re-anchored at the first frame."""
    mats = [np.asarray(m, dtype=np.float64) for m in traj]
    for m in mats:
        if m.shape != (4, 4):
            raise ContractError("trajectory poses must be 4x4 matrices")
    first = mats[0]
    rel = [m @ np.linalg.inv(first) for m in mats]  # pose of frame i relative to the anchor
    return np.array([-r[:3, :3].T @ r[:3, 3] for r in rel])


def ate(pred_traj, gt_traj) -> float:
    """Mean translation error after least-squares scale alignment of the centres.

    Both trajectories are lists of world-to-camera 4x4 matrices for the same
    snippet; they are re-anchored at the first frame, so only relative motion
    matters.  The scale ``s = <g, p> / <p, p>`` minimises ``sum |s p - g|^2``.
    """
    if len(pred_traj) != len(gt_traj):
        raise ContractError(f"trajectory lengths differ: {len(pred_traj)} vs {len(gt_traj)}")
    if len(gt_traj) == 0:
        raise ContractError("empty trajectory")
    p = _centers(pred_traj)
    g = _centers(gt_traj)
    pp = float(np.sum(p * p))
    s = float(np.sum(g * p)) / pp if pp > 0 else 0.0
    return float(np.mean(np.linalg.norm(s * p - g, axis=1)))


# ---------------------------------------------------------------------------
# reports


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    return obj


def write_report(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")
    return path


def format_depth_table(report: DepthEvalReport) -> str:
    cols = ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3", "scale")
    head = " | ".join(f"{c:>8}" for c in cols)
    row = " | ".join(f"{getattr(report, c):8.4f}" for c in cols)
    return f"{head}\n{'-' * len(head)}\n{row}"


def format_seg_table(report: SegEvalReport, class_names=None) -> str:
    names = class_names or [f"class{c}" for c in range(len(report.per_class))]
    lines = [f"{'class':>10} | {'IoU':>7}", "-" * 20]
    for n, v in zip(names, report.per_class):
        lines.append(f"{n:>10} | {'n/a' if v is None else f'{100 * v:6.2f}%':>7}")
    lines.append(f"{'mean':>10} | {100 * report.mean_iou:6.2f}%")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# model-level evaluation over a sequence


def predict_depth(params, image_chw: np.ndarray) -> np.ndarray:
    from .networks import depth_forward

    depths, _ = depth_forward(params.depth, image_chw)
    return depths[0].data


def predict_labels(params, image_chw: np.ndarray) -> np.ndarray:
    from .networks import seg_logits

    return seg_logits(params.seg, image_chw)[0].data.argmax(axis=0)


def predict_outlier(params, image_chw: np.ndarray) -> np.ndarray:
    from .networks import depth_forward

    _, masks = depth_forward(params.depth, image_chw)
    return masks[0].data


def _gt_frames(sequence, kind: str):
    idx = [i for i, f in enumerate(sequence.frames) if getattr(f, kind) is not None]
    if not idx:
        raise ContractError(f"sequence has no frames with ground-truth {kind}")
    return idx


def evaluate_depth(params, sequence, scale_mode: str = "median", frames=None) -> dict:
    """Per-frame depth metrics averaged over frames that carry ground truth.

    Each frame gets its own median scale in ``median`` mode; the reported
    ``scale`` is the mean of the per-frame ratios in both modes.
    """
    from .synthdata import image_to_chw

    idx = list(frames) if frames is not None else _gt_frames(sequence, "depth")
    reports = []
    for i in idx:
        f = sequence.frames[i]
        pred = predict_depth(params, image_to_chw(f.image))
        reports.append(depth_metrics(pred, f.depth, f.depth > 0, scale_mode))
    keys = ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3", "scale")
    mean = DepthEvalReport(
        **{k: float(np.mean([getattr(r, k) for r in reports])) for k in keys},
        scale_mode=scale_mode,
        pixel_count=int(sum(r.pixel_count for r in reports)),
    )
    return {"summary": mean, "frames": idx, "per_frame": reports}


def evaluate_seg(params, sequence, frames=None) -> SegEvalReport:
    """IoU from a confusion matrix accumulated over all labeled frames."""
    from .synthdata import image_to_chw

    idx = list(frames) if frames is not None else _gt_frames(sequence, "labels")
    C = sequence.num_classes
    cm = np.zeros((C, C), dtype=np.int64)
    for i in idx:
        f = sequence.frames[i]
        cm += confusion(predict_labels(params, image_to_chw(f.image)), f.labels, C)
    return iou_from_confusion(cm)


def evaluate_odometry(params, sequence, stride: int = 1, skip: int = 1) -> dict:
    """Mean snippet ATE of the ego-motion network against ground-truth poses."""
    from .networks import pose_forward
    from .synthdata import image_to_chw, snippet_indices

    if params.pose is None:
        raise ContractError("checkpoint has no ego-motion parameters")
    if any(f.pose is None for f in sequence.frames):
        raise ContractError("sequence has no ground-truth poses")
    errors = []
    for a, b, c in snippet_indices(len(sequence.frames), stride, skip):
        imgs = [image_to_chw(sequence.frames[i].image) for i in (a, b, c)]
        poses = pose_forward(params.pose, imgs)
        # Predicted world-to-camera poses with frame a as the world frame.
        p_b = poses[(0, 1)].matrix()
        p_c = poses[(1, 2)].matrix() @ p_b
        pred = [np.eye(4), p_b, p_c]
        gt = [sequence.frames[i].pose for i in (a, b, c)]
        errors.append(ate(pred, gt))
    return {"ate": float(np.mean(errors)), "snippets": len(errors), "per_snippet": errors}


def outlier_contrast(params, sequence, frames=None) -> dict:
    """Mean outlier weight over moving-object pixels versus static pixels."""
    from .synthdata import image_to_chw

    idx = list(frames) if frames is not None else [i for i, f in enumerate(sequence.frames) if f.dynamic is not None]
    dyn_vals, static_vals = [], []
    for i in idx:
        f = sequence.frames[i]
        o = predict_outlier(params, image_to_chw(f.image))
        dyn_vals.append(o[f.dynamic])
        static_vals.append(o[~f.dynamic])
    d = np.concatenate(dyn_vals)
    s = np.concatenate(static_vals)
    if d.size == 0:
        raise ContractError("no moving-object pixels in the evaluated frames")
    return {"dynamic_mean": float(d.mean()), "static_mean": float(s.mean()),
            "dynamic_pixels": int(d.size), "static_pixels": int(s.size)}
