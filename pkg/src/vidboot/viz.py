"""Image panels and matplotlib report figures.

Panels are assembled directly as uint8 arrays so that their bytes depend
only on the inputs; figures go through matplotlib's Agg backend.
"""

from __future__ import annotations

import colorsys
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib import colormaps  # noqa: E402
from PIL import Image  # noqa: E402

from .errors import ContractError  # noqa: E402
from .losses import TERMS, VOID  # noqa: E402

VOID_COLOR = (0, 0, 0)
MISSING_COLOR = (96, 96, 96)


def palette(num_classes: int) -> np.ndarray:
    """``[C, 3]`` uint8 colours, pairwise distinct and never equal to the void colour."""
    if num_classes < 1:
        raise ContractError("palette needs at least one class")
    base = [tuple(int(round(255 * c)) for c in colormaps["tab10"](i)[:3]) for i in range(10)]
    colors = base[:num_classes]
    # Beyond ten classes walk the hue circle by the golden ratio.
    k = 0
    while len(colors) < num_classes:
        h = (0.13 + 0.618033988749895 * k) % 1.0
        s = 0.55 + 0.35 * ((k // 7) % 2)
        v = 0.95 - 0.25 * ((k // 3) % 2)
        rgb = tuple(int(round(255 * c)) for c in colorsys.hsv_to_rgb(h, s, v))
        if rgb not in colors and rgb != VOID_COLOR and rgb != MISSING_COLOR:
            colors.append(rgb)
        k += 1
    return np.array(colors, dtype=np.uint8)


def colorize_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    pal = palette(num_classes)
    out = np.zeros(labels.shape + (3,), dtype=np.uint8)
    ok = (labels >= 0) & (labels < num_classes)
    out[ok] = pal[labels[ok].astype(np.int64)]
    out[labels == VOID] = VOID_COLOR
    return out


def colorize_depth(depth: np.ndarray, lo: float, hi: float, cmap: str = "magma") -> np.ndarray:
    """Inverse-depth colouring, near is bright; ``lo``/``hi`` are the depth bounds."""
    if not 0 < lo < hi:
        raise ContractError("depth colour range must satisfy 0 < lo < hi")
    inv = 1.0 / np.clip(np.asarray(depth, dtype=np.float64), lo, hi)
    t = (inv - 1.0 / hi) / (1.0 / lo - 1.0 / hi)
    rgba = colormaps[cmap](t)
    return np.round(rgba[..., :3] * 255).astype(np.uint8)


def _upscale(img: np.ndarray, zoom: int) -> np.ndarray:
    return np.repeat(np.repeat(img, zoom, axis=0), zoom, axis=1)


def three_panel(input_rgb: np.ndarray, gt_rgb: np.ndarray | None, pred_rgb: np.ndarray, zoom: int = 4) -> np.ndarray:
    """Side-by-side ``input | gt | prediction``; a missing gt panel is flat grey."""
    if zoom < 1:
        raise ContractError("zoom must be >= 1")
    if gt_rgb is None:
        gt_rgb = np.empty_like(input_rgb)
        gt_rgb[...] = MISSING_COLOR
    shapes = {input_rgb.shape, gt_rgb.shape, pred_rgb.shape}
    if len(shapes) != 1:
        raise ContractError(f"panel shapes differ: {sorted(shapes)}")
    row = np.concatenate([input_rgb, gt_rgb, pred_rgb], axis=1).astype(np.uint8)
    return _upscale(row, zoom)


def save_png(path, image: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8)).save(path, format="PNG", optimize=False)
    return path


def render_frame_panels(params, frame, num_classes: int, zoom: int = 4) -> dict[str, np.ndarray]:
    """Depth and segmentation panels for one frame of a sequence."""
    from .evalmetrics import predict_depth, predict_labels
    from .synthdata import image_to_chw

    chw = image_to_chw(frame.image)
    pred_d = predict_depth(params, chw)
    if frame.depth is not None:
        lo, hi = float(frame.depth.min()), float(frame.depth.max())
    else:
        lo, hi = float(pred_d.min()), float(pred_d.max())
    lo, hi = max(lo, 1e-3), max(hi, max(lo, 1e-3) * 1.01)
    gt_d = colorize_depth(frame.depth, lo, hi) if frame.depth is not None else None
    depth = three_panel(frame.image, gt_d, colorize_depth(pred_d, lo, hi), zoom)
    pred_s = predict_labels(params, chw)
    gt_s = colorize_labels(frame.labels, num_classes) if frame.labels is not None else None
    seg = three_panel(frame.image, gt_s, colorize_labels(pred_s, num_classes), zoom)
    return {"depth": depth, "seg": seg}


# ---------------------------------------------------------------------------
# report figures


def read_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def plot_training_log(records: list[dict], path, title: str | None = None) -> Path:
    """Total and per-term weighted losses against step, one panel each."""
    if not records:
        raise ContractError("training log is empty")
    steps = np.array([r["step"] for r in records])
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax0.plot(steps, [r["total"] for r in records], lw=1.2, color="k")
    ax0.set_xlabel("step")
    ax0.set_ylabel("total loss")
    keys = [k for k in (*TERMS, "depth_l1", "seg_ce") if any(k in r.get("weighted", {}) for r in records)]
    for k in keys:
        vals = np.array([r.get("weighted", {}).get(k, np.nan) for r in records], dtype=float)
        if np.all(np.nan_to_num(vals) == 0):
            continue
        ax1.plot(steps, vals, lw=1.0, label=k)
    ax1.set_xlabel("step")
    ax1.set_ylabel("weighted term")
    if ax1.lines:
        ax1.legend(fontsize=7, frameon=False, ncol=2)
    for ax in (ax0, ax1):
        ax.spines[["top", "right"]].set_visible(False)
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_benchmark(results: list[dict], path) -> Path:
    """Per-seed held-out Abs Rel (median and unscaled) and mean IoU for each arm."""
    arms = [a for a in ("supervised", "bootstrapped", "selfonly") if any(a in r for r in results)]
    seeds = [r["seed"] for r in results]
    x = np.arange(len(seeds))
    width = 0.8 / max(len(arms), 1)
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
    panels = (("Abs Rel (median scaled)", lambda m: m["median"]["abs_rel"]),
              ("Abs Rel (unscaled)", lambda m: m["none"]["abs_rel"]),
              ("mean IoU", lambda m: m["miou"]))
    for ax, (label, get) in zip(axes, panels):
        for j, arm in enumerate(arms):
            vals = [get(r[arm]) if arm in r else np.nan for r in results]
            ax.bar(x + (j - (len(arms) - 1) / 2) * width, vals, width, label=arm)
        ax.set_xticks(x, [str(s) for s in seeds])
        ax.set_xlabel("seed")
        ax.set_title(label, fontsize=10)
        ax.spines[["top", "right"]].set_visible(False)
    axes[0].legend(fontsize=7, frameon=False)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
