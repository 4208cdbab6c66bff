"""Supervised and self-supervised losses.

Consistency terms (photometric, SSIM, semantic) are averaged over the valid
pixel set; prior terms (smoothness, outlier regularisation, depth and
semantic priors) are summed over pixels.  :func:`total_loss` combines them
over a 3-frame snippet, every scale and both directions of each consecutive
frame pair.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ContractError
from .geometry import Intrinsics, PoseSE3, WarpField, bilinear_sample, project

log = logging.getLogger(__name__)

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
LOG_FLOOR = 1e-7
VOID = 255

TERMS = ("pho", "ssim", "sc", "sm", "om", "D", "S")


@dataclass(frozen=True)
class LossWeights:
    """One weight per loss term, in the order pho, ssim, sc, sm, om, D, S."""

    w_pho: float = 1.0
    w_ssim: float = 0.15
    w_sc: float = 0.8
    w_sm: float = 0.025
    w_om: float = 0.08
    w_D: float = 0.08
    w_S: float = 1.5

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) >= 0:
                raise ContractError(f"loss weight {f.name} must be >= 0")

    def as_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    def for_term(self, term: str) -> float:
        return getattr(self, "w_" + term)

    @classmethod
    def from_sequence(cls, values) -> "LossWeights":
        values = list(values)
        if len(values) != 7:
            raise ContractError("expected 7 loss weights")
        return cls(*map(float, values))

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass
class LossReport:
    total: Tensor
    terms: dict[str, float] = field(default_factory=dict)
    weighted: dict[str, float] = field(default_factory=dict)
    valid_pixel_count: int = 0
    warnings: list[str] = field(default_factory=list)

    def as_record(self) -> dict:
        return {
            "total": float(self.total.data),
            "terms": dict(self.terms),
            "weighted": dict(self.weighted),
            "valid_pixel_count": int(self.valid_pixel_count),
        }


def _check_mask(mask: Tensor, shape) -> Tensor:
    mask = as_tensor(mask)
    if mask.shape != tuple(shape):
        raise ContractError(f"mask shape {mask.shape} != {tuple(shape)}")
    return mask


def _masked_mean(per_pixel: Tensor, mask: Tensor, valid: np.ndarray) -> Tensor:
    n = int(valid.sum())
    if n == 0:
        return Tensor(0.0)
    weighted = ad.mul(ad.mul(per_pixel, mask), valid.astype(np.float64))
    return ad.mul(ad.tsum(weighted), 1.0 / n)


def photometric_loss(img_t, img_tp, warp: WarpField, outlier) -> Tensor:
    """Mean over valid pixels of O(p) * |I_t'(p') - I_t(p)|, channel-averaged."""
    img_t, img_tp = as_tensor(img_t), as_tensor(img_tp)
    if img_t.shape != img_tp.shape or img_t.shape[1:] != warp.shape:
        raise ContractError("image and warp shapes disagree")
    outlier = _check_mask(outlier, warp.shape)
    warped = bilinear_sample(img_tp, warp)
    diff = ad.tmean(ad.tabs(ad.sub(warped, img_t)), axis=0)
    return _masked_mean(diff, outlier, warp.valid)


def ssim_valid_mask(valid: np.ndarray) -> np.ndarray:
    """Interior pixels whose whole 3x3 neighbourhood warps validly, shape [H-2,W-2]."""
    h, w = valid.shape
    out = np.ones((h - 2, w - 2), dtype=bool)
    for i in range(3):
        for j in range(3):
            out &= valid[i : i + h - 2, j : j + w - 2]
    return out


def ssim_map(x, y) -> Tensor:
    """Per-pixel SSIM over 3x3 windows of two [C,H,W] images -> [C,H-2,W-2]."""
    x, y = as_tensor(x), as_tensor(y)
    mu_x = ad.box_filter3(x)
    mu_y = ad.box_filter3(y)
    mu_x2 = ad.square(mu_x)
    mu_y2 = ad.square(mu_y)
    mu_xy = ad.mul(mu_x, mu_y)
    sig_x = ad.sub(ad.box_filter3(ad.square(x)), mu_x2)
    sig_y = ad.sub(ad.box_filter3(ad.square(y)), mu_y2)
    sig_xy = ad.sub(ad.box_filter3(ad.mul(x, y)), mu_xy)
    num = ad.mul(ad.add(ad.mul(mu_xy, 2.0), SSIM_C1), ad.add(ad.mul(sig_xy, 2.0), SSIM_C2))
    den = ad.mul(ad.add(ad.add(mu_x2, mu_y2), SSIM_C1), ad.add(ad.add(sig_x, sig_y), SSIM_C2))
    return ad.div(num, den)


def ssim_loss(img_t, img_tp, warp: WarpField, outlier) -> Tensor:
    """Mean over interior valid pixels of O(p) * (1 - SSIM(p', p))."""
    img_t, img_tp = as_tensor(img_t), as_tensor(img_tp)
    if img_t.shape != img_tp.shape or img_t.shape[1:] != warp.shape:
        raise ContractError("image and warp shapes disagree")
    outlier = _check_mask(outlier, warp.shape)
    h, w = warp.shape
    if h < 3 or w < 3:
        return Tensor(0.0)
    warped = bilinear_sample(img_tp, warp)
    dissim = ad.tmean(ad.sub(1.0, ssim_map(warped, img_t)), axis=0)
    inner = ad.getitem(outlier, (slice(1, h - 1), slice(1, w - 1)))
    return _masked_mean(dissim, inner, ssim_valid_mask(warp.valid))


def semantic_consistency_loss(seg_t, seg_tp, warp: WarpField, outlier) -> Tensor:
    """Mean over valid pixels of O(p) * ||S_t'(p') - S_t(p)||_1.

    The warp and the outlier mask enter as constants, so only the
    segmentation maps receive gradient.
    """
    seg_t, seg_tp = as_tensor(seg_t), as_tensor(seg_tp)
    if seg_t.shape != seg_tp.shape or seg_t.shape[1:] != warp.shape:
        raise ContractError("segmentation and warp shapes disagree")
    outlier = _check_mask(outlier, warp.shape).detach()
    warped = bilinear_sample(seg_tp, warp.detach())
    diff = ad.tsum(ad.tabs(ad.sub(warped, seg_t)), axis=0)
    return _masked_mean(diff, outlier, warp.valid)


def _image_grads(img: np.ndarray):
    img = img if img.ndim == 3 else img[None]
    gx = np.abs(img[:, :, 1:] - img[:, :, :-1]).mean(axis=0)
    gy = np.abs(img[:, 1:, :] - img[:, :-1, :]).mean(axis=0)
    return np.exp(-gx), np.exp(-gy)


def smoothness_loss(depth, image) -> Tensor:
    """Edge-aware smoothness of mean-normalised depth (forward differences)."""
    depth = as_tensor(depth)
    img = as_tensor(image).data
    if depth.ndim != 2:
        raise ContractError(f"depth must be [H,W], got {depth.shape}")
    if np.any(depth.data <= 0):
        raise ContractError("smoothness_loss requires positive depth")
    if img.shape[-2:] != depth.shape:
        raise ContractError(f"image {img.shape} does not match depth {depth.shape}")
    h, w = depth.shape
    norm = ad.div(depth, ad.tmean(depth))
    ex, ey = _image_grads(img)
    total = Tensor(0.0)
    if w > 1:
        dx = ad.sub(ad.getitem(norm, (slice(None), slice(1, None))), ad.getitem(norm, (slice(None), slice(None, -1))))
        total = ad.add(total, ad.tsum(ad.mul(ad.tabs(dx), ex)))
    if h > 1:
        dy = ad.sub(ad.getitem(norm, (slice(1, None), slice(None))), ad.getitem(norm, (slice(None, -1), slice(None))))
        total = ad.add(total, ad.tsum(ad.mul(ad.tabs(dy), ey)))
    return total


def outlier_mask_reg(outlier) -> Tensor:
    """-sum log O, with O floored at 1e-7."""
    return ad.neg(ad.tsum(ad.tlog(ad.clip_min(as_tensor(outlier), LOG_FLOOR))))


def depth_prior_loss(depth, depth_pre) -> Tensor:
    depth = as_tensor(depth)
    depth_pre = as_tensor(depth_pre).detach()
    if depth.shape != depth_pre.shape:
        raise ContractError(f"prior shape mismatch {depth.shape} vs {depth_pre.shape}")
    return ad.tsum(ad.tabs(ad.sub(depth, depth_pre)))


def semantic_prior_loss(seg, seg_pre) -> Tensor:
    return depth_prior_loss(seg, seg_pre)


def supervised_seg_loss(logits, labels: np.ndarray, void: int = VOID) -> Tensor:
    """Mean cross-entropy over non-void pixels (0 when every pixel is void)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    c = logits.shape[0]
    if labels.shape != logits.shape[1:]:
        raise ContractError(f"labels {labels.shape} do not match logits {logits.shape}")
    keep = labels != void
    if np.any(labels[keep] >= c) or np.any(labels[keep] < 0):
        raise ContractError("label id out of range")
    n = int(keep.sum())
    if n == 0:
        return Tensor(0.0)
    onehot = np.zeros(logits.shape)
    ii, jj = np.nonzero(keep)
    onehot[labels[ii, jj], ii, jj] = 1.0
    logp = ad.log_softmax_channels(logits)
    return ad.mul(ad.tsum(ad.mul(logp, onehot)), -1.0 / n)


def supervised_depth_loss(depth, depth_gt: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean |D - D_gt| over masked pixels (0 when the mask is empty)."""
    depth = as_tensor(depth)
    gt = np.asarray(depth_gt, dtype=np.float64)
    if gt.shape != depth.shape:
        raise ContractError(f"gt {gt.shape} does not match prediction {depth.shape}")
    mask = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        return Tensor(0.0)
    diff = ad.tabs(ad.sub(depth, np.where(mask, gt, 0.0)))
    return ad.mul(ad.tsum(ad.mul(diff, mask.astype(np.float64))), 1.0 / n)


# ---------------------------------------------------------------------------
# snippet total


PAIRS = ((0, 1), (1, 0), (1, 2), (2, 1))


@dataclass
class FramePrediction:
    """Multi-scale outputs for one frame (finest scale first)."""

    depth: list
    outlier: list
    seg: list | None = None


def image_pyramid(image: np.ndarray, levels: int) -> list[np.ndarray]:
    out = [np.asarray(image, dtype=np.float64)]
    for _ in range(levels - 1):
        out.append(ad.avg_pool2x2(out[-1]).data)
    return out


def total_loss(
    images,
    intrinsics: Intrinsics,
    preds: list[FramePrediction],
    poses: dict,
    weights: LossWeights,
    frozen: list[FramePrediction] | None = None,
) -> LossReport:
    """Snippet loss summed over scales, frames and consecutive-pair directions.

    ``images`` holds the three frames ([C,H,W] arrays), ``poses`` maps a frame
    index pair ``(t, t')`` to ``PoseSE3``.  Terms whose inputs are missing
    (no segmentation, no frozen predictions) are omitted from the report.
    Zero-weighted terms are evaluated for the report but kept out of the
    differentiated total.
    """
    if len(images) != 3 or len(preds) != 3:
        raise ContractError("total_loss expects a 3-frame snippet")
    n_depth = len(preds[0].depth)
    n_seg = len(preds[0].seg) if preds[0].seg is not None else 0
    for p in preds:
        if len(p.depth) != n_depth or len(p.outlier) != n_depth:
            raise ContractError("missing depth/outlier scale level")
        if n_seg and (p.seg is None or len(p.seg) != n_seg):
            raise ContractError("missing segmentation scale level")
    if n_seg > n_depth:
        raise ContractError("segmentation has more scales than depth")
    if frozen is not None:
        for f in frozen:
            if len(f.depth) != n_depth or (n_seg and (f.seg is None or len(f.seg) != n_seg)):
                raise ContractError("frozen predictions miss a scale level")
    for pair in PAIRS:
        if pair not in poses:
            raise ContractError(f"missing pose for pair {pair}")

    pyramids = [image_pyramid(img, n_depth) for img in images]
    acc: dict[str, list[Tensor]] = {t: [] for t in TERMS}
    valid_count = 0
    for s in range(n_depth):
        K = intrinsics.downscaled(s)
        for t in range(3):
            d = preds[t].depth[s]
            o = preds[t].outlier[s]
            acc["sm"].append(smoothness_loss(d, pyramids[t][s]))
            acc["om"].append(outlier_mask_reg(o))
            if frozen is not None:
                acc["D"].append(depth_prior_loss(d, frozen[t].depth[s]))
                if s < n_seg:
                    acc["S"].append(semantic_prior_loss(preds[t].seg[s], frozen[t].seg[s]))
        for t, tp in PAIRS:
            warp = project(preds[t].depth[s], poses[(t, tp)], K)
            valid_count += int(warp.valid.sum())
            o = preds[t].outlier[s]
            acc["pho"].append(photometric_loss(pyramids[t][s], pyramids[tp][s], warp, o))
            acc["ssim"].append(ssim_loss(pyramids[t][s], pyramids[tp][s], warp, o))
            if s < n_seg:
                acc["sc"].append(semantic_consistency_loss(preds[t].seg[s], preds[tp].seg[s], warp, o))

    terms: dict[str, float] = {}
    weighted: dict[str, float] = {}
    total = Tensor(0.0)
    for name in TERMS:
        parts = acc[name]
        if not parts:
            continue
        term = parts[0]
        for p in parts[1:]:
            term = ad.add(term, p)
        w = weights.for_term(name)
        terms[name] = float(term.data)
        weighted[name] = w * terms[name]
        if w != 0.0:
            total = ad.add(total, ad.mul(term, w))
    report = LossReport(total=total, terms=terms, weighted=weighted, valid_pixel_count=valid_count)
    if valid_count == 0:
        report.warnings.append("no pixel warps validly into a neighbouring frame")
    return report
