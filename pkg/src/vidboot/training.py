"""Two-stage training: supervised bootstrap, then self-supervised refinement.

The supervised stage fits depth (L1, 4 scales) and segmentation
(cross-entropy, 3 scales) on labeled frames.  The self-supervised stage
starts from that checkpoint, keeps frozen copies of the depth and
segmentation networks for the prior losses, and trains on unlabeled
3-frame snippets only.  :func:`train_selfonly` is the ablation that trains
depth and ego-motion from scratch without any bootstrap.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .errors import ConfigError, ContractError
from .geometry import Intrinsics
from .losses import (
    VOID,
    FramePrediction,
    LossReport,
    LossWeights,
    supervised_depth_loss,
    supervised_seg_loss,
    total_loss,
)
from .networks import (
    ArchConfig,
    Checkpoint,
    NetworkParams,
    bind,
    clone_frozen,
    copy_params,
    depth_forward,
    init_depth_params,
    init_params,
    init_pose_params,
    load_checkpoint,
    pose_forward,
    save_checkpoint,
    seg_forward,
    seg_logits,
    DEPTH_SCALES,
    SEG_SCALES,
)
from .synthdata import Sequence, UnlabeledVideo, VideoView, image_to_chw, read_dataset, snippet_indices

log = logging.getLogger(__name__)

STAGES = ("supervised", "selfsup")

# Loss-weight presets named after the four experiments, in term order
# pho, ssim, sc, sm, om, D, S.
PRESET_WEIGHTS = {
    "sn2sn": (1.0, 0.15, 0.8, 0.025, 0.08, 0.08, 1.5),
    "sun2sn": (1.0, 0.15, 0.8, 0.01, 0.07, 0.03, 1.5),
    "cs2cs": (1.0, 0.15, 0.8, 0.07, 0.08, 0.08, 1.5),
    "cs2k": (1.0, 0.15, 0.8, 0.01, 0.07, 0.03, 1.5),
}


@dataclass
class TrainConfig:
    stage: str = "supervised"
    data: str | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 100
    batch_size: int = 4
    seed: int = 0
    scale_min: float = 0.85
    scale_max: float = 1.15
    crop_width: int = 48
    crop_height: int = 48
    augment: bool = True
    snippet_stride: int = 100
    snippet_skip: int = 10
    pose_warmup_steps: int = 0
    pose_lr: float | None = None
    checkpoint_in: str | None = None
    checkpoint_out: str | None = None
    log_path: str | None = None
    arch: ArchConfig = field(default_factory=ArchConfig)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if isinstance(self.weights, dict):
            self.weights = LossWeights.from_dict(self.weights)
        elif isinstance(self.weights, (list, tuple)):
            self.weights = LossWeights.from_sequence(self.weights)
        if isinstance(self.arch, dict):
            self.arch = ArchConfig.from_dict(self.arch)
        if self.lr is None:
            self.lr = 1e-3 if self.stage == "supervised" else 2e-4
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if not 0 < self.scale_min <= self.scale_max:
            raise ConfigError("invalid augmentation scale range")

    def require_checkpoint(self) -> None:
        if self.stage == "selfsup" and not self.checkpoint_in:
            raise ConfigError("self-supervised stage requires a supervised checkpoint")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["weights"] = self.weights.as_dict()
        d["arch"] = self.arch.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        preset = d.pop("preset", None)
        if preset is not None and "weights" not in d:
            if preset not in PRESET_WEIGHTS:
                raise ConfigError(f"unknown preset {preset!r}")
            d["weights"] = PRESET_WEIGHTS[preset]
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at offset {exc.pos})") from exc


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam over a dict of named parameter arrays, updated in place."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.skipped = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> bool:
        """Apply one update.  Returns False (and leaves everything untouched) on non-finite grads."""
        for k, g in grads.items():
            if k not in params or params[k].shape != g.shape:
                raise ContractError(f"gradient {k!r} does not match its parameter")
            if not np.all(np.isfinite(g)):
                log.warning("non-finite gradient in %s; skipping step %d", k, self.t + 1)
                self.skipped += 1
                return False
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, g in grads.items():
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True


def optimizer_step(params: dict, grads: dict, state: Adam) -> bool:
    return state.step(params, grads)


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class Augmentation:
    """Scale-then-crop: new pixel u' = sx*(u + 0.5) - 0.5 - x0 (same for v)."""

    sx: float
    sy: float
    x0: int
    y0: int
    width: int
    height: int

    @classmethod
    def identity(cls, width: int, height: int) -> "Augmentation":
        return cls(1.0, 1.0, 0, 0, width, height)

    def source_coords(self, level: int = 0):
        """Source coordinates (at pyramid ``level``) of every output pixel at that level."""
        k = 2**level
        off = (k - 1) / 2.0
        h, w = self.height // k, self.width // k
        un = k * np.arange(w, dtype=np.float64) + off
        vn = k * np.arange(h, dtype=np.float64) + off
        u = (un + self.x0 + 0.5) / self.sx - 0.5
        v = (vn + self.y0 + 0.5) / self.sy - 0.5
        return (u - off) / k, (v - off) / k

    def intrinsics(self, K: Intrinsics) -> Intrinsics:
        return K.transformed(
            self.sx, self.sy, 0.5 * self.sx - 0.5 - self.x0, 0.5 * self.sy - 0.5 - self.y0, self.width, self.height
        )


def sample_augmentation(rng, width: int, height: int, crop_w: int, crop_h: int, scale_range) -> Augmentation:
    s = float(rng.uniform(*scale_range))
    ws, hs = int(round(s * width)), int(round(s * height))
    if ws < crop_w or hs < crop_h:
        raise ContractError(f"scale {s:.3f} gives {ws}x{hs}, smaller than crop {crop_w}x{crop_h}")
    x0 = int(rng.integers(0, ws - crop_w + 1))
    y0 = int(rng.integers(0, hs - crop_h + 1))
    return Augmentation(ws / width, hs / height, x0, y0, crop_w, crop_h)


def resample(array: np.ndarray, aug: Augmentation, level: int = 0, mode: str = "bilinear") -> np.ndarray:
    """Apply ``aug`` to a [C,H,W] or [H,W] map given at pyramid ``level``.

    ``mode`` is ``bilinear``, ``nearest``, or ``inverse`` (bilinear on 1/x,
    which is exact for depth of planar surfaces).
    """
    a = np.asarray(array)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[None]
    u, v = aug.source_coords(level)
    h, w = a.shape[1:]
    if mode == "nearest":
        ui = np.clip(np.floor(u + 0.5).astype(int), 0, w - 1)
        vi = np.clip(np.floor(v + 0.5).astype(int), 0, h - 1)
        out = a[:, vi[:, None], ui[None, :]]
    else:
        src = 1.0 / a if mode == "inverse" else a.astype(np.float64)
        u = np.clip(u, 0.0, w - 1.0)
        v = np.clip(v, 0.0, h - 1.0)
        u0 = np.minimum(np.floor(u).astype(int), max(w - 2, 0))
        v0 = np.minimum(np.floor(v).astype(int), max(h - 2, 0))
        u1 = np.minimum(u0 + 1, w - 1)
        v1 = np.minimum(v0 + 1, h - 1)
        fu = (u - u0)[None, None, :]
        fv = (v - v0)[None, :, None]
        top = src[:, v0[:, None], u0[None, :]] * (1 - fu) + src[:, v0[:, None], u1[None, :]] * fu
        bot = src[:, v1[:, None], u0[None, :]] * (1 - fu) + src[:, v1[:, None], u1[None, :]] * fu
        out = top * (1 - fv) + bot * fv
        if mode == "inverse":
            out = 1.0 / out
    return out[0] if squeeze else out


def augment(sample: dict, aug: Augmentation) -> dict:
    """Transform a frame or snippet sample consistently.

    ``sample`` may hold ``image`` ([3,H,W]) or ``images`` (list of them),
    optional ``depth`` / ``labels``, and ``intrinsics``.  Every map gets the
    same spatial transform; intrinsics are updated to match.
    """
    out = dict(sample)
    if "image" in sample:
        out["image"] = resample(sample["image"], aug)
    if "images" in sample:
        out["images"] = [resample(im, aug) for im in sample["images"]]
    if sample.get("depth") is not None:
        out["depth"] = resample(sample["depth"], aug, mode="inverse")
    if sample.get("labels") is not None:
        out["labels"] = resample(sample["labels"], aug, mode="nearest").astype(sample["labels"].dtype)
    if "intrinsics" in sample:
        out["intrinsics"] = aug.intrinsics(sample["intrinsics"])
    return out


# ---------------------------------------------------------------------------
# per-scale targets


def pool_depth_targets(depth: np.ndarray, levels: int = DEPTH_SCALES) -> list[np.ndarray]:
    """Average-pooled ground-truth depth at each scale (finest first)."""
    out = [np.asarray(depth, dtype=np.float64)]
    for _ in range(levels - 1):
        out.append(ad.avg_pool2x2(out[-1][None]).data[0])
    return out


def pool_label_targets(labels: np.ndarray, num_classes: int, levels: int = SEG_SCALES, void: int = VOID):
    """Majority-vote labels per scale from average-pooled one-hot maps."""
    labels = np.asarray(labels)
    onehot = np.zeros((num_classes + 1,) + labels.shape)
    idx = np.where(labels == void, num_classes, labels).astype(int)
    np.put_along_axis(onehot, idx[None], 1.0, axis=0)
    out = [labels.astype(np.int64)]
    cur = onehot
    for _ in range(levels - 1):
        cur = ad.avg_pool2x2(cur).data
        lab = cur[:num_classes].argmax(axis=0)
        lab = np.where(cur[num_classes] > 0.5, void, lab)
        out.append(lab.astype(np.int64))
    return out


# ---------------------------------------------------------------------------
# logging


class TrainLog:
    """Collects one record per step and optionally appends them to a JSONL file."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        self._t0 = time.perf_counter()
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def add(self, step: int, stage: str, report: LossReport) -> dict:
        rec = {"step": step, "stage": stage, **report.as_record(), "wall_time": time.perf_counter() - self._t0}
        if report.warnings:
            rec["warnings"] = list(report.warnings)
        self.records.append(rec)
        if self.path:
            with self.path.open("a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return rec


# ---------------------------------------------------------------------------
# supervised stage


def _labeled_frames(seq: Sequence):
    idx = seq.labeled_indices
    if not idx:
        raise ConfigError("dataset has no labeled frames; the supervised stage needs ground truth")
    return idx


def supervised_loss(params: NetworkParams, bound_depth, bound_seg, samples) -> LossReport:
    """Mean over samples of sum-over-scales depth L1 plus segmentation cross-entropy."""
    l1_terms, ce_terms = [], []
    warnings = []
    n_l1 = n_ce = 0
    for smp in samples:
        depths, _ = depth_forward(bound_depth, smp["image"])
        logits = seg_logits(bound_seg, smp["image"])
        valid = smp.get("valid")
        for s, gt in enumerate(pool_depth_targets(smp["depth"])):
            mask = (gt > 0) if valid is None else (gt > 0) & (pool_depth_targets(valid.astype(float))[s] == 1.0)
            n_l1 += int(mask.sum())
            l1_terms.append(supervised_depth_loss(depths[s], gt, mask))
        for s, lab in enumerate(pool_label_targets(smp["labels"], params.arch.num_classes)):
            n_ce += int((lab != VOID).sum())
            ce_terms.append(supervised_seg_loss(logits[s], lab))
    if n_l1 == 0:
        warnings.append("no valid depth pixels")
    if n_ce == 0:
        warnings.append("no non-void label pixels")
    inv = 1.0 / len(samples)
    l1 = ad.mul(_sum(l1_terms), inv)
    ce = ad.mul(_sum(ce_terms), inv)
    total = ad.add(l1, ce)
    return LossReport(
        total=total,
        terms={"depth_l1": float(l1.data), "seg_ce": float(ce.data)},
        weighted={"depth_l1": float(l1.data), "seg_ce": float(ce.data)},
        valid_pixel_count=n_l1,
        warnings=warnings,
    )


def _sum(ts):
    out = ts[0]
    for t in ts[1:]:
        out = ad.add(out, t)
    return out


def _frame_sample(seq: Sequence, i: int) -> dict:
    f = seq.frames[i]
    return {
        "image": image_to_chw(f.image),
        "depth": np.asarray(f.depth, dtype=np.float64),
        "labels": f.labels,
        "intrinsics": seq.intrinsics,
    }


def _grads(bound: dict) -> dict:
    return {k: t.grad for k, t in bound.items()}


def train_supervised(
    config: TrainConfig,
    sequence: Sequence | None = None,
    params: NetworkParams | None = None,
    callback: Callable | None = None,
) -> tuple[Checkpoint, TrainLog]:
    """Fit depth and segmentation on labeled frames only.

    The ego-motion network and the outlier-mask heads receive no training
    signal here.
    """
    if config.stage != "supervised":
        raise ConfigError("train_supervised needs stage='supervised'")
    seq = sequence if sequence is not None else read_dataset(config.data)
    labeled = _labeled_frames(seq)
    if params is None:
        if config.checkpoint_in:
            params = load_checkpoint(config.checkpoint_in).params
        else:
            arch = replace(config.arch, num_classes=seq.num_classes)
            params = init_params(config.seed, arch)
    params = NetworkParams(copy_params(params.depth), copy_params(params.seg),
                           copy_params(params.pose) if params.pose is not None else None, params.arch)
    rng = np.random.default_rng([config.seed, 1])
    opt = Adam(config.lr, config.beta1, config.beta2, config.eps)
    tlog = TrainLog(config.log_path)
    K = seq.intrinsics
    for step in range(config.steps):
        picks = rng.choice(labeled, size=config.batch_size, replace=len(labeled) < config.batch_size)
        samples = []
        for i in picks:
            smp = _frame_sample(seq, int(i))
            if config.augment:
                aug = sample_augmentation(rng, K.width, K.height, config.crop_width, config.crop_height,
                                          (config.scale_min, config.scale_max))
                smp = augment(smp, aug)
            samples.append(smp)
        tape = Tape()
        bd, bs = bind(params.depth, tape), bind(params.seg, tape)
        report = supervised_loss(params, bd, bs, samples)
        tape.backward(report.total)
        grads = {**{"d." + k: v for k, v in _grads(bd).items()}, **{"s." + k: v for k, v in _grads(bs).items()}}
        flat = {**{"d." + k: v for k, v in params.depth.items()}, **{"s." + k: v for k, v in params.seg.items()}}
        opt.step(flat, grads)
        rec = tlog.add(step, "supervised", report)
        if callback:
            callback(step, rec, params)
    ckpt = Checkpoint(params, "supervised", config.steps, config.weights.as_dict(), config.to_dict())
    if config.checkpoint_out:
        save_checkpoint(ckpt, config.checkpoint_out)
    return ckpt, tlog


# ---------------------------------------------------------------------------
# self-supervised stage


class FrozenPredictor:
    """Frozen depth/segmentation copies with a per-frame prediction cache."""

    def __init__(self, depth_params, seg_params):
        self.depth = clone_frozen(depth_params)
        self.seg = clone_frozen(seg_params) if seg_params is not None else None
        self._cache: dict = {}

    def predict(self, key, image: np.ndarray):
        hit = self._cache.get(key)
        if hit is None:
            depths, _ = depth_forward(self.depth, image)
            segs = seg_forward(self.seg, image) if self.seg is not None else None
            hit = ([d.data for d in depths], [s.data for s in segs] if segs is not None else None)
            self._cache[key] = hit
        return hit

    def transformed(self, key, image: np.ndarray, aug: Augmentation) -> FramePrediction:
        """Frozen outputs for the augmented view of ``image``.

        The frozen nets see exactly the input the live nets see, so the prior
        losses start at zero.  Only the un-augmented view is cached.
        """
        if aug == Augmentation.identity(image.shape[2], image.shape[1]):
            depths, segs = self.predict(key, image)
        else:
            view = resample(image, aug)
            depths = [d.data for d in depth_forward(self.depth, view)[0]]
            segs = [s.data for s in seg_forward(self.seg, view)] if self.seg is not None else None
        return FramePrediction(depth=list(depths), outlier=[], seg=list(segs) if segs is not None else None)


def snippet_loss(
    live_depth, live_seg, live_pose, images, K: Intrinsics, weights: LossWeights,
    frozen: list[FramePrediction] | None = None,
) -> LossReport:
    preds = []
    for img in images:
        depths, masks = depth_forward(live_depth, img)
        segs = seg_forward(live_seg, img) if live_seg is not None else None
        preds.append(FramePrediction(depths, masks, segs))
    poses = pose_forward(live_pose, images)
    return total_loss(images, K, preds, poses, weights, frozen=frozen)


def _video(config: TrainConfig, video):
    if video is not None:
        return video if not isinstance(video, Sequence) else VideoView(video)
    if not config.data:
        raise ConfigError("no dataset given")
    return UnlabeledVideo(config.data)


def _selfsup_loop(config: TrainConfig, video, params: NetworkParams, frozen: FrozenPredictor | None,
                  stage_tag: str, callback=None) -> tuple[NetworkParams, TrainLog]:
    snips = snippet_indices(len(video), config.snippet_stride, config.snippet_skip)
    if not snips:
        raise ConfigError(
            f"sequence of {len(video)} frames too short for skip {config.snippet_skip}"
        )
    K = video.intrinsics
    rng = np.random.default_rng([config.seed, 2])
    opt = Adam(config.lr, config.beta1, config.beta2, config.eps)
    pose_lr = config.lr if config.pose_lr is None else config.pose_lr
    pose_opt = Adam(pose_lr, config.beta1, config.beta2, config.eps)
    tlog = TrainLog(config.log_path)
    use_seg = frozen is not None and frozen.seg is not None
    images_cache: dict[int, np.ndarray] = {}

    def image(i):
        im = images_cache.get(i)
        if im is None:
            im = images_cache[i] = image_to_chw(video.image(i))
        return im

    for step in range(config.steps):
        picks = rng.integers(0, len(snips), size=config.batch_size)
        warming = step < config.pose_warmup_steps
        tape = Tape()
        # During warm-up only the ego-motion net is trained; depth enters as
        # a constant and segmentation is skipped (it cannot reach the pose).
        bd = params.depth if warming else bind(params.depth, tape)
        bs = bind(params.seg, tape) if use_seg and not warming else None
        bp = bind(params.pose, tape)
        reports = []
        for j in picks:
            idx = snips[int(j)]
            raw = [image(i) for i in idx]
            aug = (sample_augmentation(rng, K.width, K.height, config.crop_width, config.crop_height,
                                       (config.scale_min, config.scale_max))
                   if config.augment else Augmentation.identity(K.width, K.height))
            imgs = [resample(im, aug) for im in raw]
            Ka = aug.intrinsics(K)
            fz = [frozen.transformed(i, im, aug) for i, im in zip(idx, raw)] if frozen is not None else None
            reports.append(snippet_loss(bd, bs, bp, imgs, Ka, config.weights, fz))
        report = _mean_reports(reports)
        tape.backward(report.total)
        grads, flat = {}, {}
        if not warming:
            grads.update({"d." + k: t.grad for k, t in bd.items()})
            flat.update({"d." + k: v for k, v in params.depth.items()})
            if bs is not None:
                grads.update({"s." + k: t.grad for k, t in bs.items()})
                flat.update({"s." + k: v for k, v in params.seg.items()})
        pose_grads = {k: t.grad for k, t in bp.items()}
        if not all(np.all(np.isfinite(g)) for g in [*grads.values(), *pose_grads.values()]):
            log.warning("non-finite gradient at step %d; step skipped", step)
            report.warnings.append("non-finite gradient; step skipped")
        else:
            if grads:
                opt.step(flat, grads)
            pose_opt.step(params.pose, pose_grads)
        rec = tlog.add(step, stage_tag, report)
        if callback:
            callback(step, rec, params)
    return params, tlog


def _mean_reports(reports: list[LossReport]) -> LossReport:
    n = len(reports)
    total = ad.mul(_sum([r.total for r in reports]), 1.0 / n)
    terms = {k: sum(r.terms[k] for r in reports) / n for k in reports[0].terms}
    weighted = {k: sum(r.weighted[k] for r in reports) / n for k in reports[0].weighted}
    return LossReport(total, terms, weighted, sum(r.valid_pixel_count for r in reports))


def train_selfsup(
    config: TrainConfig,
    checkpoint_in: Checkpoint | None = None,
    video=None,
    callback: Callable | None = None,
) -> tuple[Checkpoint, TrainLog]:
    """Bootstrapped self-supervised refinement on unlabeled snippets.

    ``video`` (or ``config.data``) is only ever accessed through an
    images-and-intrinsics view; ground truth is unreachable from here.
    """
    if config.stage != "selfsup":
        raise ConfigError("train_selfsup needs stage='selfsup'")
    if checkpoint_in is None:
        config.require_checkpoint()
        checkpoint_in = load_checkpoint(config.checkpoint_in)
    src = checkpoint_in.params
    if not src.depth or not src.seg:
        raise ConfigError("checkpoint is missing depth or segmentation parameters")
    video = _video(config, video)
    pose = copy_params(src.pose) if src.pose is not None else init_pose_params(
        np.random.default_rng([config.seed, 3]), src.arch.pose_channels, src.arch.pose_max_disp)
    params = NetworkParams(copy_params(src.depth), copy_params(src.seg), pose, src.arch)
    frozen = FrozenPredictor(src.depth, src.seg)
    params, tlog = _selfsup_loop(config, video, params, frozen, "selfsup", callback)
    step0 = checkpoint_in.step if checkpoint_in.stage == "selfsup" else 0
    ckpt = Checkpoint(params, "selfsup", step0 + config.steps, config.weights.as_dict(), config.to_dict())
    if config.checkpoint_out:
        save_checkpoint(ckpt, config.checkpoint_out)
    return ckpt, tlog


def train_selfonly(
    config: TrainConfig,
    video=None,
    arch: ArchConfig | None = None,
    callback: Callable | None = None,
) -> tuple[Checkpoint, TrainLog]:
    """Ablation: depth and ego-motion trained from scratch with pho, SSIM, smoothness and mask terms."""
    video = _video(config, video)
    arch = arch or replace(config.arch, num_classes=video.num_classes)
    fresh = init_params(config.seed, arch)
    w = config.weights
    cfg = replace(config, stage="selfsup", weights=LossWeights(w.w_pho, w.w_ssim, 0.0, w.w_sm, w.w_om, 0.0, 0.0))
    params, tlog = _selfsup_loop(cfg, video, fresh, None, "selfonly", callback)
    meta = dict(cfg.to_dict(), bootstrap=False)
    ckpt = Checkpoint(params, "selfsup", cfg.steps, cfg.weights.as_dict(), meta)
    if config.checkpoint_out:
        save_checkpoint(ckpt, config.checkpoint_out)
    return ckpt, tlog
