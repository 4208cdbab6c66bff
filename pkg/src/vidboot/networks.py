"""Miniature depth/outlier, segmentation and ego-motion networks.

Parameters are plain ``dict[str, np.ndarray]``.  A forward pass receives a
mapping whose values are either arrays (evaluated as constants, e.g. a
frozen copy) or tensors bound to a tape via :func:`bind`.

Depth and segmentation share one encoder-decoder layout::

    enc1 (H) -> pool -> enc2 (H/2) -> pool -> enc3 (H/4) -> pool -> enc4 (H/8)
    dec4 (H/8) -> up+skip -> dec3 (H/4) -> up+skip -> dec2 (H/2) -> up+skip -> dec1 (H)

The depth net attaches a depth head and an outlier-mask head to each of the
four decoder levels; the segmentation net attaches logit heads to the three
finest levels.
"""

from __future__ import annotations

import copy
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ContractError, DatasetFormatError
from .geometry import PoseSE3, pose_invert, se3_exp

DEPTH_MIN = 0.1
DEPTH_MAX = 100.0
_INV_B = 1.0 / DEPTH_MAX
_INV_A = 1.0 / DEPTH_MIN - _INV_B
DEPTH_SCALES = 4
SEG_SCALES = 3
POSE_SCALE = 0.1
DOWNSAMPLE = 2 ** (DEPTH_SCALES - 1)


@dataclass(frozen=True)
class ArchConfig:
    num_classes: int = 6
    depth_channels: tuple = (8, 16, 24, 32)
    seg_channels: tuple = (8, 16, 24, 32)
    pose_channels: tuple = (8, 16, 16, 32)
    pose_max_disp: int = 4
    snippet_length: int = 3
    depth_scales: int = DEPTH_SCALES
    seg_scales: int = SEG_SCALES

    def __post_init__(self):
        if self.depth_scales != DEPTH_SCALES or self.seg_scales != SEG_SCALES:
            raise ContractError("architecture must emit 4 depth/outlier scales and 3 segmentation scales")
        for chans in (self.depth_channels, self.seg_channels, self.pose_channels):
            if len(chans) != 4 or min(chans) < 1:
                raise ContractError("each network needs 4 positive encoder widths")
        if self.num_classes < 2:
            raise ContractError("need at least 2 classes")
        if self.snippet_length != 3:
            raise ContractError("only 3-frame snippets are supported")
        if self.pose_max_disp < 1:
            raise ContractError("pose_max_disp must be >= 1")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


Params = dict


def _conv_init(rng, cout, cin, k=3, gain=1.0):
    std = gain * np.sqrt(2.0 / (cin * k * k))
    return rng.normal(0.0, std, size=(cout, cin, k, k)), np.zeros(cout)


def _encdec_params(rng, in_ch, chans) -> Params:
    c1, c2, c3, c4 = chans
    p = {}
    for name, (co, ci) in {
        "enc1": (c1, in_ch),
        "enc2": (c2, c1),
        "enc3": (c3, c2),
        "enc4": (c4, c3),
        "dec4": (c4, c4),
        "dec3": (c3, c4 + c3),
        "dec2": (c2, c3 + c2),
        "dec1": (c1, c2 + c1),
    }.items():
        p[name + ".w"], p[name + ".b"] = _conv_init(rng, co, ci)
    return p


def _logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


def init_depth_params(rng, chans) -> Params:
    p = _encdec_params(rng, 3, chans)
    dec_ch = (chans[0], chans[1], chans[2], chans[3])
    # initial depth at the geometric centre of the output range
    d0 = np.sqrt(DEPTH_MIN * DEPTH_MAX)
    depth_bias = _logit((1.0 / d0 - _INV_B) / _INV_A)
    for s in range(DEPTH_SCALES):
        w, _ = _conv_init(rng, 1, dec_ch[s], gain=0.1)
        p[f"head{s}.depth.w"], p[f"head{s}.depth.b"] = w, np.full(1, depth_bias)
        w, _ = _conv_init(rng, 1, dec_ch[s], gain=0.1)
        p[f"head{s}.mask.w"], p[f"head{s}.mask.b"] = w, np.full(1, 2.0)
    return p


def init_seg_params(rng, chans, num_classes) -> Params:
    p = _encdec_params(rng, 3, chans)
    for s in range(SEG_SCALES):
        w, b = _conv_init(rng, num_classes, chans[s], gain=0.1)
        p[f"head{s}.seg.w"], p[f"head{s}.seg.b"] = w, b
    return p


def init_pose_params(rng, chans, max_disp: int = 4) -> Params:
    """Ego-motion net: shared 3-layer feature tower, a local cost volume
    between the centre frame and each neighbour, and a small head shared by
    both pairs.  ``chans`` = (tower1, tower2, tower3, head)."""
    p = {}
    t1, t2, t3, hd = chans
    corr = (2 * max_disp + 1) ** 2
    for name, co, ci in (("feat1", t1, 3), ("feat2", t2, t1), ("feat3", t3, t2), ("head1", hd, corr), ("head2", hd, hd)):
        p[name + ".w"], p[name + ".b"] = _conv_init(rng, co, ci)
    # Zero output layer, one per pair (motion to the previous and to the
    # next frame have opposite signs): training starts from identity motion.
    p["fc.w"] = np.zeros((12, hd))
    p["fc.b"] = np.zeros(12)
    return p


@dataclass
class NetworkParams:
    depth: Params
    seg: Params
    pose: Params | None
    arch: ArchConfig = field(default_factory=ArchConfig)

    def groups(self) -> dict[str, Params]:
        out = {"depth": self.depth, "seg": self.seg}
        if self.pose is not None:
            out["pose"] = self.pose
        return out

    def flat(self) -> dict[str, np.ndarray]:
        return {f"{g}.{k}": v for g, p in self.groups().items() for k, v in p.items()}


def init_params(seed: int, arch: ArchConfig | None = None) -> NetworkParams:
    """Deterministic initial parameters for all three networks."""
    arch = arch or ArchConfig()
    rng = np.random.default_rng(seed)
    return NetworkParams(
        depth=init_depth_params(rng, arch.depth_channels),
        seg=init_seg_params(rng, arch.seg_channels, arch.num_classes),
        pose=init_pose_params(rng, arch.pose_channels, arch.pose_max_disp),
        arch=arch,
    )


def clone_frozen(params: Params) -> Params:
    """Read-only deep copy; any attempt to update it in place raises."""
    out = {}
    for k, v in params.items():
        a = np.array(v, dtype=np.float64, copy=True)
        a.flags.writeable = False
        out[k] = a
    return out


def bind(params: Params, tape: Tape) -> dict[str, Tensor]:
    return {k: tape.watch(v) for k, v in params.items()}


def copy_params(params: Params) -> Params:
    return {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}


# ---------------------------------------------------------------------------
# forward passes


def _conv(p, name, x, act=True):
    y = ad.conv2d(x, p[name + ".w"], 1, 1, p[name + ".b"])
    return ad.elu(y) if act else y


def _check_image(image, factor):
    image = ad.as_tensor(image)
    if image.ndim != 3:
        raise ContractError(f"image must be [C,H,W], got {image.shape}")
    _, h, w = image.shape
    if h % factor or w % factor:
        raise ContractError(f"image size {h}x{w} must be divisible by {factor}")
    return image


def _encdec(p, x):
    e1 = _conv(p, "enc1", x)
    e2 = _conv(p, "enc2", ad.avg_pool2x2(e1))
    e3 = _conv(p, "enc3", ad.avg_pool2x2(e2))
    e4 = _conv(p, "enc4", ad.avg_pool2x2(e3))
    d4 = _conv(p, "dec4", e4)
    d3 = _conv(p, "dec3", ad.concat([ad.upsample_bilinear_x2(d4), e3]))
    d2 = _conv(p, "dec2", ad.concat([ad.upsample_bilinear_x2(d3), e2]))
    d1 = _conv(p, "dec1", ad.concat([ad.upsample_bilinear_x2(d2), e1]))
    return [d1, d2, d3, d4]


def logits_to_depth(x) -> Tensor:
    """Depth from a head logit through a bounded inverse-depth sigmoid."""
    inv = ad.add(ad.mul(ad.sigmoid(x), _INV_A), _INV_B)
    return ad.div(1.0, inv)


def depth_forward(params: Mapping, image) -> tuple[list[Tensor], list[Tensor]]:
    """Depth maps and outlier masks at H, H/2, H/4, H/8 (finest first), each [h,w]."""
    image = _check_image(image, DOWNSAMPLE)
    feats = _encdec(params, image)
    depths, masks = [], []
    for s, f in enumerate(feats):
        dl = _conv(params, f"head{s}.depth", f, act=False)
        ml = _conv(params, f"head{s}.mask", f, act=False)
        depths.append(ad.reshape(logits_to_depth(dl), dl.shape[1:]))
        masks.append(ad.reshape(ad.sigmoid(ml), ml.shape[1:]))
    return depths, masks


def seg_logits(params: Mapping, image) -> list[Tensor]:
    image = _check_image(image, DOWNSAMPLE)
    feats = _encdec(params, image)
    return [_conv(params, f"head{s}.seg", feats[s], act=False) for s in range(SEG_SCALES)]


def seg_forward(params: Mapping, image) -> list[Tensor]:
    """Softmax class maps [C,h,w] at H, H/2, H/4."""
    return [ad.softmax_channels(z) for z in seg_logits(params, image)]


def _pose_features(params, x):
    x = ad.avg_pool2x2(_conv(params, "feat1", x))
    x = ad.avg_pool2x2(_conv(params, "feat2", x))
    return _conv(params, "feat3", x)


def pose_twists(params: Mapping, frames) -> Tensor:
    """Twists [2, 6] from the centre frame to the first and to the last frame."""
    frames = [ad.as_tensor(f) for f in frames]
    if len(frames) != 3 or any(f.shape != frames[0].shape for f in frames):
        raise ContractError("pose network expects 3 frames of equal shape")
    for f in frames:
        _check_image(f, DOWNSAMPLE)
    feats = [_pose_features(params, f) for f in frames]
    # Displacement range follows from the stored head width.
    r = (int(round(np.sqrt(params["head1.w"].shape[1]))) - 1) // 2
    pooled = []
    for nb in (0, 2):
        x = ad.correlation(feats[1], feats[nb], r)
        x = ad.avg_pool2x2(_conv(params, "head1", x))
        x = _conv(params, "head2", x)
        pooled.append(ad.tmean(x, axis=(1, 2)))
    hd = params["fc.w"].shape[1]
    outs = []
    for k, g in enumerate(pooled):
        w = params["fc.w"][6 * k : 6 * k + 6]
        b = params["fc.b"][6 * k : 6 * k + 6]
        outs.append(ad.add(ad.reshape(ad.matmul(w, ad.reshape(g, (hd, 1))), (6,)), b))
    return ad.mul(ad.stack(outs), POSE_SCALE)


def pose_forward(params: Mapping, frames) -> dict[tuple[int, int], PoseSE3]:
    """Relative poses for both directions of the pairs (0,1) and (1,2).

    The network predicts centre->neighbour motion; the reverse directions
    are their inverses.
    """
    tw = pose_twists(params, frames)
    t10 = se3_exp(tw[0])
    t12 = se3_exp(tw[1])
    return {(1, 0): t10, (0, 1): pose_invert(t10), (1, 2): t12, (2, 1): pose_invert(t12)}


def identity_poses() -> dict[tuple[int, int], PoseSE3]:
    return {k: PoseSE3.identity() for k in ((0, 1), (1, 0), (1, 2), (2, 1))}


# ---------------------------------------------------------------------------
# checkpoint container

MAGIC = b"VIDBOOT\x00"
FORMAT_VERSION = 1
STAGES = ("supervised", "selfsup")


@dataclass
class Checkpoint:
    params: NetworkParams
    stage: str
    step: int = 0
    loss_weights: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ContractError(f"unknown stage tag {self.stage!r}")

    @property
    def num_classes(self) -> int:
        return self.params.arch.num_classes


def _header(ckpt: Checkpoint) -> tuple[dict, list[np.ndarray]]:
    tensors, blobs = [], []
    offset = 0
    for name, arr in ckpt.params.flat().items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        offset += arr.nbytes
        blobs.append(arr)
    header = {
        "stage": ckpt.stage,
        "step": int(ckpt.step),
        "num_classes": ckpt.num_classes,
        "loss_weights": ckpt.loss_weights,
        "config": ckpt.config,
        "arch": ckpt.params.arch.to_dict(),
        "has_pose": ckpt.params.pose is not None,
        "tensors": tensors,
    }
    return header, blobs


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    header, blobs = _header(ckpt)
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(hbytes)), hbytes]
    parts.extend(b.tobytes() for b in blobs)
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write atomically: a temp file in the target directory is renamed into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = checkpoint_bytes(ckpt)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 20 or data[:8] != MAGIC:
        raise DatasetFormatError(path, 0, "not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(path, 8, f"unsupported checkpoint version {version}")
    start = 20
    if start + hlen > len(data):
        raise DatasetFormatError(path, start, "truncated header")
    try:
        header = json.loads(data[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(path, start, f"corrupt header: {exc}") from exc
    base = start + hlen
    groups: dict[str, Params] = {"depth": {}, "seg": {}, "pose": {}}
    for t in header["tensors"]:
        lo = base + t["offset"]
        hi = lo + t["nbytes"]
        if hi > len(data):
            raise DatasetFormatError(path, lo, f"truncated tensor {t['name']}")
        arr = np.frombuffer(data[lo:hi], dtype="<f8").reshape(t["shape"]).astype(np.float64)
        group, name = t["name"].split(".", 1)
        groups[group][name] = arr
    arch = ArchConfig.from_dict(header["arch"])
    params = NetworkParams(
        depth=groups["depth"],
        seg=groups["seg"],
        pose=groups["pose"] if header.get("has_pose", True) else None,
        arch=arch,
    )
    return Checkpoint(
        params=params,
        stage=header["stage"],
        step=header["step"],
        loss_weights=header.get("loss_weights", {}),
        config=header.get("config", {}),
    )


def clone_checkpoint(ckpt: Checkpoint) -> Checkpoint:
    return copy.deepcopy(ckpt)
