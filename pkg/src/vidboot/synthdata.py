"""Synthetic monocular video with exact ground truth.

Scenes are a textured room (floor, walls, ceiling) holding axis-aligned
textured boxes.  Frames are ray-cast analytically, so depth is exact and
occlusion is trivially correct; the renderer doubles as the test oracle for
the warping stack.

World frame: x right, y down, z forward.  The floor is the plane
``y = FLOOR_Y``.  Poses are stored world-to-camera.

On-disk layout (one directory per sequence)::

    manifest.json       intrinsics, frame/class counts, seed, labeled frame ids
    frames/%06d.png     8-bit RGB
    depth/%06d.pfm      32-bit float PFM, little-endian (scale -1.0), labeled frames only
    labels/%06d.png     8-bit class ids, labeled frames only
    dynamic/%06d.png    8-bit moving-object mask (0/255), dynamic datasets only
    poses.txt           one line per frame: 12 floats, row-major 3x4 world-to-camera
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractError, DatasetFormatError
from .geometry import Intrinsics, PoseSE3, bilinear_sample, project, projected_depth, WarpField

log = logging.getLogger(__name__)

FLOOR_Y = 1.4
CEIL_Y = -2.6
ROOM_HALF = 7.5
FLOOR_CLASS = 0
WALL_CLASS = 1
DEPTH_RANGE = (1.0, 20.0)
DATASET_FORMAT = "vidboot-sequence"
DATASET_VERSION = 1


# ---------------------------------------------------------------------------
# scene


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray
    class_id: int
    velocity: np.ndarray | None = None
    period: float = 0.0

    def at(self, frame: int) -> "Box":
        if self.velocity is None:
            return self
        # back-and-forth motion so the box stays inside its lane
        phase = np.sin(2.0 * np.pi * frame / self.period) * self.period / (2.0 * np.pi)
        off = self.velocity * phase
        return Box(self.lo + off, self.hi + off, self.class_id)


@dataclass
class Texture:
    base: np.ndarray
    freqs: np.ndarray
    phases: np.ndarray
    amps: np.ndarray


@dataclass
class Scene:
    seed: int
    num_classes: int
    boxes: list[Box]
    textures: list[Texture]
    dynamic_index: int | None = None


def _make_textures(rng, num_classes) -> list[Texture]:
    hues = (np.arange(num_classes) + rng.uniform(0, 1)) / num_classes
    out = []
    for c in range(num_classes):
        h = hues[c]
        base = 0.5 + 0.3 * np.cos(2 * np.pi * (h + np.array([0.0, 1 / 3, 2 / 3])))
        n = 4
        # class-specific spatial wavelengths between ~0.8 and ~3 world units
        wavelengths = rng.uniform(1.0, 2.6, size=n) * (0.8 + 0.4 * (c % 3) / 2)
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        freqs = dirs / wavelengths[:, None]
        phases = rng.uniform(0, 2 * np.pi, size=(n, 3))
        amps = rng.uniform(0.05, 0.12, size=(n, 3))
        out.append(Texture(base, freqs, phases, amps))
    return out


def make_scene(seed: int, num_classes: int = 6, num_boxes: int = 12, dynamic: bool = False) -> Scene:
    if num_classes < 3:
        raise ContractError("need at least 3 classes (floor, wall, one object class)")
    rng = np.random.default_rng([seed, 7919])
    boxes = []
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=num_boxes))
    for i, a in enumerate(angles):
        r = rng.uniform(3.6, 6.2)
        cx, cz = r * np.cos(a), r * np.sin(a)
        sx, sz = rng.uniform(0.9, 2.0, size=2)
        hgt = rng.uniform(0.8, 3.0)
        cls = 2 + (i % (num_classes - 2)) if num_classes > 2 else WALL_CLASS
        boxes.append(Box(np.array([cx - sx / 2, FLOOR_Y - hgt, cz - sz / 2]), np.array([cx + sx / 2, FLOOR_Y, cz + sz / 2]), cls))
    dyn = None
    if dynamic:
        a = rng.uniform(0, 2 * np.pi)
        r = 4.5
        cx, cz = r * np.cos(a), r * np.sin(a)
        tangent = np.array([-np.sin(a), 0.0, np.cos(a)])
        cls = 2 + int(rng.integers(0, num_classes - 2))
        boxes.append(
            Box(np.array([cx - 0.6, FLOOR_Y - 1.6, cz - 0.6]), np.array([cx + 0.6, FLOOR_Y, cz + 0.6]), cls,
                velocity=tangent * 0.08, period=40.0)
        )
        dyn = len(boxes) - 1
    return Scene(seed, num_classes, boxes, _make_textures(rng, num_classes), dyn)


def shade(scene: Scene, points: np.ndarray, class_ids: np.ndarray) -> np.ndarray:
    """Solid-texture colour at world points [N,3] -> [N,3] in [0,1]."""
    out = np.zeros_like(points)
    for c in np.unique(class_ids):
        m = class_ids == c
        tex = scene.textures[c]
        p = points[m]
        col = np.repeat(tex.base[None], len(p), axis=0)
        arg = p @ tex.freqs.T * 2 * np.pi
        for k in range(len(tex.freqs)):
            col += tex.amps[k] * np.sin(arg[:, k : k + 1] + tex.phases[k])
        out[m] = col
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# camera motion


@dataclass(frozen=True)
class MotionProfile:
    speed: float = 0.025
    radius_x: float = 1.8
    radius_z: float = 1.2
    yaw_offset: float = 0.6
    wobble: float = 0.05
    start_phase: float | None = None


def trajectory(seed: int, length: int, motion: MotionProfile) -> list[np.ndarray]:
    """World-to-camera 4x4 matrices along a wobbly ellipse."""
    rng = np.random.default_rng([seed, 104729])
    phase0 = rng.uniform(0, 2 * np.pi) if motion.start_phase is None else motion.start_phase
    direction = 1.0 if rng.uniform() < 0.5 else -1.0
    wob = rng.uniform(0, 2 * np.pi, size=3)
    mean_r = 0.5 * (motion.radius_x + motion.radius_z)
    dphi = direction * motion.speed / mean_r
    poses = []
    for i in range(length):
        phi = phase0 + i * dphi
        c = np.array([motion.radius_x * np.cos(phi), 0.0, motion.radius_z * np.sin(phi)])
        c[1] = motion.wobble * np.sin(0.05 * i + wob[0])
        tangent = direction * np.array([-motion.radius_x * np.sin(phi), 0.0, motion.radius_z * np.cos(phi)])
        yaw = np.arctan2(tangent[0], tangent[2]) + motion.yaw_offset + motion.wobble * np.sin(0.07 * i + wob[1])
        pitch = motion.wobble * np.sin(0.06 * i + wob[2])
        cy, sy = np.cos(yaw), np.sin(yaw)
        cp, sp = np.cos(pitch), np.sin(pitch)
        ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
        rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
        r_wc = ry @ rx
        m = np.eye(4)
        m[:3, :3] = r_wc.T
        m[:3, 3] = -r_wc.T @ c
        poses.append(m)
    return poses


def default_intrinsics(width: int = 64, height: int = 64) -> Intrinsics:
    f = 0.875 * width
    return Intrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


# ---------------------------------------------------------------------------
# ray casting


def _slab(origin, dirs, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo[None] - origin[None]) * inv
        t2 = (hi[None] - origin[None]) * inv
    return np.minimum(t1, t2), np.maximum(t1, t2)


def render(scene: Scene, pose_cw: np.ndarray, K: Intrinsics, frame_index: int = 0):
    """Ray-cast one view.

    Returns ``(image float [H,W,3], depth [H,W], labels uint8 [H,W], dynamic bool [H,W])``.
    Depth is the z-coordinate in the camera frame, i.e. the ray parameter
    for camera rays normalised to unit z.
    """
    h, w = K.height, K.width
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    rays_c = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1).reshape(-1, 3)
    r_cw = pose_cw[:3, :3]
    origin = -r_cw.T @ pose_cw[:3, 3]
    dirs = rays_c @ r_cw  # rows: R_wc @ ray
    n = len(dirs)

    room_lo = np.array([-ROOM_HALF, CEIL_Y, -ROOM_HALF])
    room_hi = np.array([ROOM_HALF, FLOOR_Y, ROOM_HALF])
    _, tmax = _slab(origin, dirs, room_lo, room_hi)
    axis = np.argmin(tmax, axis=1)
    t_best = tmax[np.arange(n), axis]
    cls = np.where((axis == 1) & (dirs[:, 1] > 0), FLOOR_CLASS, WALL_CLASS).astype(np.int64)
    obj = np.full(n, -1)
    for bi, box in enumerate(scene.boxes):
        b = box.at(frame_index)
        tmin, tmax = _slab(origin, dirs, b.lo, b.hi)
        t_near = tmin.max(axis=1)
        t_far = tmax.min(axis=1)
        hit = (t_near <= t_far) & (t_near > 1e-6) & (t_near < t_best)
        t_best = np.where(hit, t_near, t_best)
        cls = np.where(hit, b.class_id, cls)
        obj = np.where(hit, bi, obj)
    points = origin[None] + dirs * t_best[:, None]
    if scene.dynamic_index is not None:
        # texture rides along with the moving box
        dyn = obj == scene.dynamic_index
        b0, bt = scene.boxes[scene.dynamic_index], scene.boxes[scene.dynamic_index].at(frame_index)
        points[dyn] -= (bt.lo - b0.lo)[None]
    else:
        dyn = np.zeros(n, dtype=bool)
    color = shade(scene, points, cls)
    return (
        color.reshape(h, w, 3),
        t_best.reshape(h, w),
        cls.astype(np.uint8).reshape(h, w),
        dyn.reshape(h, w),
    )


# ---------------------------------------------------------------------------
# sequences


@dataclass
class Frame:
    image: np.ndarray  # uint8 [H,W,3]
    depth: np.ndarray | None = None  # float32 [H,W]
    labels: np.ndarray | None = None  # uint8 [H,W]
    pose: np.ndarray | None = None  # float64 4x4 world-to-camera
    dynamic: np.ndarray | None = None  # bool [H,W]

    @property
    def labeled(self) -> bool:
        return self.depth is not None and self.labels is not None


@dataclass
class Sequence:
    frames: list[Frame]
    intrinsics: Intrinsics
    num_classes: int
    seed: int = 0
    meta: dict = field(default_factory=dict)
    scene: Scene | None = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.frames)

    @property
    def labeled_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.frames) if f.labeled]

    def relative_pose(self, a: int, b: int) -> PoseSE3:
        """Transform taking camera-``a`` coordinates to camera-``b`` coordinates."""
        pa, pb = self.frames[a].pose, self.frames[b].pose
        return PoseSE3.from_matrix(pb @ np.linalg.inv(pa))


def generate_sequence(
    seed: int,
    length: int,
    motion: MotionProfile | None = None,
    *,
    num_classes: int = 6,
    width: int = 64,
    height: int = 64,
    dynamic: bool = False,
    scene_seed: int | None = None,
    scene: Scene | None = None,
) -> Sequence:
    """Render ``length`` frames; ``scene_seed`` defaults to ``seed``.

    A scene whose depth range or class coverage is unsuitable for the
    trajectory is re-rolled, so the scene actually used is returned in
    ``meta["scene"]``.  Passing it back as ``scene`` with a different ``seed``
    renders a new trajectory through the same scene; no re-roll happens then.
    """
    if length < 3:
        raise ContractError("a sequence needs at least 3 frames")
    motion = motion or MotionProfile()
    K = default_intrinsics(width, height)
    scene_seed = seed if scene_seed is None else scene_seed
    fixed = scene
    for attempt in range(1 if fixed is not None else 20):
        scene = fixed if fixed is not None else make_scene(scene_seed + 1_000_003 * attempt, num_classes, dynamic=dynamic)
        poses = trajectory(seed, length, motion)
        frames = []
        ok = True
        for i, pose in enumerate(poses):
            img, depth, labels, dyn = render(scene, pose, K, i)
            if depth.min() < DEPTH_RANGE[0] or depth.max() > DEPTH_RANGE[1]:
                ok = False
                break
            frames.append(
                Frame(
                    image=np.round(img * 255.0).astype(np.uint8),
                    depth=depth.astype(np.float32),
                    labels=labels,
                    pose=pose,
                    dynamic=dyn if dynamic else None,
                )
            )
        if ok:
            counts = np.bincount(np.concatenate([f.labels.ravel() for f in frames]), minlength=num_classes)
            ok = int((counts > 0).sum()) >= 3
        if ok:
            meta = {"scene_seed": scene.seed, "dynamic": dynamic}
            return Sequence(frames, K, num_classes, seed, meta, scene)
        log.debug("scene %d attempt %d rejected, re-rolling", scene_seed, attempt)
    raise RuntimeError(f"could not generate a valid sequence for seed {seed}")


def image_to_chw(image_u8: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image_u8.transpose(2, 0, 1), dtype=np.float64) / 255.0


@dataclass
class Snippet:
    indices: tuple[int, int, int]
    skip: int
    images: list[np.ndarray]  # [3,H,W] float in [0,1]
    intrinsics: Intrinsics


def snippet_indices(length: int, stride: int, skip: int) -> list[tuple[int, int, int]]:
    if stride < 1 or skip < 1:
        raise ContractError("stride and skip must be >= 1")
    return [(i, i + skip, i + 2 * skip) for i in range(0, length, stride) if i + 2 * skip < length]


def make_snippets(sequence, stride: int, skip: int) -> list[Snippet]:
    """3-frame snippets at (i, i+skip, i+2*skip) for i = 0, stride, 2*stride, ...

    ``sequence`` is anything with ``len()``, ``intrinsics`` and an
    ``image(i)`` accessor or ``frames`` list.
    """
    out = []
    for idx in snippet_indices(len(sequence), stride, skip):
        imgs = [image_to_chw(_frame_image(sequence, i)) for i in idx]
        out.append(Snippet(idx, skip, imgs, sequence.intrinsics))
    return out


def _frame_image(sequence, i):
    if hasattr(sequence, "image"):
        return sequence.image(i)
    return sequence.frames[i].image


def sparse_label_view(sequence: Sequence, label_stride: int) -> Sequence:
    """Keep depth/labels only at frames whose index is a multiple of ``label_stride``."""
    if label_stride < 1:
        raise ContractError("label_stride must be >= 1")
    frames = []
    for i, f in enumerate(sequence.frames):
        if i % label_stride == 0:
            frames.append(replace(f))
        else:
            frames.append(replace(f, depth=None, labels=None))
    meta = dict(sequence.meta, label_stride=label_stride)
    return Sequence(frames, sequence.intrinsics, sequence.num_classes, sequence.seed, meta, sequence.scene)


# ---------------------------------------------------------------------------
# render-vs-warp oracle


def warp_check(sequence: Sequence, src: int, dst: int, rel_tol: float = 0.01, margin: int = 1):
    """Warp frame ``src`` into the view of ``dst`` using gt depth of ``dst``.

    Returns ``(mean_abs_error, mask)`` over pixels that are valid, not
    occluded (sampled source depth agrees with the projected depth) and not
    on a moving object.
    """
    fs, fd = sequence.frames[src], sequence.frames[dst]
    K = sequence.intrinsics
    pose = sequence.relative_pose(dst, src)
    return warp_error(fd.image, fd.depth, fs.image, fs.depth, pose, K, rel_tol, margin,
                      exclude=_dyn_union(fs, fd))


def _dyn_union(a: Frame, b: Frame):
    if a.dynamic is None and b.dynamic is None:
        return None
    m = np.zeros(a.image.shape[:2], dtype=bool)
    for f in (a, b):
        if f.dynamic is not None:
            m |= f.dynamic
    return m


def warp_error(img_dst, depth_dst, img_src, depth_src, pose_dst_to_src: PoseSE3, K: Intrinsics,
               rel_tol: float = 0.01, margin: int = 1, exclude=None):
    depth_dst = np.asarray(depth_dst, dtype=np.float64)
    warp = project(depth_dst, pose_dst_to_src, K)
    src = image_to_chw(img_src) if img_src.ndim == 3 and img_src.shape[-1] == 3 else img_src
    dst = image_to_chw(img_dst) if img_dst.ndim == 3 and img_dst.shape[-1] == 3 else img_dst
    warped = bilinear_sample(src, warp).data
    z_proj = projected_depth(depth_dst, pose_dst_to_src, K)
    inv_src = 1.0 / np.asarray(depth_src, dtype=np.float64)
    inv_sampled = bilinear_sample(inv_src[None], warp).data[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        agree = np.abs(inv_sampled * z_proj - 1.0) < rel_tol
    mask = warp.valid & agree
    # the sampled depth can agree by accident when a bilinear blend straddles an edge
    edge = _depth_edges(depth_src)
    u = np.clip(np.floor(warp.coords.data[0]).astype(int), 0, K.width - 1)
    v = np.clip(np.floor(warp.coords.data[1]).astype(int), 0, K.height - 1)
    mask &= ~edge[v, u]
    if margin:
        mask[:margin] = mask[-margin:] = False
        mask[:, :margin] = mask[:, -margin:] = False
    if exclude is not None:
        mask &= ~exclude
    if not mask.any():
        return float("nan"), mask
    err = np.abs(warped - dst).mean(axis=0)
    return float(err[mask].mean()), mask


def _depth_edges(depth, rel=0.02):
    """Pixels whose 2x2 block to the lower right spans a depth discontinuity."""
    inv = 1.0 / np.asarray(depth, dtype=np.float64)
    h, w = inv.shape
    pad = np.pad(inv, ((0, 1), (0, 1)), mode="edge")
    blk = np.stack([pad[:h, :w], pad[1:, :w], pad[:h, 1:], pad[1:, 1:]])
    # second differences: zero on planes
    lap_x = np.abs(np.diff(np.pad(inv, ((0, 0), (1, 1)), mode="edge"), n=2, axis=1))
    lap_y = np.abs(np.diff(np.pad(inv, ((1, 1), (0, 0)), mode="edge"), n=2, axis=0))
    curved = (lap_x + lap_y) > rel * inv
    spread = (blk.max(axis=0) - blk.min(axis=0)) > 0.25 * inv
    out = curved | spread
    out[:-1, :-1] |= curved[1:, 1:] | curved[1:, :-1] | curved[:-1, 1:]
    return out


# ---------------------------------------------------------------------------
# on-disk format


def write_pfm(path, array: np.ndarray) -> None:
    """Grayscale PFM: ``Pf\\n<W> <H>\\n-1.0\\n`` then float32 LE rows, bottom row first."""
    a = np.asarray(array, dtype="<f4")
    if a.ndim != 2:
        raise ContractError("PFM writer expects a 2-D array")
    h, w = a.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(a[::-1]).tobytes())


_PFM_HEADER = re.compile(rb"\A(P[fF])\n(\d+) (\d+)\n(-?[0-9.eE+-]+)\n")


def read_pfm(path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    m = _PFM_HEADER.match(data)
    if not m:
        raise DatasetFormatError(path, 0, "malformed PFM header")
    channels = 3 if m.group(1) == b"PF" else 1
    w, h = int(m.group(2)), int(m.group(3))
    scale = float(m.group(4))
    dtype = "<f4" if scale < 0 else ">f4"
    start = m.end()
    need = w * h * channels * 4
    if len(data) - start < need:
        raise DatasetFormatError(path, len(data), f"truncated pixel data: need {need} bytes after offset {start}")
    if len(data) - start > need:
        raise DatasetFormatError(path, start + need, "trailing bytes after pixel data")
    arr = np.frombuffer(data, dtype=dtype, count=w * h * channels, offset=start)
    arr = arr.reshape(h, w, channels) if channels == 3 else arr.reshape(h, w)
    return np.ascontiguousarray(arr[::-1]).astype(np.float32)


def _png_write(path, array: np.ndarray) -> None:
    mode = "RGB" if array.ndim == 3 else "L"
    Image.fromarray(np.ascontiguousarray(array, dtype=np.uint8), mode=mode).save(path, format="PNG")


def _png_read(path, mode: str) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode != mode:
                raise DatasetFormatError(path, 0, f"expected PNG mode {mode}, got {im.mode}")
            return np.array(im, dtype=np.uint8)
    except DatasetFormatError:
        raise
    except Exception as exc:
        raise DatasetFormatError(path, 0, f"unreadable PNG: {exc}") from exc


def write_dataset(directory, sequence: Sequence) -> Path:
    d = Path(directory)
    for sub in ("frames", "depth", "labels"):
        (d / sub).mkdir(parents=True, exist_ok=True)
    dynamic = any(f.dynamic is not None for f in sequence.frames)
    if dynamic:
        (d / "dynamic").mkdir(exist_ok=True)
    lines = []
    for i, f in enumerate(sequence.frames):
        _png_write(d / "frames" / f"{i:06d}.png", f.image)
        if f.labeled:
            write_pfm(d / "depth" / f"{i:06d}.pfm", f.depth)
            _png_write(d / "labels" / f"{i:06d}.png", f.labels)
        if f.dynamic is not None:
            _png_write(d / "dynamic" / f"{i:06d}.png", f.dynamic.astype(np.uint8) * 255)
        pose = f.pose if f.pose is not None else np.full((4, 4), np.nan)
        lines.append(" ".join(repr(float(x)) for x in pose[:3, :4].ravel()))
    (d / "poses.txt").write_text("\n".join(lines) + "\n")
    manifest = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "frame_count": len(sequence),
        "class_count": sequence.num_classes,
        "seed": sequence.seed,
        "intrinsics": sequence.intrinsics.to_dict(),
        "labeled_frames": sequence.labeled_indices,
        "dynamic": dynamic,
        "meta": sequence.meta,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise DatasetFormatError(path, 0, "manifest.json not found") from None
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(path, exc.pos, f"invalid JSON: {exc.msg}") from exc
    for key in ("frame_count", "class_count", "intrinsics"):
        if key not in manifest:
            raise DatasetFormatError(path, 0, f"manifest missing {key!r}")
    return manifest


def read_poses(path, count: int) -> list[np.ndarray]:
    path = Path(path)
    text = path.read_text()
    rows = text.splitlines()
    if len(rows) != count:
        raise DatasetFormatError(path, len(text), f"expected {count} pose lines, found {len(rows)}")
    out = []
    offset = 0
    for i, row in enumerate(rows):
        vals = row.split()
        if len(vals) != 12:
            raise DatasetFormatError(path, offset, f"line {i + 1}: expected 12 floats, got {len(vals)}")
        try:
            m = np.eye(4)
            m[:3, :4] = np.array([float(x) for x in vals]).reshape(3, 4)
        except ValueError as exc:
            raise DatasetFormatError(path, offset, f"line {i + 1}: {exc}") from exc
        out.append(m)
        offset += len(row) + 1
    return out


def read_dataset(directory) -> Sequence:
    d = Path(directory)
    manifest = read_manifest(d)
    n = int(manifest["frame_count"])
    K = Intrinsics.from_dict(manifest["intrinsics"])
    labeled = set(manifest.get("labeled_frames", []))
    dynamic = bool(manifest.get("dynamic", False))
    poses = read_poses(d / "poses.txt", n)
    frames = []
    for i in range(n):
        img = _png_read(d / "frames" / f"{i:06d}.png", "RGB")
        if img.shape != (K.height, K.width, 3):
            raise DatasetFormatError(d / "frames" / f"{i:06d}.png", 0, f"image shape {img.shape} != manifest size")
        f = Frame(image=img, pose=None if np.isnan(poses[i]).any() else poses[i])
        if i in labeled:
            f.depth = read_pfm(d / "depth" / f"{i:06d}.pfm")
            f.labels = _png_read(d / "labels" / f"{i:06d}.png", "L")
        if dynamic:
            f.dynamic = _png_read(d / "dynamic" / f"{i:06d}.png", "L") > 0
        frames.append(f)
    return Sequence(frames, K, int(manifest["class_count"]), int(manifest.get("seed", 0)), manifest.get("meta", {}))


class UnlabeledVideo:
    """Read-only view of a dataset directory exposing frames and intrinsics only.

    Nothing under ``depth/``, ``labels/`` or ``poses.txt`` is ever opened.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        manifest = read_manifest(self.directory)
        self.intrinsics = Intrinsics.from_dict(manifest["intrinsics"])
        self.num_classes = int(manifest["class_count"])
        self._n = int(manifest["frame_count"])
        self._cache: dict[int, np.ndarray] = {}

    def __len__(self):
        return self._n

    def image(self, i: int) -> np.ndarray:
        if not 0 <= i < self._n:
            raise IndexError(i)
        img = self._cache.get(i)
        if img is None:
            img = _png_read(self.directory / "frames" / f"{i:06d}.png", "RGB")
            self._cache[i] = img
        return img


class VideoView:
    """In-memory counterpart of :class:`UnlabeledVideo` over a ``Sequence``."""

    def __init__(self, sequence: Sequence):
        self.intrinsics = sequence.intrinsics
        self.num_classes = sequence.num_classes
        self._images = [f.image for f in sequence.frames]

    def __len__(self):
        return len(self._images)

    def image(self, i: int) -> np.ndarray:
        return self._images[i]
