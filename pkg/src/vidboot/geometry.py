"""Camera geometry: pinhole intrinsics, SE(3) poses, projection and warping.

Conventions
-----------
* Pixel (row i, column j) sits at continuous coordinate ``(u, v) = (j, i)``;
  there is no half-pixel offset.
* Camera frame is x right, y down, z forward.  ``PoseSE3`` maps points from
  one frame into another: ``X' = R X + t``.
* Warp coordinates outside ``[0, W-1] x [0, H-1]`` or behind the camera are
  invalid.  They are never clamped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ContractError


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ContractError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ContractError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def downscaled(self, level: int) -> "Intrinsics":
        """Intrinsics of the image after ``level`` rounds of 2x2 average pooling.

        A coarse pixel ``i`` averages fine pixels ``2i`` and ``2i+1``, so its
        centre is at fine coordinate ``2i + 0.5``.
        """
        k = 2**level
        return Intrinsics(
            self.fx / k,
            self.fy / k,
            (self.cx - (k - 1) / 2.0) / k,
            (self.cy - (k - 1) / 2.0) / k,
            self.width // k,
            self.height // k,
        )

    def transformed(self, sx: float, sy: float, bx: float, by: float, width: int, height: int) -> "Intrinsics":
        """Intrinsics after the pixel map ``u' = sx*u + bx``, ``v' = sy*v + by``."""
        return Intrinsics(self.fx * sx, self.fy * sy, self.cx * sx + bx, self.cy * sy + by, width, height)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), int(d["width"]), int(d["height"]))


class PoseSE3:
    """Rigid transform ``X -> R X + t``; ``rotation`` [3,3] and ``translation`` [3] tensors."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation, check: bool = True):
        self.rotation = as_tensor(rotation)
        self.translation = as_tensor(translation)
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ContractError("rotation must be 3x3 and translation a 3-vector")
        if check:
            r = self.rotation.data
            if not np.allclose(r.T @ r, np.eye(3), atol=1e-9, rtol=0) or abs(np.linalg.det(r) - 1.0) > 1e-9:
                raise ContractError("rotation is not a proper orthonormal matrix")

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "PoseSE3":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.data
        m[:3, 3] = self.translation.data
        return m

    def detach(self) -> "PoseSE3":
        return PoseSE3(self.rotation.detach(), self.translation.detach(), check=False)

    def scaled(self, k: float) -> "PoseSE3":
        return PoseSE3(self.rotation, ad.mul(self.translation, k), check=False)

    def __repr__(self):
        return f"PoseSE3(t={np.round(self.translation.data, 4).tolist()})"


def _hat(w: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


_E = [_hat(e) for e in np.eye(3)]


def _rodrigues_coeffs(theta: float):
    """sin(t)/t, (1-cos t)/t^2 and their derivatives divided by t."""
    t2 = theta * theta
    if theta < 1e-4:
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        da = -1.0 / 3.0 + t2 / 30.0
        db = -1.0 / 12.0 + t2 / 180.0
    else:
        s, c = np.sin(theta), np.cos(theta)
        a = s / theta
        b = (1.0 - c) / t2
        da = (theta * c - s) / (t2 * theta)
        db = (theta * s - 2.0 * (1.0 - c)) / (t2 * t2)
    return a, b, da, db


def rodrigues(omega) -> Tensor:
    """Rotation matrix exp([omega]_x) as a differentiable op on a 3-vector."""
    omega = as_tensor(omega)
    if omega.shape != (3,):
        raise ContractError(f"axis-angle must be a 3-vector, got {omega.shape}")
    w = omega.data
    theta = float(np.linalg.norm(w))
    a, b, da, db = _rodrigues_coeffs(theta)
    W = _hat(w)
    W2 = W @ W
    R = np.eye(3) + a * W + b * W2

    def bw(g):
        out = np.empty(3)
        for i in range(3):
            dW2 = _E[i] @ W + W @ _E[i]
            dR = a * _E[i] + b * dW2 + w[i] * (da * W + db * W2)
            out[i] = np.sum(g * dR)
        return (out,)

    return ad.record(R, (omega,), bw)


def se3_exp(twist) -> PoseSE3:
    """Pose from a 6-vector ``[rotation axis-angle, translation]``."""
    twist = as_tensor(twist)
    if twist.shape != (6,):
        raise ContractError(f"twist must be a 6-vector, got {twist.shape}")
    return PoseSE3(rodrigues(twist[0:3]), twist[3:6], check=False)


def pose_compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """``a`` after ``b``: X -> R_a (R_b X + t_b) + t_a."""
    rot = ad.matmul(a.rotation, b.rotation)
    trans = ad.add(ad.reshape(ad.matmul(a.rotation, ad.reshape(b.translation, (3, 1))), (3,)), a.translation)
    return PoseSE3(rot, trans, check=False)


def pose_invert(a: PoseSE3) -> PoseSE3:
    rt = ad.transpose(a.rotation)
    trans = ad.neg(ad.reshape(ad.matmul(rt, ad.reshape(a.translation, (3, 1))), (3,)))
    return PoseSE3(rt, trans, check=False)


@dataclass
class WarpField:
    """Per-pixel target coordinates ``coords`` [2,H,W] (u then v) and a validity mask."""

    coords: Tensor
    valid: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape

    def detach(self) -> "WarpField":
        return WarpField(self.coords.detach(), self.valid)


_GRID_CACHE: dict = {}


def pixel_rays(K: Intrinsics, height: int, width: int) -> np.ndarray:
    """K^-1 p for every pixel, shape [3, H*W] with unit z."""
    key = (K.fx, K.fy, K.cx, K.cy, height, width)
    rays = _GRID_CACHE.get(key)
    if rays is None:
        v, u = np.mgrid[0:height, 0:width].astype(np.float64)
        rays = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)]).reshape(3, -1)
        rays.flags.writeable = False
        if len(_GRID_CACHE) > 64:
            _GRID_CACHE.clear()
        _GRID_CACHE[key] = rays
    return rays


def project(depth, pose: PoseSE3, K: Intrinsics) -> WarpField:
    """Map every pixel of a depth map into the target view: p' ~ K T D(p) K^-1 p."""
    depth = as_tensor(depth)
    if depth.ndim != 2:
        raise ContractError(f"depth must be [H,W], got {depth.shape}")
    h, w = depth.shape
    if np.any(depth.data <= 0):
        raise ContractError("depth must be positive")
    rays = pixel_rays(K, h, w)
    pts = ad.mul(ad.broadcast_to(ad.reshape(depth, (1, h * w)), (3, h * w)), rays)
    cam = ad.add(
        ad.matmul(pose.rotation, pts),
        ad.broadcast_to(ad.reshape(pose.translation, (3, 1)), (3, h * w)),
    )
    x, y, z = cam[0], cam[1], cam[2]
    in_front = z.data > 1e-9
    z_safe = ad.where(in_front, z, np.ones(h * w))
    u = ad.add(ad.mul(ad.div(x, z_safe), K.fx), K.cx)
    v = ad.add(ad.mul(ad.div(y, z_safe), K.fy), K.cy)
    ud, vd = u.data, v.data
    valid = in_front & (ud >= 0) & (ud <= w - 1) & (vd >= 0) & (vd <= h - 1)
    coords = ad.reshape(ad.stack([u, v]), (2, h, w))
    return WarpField(coords, valid.reshape(h, w))


def projected_depth(depth, pose: PoseSE3, K: Intrinsics) -> np.ndarray:
    """z of each back-projected point in the target frame (no gradient)."""
    d = as_tensor(depth).data
    h, w = d.shape
    pts = pixel_rays(K, h, w) * d.reshape(1, -1)
    cam = pose.rotation.data @ pts + pose.translation.data[:, None]
    return cam[2].reshape(h, w)


def bilinear_sample(source, warp: WarpField) -> Tensor:
    """Sample a [C,H,W] source at the warp coordinates; invalid pixels give 0."""
    source = as_tensor(source)
    coords = warp.coords
    if source.ndim != 3 or source.shape[1:] != warp.shape or coords.shape != (2,) + warp.shape:
        raise ContractError(f"source {source.shape} incompatible with warp {warp.shape}")
    c, h, w = source.shape
    valid = warp.valid
    u = np.where(valid, coords.data[0], 0.0)
    v = np.where(valid, coords.data[1], 0.0)
    u0 = np.clip(np.floor(u), 0, max(w - 2, 0)).astype(np.intp)
    v0 = np.clip(np.floor(v), 0, max(h - 2, 0)).astype(np.intp)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = u - u0
    fv = v - v0
    s = source.data
    s00, s01 = s[:, v0, u0], s[:, v0, u1]
    s10, s11 = s[:, v1, u0], s[:, v1, u1]
    w00 = (1 - fu) * (1 - fv)
    w01 = fu * (1 - fv)
    w10 = (1 - fu) * fv
    w11 = fu * fv
    m = valid.astype(np.float64)
    out = (w00 * s00 + w01 * s01 + w10 * s10 + w11 * s11) * m

    def bw(g):
        g = g * m
        gs = None
        if source.requires_grad:
            gs = np.zeros((c, h * w))
            for wt, vi, ui in ((w00, v0, u0), (w01, v0, u1), (w10, v1, u0), (w11, v1, u1)):
                idx = (vi * w + ui).reshape(-1)
                contrib = (g * wt).reshape(c, -1)
                for ch in range(c):
                    gs[ch] += np.bincount(idx, weights=contrib[ch], minlength=h * w)
            gs = gs.reshape(c, h, w)
        gc = None
        if coords.requires_grad:
            du = ((1 - fv) * (s01 - s00) + fv * (s11 - s10)) * g
            dv = ((1 - fu) * (s10 - s00) + fu * (s11 - s01)) * g
            gc = np.stack([du.sum(axis=0), dv.sum(axis=0)])
        return gs, gc

    return ad.record(out, (source, coords), bw)
