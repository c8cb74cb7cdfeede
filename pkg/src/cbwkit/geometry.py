"""Pinhole camera model and SE(3) pose algebra on differentiable tensors."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def downscaled(self, factor: int) -> "Intrinsics":
        """Intrinsics after ``factor``-fold area downsampling (pixel centres at integers)."""
        if factor == 1:
            return self
        return Intrinsics(
            self.fx / factor,
            self.fy / factor,
            (self.cx + 0.5) / factor - 0.5,
            (self.cy + 0.5) / factor - 0.5,
        )

    def flipped(self, width: int) -> "Intrinsics":
        return Intrinsics(self.fx, self.fy, width - 1 - self.cx, self.cy)

    def as_list(self) -> list[float]:
        return [self.fx, self.fy, self.cx, self.cy]


class PoseSE3:
    """Rigid transform ``x -> R x + t``; ``rotation`` is [3,3], ``translation`` is [3]."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation):
        self.rotation = T.as_tensor(rotation)
        self.translation = T.as_tensor(translation, dtype=self.rotation.dtype)

    @classmethod
    def identity(cls, dtype=np.float64) -> "PoseSE3":
        return cls(np.eye(3, dtype=dtype), np.zeros(3, dtype=dtype))

    @classmethod
    def from_matrix(cls, m) -> "PoseSE3":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3].copy(), m[:3, 3].copy())

    @property
    def matrix(self) -> np.ndarray:
        out = np.eye(4, dtype=self.rotation.dtype)
        out[:3, :3] = self.rotation.data
        out[:3, 3] = self.translation.data
        return out

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """``self ∘ other``: apply ``other`` first."""
        r = T.matmul(self.rotation, other.rotation)
        t = T.matmul(self.rotation, other.translation.reshape(3, 1)).reshape(3) + self.translation
        return PoseSE3(r, t)

    def inverse(self) -> "PoseSE3":
        return pose_inverse(self)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.data.T + self.translation.data

    def detach(self) -> "PoseSE3":
        return PoseSE3(self.rotation.data, self.translation.data)


def _rank0(x, dtype):
    return T.Tensor(np.asarray(x, dtype=dtype))


def pose_from_vector(v) -> PoseSE3:
    """(α, β, γ, t_x, t_y, t_z) -> pose with rotation R_x(α) R_y(β) R_z(γ)."""
    v = T.as_tensor(v)
    if v.shape != (6,):
        raise ValueError(f"pose vector must have shape (6,), got {v.shape}")
    dt = v.dtype
    zero, one = _rank0(0.0, dt), _rank0(1.0, dt)
    a, b, g = v[0], v[1], v[2]
    ca, sa, cb, sb, cg, sg = T.cos(a), T.sin(a), T.cos(b), T.sin(b), T.cos(g), T.sin(g)
    rx = T.stack([one, zero, zero, zero, ca, -sa, zero, sa, ca]).reshape(3, 3)
    ry = T.stack([cb, zero, sb, zero, one, zero, -sb, zero, cb]).reshape(3, 3)
    rz = T.stack([cg, -sg, zero, sg, cg, zero, zero, zero, one]).reshape(3, 3)
    return PoseSE3(T.matmul(T.matmul(rx, ry), rz), v[3:6])


def vector_from_pose(pose) -> np.ndarray:
    """Inverse of :func:`pose_from_vector` with β in [-π/2, π/2]. Accepts a pose or 4×4 matrix."""
    m = pose.matrix if isinstance(pose, PoseSE3) else np.asarray(pose, dtype=np.float64)
    r = m[:3, :3]
    b = np.arcsin(np.clip(r[0, 2], -1.0, 1.0))
    a = np.arctan2(-r[1, 2], r[2, 2])
    g = np.arctan2(-r[0, 1], r[0, 0])
    return np.array([a, b, g, *m[:3, 3]])


def pose_inverse(pose: PoseSE3) -> PoseSE3:
    rt = T.transpose(pose.rotation, (1, 0))
    t = -T.matmul(rt, pose.translation.reshape(3, 1)).reshape(3)
    return PoseSE3(rt, t)


@lru_cache(maxsize=64)
def _grid(h: int, w: int, dtype_str: str) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.meshgrid(np.arange(h, dtype=dtype_str), np.arange(w, dtype=dtype_str), indexing="ij")
    xs.setflags(write=False)
    ys.setflags(write=False)
    return xs, ys


def pixel_grid(h: int, w: int, dtype=np.float64) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-centre coordinates ``(x, y)``, each [H,W]; x is the column index."""
    return _grid(h, w, np.dtype(dtype).str)


def pixel_to_camera(K: Intrinsics, depth: Tensor, grid=None) -> Tensor:
    """Back-project a depth map [H,W] to camera coordinates [H,W,3]."""
    depth = T.as_tensor(depth)
    h, w = depth.shape
    xs, ys = grid if grid is not None else pixel_grid(h, w, depth.dtype)
    rx = T.Tensor(((xs - K.cx) / K.fx).astype(depth.dtype))
    ry = T.Tensor(((ys - K.cy) / K.fy).astype(depth.dtype))
    return T.stack([depth * rx, depth * ry, depth], axis=-1)


class Projection(NamedTuple):
    coords: Tensor  # [H,W,2] pixel position in the destination view
    flow: Tensor  # [H,W,2] coords minus the source grid
    depth: Tensor  # [H,W] z of the transformed point
    valid: np.ndarray  # [H,W] bool, transformed z above z_min


def transform_and_project(
    K: Intrinsics, points: Tensor, pose: PoseSE3, z_min: float = 1e-3
) -> Projection:
    """Move camera points by ``pose`` and project them with ``K``."""
    h, w, _ = points.shape
    dt = points.dtype
    flat = points.reshape(h * w, 3)
    moved = T.matmul(flat, T.transpose(pose.rotation, (1, 0)))
    moved = moved + T.broadcast_to(pose.translation.reshape(1, 3), (h * w, 3))
    x, y, z = moved[:, 0], moved[:, 1], moved[:, 2]
    valid = z.data > z_min
    z_safe = T.where(valid, z, T.Tensor(np.ones(h * w, dtype=dt)))
    u = x / z_safe * K.fx + K.cx
    v = y / z_safe * K.fy + K.cy
    coords = T.stack([u, v], axis=-1).reshape(h, w, 2)
    xs, ys = pixel_grid(h, w, dt)
    flow = coords - T.Tensor(np.stack([xs, ys], axis=-1))
    return Projection(coords, flow, z.reshape(h, w), valid.reshape(h, w))
