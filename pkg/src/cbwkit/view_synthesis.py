"""Inverse warping between two views, in both directions from one pose."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .geometry import Intrinsics, PoseSE3, pixel_to_camera, pose_inverse, transform_and_project
from .tensor import Tensor


@dataclass
class WarpResult:
    warped: Tensor  # [C,H,W] on the destination grid, 0 where invalid
    valid: np.ndarray  # [H,W] bool


def warp_map(source: Tensor, coords: Tensor, validity_in: np.ndarray | None = None) -> WarpResult:
    """Bilinearly pull ``source[C,H,W]`` to the grid on which ``coords[H',W',2]`` lives."""
    source = T.as_tensor(source)
    c, h, w = source.shape
    hh, ww, _ = coords.shape
    sampled, inb = T.grid_sample_bilinear(source.reshape(1, c, h, w), coords.reshape(1, hh, ww, 2))
    valid = inb.data[0] > 0
    if validity_in is not None:
        valid &= np.asarray(validity_in, dtype=bool)
    mask = np.broadcast_to(valid, (c, hh, ww)).astype(source.dtype)
    return WarpResult(sampled.reshape(c, hh, ww) * T.Tensor(mask), valid)


@dataclass
class Direction:
    """All maps for one warp direction; everything lives on the destination grid.

    ``image`` is the real frame on that grid, ``warped_image`` its synthesis from the
    other frame, ``proj_depth`` the transformed z and ``interp_depth`` the other
    frame's depth sampled at the projected coordinates.
    """

    image: Tensor
    warped_image: Tensor
    coords: Tensor
    flow: Tensor
    proj_depth: Tensor
    interp_depth: Tensor
    warped_flow: np.ndarray  # the opposite direction's flow pulled to this grid
    valid: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape


@dataclass
class BidirBundle:
    ref2tgt: Direction  # target grid: target image vs reference warped with T_tgt→ref
    tgt2ref: Direction  # reference grid, pose from the exact inverse
    pose_tgt2ref: PoseSE3
    pose_ref2tgt: PoseSE3


def _warp_pair(image_src: Tensor, depth_src: Tensor, proj) -> tuple[Tensor, Tensor, np.ndarray]:
    c = image_src.shape[0]
    stacked = T.concat([image_src, depth_src.reshape(1, *depth_src.shape)], axis=0)
    res = warp_map(stacked, proj.coords, proj.valid)
    return res.warped[:c], res.warped[c], res.valid


def synthesize_bidirectional(
    I_tgt,
    I_ref,
    D_tgt: Tensor,
    D_ref: Tensor,
    K: Intrinsics,
    pose_tgt2ref: PoseSE3,
    z_min: float = 1e-3,
) -> BidirBundle:
    I_tgt, I_ref = T.as_tensor(I_tgt), T.as_tensor(I_ref)
    D_tgt, D_ref = T.as_tensor(D_tgt), T.as_tensor(D_ref)
    pose_ref2tgt = pose_inverse(pose_tgt2ref)

    proj_t = transform_and_project(K, pixel_to_camera(K, D_tgt), pose_tgt2ref, z_min)
    proj_r = transform_and_project(K, pixel_to_camera(K, D_ref), pose_ref2tgt, z_min)

    warped_t, interp_t, valid_t = _warp_pair(I_ref, D_ref, proj_t)
    warped_r, interp_r, valid_r = _warp_pair(I_tgt, D_tgt, proj_r)

    with T.no_grad():
        uf_hat = warp_map(proj_r.flow.data.transpose(2, 0, 1), T.Tensor(proj_t.coords.data)).warped
        ub_hat = warp_map(proj_t.flow.data.transpose(2, 0, 1), T.Tensor(proj_r.coords.data)).warped

    ref2tgt = Direction(
        I_tgt, warped_t, proj_t.coords, proj_t.flow, proj_t.depth, interp_t,
        uf_hat.data.transpose(1, 2, 0), valid_t,
    )
    tgt2ref = Direction(
        I_ref, warped_r, proj_r.coords, proj_r.flow, proj_r.depth, interp_r,
        ub_hat.data.transpose(1, 2, 0), valid_r,
    )
    return BidirBundle(ref2tgt, tgt2ref, pose_tgt2ref, pose_ref2tgt)
