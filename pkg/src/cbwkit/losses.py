"""Photometric, occlusion, depth-consistency, feature and smoothness terms.

Everything a direction needs lives on that direction's destination grid. The
``tgt``-suffixed weights belong to the ref→tgt direction (target grid), the
``ref``-suffixed ones to tgt→ref (reference grid).
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from . import tensor as T
from .geometry import Intrinsics, pose_from_vector
from .tensor import Tensor
from .view_synthesis import BidirBundle, Direction, synthesize_bidirectional, warp_map


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str):
        super().__init__(f"non-finite value in loss term {term!r}")
        self.term = term


@dataclass(frozen=True)
class LambdaConfig:
    p_tgt: float = 1.0
    p_ref: float = 1.0
    occ_tgt: float = 1.0
    occ_ref: float = 1.0
    aw_tgt: float = 1.0
    aw_ref: float = 1.0
    dsc_tgt: float = 0.5
    dsc_ref: float = 0.5
    feat_tgt: float = 0.05
    feat_ref: float = 0.05
    d_tgt: float = 0.01
    d_ref: float = 0.01
    f_tgt: float = 0.001
    f_ref: float = 0.001

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"lambda {f.name} must be >= 0")

    def side(self, side: str) -> dict[str, float]:
        """The seven weights of one direction, keyed without the suffix."""
        return {f.name[: -len(side) - 1]: getattr(self, f.name) for f in fields(self) if f.name.endswith(side)}

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))


def _row(*vals: float) -> LambdaConfig:
    return LambdaConfig(*vals)


# Rows of the ablation table, columns in LambdaConfig field order.
PRESETS: dict[str, LambdaConfig] = {
    "baseline": _row(1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0.01, 0, 0, 0),
    "bi": _row(1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0.01, 0.01, 0, 0),
    "occ": _row(1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0.01, 0, 0, 0),
    "bi-occ": _row(1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0.01, 0.01, 0, 0),
    "occ-dsc": _row(1, 0, 1, 0, 0, 0, 0.5, 0, 0, 0, 0.01, 0, 0, 0),
    "bi-occ-dsc": _row(1, 1, 1, 1, 0, 0, 0.5, 0.5, 0, 0, 0.01, 0.01, 0, 0),
    "occ-dsc-aw": _row(1, 0, 1, 0, 1, 0, 0.5, 0, 0, 0, 0.01, 0.01, 0, 0),
    "bi-occ-dsc-aw": _row(1, 1, 1, 1, 1, 1, 0.5, 0.5, 0, 0, 0.01, 0.01, 0, 0),
    "occ-dsc-aw-feat": _row(1, 0, 1, 0, 1, 0, 0.5, 0, 0.05, 0, 0.01, 0, 0.001, 0),
    "full": _row(1, 1, 1, 1, 1, 1, 0.5, 0.5, 0.05, 0.05, 0.01, 0.01, 0.001, 0.001),
}


@dataclass(frozen=True)
class LossConstants:
    alpha: float = 0.85
    eps: float = 0.01
    c1: float = 0.01**2
    c2: float = 0.03**2
    occ_alpha1: float = 0.01
    occ_alpha2: float = 0.5
    ssim_window: int = 3

    def __post_init__(self):
        if self.ssim_window % 2 != 1:
            raise ValueError("ssim_window must be odd")


DEFAULT_CONSTANTS = LossConstants()


# -- per-pixel primitives ----------------------------------------------------------


def ssim(a, b, consts: LossConstants = DEFAULT_CONSTANTS) -> Tensor:
    """Per-pixel SSIM of two [C,H,W] images over a reflection-padded local window."""
    a, b = T.as_tensor(a), T.as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"ssim shape mismatch {a.shape} vs {b.shape}")
    c, h, w = a.shape
    k = consts.ssim_window
    stacked = T.concat([a, b, a * a, b * b, a * b], axis=0).reshape(1, 5 * c, h, w)
    pooled = T.avg_pool(T.pad2d(stacked, k // 2, "reflection"), k).reshape(5 * c, h, w)
    mu_a, mu_b = pooled[:c], pooled[c : 2 * c]
    var_a = pooled[2 * c : 3 * c] - mu_a * mu_a
    var_b = pooled[3 * c : 4 * c] - mu_b * mu_b
    cov = pooled[4 * c :] - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + consts.c1) * (2.0 * cov + consts.c2)
    den = (mu_a * mu_a + mu_b * mu_b + consts.c1) * (var_a + var_b + consts.c2)
    return num / den


def erf_robust(m, n, eps: float = DEFAULT_CONSTANTS.eps) -> Tensor:
    m, n = T.as_tensor(m), T.as_tensor(n)
    return T.sqrt(T.square(m - n) + eps * eps)


def photometric_pair(I, I_hat, consts: LossConstants = DEFAULT_CONSTANTS) -> Tensor:
    """Blend of SSIM dissimilarity and the robust error, channel-averaged to [H,W]."""
    I, I_hat = T.as_tensor(I), T.as_tensor(I_hat)
    s = ssim(I, I_hat, consts)
    e = erf_robust(I, I_hat, consts.eps)
    per_channel = consts.alpha * 0.5 * (1.0 - s) + (1.0 - consts.alpha) * e
    return per_channel.mean(axis=0)


def indicator(a, b) -> np.ndarray:
    """1 where a < b, else 0. Never carries gradient."""
    a = a.data if isinstance(a, Tensor) else np.asarray(a)
    b = b.data if isinstance(b, Tensor) else np.asarray(b)
    return (a < b).astype(np.result_type(a, b, np.float32))


def camera_flow_occlusion(u, u_hat, consts: LossConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    """Flag pixels whose flow and the warped opposite flow fail to cancel.

    ``u`` and ``u_hat`` are [H,W,2]. A pixel is occluded (1) when the squared norm of
    their sum reaches ``alpha1 * (|u|^2 + |u_hat|^2) + alpha2``.
    """
    u = u.data if isinstance(u, Tensor) else np.asarray(u)
    u_hat = u_hat.data if isinstance(u_hat, Tensor) else np.asarray(u_hat)
    mismatch = np.sum((u + u_hat) ** 2, axis=-1)
    bound = consts.occ_alpha1 * (np.sum(u**2, axis=-1) + np.sum(u_hat**2, axis=-1)) + consts.occ_alpha2
    return 1.0 - indicator(mismatch, bound)


def depth_structure_diff(z_proj, d_interp, valid, eps: float = DEFAULT_CONSTANTS.eps) -> Tensor:
    z_proj, d_interp = T.as_tensor(z_proj), T.as_tensor(d_interp)
    valid = np.asarray(valid, dtype=bool)
    den = T.where(valid, z_proj + d_interp, T.Tensor(np.ones(valid.shape, dtype=z_proj.dtype)))
    return T.where(valid, erf_robust(z_proj, d_interp, eps) / den, T.Tensor(np.zeros(valid.shape, z_proj.dtype)))


def adaptive_weights(diff, lam_aw: float) -> np.ndarray:
    d = diff.data if isinstance(diff, Tensor) else np.asarray(diff)
    return np.clip(1.0 - lam_aw * d, 0.0, 1.0)


def masked_mean(x: Tensor, mask: np.ndarray) -> tuple[Tensor | None, int]:
    """Sum of ``x * mask`` over the count of positive mask entries; None if empty."""
    n = int(np.count_nonzero(mask > 0))
    if n == 0:
        return None, 0
    return (x * T.Tensor(mask.astype(x.dtype))).sum() / float(n), n


def dsc_loss(diff_tgt, diff_ref, valid_tgt, valid_ref, lam: LambdaConfig, flags: list | None = None) -> Tensor:
    """Weighted per-direction means of the depth structure difference over valid pixels."""
    total = None
    for diff, valid, weight, name in (
        (diff_tgt, valid_tgt, lam.dsc_tgt, "ref2tgt"),
        (diff_ref, valid_ref, lam.dsc_ref, "tgt2ref"),
    ):
        if diff is None:
            continue
        m, _ = masked_mean(T.as_tensor(diff), np.asarray(valid, dtype=np.float64))
        if m is None:
            if flags is not None:
                flags.append(f"dsc:{name}:empty")
            continue
        term = weight * m
        total = term if total is None else total + term
    return total if total is not None else T.Tensor(0.0)


def feature_perception_loss(f_tgt, f_hat_tgt, f_ref, f_hat_ref, valid_tgt, valid_ref, lam: LambdaConfig) -> Tensor:
    total = None
    for f, f_hat, valid, weight in (
        (f_tgt, f_hat_tgt, valid_tgt, lam.feat_tgt),
        (f_ref, f_hat_ref, valid_ref, lam.feat_ref),
    ):
        if f is None:
            continue
        f, f_hat = T.as_tensor(f), T.as_tensor(f_hat)
        m, _ = masked_mean(T.abs(f - f_hat).mean(axis=0), np.asarray(valid, dtype=np.float64))
        if m is None:
            continue
        term = weight * m
        total = term if total is None else total + term
    return total if total is not None else T.Tensor(0.0)


def edge_aware_smoothness(m: Tensor, image) -> Tensor:
    """mean |∂m| e^{-|∂I|} over the x and y differences actually defined."""
    m = T.as_tensor(m)
    image = image.data if isinstance(image, Tensor) else np.asarray(image)
    h, w = m.shape[-2:]
    if m.ndim == 2:
        m = m.reshape(1, h, w)
    dx, dy = T.spatial_gradient(m)
    img_dx = np.zeros_like(image)
    img_dx[..., :, :-1] = image[..., :, 1:] - image[..., :, :-1]
    img_dy = np.zeros_like(image)
    img_dy[..., :-1, :] = image[..., 1:, :] - image[..., :-1, :]
    wx = np.exp(-np.abs(img_dx).mean(axis=0)).astype(m.dtype)
    wy = np.exp(-np.abs(img_dy).mean(axis=0)).astype(m.dtype)
    sx = (T.abs(dx).mean(axis=0) * T.Tensor(wx)).sum() / float(h * (w - 1))
    sy = (T.abs(dy).mean(axis=0) * T.Tensor(wy)).sum() / float((h - 1) * w)
    return sx + sy


def smoothness_loss(depths, features, images, lam: LambdaConfig, feature_images=None, skip_zero: bool = True) -> Tensor:
    """Edge-aware smoothness on mean-normalised depth and on feature maps.

    ``depths``, ``features``, ``images`` and ``feature_images`` are (target, reference)
    pairs; feature entries may be None. ``feature_images`` default to ``images``.
    """
    feature_images = feature_images if feature_images is not None else images
    total = None
    for i, side in enumerate(("tgt", "ref")):
        lam_d = getattr(lam, f"d_{side}")
        lam_f = getattr(lam, f"f_{side}")
        d = depths[i]
        if d is not None and (lam_d or not skip_zero):
            d = T.as_tensor(d)
            norm = d / d.mean()
            term = lam_d * edge_aware_smoothness(norm, images[i])
            total = term if total is None else total + term
        f = features[i] if features is not None else None
        if f is not None and (lam_f or not skip_zero):
            term = lam_f * edge_aware_smoothness(f, feature_images[i])
            total = term if total is None else total + term
    return total if total is not None else T.Tensor(0.0)


# -- direction-level terms -----------------------------------------------------------


@dataclass
class DirectionMasks:
    occluded: np.ndarray
    adaptive: np.ndarray
    weight: np.ndarray  # (1 - λ_occ·occluded) · W_aw · valid


def direction_masks(d: Direction, diff: Tensor | None, lam: dict, consts: LossConstants) -> DirectionMasks:
    occ = camera_flow_occlusion(d.flow, d.warped_flow, consts)
    aw = adaptive_weights(diff, lam["aw"]) if diff is not None else np.ones(d.shape)
    weight = (1.0 - lam["occ"] * occ) * aw * d.valid
    return DirectionMasks(occ, aw, weight)


def _direction_terms(d: Direction, lam: dict, consts, frozen: DirectionMasks | None, skip_zero: bool, flags, tag):
    need_diff = not skip_zero or lam["dsc"] or lam["aw"]
    diff = depth_structure_diff(d.proj_depth, d.interp_depth, d.valid, consts.eps) if need_diff else None
    masks = frozen if frozen is not None else direction_masks(d, diff, lam, consts)
    photo = None
    if lam["p"] or not skip_zero:
        # out-of-view samples are zero; fill them with the destination so they cannot leak
        # into the SSIM windows of neighbouring valid pixels
        filled = T.where(np.broadcast_to(d.valid, d.warped_image.shape), d.warped_image, T.as_tensor(d.image).detach())
        pe = photometric_pair(d.image, filled, consts)
        m, _ = masked_mean(pe, masks.weight)
        if m is None:
            flags.append(f"photo:{tag}:empty")
        else:
            photo = lam["p"] * m
    dsc = None
    if diff is not None and (lam["dsc"] or not skip_zero):
        m, _ = masked_mean(diff, d.valid.astype(np.float64))
        if m is None:
            flags.append(f"dsc:{tag}:empty")
        else:
            dsc = lam["dsc"] * m
    return photo, dsc, diff, masks


def biw_photometric(bundle: BidirBundle, lam: LambdaConfig, consts: LossConstants = DEFAULT_CONSTANTS) -> Tensor:
    """Occlusion- and depth-weighted photometric loss summed over both directions."""
    flags: list[str] = []
    total = None
    for d, side in ((bundle.ref2tgt, "tgt"), (bundle.tgt2ref, "ref")):
        photo, _, _, _ = _direction_terms(d, lam.side(side), consts, None, True, flags, side)
        if photo is not None:
            total = photo if total is None else total + photo
    return total if total is not None else T.Tensor(0.0)


# -- full objective ------------------------------------------------------------------


TERMS = ("photo", "feat", "dsc", "smooth", "cbw", "total")


@dataclass
class LossReport:
    terms: dict[str, Tensor]
    masks: dict = field(default_factory=dict)  # (ref, scale, direction) -> DirectionMasks
    diagnostics: dict[str, np.ndarray] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    @property
    def total(self) -> Tensor:
        return self.terms["total"]

    def values(self) -> dict[str, float]:
        return {k: float(v.data) for k, v in self.terms.items()}

    def log_lines(self, iteration: int) -> list[str]:
        return [f"iter={iteration} term={k} value={v:.9g}" for k, v in self.values().items()]


@dataclass
class SampleInputs:
    """One training sample: frames [3,H,W] at full resolution plus intrinsics."""

    images: Sequence[np.ndarray]
    K: Intrinsics
    target: int

    @property
    def refs(self) -> list[int]:
        return [i for i in range(len(self.images)) if i != self.target]


@dataclass
class NetworkOutputs:
    """Per-frame multi-scale depths ([H_k,W_k] tensors), per-frame encoder features
    ([C,H_f,W_f]) and one pose vector per reference frame, in ``refs`` order."""

    depths: Sequence[Sequence[Tensor]]
    features: Sequence[Tensor | None]
    poses: Sequence[Tensor]


def image_pyramid(image: np.ndarray, levels: int) -> list[np.ndarray]:
    out = [np.asarray(image)]
    for _ in range(levels - 1):
        x = out[-1]
        c, h, w = x.shape
        out.append(x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4)))
    return out


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _check(name: str, t: Tensor) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteLossError(name)
    return t


def cbw_total(
    sample: SampleInputs,
    outputs: NetworkOutputs,
    lam: LambdaConfig,
    consts: LossConstants = DEFAULT_CONSTANTS,
    frozen: dict | None = None,
    skip_zero_terms: bool = True,
) -> LossReport:
    """Compose the whole objective for one sample.

    Terms are averaged with equal weight over depth scales and over reference frames.
    ``frozen`` supplies precomputed per-direction masks (keyed like ``report.masks``),
    which makes the loss a smooth function of its inputs for gradient checks.
    """
    n_scales = len(outputs.depths[sample.target])
    dtype = outputs.depths[sample.target][0].dtype
    pyramids = [[lvl.astype(dtype) for lvl in image_pyramid(img, n_scales)] for img in sample.images]
    feat_scale = None
    f0 = outputs.features[sample.target]
    if f0 is not None:
        fh = f0.shape[-2]
        feat_scale = next(k for k in range(n_scales) if pyramids[sample.target][k].shape[-2] == fh)

    refs = sample.refs
    flags: list[str] = []
    masks_out: dict = {}
    diagnostics: dict[str, np.ndarray] = {}
    photo = feat = dsc = smooth = feat_smooth = None
    lt, lr = lam.side("tgt"), lam.side("ref")
    tgt = sample.target

    for ri, ref in enumerate(refs):
        pose = pose_from_vector(outputs.poses[ri])
        for k in range(n_scales):
            K = sample.K.downscaled(2**k)
            img_t, img_r = pyramids[tgt][k], pyramids[ref][k]
            D_t, D_r = outputs.depths[tgt][k], outputs.depths[ref][k]
            bundle = synthesize_bidirectional(img_t, img_r, D_t, D_r, K, pose)
            for d, lside, side, dname in (
                (bundle.ref2tgt, lt, "tgt", "ref2tgt"),
                (bundle.tgt2ref, lr, "ref", "tgt2ref"),
            ):
                key = (ri, k, dname)
                fz = frozen.get(key) if frozen is not None else None
                p, s, diff, masks = _direction_terms(d, lside, consts, fz, skip_zero_terms, flags, f"{ri}:{k}:{dname}")
                masks_out[key] = masks
                photo = _add(photo, p)
                dsc = _add(dsc, s)
                if ri == 0 and k == 0:
                    diagnostics[f"occluded_{dname}"] = masks.occluded
                    diagnostics[f"adaptive_{dname}"] = masks.adaptive
                    diagnostics[f"valid_{dname}"] = d.valid
                    if diff is not None:
                        diagnostics[f"depth_diff_{dname}"] = diff.data
            smooth = _add(smooth, smoothness_loss((D_t, D_r), None, (img_t, img_r), lam, skip_zero=skip_zero_terms))
            if k != feat_scale:
                continue
            ft, fr = outputs.features[tgt], outputs.features[ref]
            sm_f = smoothness_loss((None, None), (ft, fr), (img_t, img_r), lam, skip_zero=skip_zero_terms)
            feat_smooth = _add(feat_smooth, sm_f)
            if lam.feat_tgt or lam.feat_ref or not skip_zero_terms:
                fht = warp_map(fr, bundle.ref2tgt.coords, bundle.ref2tgt.valid)
                fhr = warp_map(ft, bundle.tgt2ref.coords, bundle.tgt2ref.valid)
                fl = feature_perception_loss(ft, fht.warped, fr, fhr.warped, fht.valid, fhr.valid, lam)
                feat = _add(feat, fl)

    n_terms = float(len(refs) * n_scales)
    zero = T.Tensor(np.zeros((), dtype=dtype))
    photo = photo / n_terms if photo is not None else zero
    dsc = dsc / n_terms if dsc is not None else zero
    smooth = smooth / n_terms if smooth is not None else zero
    if feat_smooth is not None:
        smooth = smooth + feat_smooth / float(len(refs))
    feat = feat / float(len(refs)) if feat is not None else zero
    terms = {"photo": photo, "feat": feat, "dsc": dsc, "smooth": smooth}
    for name, t in terms.items():
        _check(name, t)
    cbw = photo + feat + dsc
    terms["cbw"] = cbw
    terms["total"] = _check("total", cbw + smooth)
    return LossReport(terms, masks_out, diagnostics, flags)
