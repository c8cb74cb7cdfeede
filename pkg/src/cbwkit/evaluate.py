"""Depth and trajectory evaluation of trained networks on a synthetic dataset."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .geometry import PoseSE3, pose_from_vector
from .metrics import DepthEvalResult, aligned_depth_metrics, ate_snippet, mean_results
from .networks import CameraNet, DepthNet
from .synth import Dataset, SampleSnippet


def predict_depths(depth: DepthNet, frames: np.ndarray, chunk: int = 16) -> np.ndarray:
    """Full-resolution depth for frames [N,3,H,W]."""
    dtype = depth.params["enc0.w"].dtype
    out = []
    with T.no_grad():
        for i in range(0, len(frames), chunk):
            depths, _ = depth(np.asarray(frames[i : i + chunk], dtype=dtype))
            out.append(depths[0].data[:, 0].astype(np.float64))
    return np.concatenate(out)


def predict_trajectory(camera: CameraNet, snippet: SampleSnippet) -> list[PoseSE3]:
    """Camera-to-frame-0 poses implied by the predicted target-to-reference transforms."""
    dtype = camera.params["pose.w"].dtype
    tgt, refs = snippet.target_index, snippet.refs
    stacked = np.concatenate([snippet.frames[i] for i in [tgt] + refs]).astype(dtype)
    with T.no_grad():
        vecs = camera(stacked[None]).data[0].astype(np.float64)
    in_tgt = {tgt: np.eye(4)}
    for j, r in enumerate(refs):
        # the network maps target coordinates into reference coordinates; invert for camera-to-target
        in_tgt[r] = np.linalg.inv(pose_from_vector(vecs[j]).matrix)
    base = np.linalg.inv(in_tgt[0])
    return [PoseSE3.from_matrix(base @ in_tgt[i]) for i in range(len(snippet.frames))]


@dataclass
class EvalReport:
    depth: DepthEvalResult
    ate_mean: float
    ate_std: float
    identity_ate_mean: float
    frames: int
    snippets: int
    per_frame: list[DepthEvalResult] = field(default_factory=list)
    ate: list[float] = field(default_factory=list)

    def key_values(self) -> dict:
        d = {k: getattr(self.depth, k) for k in ("abs_rel", "sq_rel", "rmse", "rmse_log", "a1", "a2", "a3")}
        d.update(
            ate_mean=self.ate_mean,
            ate_std=self.ate_std,
            identity_ate_mean=self.identity_ate_mean,
            cap=self.depth.cap,
            frames=self.frames,
            snippets=self.snippets,
        )
        return d


def _unique_frames(dataset: Dataset):
    for name in dict.fromkeys(r.scene for r in dataset.refs):
        moving = next(r.moving for r in dataset.refs if r.scene == name)
        seq = dataset.sequence(name, moving)
        yield name, seq


def evaluate(
    depth: DepthNet,
    camera: CameraNet | None,
    dataset: Dataset,
    cap: float = 80.0,
    predictor=None,
) -> EvalReport:
    """Per-frame median-scaled depth metrics (averaged) and per-snippet ATE.

    ``predictor(frames) -> depths`` overrides the network depth prediction.
    """
    per_frame = []
    for _, seq in _unique_frames(dataset):
        h, w = seq.frames.shape[-2:]
        if h % 32 or w % 32:
            raise ValueError(f"frame size {(h, w)} is not a multiple of 32")
        preds = predictor(seq.frames) if predictor is not None else predict_depths(depth, seq.frames)
        if preds.shape != seq.gt_depths.shape:
            raise ValueError(f"prediction shape {preds.shape} does not match ground truth {seq.gt_depths.shape}")
        for p, g in zip(preds, seq.gt_depths):
            per_frame.append(aligned_depth_metrics(p, g, g > 0, cap)[0])
    ates, ident = [], []
    if camera is not None and len(dataset) and len(dataset[0].frames) != camera.n_ref + 1:
        raise ValueError(f"checkpoint expects {camera.n_ref + 1}-frame snippets, dataset has {len(dataset[0].frames)}")
    for i in range(len(dataset)):
        sn = dataset[i]
        gt = list(sn.gt_poses)
        ident.append(ate_snippet([np.zeros(3)] * len(gt), gt).ate)
        if camera is not None:
            ates.append(ate_snippet(predict_trajectory(camera, sn), gt).ate)
    ates_arr = np.array(ates) if ates else np.array([np.nan])
    return EvalReport(
        mean_results(per_frame),
        float(np.mean(ates_arr)),
        float(np.std(ates_arr)),
        float(np.mean(ident)),
        len(per_frame),
        len(dataset),
        per_frame,
        ates,
    )


# -- image emission -----------------------------------------------------------------


def _write_ppm(path: Path, rgb: np.ndarray) -> None:
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + np.clip(np.rint(rgb * 255), 0, 255).astype(np.uint8).tobytes())


def colorize(values: np.ndarray, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    """Map values to an RGB ramp (dark blue → red → yellow); returns [H,W,3] in [0,1]."""
    lo = float(np.min(values)) if lo is None else lo
    hi = float(np.max(values)) if hi is None else hi
    t = np.clip((values - lo) / max(hi - lo, 1e-12), 0, 1)
    r = np.clip(1.5 * t, 0, 1)
    g = np.clip(2.0 * t - 1.0, 0, 1)
    b = np.clip(0.6 - 1.2 * np.abs(t - 0.25), 0, 1)
    return np.stack([r, g, b], axis=-1)


def render_depth_images(depth: DepthNet, dataset: Dataset, out_dir: Path, limit: int | None = None) -> list[Path]:
    """Write inverse-depth and |pred - gt| error maps (median-scaled) for every frame."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    count = 0
    for name, seq in _unique_frames(dataset):
        preds = predict_depths(depth, seq.frames)
        for i, (p, g) in enumerate(zip(preds, seq.gt_depths)):
            if limit is not None and count >= limit:
                return written
            s = float(np.median(g) / np.median(p))
            inv = 1.0 / np.maximum(p * s, 1e-6)
            a = out_dir / f"{name}_frame_{i}.invdepth.ppm"
            b = out_dir / f"{name}_frame_{i}.error.ppm"
            _write_ppm(a, colorize(inv))
            _write_ppm(b, colorize(np.abs(p * s - g), 0.0, float(np.max(g)) * 0.25))
            written += [a, b]
            count += 1
    return written
