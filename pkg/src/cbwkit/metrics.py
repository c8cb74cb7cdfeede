"""Depth error metrics after median scaling, and scale-aligned trajectory error."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .geometry import PoseSE3

MIN_DEPTH = 1e-3
COLUMNS = ("abs_rel", "sq_rel", "rmse", "rmse_log", "a1", "a2", "a3")
HEADERS = ("AbsRel", "SqRel", "RMSE", "RMSElog", "d1", "d2", "d3")


def _mask(gt: np.ndarray, mask) -> np.ndarray:
    m = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != gt.shape:
        raise ValueError(f"mask shape {m.shape} does not match {gt.shape}")
    return m


def median_scale(pred, gt, mask=None) -> float:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    m = _mask(gt, mask)
    if not m.any():
        raise ValueError("median_scale: empty mask")
    if np.any(gt[m] <= 0):
        raise ValueError("median_scale: ground truth must be positive on the mask")
    return float(np.median(gt[m]) / np.median(pred[m]))


@dataclass(frozen=True)
class DepthEvalResult:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    a1: float
    a2: float
    a3: float
    cap: float
    count: int

    def as_dict(self) -> dict:
        return asdict(self)


def depth_metrics(pred, gt, mask=None, cap: float = 80.0) -> DepthEvalResult:
    """Standard metrics over masked pixels with gt <= cap; pred clamped to [1e-3, cap]."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    m = _mask(gt, mask) & (gt > 0) & (gt <= cap)
    if not m.any():
        raise ValueError("depth_metrics: empty mask")
    d, g = np.clip(pred[m], MIN_DEPTH, cap), gt[m]
    ratio = np.maximum(g / d, d / g)
    return DepthEvalResult(
        abs_rel=float(np.mean(np.abs(g - d) / g)),
        sq_rel=float(np.mean((g - d) ** 2 / g)),
        rmse=float(np.sqrt(np.mean((g - d) ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(g) - np.log(d)) ** 2))),
        a1=float(np.mean(ratio < 1.25)),
        a2=float(np.mean(ratio < 1.25**2)),
        a3=float(np.mean(ratio < 1.25**3)),
        cap=float(cap),
        count=int(m.sum()),
    )


def aligned_depth_metrics(pred, gt, mask=None, cap: float = 80.0) -> tuple[DepthEvalResult, float]:
    """Median-scale ``pred`` to ``gt`` over the evaluated pixels, then score it."""
    gt_arr = np.asarray(gt, dtype=np.float64)
    m = _mask(gt_arr, mask) & (gt_arr > 0) & (gt_arr <= cap)
    s = median_scale(pred, gt_arr, m)
    return depth_metrics(np.asarray(pred, dtype=np.float64) * s, gt_arr, m, cap), s


def mean_results(results: list[DepthEvalResult]) -> DepthEvalResult:
    if not results:
        raise ValueError("no results to aggregate")
    vals = {k: float(np.mean([getattr(r, k) for r in results])) for k in COLUMNS}
    return DepthEvalResult(**vals, cap=results[0].cap, count=int(sum(r.count for r in results)))


@dataclass(frozen=True)
class AteResult:
    ate: float
    scale: float
    degenerate: bool  # all predicted translations zero; scale fell back to 1


def _translations(poses) -> np.ndarray:
    out = []
    for p in poses:
        if isinstance(p, PoseSE3):
            out.append(np.asarray(p.translation.data, dtype=np.float64))
            continue
        m = np.asarray(p, dtype=np.float64)
        out.append(m[:3, 3] if m.ndim == 2 else m)
    return np.stack(out)


def ate_snippet(pred_poses, gt_poses) -> AteResult:
    """RMS translation residual after the least-squares global scale.

    Poses are frame-0-relative (PoseSE3 objects, 4x4 / 3x4 matrices or bare 3-vectors).
    """
    tp, tg = _translations(pred_poses), _translations(gt_poses)
    if tp.shape != tg.shape:
        raise ValueError(f"trajectory lengths differ: {tp.shape} vs {tg.shape}")
    denom = float(np.sum(tp * tp))
    degenerate = denom == 0.0
    s = 1.0 if degenerate else float(np.sum(tp * tg)) / denom
    resid = np.linalg.norm(s * tp - tg, axis=1)
    return AteResult(float(np.sqrt(np.mean(resid**2))), s, degenerate)


def format_table(rows: dict[str, DepthEvalResult]) -> str:
    """Aligned text table, one row per named result, in the conventional column order."""
    name_w = max([len("model")] + [len(k) for k in rows])
    head = f"{'model':<{name_w}} " + " ".join(f"{h:>8}" for h in HEADERS)
    lines = [head, "-" * len(head)]
    for name, r in rows.items():
        lines.append(f"{name:<{name_w}} " + " ".join(f"{getattr(r, c):8.4f}" for c in COLUMNS))
    return "\n".join(lines)


def key_value_lines(prefix: str, values: dict) -> list[str]:
    return [f"{prefix}{k}={v:.9g}" if isinstance(v, float) else f"{prefix}{k}={v}" for k, v in values.items()]
