"""Joint DepthNet + CameraNet training on the composed objective."""
from __future__ import annotations

import queue
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .geometry import Intrinsics
from .losses import NetworkOutputs, NonFiniteLossError, SampleInputs, cbw_total
from .networks import CameraNet, DepthNet, init_params, network_state, save_checkpoint
from .optim import AdamW, clip_grad_norm
from .synth import Dataset, SampleSnippet


# -- augmentation -------------------------------------------------------------------


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize [C,H,W] with pixel-centre alignment (edge samples clamped)."""
    c, h, w = img.shape
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.minimum(np.floor(ys).astype(np.int64), h - 2)
    x0 = np.minimum(np.floor(xs).astype(np.int64), w - 2)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    a = img[:, y0][:, :, x0]
    b = img[:, y0][:, :, x0 + 1]
    cc = img[:, y0 + 1][:, :, x0]
    d = img[:, y0 + 1][:, :, x0 + 1]
    return (a * (1 - wx) + b * wx) * (1 - wy) + (cc * (1 - wx) + d * wx) * wy


def augment(frames: np.ndarray, K: Intrinsics, rng: np.random.Generator, cfg: TrainConfig) -> tuple[np.ndarray, Intrinsics]:
    """Random scale-crop then random horizontal flip, applied identically to every frame."""
    n, c, h, w = frames.shape
    if cfg.scale_crop:
        s = rng.uniform(1.0, cfg.max_scale)
        nh, nw = int(round(h * s)), int(round(w * s))
        oy, ox = int(rng.integers(0, nh - h + 1)), int(rng.integers(0, nw - w + 1))
        if (nh, nw) != (h, w):
            frames = np.stack([resize_bilinear(f, nh, nw)[:, oy : oy + h, ox : ox + w] for f in frames])
            sy, sx = nh / h, nw / w
            K = Intrinsics(K.fx * sx, K.fy * sy, (K.cx + 0.5) * sx - 0.5 - ox, (K.cy + 0.5) * sy - 0.5 - oy)
    if cfg.flip and rng.random() < 0.5:
        frames = frames[..., ::-1]
        K = K.flipped(w)
    return np.ascontiguousarray(frames), K


# -- batching -----------------------------------------------------------------------


@dataclass
class Batch:
    frames: np.ndarray  # [B, n, 3, H, W]
    K: list[Intrinsics]
    target: int
    iteration: int


def snippet_order(n: int, seed: int) -> Iterator[int]:
    """Endless sampling without replacement; each epoch reshuffles with a seeded RNG."""
    epoch = 0
    while True:
        yield from np.random.default_rng([seed, epoch]).permutation(n).tolist()
        epoch += 1


def make_batches(dataset, cfg: TrainConfig, start: int = 0) -> Iterator[Batch]:
    dtype = np.dtype(cfg.dtype)
    order = snippet_order(len(dataset), cfg.seed)
    it = start
    while True:
        rng = np.random.default_rng([cfg.seed, 1, it])
        frames, Ks = [], []
        for _ in range(cfg.batch_size):
            sn: SampleSnippet = dataset[next(order)]
            if len(sn.frames) != cfg.snippet_length:
                raise ValueError(f"snippet length {len(sn.frames)} does not match config {cfg.snippet_length}")
            if sn.frames.shape[-2:] != (cfg.height, cfg.width):
                raise ValueError(f"dataset resolution {sn.frames.shape[-2:]} does not match config {(cfg.height, cfg.width)}")
            f, K = augment(sn.frames, sn.K, rng, cfg)
            frames.append(f.astype(dtype))
            Ks.append(K)
        yield Batch(np.stack(frames), Ks, cfg.snippet_length // 2, it)
        it += 1


def prefetched(gen: Iterator[Batch], depth: int = 2) -> Iterator[Batch]:
    """Run ``gen`` on a worker thread feeding a bounded queue."""
    q: queue.Queue = queue.Queue(maxsize=depth)
    stop = threading.Event()

    def worker():
        try:
            for item in gen:
                while not stop.is_set():
                    try:
                        q.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
        except BaseException as exc:  # surfaced on the consumer side
            q.put(exc)

    th = threading.Thread(target=worker, daemon=True)
    th.start()
    try:
        while True:
            item = q.get()
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()


# -- model step ---------------------------------------------------------------------


def forward_batch(depth: DepthNet, camera: CameraNet, batch: Batch):
    """Run both networks once over the batch; returns per-sample (inputs, outputs)."""
    b, n = batch.frames.shape[:2]
    h, w = batch.frames.shape[-2:]
    depths, feats = depth(batch.frames.reshape(b * n, 3, h, w))
    refs = [i for i in range(n) if i != batch.target]
    order = [batch.target] + refs
    stacked = batch.frames[:, order].reshape(b, 3 * n, h, w)
    poses = camera(stacked)
    samples = []
    for s in range(b):
        per_frame = [[depths[k][s * n + i, 0] for k in range(len(depths))] for i in range(n)]
        fts = [feats[s * n + i] for i in range(n)]
        pv = [poses[s, j] for j in range(len(refs))]
        inputs = SampleInputs([batch.frames[s, i] for i in range(n)], batch.K[s], batch.target)
        samples.append((inputs, NetworkOutputs(per_frame, fts, pv)))
    return samples


def batch_loss(depth: DepthNet, camera: CameraNet, batch: Batch, cfg: TrainConfig):
    lam = cfg.lambdas
    reports = [cbw_total(inp, out, lam) for inp, out in forward_batch(depth, camera, batch)]
    total = reports[0].total
    for r in reports[1:]:
        total = total + r.total
    total = total / float(len(reports))
    values = {k: float(np.mean([r.values()[k] for r in reports])) for k in reports[0].terms}
    return total, values, reports


@dataclass
class TrainResult:
    iterations: int
    history: list[dict]
    checkpoint: Path | None
    aborted: bool = False
    error: str = ""


class NumericFailure(RuntimeError):
    """Training hit a non-finite loss, gradient or parameter."""


def train(
    cfg: TrainConfig,
    dataset: Dataset,
    out_ckpt: Path | None,
    log_path: Path | None = None,
    progress: Callable[[int, dict], None] | None = None,
    networks: tuple[DepthNet, CameraNet] | None = None,
) -> TrainResult:
    """Optimise both networks; writes the checkpoint at start, every K iterations and at the end.

    On a non-finite value the run stops, the last written checkpoint is left untouched
    and ``NumericFailure`` is raised.
    """
    dtype = np.dtype(cfg.dtype)
    depth, camera = networks or init_params(cfg.seed, n_ref=cfg.snippet_length - 1, dtype=dtype)
    params = {f"depth.{k}": v for k, v in depth.params.items()}
    params.update({f"camera.{k}": v for k, v in camera.params.items()})
    opt = AdamW(params, cfg.lr, cfg.beta1, cfg.beta2, weight_decay=cfg.weight_decay)
    history: list[dict] = []
    log = open(log_path, "w") if log_path is not None else None

    def checkpoint():
        if out_ckpt is not None:
            tmp = Path(str(out_ckpt) + ".tmp")
            save_checkpoint(tmp, network_state(depth, camera))
            tmp.replace(out_ckpt)

    try:
        checkpoint()
        if cfg.iterations == 0:
            return TrainResult(0, history, out_ckpt)
        batches = make_batches(dataset, cfg)
        if not cfg.deterministic:
            batches = prefetched(batches)
        for it in range(1, cfg.iterations + 1):
            batch = next(batches)
            opt.zero_grad()
            try:
                total, values, _ = batch_loss(depth, camera, batch, cfg)
            except NonFiniteLossError as exc:
                raise NumericFailure(f"iteration {it}: {exc}") from exc
            T.backward(total)
            gnorm = clip_grad_norm(params, cfg.grad_clip)
            if not np.isfinite(gnorm):
                raise NumericFailure(f"iteration {it}: non-finite gradient norm")
            opt.step()
            if not all(np.all(np.isfinite(p.data)) for p in params.values()):
                raise NumericFailure(f"iteration {it}: non-finite parameters after update")
            values["grad_norm"] = gnorm
            history.append(values)
            if log is not None:
                log.write("".join(f"iter={it} term={k} value={v:.9g}\n" for k, v in values.items()))
                log.flush()
            if progress is not None:
                progress(it, values)
            if cfg.checkpoint_every and it % cfg.checkpoint_every == 0 and it != cfg.iterations:
                checkpoint()
        checkpoint()
        return TrainResult(cfg.iterations, history, out_ckpt)
    finally:
        if log is not None:
            log.close()
