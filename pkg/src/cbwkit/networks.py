"""Toy-width depth and camera networks built on the tensor module.

DepthNet: five stride-2 encoder stages; five decoder blocks, each a 3x3 conv on
the running map concatenated with the same-resolution encoder output, ELU, then
2x upsampling; sigmoid depth heads on the last three block outputs. CameraNet: seven stride-2 convs,
a 1x1 conv to 6 values per reference frame and global average pooling.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor

DEPTH_ALPHA = 10.0
DEPTH_BETA = 0.01
POSE_SCALE = 0.01
IMAGE_MEAN = 0.45
IMAGE_STD = 0.225


def disp_to_depth(s: Tensor) -> Tensor:
    return 1.0 / (DEPTH_ALPHA * s + DEPTH_BETA)


def _conv_param(rng: np.random.Generator, f: int, c: int, k: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    bound = np.sqrt(6.0 / (c * k * k))
    w = rng.uniform(-bound, bound, size=(f, c, k, k)).astype(dtype)
    return w, np.zeros(f, dtype=dtype)


@dataclass
class DepthNet:
    params: dict[str, Tensor]
    enc_widths: tuple[int, ...]
    dec_widths: tuple[int, ...]

    @classmethod
    def init(cls, rng: np.random.Generator, enc_widths=(8, 16, 32, 64, 64), dec_widths=(8, 16, 16, 32, 32), dtype=np.float64):
        if len(enc_widths) != 5 or len(dec_widths) != 5:
            raise ValueError("DepthNet needs five encoder and five decoder widths")
        p: dict[str, np.ndarray] = {}
        c = 3
        for i, f in enumerate(enc_widths):
            p[f"enc{i}.w"], p[f"enc{i}.b"] = _conv_param(rng, f, c, 3, dtype)
            c = f
        for i in range(4, -1, -1):
            f = dec_widths[i]
            skip = enc_widths[i] if i < 4 else 0
            p[f"dec{i}.w"], p[f"dec{i}.b"] = _conv_param(rng, f, c + skip, 3, dtype)
            c = f
            if i < 3:
                # zero heads start every pixel at sigmoid 0.5, away from saturation
                p[f"head{i}.w"], p[f"head{i}.b"] = np.zeros((1, f, 3, 3), dtype=dtype), np.zeros(1, dtype=dtype)
        return cls({k: Tensor(v, requires_grad=True) for k, v in p.items()}, tuple(enc_widths), tuple(dec_widths))

    def _conv(self, name: str, x: Tensor, stride: int = 1) -> Tensor:
        return T.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"], stride, 1, "reflection")

    def __call__(self, images) -> tuple[list[Tensor], Tensor]:
        """images [N,3,H,W] (or [3,H,W]) -> (depths at 1, 1/2, 1/4 as [N,1,h,w], features [N,C,H/2,W/2])."""
        x = T.as_tensor(images)
        single = x.ndim == 3
        if single:
            x = x.reshape(1, *x.shape)
        h, w = x.shape[-2:]
        if h % 32 or w % 32:
            raise ValueError(f"image size {(h, w)} must be divisible by 32")
        x = (x - IMAGE_MEAN) * (1.0 / IMAGE_STD)
        skips = []
        for i in range(5):
            x = T.elu(self._conv(f"enc{i}", x, stride=2))
            skips.append(x)
        features = skips[0]
        depths: dict[int, Tensor] = {}
        for i in range(4, -1, -1):
            if i < 4:
                x = T.concat([x, skips[i]], axis=1)
            x = T.upsample2x(T.elu(self._conv(f"dec{i}", x)))
            if i < 3:
                depths[i] = disp_to_depth(T.sigmoid(self._conv(f"head{i}", x)))
        out = [depths[0], depths[1], depths[2]]
        if single:
            return [d[0] for d in out], features[0]
        return out, features


@dataclass
class CameraNet:
    params: dict[str, Tensor]
    n_ref: int
    widths: tuple[int, ...]
    pair_evaluations: int = 0
    calls: int = 0

    @classmethod
    def init(cls, rng: np.random.Generator, n_ref: int = 4, widths=(8, 16, 32, 64, 64, 64, 64), dtype=np.float64):
        if len(widths) != 7:
            raise ValueError("CameraNet needs seven conv widths")
        p: dict[str, np.ndarray] = {}
        c = 3 * (1 + n_ref)
        for i, f in enumerate(widths):
            p[f"conv{i}.w"], p[f"conv{i}.b"] = _conv_param(rng, f, c, 3, dtype)
            c = f
        p["pose.w"] = np.zeros((6 * n_ref, c, 1, 1), dtype=dtype)
        p["pose.b"] = np.zeros(6 * n_ref, dtype=dtype)
        return cls({k: Tensor(v, requires_grad=True) for k, v in p.items()}, n_ref, tuple(widths))

    def __call__(self, stacked) -> Tensor:
        """[N, 3(1+n_ref), H, W], target first -> [N, n_ref, 6] of (α, β, γ, t_x, t_y, t_z)."""
        x = T.as_tensor(stacked)
        if x.ndim == 3:
            x = x.reshape(1, *x.shape)
        if x.shape[1] != 3 * (1 + self.n_ref):
            raise ValueError(f"expected {3 * (1 + self.n_ref)} input channels, got {x.shape[1]}")
        n = x.shape[0]
        self.calls += 1
        self.pair_evaluations += n * self.n_ref
        x = (x - IMAGE_MEAN) * (1.0 / IMAGE_STD)
        for i in range(len(self.widths)):
            x = T.elu(T.conv2d(x, self.params[f"conv{i}.w"], self.params[f"conv{i}.b"], 2, 1, "zero"))
        x = T.conv2d(x, self.params["pose.w"], self.params["pose.b"])
        x = x.mean(axis=(2, 3)) * POSE_SCALE
        return x.reshape(n, self.n_ref, 6)


def init_params(seed: int, n_ref: int = 4, dtype=np.float64, depth_widths=None, camera_widths=None) -> tuple[DepthNet, CameraNet]:
    rng = np.random.default_rng(seed)
    dkw = {} if depth_widths is None else dict(enc_widths=depth_widths[0], dec_widths=depth_widths[1])
    ckw = {} if camera_widths is None else dict(widths=camera_widths)
    depth = DepthNet.init(rng, dtype=dtype, **dkw)
    camera = CameraNet.init(rng, n_ref=n_ref, dtype=dtype, **ckw)
    return depth, camera


# -- checkpoints ------------------------------------------------------------------
#
# Layout: the ASCII line "CBWKIT-CKPT v1\n", then one record per tensor:
#   u32 name_len | name (utf-8) | u32 ndim | ndim x u32 extents | float32 data (C order)
# All integers and floats little-endian.

CKPT_MAGIC = b"CBWKIT-CKPT v1\n"


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    buf = bytearray(CKPT_MAGIC)
    for name, arr in tensors.items():
        arr = np.asarray(arr.data if isinstance(arr, Tensor) else arr)
        raw = name.encode("utf-8")
        buf += struct.pack("<I", len(raw)) + raw
        buf += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if not data.startswith(CKPT_MAGIC):
        raise ValueError(f"{path}: not a CBWKIT-CKPT v1 file")
    pos = len(CKPT_MAGIC)
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            if pos + 4 * count > len(data):
                raise ValueError("tensor data runs past end of file")
            out[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape).copy()
            pos += 4 * count
    except (struct.error, UnicodeDecodeError, ValueError) as e:
        raise ValueError(f"{path}: corrupt checkpoint at byte {pos}: {e}") from None
    return out


def network_state(depth: DepthNet, camera: CameraNet) -> dict[str, np.ndarray]:
    state = {f"depth.{k}": v.data for k, v in depth.params.items()}
    state.update({f"camera.{k}": v.data for k, v in camera.params.items()})
    return state


def load_networks(path, dtype=np.float64) -> tuple[DepthNet, CameraNet]:
    state = load_checkpoint(path)
    dparams = {k[len("depth.") :]: Tensor(v.astype(dtype), requires_grad=True) for k, v in state.items() if k.startswith("depth.")}
    cparams = {k[len("camera.") :]: Tensor(v.astype(dtype), requires_grad=True) for k, v in state.items() if k.startswith("camera.")}
    enc = tuple(dparams[f"enc{i}.w"].shape[0] for i in range(5))
    dec = tuple(dparams[f"dec{i}.w"].shape[0] for i in range(5))
    widths = tuple(cparams[f"conv{i}.w"].shape[0] for i in range(7))
    n_ref = cparams["pose.w"].shape[0] // 6
    return DepthNet(dparams, enc, dec), CameraNet(cparams, n_ref, widths)
