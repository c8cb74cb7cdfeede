"""Independent reference implementations used only by the tests.

Each oracle is written from the defining formula with plain loops or direct
numpy, never by calling the package code it checks.
"""
from __future__ import annotations

import math

import numpy as np


def conv2d_loops(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None, stride: int = 1) -> np.ndarray:
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    ho, wo = (h - kh) // stride + 1, (wd - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for a in range(n):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += x[a, ch, i * stride + u, j * stride + v] * w[o, ch, u, v]
                    out[a, o, i, j] = acc + (0.0 if b is None else b[o])
    return out


def bilinear_point(img: np.ndarray, x: float, y: float) -> tuple[float, bool]:
    """Sample a single-channel [H,W] image at (x, y); out-of-range gives (0, False)."""
    h, w = img.shape
    if not (0 <= x <= w - 1 and 0 <= y <= h - 1):
        return 0.0, False
    x0 = min(int(math.floor(x)), w - 2)
    y0 = min(int(math.floor(y)), h - 2)
    ax, ay = x - x0, y - y0
    top = img[y0, x0] * (1 - ax) + img[y0, x0 + 1] * ax
    bot = img[y0 + 1, x0] * (1 - ax) + img[y0 + 1, x0 + 1] * ax
    return top * (1 - ay) + bot * ay, True


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-7) -> float:
    """max |a-b| / max(|a|, |b|), with differences below ``floor`` treated as exact."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    diff = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    err = np.where(diff < floor, 0.0, diff / np.maximum(scale, 1e-300))
    return float(err.max()) if err.size else 0.0


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(b):
    c, s = math.cos(b), math.sin(b)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rot_z(g):
    c, s = math.cos(g), math.sin(g)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def pose_matrix(v) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = rot_x(v[0]) @ rot_y(v[1]) @ rot_z(v[2])
    m[:3, 3] = v[3:6]
    return m


def ssim_window_loops(a: np.ndarray, b: np.ndarray, c1: float, c2: float) -> np.ndarray:
    """Per-pixel SSIM of single-channel images with a reflection-padded 3x3 window."""
    h, w = a.shape
    pa, pb = np.pad(a, 1, mode="reflect"), np.pad(b, 1, mode="reflect")
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            wa, wb = pa[i : i + 3, j : j + 3], pb[i : i + 3, j : j + 3]
            ma, mb = wa.mean(), wb.mean()
            va, vb = (wa**2).mean() - ma**2, (wb**2).mean() - mb**2
            cov = (wa * wb).mean() - ma * mb
            out[i, j] = ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma**2 + mb**2 + c1) * (va + vb + c2))
    return out
