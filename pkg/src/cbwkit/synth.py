"""Ray-cast synthetic scenes with exact depth, pose and visibility.

A scene is a set of textured planes (optionally bounded rectangles, optionally
translating per frame) seen by a pinhole camera moving along a short trajectory.
World coordinates are the frame-0 camera coordinates (x right, y down, z forward).
Poses are camera-to-world. Every pixel is rendered analytically at its centre,
so images carry no resampling noise.

Textures are smooth sinusoid mixtures evaluated in the frame-0 projective
coordinates of the surface point (in object-local terms for moving planes).
Wavelengths are therefore controlled in pixels, which keeps bilinear warping
error small, while each texture stays a fixed function on its surface.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import Intrinsics, PoseSE3

LAYOUTS = ("corridor", "fronto", "slanted")
VIS_TOL = 1e-6


@dataclass(frozen=True)
class SceneSpec:
    layout: str = "corridor"
    n_frames: int = 5
    height: int = 64
    width: int = 128
    n_billboards: int = 2
    texture_wavelength: float = 24.0  # shortest texture wavelength, frame-0 pixels
    flat_patches: int = 1
    forward: float = 0.2  # camera translation along z per frame
    lateral: float = 0.03  # max |x| jitter per frame
    strafe: float = 0.0  # steady x translation per frame
    rotation_deg: float = 1.0  # max |yaw| change per frame
    moving_object: bool = False
    object_speed: float = 0.15  # lateral object translation per frame
    plane_depth: float = 10.0  # fronto/slanted layouts
    slant_deg: float = 30.0  # slanted layout, rotation of the plane about y
    camera_height: float = 1.0

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}; expected one of {LAYOUTS}")
        if self.n_frames < 1 or self.height < 2 or self.width < 2:
            raise ValueError("scene needs at least one frame and a 2x2 image")
        if self.texture_wavelength <= 0:
            raise ValueError("texture_wavelength must be positive")

    def intrinsics(self) -> Intrinsics:
        f = self.width / 2.0
        return Intrinsics(f, f, (self.width - 1) / 2.0, (self.height - 1) / 2.0)


@dataclass(frozen=True)
class Texture:
    freqs: np.ndarray  # [K,2] cycles per frame-0 pixel along (a, b)
    phases: np.ndarray  # [K,3]
    amps: np.ndarray  # [K,3]
    base: np.ndarray  # [3]
    patches: tuple = ()  # (a, b, radius, rgb) flat-albedo discs, smoothly blended

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        arg = 2 * np.pi * (self.freqs[:, 0, None, None] * a + self.freqs[:, 1, None, None] * b)
        out = self.base[:, None, None] + np.einsum("kc,kchw->chw", self.amps, np.sin(arg[:, None] + self.phases[:, :, None, None]))
        for pa, pb, radius, rgb in self.patches:
            dist = np.hypot(a - pa, b - pb)
            t = np.clip((radius - dist) / (0.5 * radius), 0.0, 1.0)
            w = t * t * (3 - 2 * t)
            out = out * (1 - w) + np.asarray(rgb)[:, None, None] * w
        return out


@dataclass(frozen=True)
class Plane:
    """Surface ``{o + u e_u + v e_v}`` at frame 0, moving by ``velocity`` per frame.

    ``half_extent`` bounds |u| and |v| for rectangles; None means unbounded.
    """

    origin: np.ndarray
    axis_u: np.ndarray
    axis_v: np.ndarray
    texture: Texture
    half_extent: tuple[float, float] | None = None
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.axis_u, self.axis_v)

    @property
    def moving(self) -> bool:
        return bool(np.any(self.velocity != 0))

    def origin_at(self, frame: int) -> np.ndarray:
        return self.origin + frame * self.velocity


@dataclass
class Scene:
    planes: list[Plane]
    poses: list[PoseSE3]  # camera-to-world, poses[0] = identity
    K: Intrinsics
    height: int
    width: int

    def __post_init__(self):
        if not np.allclose(self.poses[0].matrix, np.eye(4), atol=1e-12):
            raise ValueError("trajectory must start at the identity")
        for p, plane in enumerate(self.planes):
            n = plane.normal
            if not np.isclose(np.linalg.norm(n), 1.0, atol=1e-9) or abs(plane.axis_u @ plane.axis_v) > 1e-9:
                raise ValueError(f"plane {p}: axes must be orthonormal")
            for i, pose in enumerate(self.poses):
                centre = pose.translation.data
                if abs(n @ (centre - plane.origin_at(i))) < 1e-9:
                    raise ValueError(f"plane {p} contains the camera centre at frame {i}; every ray is parallel to it")

    @property
    def has_moving_object(self) -> bool:
        return any(pl.moving for pl in self.planes)

    def cast(self, frame: int, rays_cam: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Nearest hit for rays ``[...,3]`` given in frame-``frame`` camera coordinates.

        Returns (ray parameter s, plane index or -1, world hit points). With rays of
        unit z-component, s is the camera-frame depth.
        """
        pose = self.poses[frame]
        R, c = pose.rotation.data, pose.translation.data
        dirs = rays_cam @ R.T
        shape = rays_cam.shape[:-1]
        best = np.full(shape, np.inf)
        idx = np.full(shape, -1, dtype=np.int64)
        for p, plane in enumerate(self.planes):
            o = plane.origin_at(frame)
            n = plane.normal
            den = dirs @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                s = np.where(np.abs(den) > 1e-12, (n @ (o - c)) / den, np.inf)
            ok = s > 1e-9
            if plane.half_extent is not None:
                rel = c + s[..., None] * dirs - o
                hu, hv = plane.half_extent
                ok &= (np.abs(rel @ plane.axis_u) <= hu) & (np.abs(rel @ plane.axis_v) <= hv)
            take = ok & (s < best)
            best = np.where(take, s, best)
            idx = np.where(take, p, idx)
        points = c + np.where(np.isfinite(best), best, 0.0)[..., None] * dirs
        return best, idx, points

    def pixel_rays(self) -> np.ndarray:
        ys, xs = np.meshgrid(np.arange(self.height, dtype=np.float64), np.arange(self.width, dtype=np.float64), indexing="ij")
        K = self.K
        return np.stack([(xs - K.cx) / K.fx, (ys - K.cy) / K.fy, np.ones_like(xs)], axis=-1)

    def shade(self, frame: int, points: np.ndarray, idx: np.ndarray) -> np.ndarray:
        img = np.zeros((3,) + idx.shape)
        for p, plane in enumerate(self.planes):
            sel = idx == p
            if not np.any(sel):
                continue
            local = points[sel] - frame * plane.velocity
            z = np.maximum(local[:, 2], 1e-6)
            a = self.K.fx * local[:, 0] / z
            b = self.K.fy * local[:, 1] / z
            img[:, sel] = plane.texture(a[None], b[None])[:, 0]
        return img

    def relative_pose(self, src: int, dst: int) -> PoseSE3:
        """Maps frame-``src`` camera coordinates to frame-``dst`` camera coordinates."""
        return PoseSE3.from_matrix(np.linalg.inv(self.poses[dst].matrix) @ self.poses[src].matrix)


@dataclass
class SampleSnippet:
    frames: np.ndarray  # [n,3,H,W] in [0,1]
    gt_depths: np.ndarray  # [n,H,W]
    gt_poses: np.ndarray  # [n,4,4] camera-to-frame-0
    K: Intrinsics
    target_index: int
    visibility: dict = field(default_factory=dict)  # (i, j) -> bool [H,W], pixel of i seen in j
    moving: bool = False
    name: str = ""
    surfaces: np.ndarray | None = None  # [n,H,W] surface index; in memory only

    def __post_init__(self):
        if len(self.frames) % 2 != 1:
            raise ValueError("snippet frame count must be odd")
        if self.target_index != len(self.frames) // 2:
            raise ValueError("target frame must be the middle frame")

    @property
    def refs(self) -> list[int]:
        return [i for i in range(len(self.frames)) if i != self.target_index]

    def relative_pose(self, src: int, dst: int) -> PoseSE3:
        return PoseSE3.from_matrix(np.linalg.inv(self.gt_poses[dst]) @ self.gt_poses[src])

    def window(self, start: int, length: int) -> "SampleSnippet":
        seq = FrameSequence(self.frames, self.gt_depths, self.gt_poses, self.K, self.visibility, self.moving, self.name, self.surfaces)
        return seq.window(start, length)


@dataclass
class FrameSequence:
    """A rendered or stored run of frames; snippets are odd-length windows of it."""

    frames: np.ndarray
    gt_depths: np.ndarray
    gt_poses: np.ndarray
    K: Intrinsics
    visibility: dict
    moving: bool = False
    name: str = ""
    surfaces: np.ndarray | None = None

    def window(self, start: int, length: int) -> SampleSnippet:
        """Frames ``start .. start+length-1``; poses re-expressed relative to the first of them."""
        if start < 0 or start + length > len(self.frames):
            raise ValueError(f"window {start}+{length} outside a {len(self.frames)}-frame sequence")
        sl = slice(start, start + length)
        base = np.linalg.inv(self.gt_poses[start])
        vis = {
            (i - start, j - start): v
            for (i, j), v in self.visibility.items()
            if start <= i < start + length and start <= j < start + length
        }
        return SampleSnippet(
            self.frames[sl], self.gt_depths[sl], base @ self.gt_poses[sl], self.K, length // 2, vis, self.moving, self.name,
            None if self.surfaces is None else self.surfaces[sl],
        )


# -- generation ---------------------------------------------------------------------


def _texture(rng: np.random.Generator, min_wavelength: float, n_patches: int, extent: float = 60.0, grey: bool = False) -> Texture:
    """Random sinusoid mixture; ``grey`` gives an achromatic material (the ground)."""
    k = 4
    lam = rng.uniform(min_wavelength, 4 * min_wavelength, size=k)
    theta = rng.uniform(0, np.pi, size=k)
    freqs = np.stack([np.cos(theta), np.sin(theta)], axis=1) / lam[:, None]
    base = np.full(3, rng.uniform(0.35, 0.55)) if grey else rng.uniform(0.3, 0.7, size=3)
    amps = np.repeat(rng.uniform(0.5, 1.0, size=(k, 1)), 3, axis=1) if grey else rng.uniform(0.5, 1.0, size=(k, 3))
    room = np.minimum(base, 1 - base) - 0.02
    amps *= room / amps.sum(axis=0)
    phases = np.repeat(rng.uniform(0, 2 * np.pi, size=(k, 1)), 3, axis=1) if grey else rng.uniform(0, 2 * np.pi, size=(k, 3))
    patches = tuple(
        (rng.uniform(-extent, extent), rng.uniform(-extent / 2, extent / 2), rng.uniform(8, 14), tuple(rng.uniform(0.2, 0.8, 3)))
        for _ in range(n_patches)
    )
    return Texture(freqs, phases, amps, base, patches)


def _rot_y(deg: float) -> np.ndarray:
    t = math.radians(deg)
    return np.array([[math.cos(t), 0, math.sin(t)], [0, 1, 0], [-math.sin(t), 0, math.cos(t)]])


def _trajectory(spec: SceneSpec, rng: np.random.Generator) -> list[PoseSE3]:
    poses = [PoseSE3.identity()]
    yaw = 0.0
    pos = np.zeros(3)
    for _ in range(1, spec.n_frames):
        yaw += rng.uniform(-spec.rotation_deg, spec.rotation_deg)
        step = np.array([spec.strafe + rng.uniform(-spec.lateral, spec.lateral), 0.0, spec.forward])
        pos = pos + _rot_y(yaw) @ step
        poses.append(PoseSE3(_rot_y(yaw), pos.copy()))
    return poses


EX, EY, EZ = np.eye(3)

# A single rectangle translating across a corridor while the camera strafes, so that
# occluded bands carry enough parallax to be seen by camera-flow consistency.
MOVING_RECTANGLE = SceneSpec(moving_object=True, n_billboards=0, strafe=0.2, forward=0.1)


def generate_scene(spec: SceneSpec = SceneSpec(), seed: int = 0) -> Scene:
    rng = np.random.default_rng(seed)
    K = spec.intrinsics()
    wl, npatch = spec.texture_wavelength, spec.flat_patches
    planes: list[Plane] = []
    if spec.layout == "fronto":
        planes.append(Plane(np.array([0, 0, spec.plane_depth]), EX, EY, _texture(rng, wl, npatch)))
    elif spec.layout == "slanted":
        R = _rot_y(spec.slant_deg)
        planes.append(Plane(np.array([0, 0, spec.plane_depth]), R @ EX, EY, _texture(rng, wl, npatch)))
    else:
        h = spec.camera_height * rng.uniform(0.9, 1.1)
        planes.append(Plane(np.array([0, h, 0]), EZ, EX, _texture(rng, wl, 0, grey=True)))  # ground, normal +y
        planes.append(Plane(np.array([0, 0, rng.uniform(10, 14)]), EX, EY, _texture(rng, wl, npatch)))
        half_fov = (spec.width / 2) / K.fx
        for _ in range(spec.n_billboards):
            z = rng.uniform(4, 8)
            x = rng.uniform(-0.7, 0.7) * half_fov * z
            hu, hv = rng.uniform(0.5, 1.2), rng.uniform(0.4, 0.9)
            y = h - hv - rng.uniform(0.0, 0.3)
            R = _rot_y(rng.uniform(-20, 20))
            planes.append(Plane(np.array([x, y, z]), R @ EX, EY, _texture(rng, wl, npatch), (hu, hv)))
        if spec.moving_object:
            z = rng.uniform(4, 6)
            x = rng.uniform(-0.3, 0.3) * half_fov * z
            hu, hv = rng.uniform(0.6, 1.0), rng.uniform(0.5, 0.8)
            sign = rng.choice([-1.0, 1.0])
            vel = np.array([sign * spec.object_speed, 0.0, 0.0])
            planes.append(Plane(np.array([x, h - hv - 0.2, z]), EX, EY, _texture(rng, wl, 0), (hu, hv), vel))
    if spec.moving_object and spec.layout != "corridor":
        raise ValueError("a moving object needs the corridor layout")
    return Scene(planes, _trajectory(spec, rng), K, spec.height, spec.width)


def render_frame(scene: Scene, frame: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(image [3,H,W], depth [H,W], surface index [H,W]) of one frame."""
    s, idx, pts = scene.cast(frame, scene.pixel_rays())
    if np.any(idx < 0):
        raise ValueError(f"frame {frame}: some rays hit no surface")
    return scene.shade(frame, pts, idx), s, idx


def single_surface_footprint(surfaces_src: np.ndarray, surfaces_dst: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Destination pixels whose four bilinear neighbours in the source all show their surface.

    ``coords`` [H,W,2] are source-image positions on the destination grid. Pixels
    failing this straddle a texture discontinuity, where interpolation cannot be exact.
    """
    h, w = surfaces_src.shape
    x0 = np.clip(np.floor(coords[..., 0]).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(coords[..., 1]).astype(np.int64), 0, h - 2)
    ok = np.ones(coords.shape[:2], dtype=bool)
    for dy in (0, 1):
        for dx in (0, 1):
            ok &= surfaces_src[y0 + dy, x0 + dx] == surfaces_dst
    return ok


def visibility(scene: Scene, depths: np.ndarray, src: int, dst: int) -> np.ndarray:
    """Pixels of frame ``src`` whose surface point is the nearest surface seen from ``dst``.

    The point is taken where it sits at time ``src``; a point that projects outside
    ``dst``'s image or behind its camera counts as not visible.
    """
    rays = scene.pixel_rays()
    pts_src = rays * depths[src][..., None]
    rel = scene.relative_pose(src, dst)
    pts = rel.apply(pts_src.reshape(-1, 3)).reshape(pts_src.shape)
    z = pts[..., 2]
    K = scene.K
    front = z > 1e-3
    zs = np.where(front, z, 1.0)
    u = K.fx * pts[..., 0] / zs + K.cx
    v = K.fy * pts[..., 1] / zs + K.cy
    inside = front & (u >= 0) & (u <= scene.width - 1) & (v >= 0) & (v <= scene.height - 1)
    s, _, _ = scene.cast(dst, pts / zs[..., None])
    return inside & (np.abs(s - z) <= VIS_TOL * np.maximum(1.0, z))


def render_snippet(scene: Scene, pairs: str = "all", name: str = "") -> SampleSnippet:
    """Render every frame; ``pairs`` is "all", "target" (pairs touching the middle frame) or "none"."""
    n = len(scene.poses)
    frames, depths, surfaces = map(np.stack, zip(*(render_frame(scene, i) for i in range(n))))
    tgt = n // 2
    vis = {}
    for i in range(n):
        for j in range(n):
            if i == j or pairs == "none" or (pairs == "target" and tgt not in (i, j)):
                continue
            vis[(i, j)] = visibility(scene, depths, i, j)
    poses = np.stack([p.matrix for p in scene.poses])
    return SampleSnippet(frames, depths, poses, scene.K, tgt, vis, scene.has_moving_object, name, surfaces)


# -- on-disk dataset ----------------------------------------------------------------
#
# <root>/manifest.txt              one "snippet scene=<dir> start=<i> length=<n> moving=<0|1>" per line
# <root>/scene_<k>/frame_<i>.ppm   binary 8-bit RGB
# <root>/scene_<k>/frame_<i>.depth.pgm16   16-bit big-endian PGM, depth = value / 256
# <root>/scene_<k>/poses.txt       12 numbers per frame, row-major 3x4 camera-to-frame-0
# <root>/scene_<k>/intrinsics.txt  fx fy cx cy
# <root>/scene_<k>/visibility_<i>_<j>.pgm  binary 8-bit, 255 where pixel of i is seen in j

DEPTH_SCALE = 256.0
MANIFEST = "manifest.txt"


def _write_pnm(path: Path, magic: bytes, arr: np.ndarray, maxval: int) -> None:
    h, w = arr.shape[:2]
    path.write_bytes(magic + f"\n{w} {h}\n{maxval}\n".encode() + arr.tobytes())


def _read_pnm(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    chans = 3 if magic == b"P6" else 1
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported PNM type {magic!r}")
    data = np.frombuffer(raw, dtype=dtype, count=h * w * chans, offset=pos)
    return data.reshape((h, w, chans) if chans == 3 else (h, w))


def save_scene(root: Path, snippet: "SampleSnippet | FrameSequence") -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for i, (img, depth) in enumerate(zip(snippet.frames, snippet.gt_depths)):
        rgb = np.clip(np.rint(img.transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
        _write_pnm(root / f"frame_{i}.ppm", b"P6", rgb, 255)
        d16 = np.clip(np.rint(depth * DEPTH_SCALE), 0, 65535).astype(">u2")
        _write_pnm(root / f"frame_{i}.depth.pgm16", b"P5", d16, 65535)
    rows = [" ".join(f"{x:.17g}" for x in m[:3].reshape(-1)) for m in snippet.gt_poses]
    (root / "poses.txt").write_text("\n".join(rows) + "\n")
    (root / "intrinsics.txt").write_text(" ".join(f"{x:.17g}" for x in snippet.K.as_list()) + "\n")
    for (i, j), vis in sorted(snippet.visibility.items()):
        _write_pnm(root / f"visibility_{i}_{j}.pgm", b"P5", np.where(vis, 255, 0).astype(np.uint8), 255)


def load_scene(root: Path, name: str = "", moving: bool = False) -> "FrameSequence":
    root = Path(root)
    K = Intrinsics(*map(float, (root / "intrinsics.txt").read_text().split()))
    poses = []
    for line in (root / "poses.txt").read_text().splitlines():
        if line.strip():
            m = np.eye(4)
            m[:3] = np.array(line.split(), dtype=np.float64).reshape(3, 4)
            poses.append(m)
    n = len(poses)
    frames = np.stack([_read_pnm(root / f"frame_{i}.ppm").transpose(2, 0, 1) / 255.0 for i in range(n)])
    depths = np.stack([_read_pnm(root / f"frame_{i}.depth.pgm16").astype(np.float64) / DEPTH_SCALE for i in range(n)])
    vis = {}
    for p in root.glob("visibility_*_*.pgm"):
        i, j = map(int, p.stem.split("_")[1:3])
        vis[(i, j)] = _read_pnm(p) > 127
    return FrameSequence(frames, depths, np.stack(poses), K, vis, moving, name or root.name)


@dataclass(frozen=True)
class DatasetSpec:
    n_scenes: int = 8
    frames_per_scene: int = 9
    snippet_length: int = 5
    moving_every: int = 2  # scene k has a moving object when k % moving_every == moving_every - 1; 0 disables
    scene: SceneSpec = SceneSpec()

    def __post_init__(self):
        if self.snippet_length % 2 != 1 or self.snippet_length < 3:
            raise ValueError("snippet_length must be odd and at least 3")
        if self.frames_per_scene < self.snippet_length:
            raise ValueError("frames_per_scene must be at least snippet_length")


@dataclass(frozen=True)
class SnippetRef:
    scene: str
    start: int
    length: int
    moving: bool

    def line(self) -> str:
        return f"snippet scene={self.scene} start={self.start} length={self.length} moving={int(self.moving)}"


def generate_dataset(out: Path, spec: DatasetSpec = DatasetSpec(), seed: int = 0) -> list[SnippetRef]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    refs: list[SnippetRef] = []
    seeds = np.random.SeedSequence(seed).spawn(spec.n_scenes)
    span = spec.snippet_length - 1
    for k in range(spec.n_scenes):
        moving = spec.moving_every > 0 and k % spec.moving_every == spec.moving_every - 1
        sspec = replace(spec.scene, n_frames=spec.frames_per_scene, moving_object=moving)
        scene = generate_scene(sspec, int(seeds[k].generate_state(1)[0]))
        name = f"scene_{k}"
        seq = _render_sequence(scene, span)
        save_scene(out / name, seq)
        for start in range(spec.frames_per_scene - spec.snippet_length + 1):
            refs.append(SnippetRef(name, start, spec.snippet_length, moving))
    header = f"# cbwkit synthetic dataset seed={seed} scenes={spec.n_scenes} frames={spec.frames_per_scene}\n"
    (out / MANIFEST).write_text(header + "".join(r.line() + "\n" for r in refs))
    return refs


def _render_sequence(scene: Scene, span: int):
    n = len(scene.poses)
    frames, depths, surfaces = map(np.stack, zip(*(render_frame(scene, i) for i in range(n))))
    vis = {(i, j): visibility(scene, depths, i, j) for i in range(n) for j in range(n) if i != j and abs(i - j) <= span}
    poses = np.stack([p.matrix for p in scene.poses])
    return FrameSequence(frames, depths, poses, scene.K, vis, scene.has_moving_object, "", surfaces)


def read_manifest(root: Path) -> list[SnippetRef]:
    refs = []
    for line in (Path(root) / MANIFEST).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        kind, *pairs = line.split()
        if kind != "snippet":
            raise ValueError(f"bad manifest line: {line!r}")
        kv = dict(p.split("=", 1) for p in pairs)
        refs.append(SnippetRef(kv["scene"], int(kv["start"]), int(kv["length"]), kv["moving"] == "1"))
    return refs


class Dataset:
    """Snippets of an on-disk dataset; scenes are loaded lazily and cached."""

    def __init__(self, root: Path, moving_only: bool = False):
        self.root = Path(root)
        refs = read_manifest(self.root)
        self.refs = [r for r in refs if r.moving] if moving_only else refs
        self._cache: dict[str, FrameSequence] = {}

    def __len__(self) -> int:
        return len(self.refs)

    def sequence(self, name: str, moving: bool = False):
        if name not in self._cache:
            self._cache[name] = load_scene(self.root / name, name, moving)
        return self._cache[name]

    def __getitem__(self, i: int) -> SampleSnippet:
        r = self.refs[i]
        return self.sequence(r.scene, r.moving).window(r.start, r.length)
