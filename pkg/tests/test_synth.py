import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbwkit.geometry import PoseSE3
from cbwkit.synth import (
    EX,
    EZ,
    MOVING_RECTANGLE,
    Dataset,
    DatasetSpec,
    Plane,
    Scene,
    SceneSpec,
    generate_dataset,
    generate_scene,
    load_scene,
    read_manifest,
    render_frame,
    render_snippet,
    save_scene,
    single_surface_footprint,
)
from cbwkit.tensor import Tensor
from cbwkit.view_synthesis import synthesize_bidirectional


def test_fronto_plane_depth_is_constant():
    spec = SceneSpec(layout="fronto", n_frames=1, plane_depth=10.0)
    _, depth, _ = render_frame(generate_scene(spec, 0), 0)
    assert np.all(depth == 10.0)


@given(st.floats(-40, 40), st.floats(2, 30))  # half field of view is 45°
@settings(max_examples=15)
def test_slanted_plane_inverse_depth_is_affine(slant, dist):
    # a plane n·X = c gives 1/z = (n·K⁻¹[u v 1])/c, affine in pixel coordinates
    spec = SceneSpec(layout="slanted", n_frames=1, slant_deg=slant, plane_depth=dist, height=16, width=32)
    _, depth, _ = render_frame(generate_scene(spec, 1), 0)
    ys, xs = np.mgrid[0:16, 0:32]
    A = np.stack([xs.ravel(), ys.ravel(), np.ones(xs.size)], axis=1)
    inv = 1.0 / depth.ravel()
    coef, *_ = np.linalg.lstsq(A, inv, rcond=None)
    assert np.abs(A @ coef - inv).max() < 1e-12 * max(1.0, np.abs(inv).max())
    assert abs(coef[1]) < 1e-12  # rotation about y leaves rows unchanged


def test_degenerate_plane_is_rejected():
    with pytest.raises(ValueError, match="camera centre"):
        generate_scene(SceneSpec(layout="fronto", n_frames=1, plane_depth=0.0))
    spec = SceneSpec()
    with pytest.raises(ValueError):
        Scene([Plane(np.zeros(3), EX, EZ, None)], [PoseSE3.identity()], spec.intrinsics(), 8, 8)


def test_invalid_specs():
    with pytest.raises(ValueError):
        SceneSpec(layout="tunnel")
    with pytest.raises(ValueError):
        generate_scene(SceneSpec(layout="fronto", moving_object=True))
    with pytest.raises(ValueError):
        DatasetSpec(snippet_length=4)


def test_same_seed_same_scene():
    a = render_snippet(generate_scene(SceneSpec(n_frames=3), 5), pairs="none")
    b = render_snippet(generate_scene(SceneSpec(n_frames=3), 5), pairs="none")
    c = render_snippet(generate_scene(SceneSpec(n_frames=3), 6), pairs="none")
    np.testing.assert_array_equal(a.frames, b.frames)
    np.testing.assert_array_equal(a.gt_poses, b.gt_poses)
    assert not np.array_equal(a.frames, c.frames)


@pytest.mark.parametrize("seed", [0, 3])
def test_corridor_ground_is_grey_and_walls_are_coloured(seed):
    scene = generate_scene(SceneSpec(n_frames=1), seed)
    img, _, idx = render_frame(scene, 0)
    ground = img[:, idx == 0]
    np.testing.assert_allclose(ground[0], ground[1], atol=1e-12)
    np.testing.assert_allclose(ground[0], ground[2], atol=1e-12)
    wall = img[:, idx == 1]
    assert np.abs(wall[0] - wall[1]).max() > 1e-3


def test_snippet_shape_and_defaults():
    sn = render_snippet(generate_scene(SceneSpec(), 0))
    assert sn.frames.shape == (5, 3, 64, 128) and sn.target_index == 2
    assert sn.frames.min() >= 0 and sn.frames.max() <= 1
    np.testing.assert_array_equal(sn.gt_poses[0], np.eye(4))
    assert sn.refs == [0, 1, 3, 4]
    depth = np.median(sn.gt_depths[0])
    for i in range(1, 5):
        step = np.linalg.norm(sn.gt_poses[i][:3, 3] - sn.gt_poses[i - 1][:3, 3])
        assert step <= 0.02 * depth + 0.05
        rel = np.linalg.inv(sn.gt_poses[i - 1]) @ sn.gt_poses[i]
        assert np.degrees(np.arccos(np.clip((np.trace(rel[:3, :3]) - 1) / 2, -1, 1))) <= 2.0


def test_static_single_plane_fully_visible():
    spec = SceneSpec(layout="fronto", n_frames=3, forward=-0.2, lateral=0.0, rotation_deg=0.0)
    sn = render_snippet(generate_scene(spec, 2))
    # backing away keeps every point of an earlier frame inside the later views
    assert sn.visibility[(0, 1)].all() and sn.visibility[(0, 2)].all() and sn.visibility[(1, 2)].all()
    assert not sn.visibility[(2, 0)].all()


def test_moving_rectangle_occludes_background():
    scene = generate_scene(MOVING_RECTANGLE, 3)
    sn = render_snippet(scene, pairs="target")
    rect = len(scene.planes) - 1
    t = sn.target_index
    vis = sn.visibility[(t, 0)]
    # some background pixels of the target are hidden by the rectangle in frame 0
    hidden = ~vis & (sn.surfaces[t] != rect)
    assert hidden.sum() > 20


def test_flow_forward_backward_exact_on_translating_fronto_plane():
    spec = SceneSpec(layout="fronto", n_frames=3, rotation_deg=0.0, lateral=0.05)
    sn = render_snippet(generate_scene(spec, 4))
    t = sn.target_index
    for r in (0, 2):
        b = synthesize_bidirectional(sn.frames[t], sn.frames[r], sn.gt_depths[t], sn.gt_depths[r], sn.K, sn.relative_pose(t, r))
        d = b.ref2tgt
        m = d.valid & sn.visibility[(t, r)]
        assert np.abs(d.flow.data + d.warped_flow)[m].max() < 1e-6


@pytest.mark.parametrize("layout", ["corridor", "slanted"])
def test_render_consistency_with_warp(layout):
    sn = render_snippet(generate_scene(SceneSpec(layout=layout), 9), pairs="target")
    t = sn.target_index
    for r in sn.refs:
        b = synthesize_bidirectional(sn.frames[t], sn.frames[r], sn.gt_depths[t], sn.gt_depths[r], sn.K, sn.relative_pose(t, r))
        d = b.ref2tgt
        m = d.valid & sn.visibility[(t, r)] & single_surface_footprint(sn.surfaces[r], sn.surfaces[t], d.coords.data)
        err = np.abs(d.warped_image.data - d.image.data).mean(axis=0)
        assert err[m].mean() < 1e-3


def test_disk_round_trip(tmp_path):
    sn = render_snippet(generate_scene(SceneSpec(n_frames=3), 8), pairs="all")
    save_scene(tmp_path / "s", sn)
    back = load_scene(tmp_path / "s")
    # 8-bit colour and 1/256 depth quantisation
    assert np.abs(back.frames - sn.frames).max() <= 0.5 / 255 + 1e-12
    assert np.abs(back.gt_depths - sn.gt_depths).max() <= 0.5 / 256 + 1e-12
    np.testing.assert_array_equal(back.gt_poses, sn.gt_poses)
    assert back.K == sn.K
    assert set(back.visibility) == set(sn.visibility)
    for k, v in sn.visibility.items():
        np.testing.assert_array_equal(back.visibility[k], v)
    # the warp oracle survives quantisation within a few intensity steps
    w = back.window(0, 3)
    b = synthesize_bidirectional(w.frames[1], w.frames[0], w.gt_depths[1], w.gt_depths[0], w.K, w.relative_pose(1, 0))
    d = b.ref2tgt
    m = d.valid & w.visibility[(1, 0)] & single_surface_footprint(sn.surfaces[0], sn.surfaces[1], d.coords.data)
    assert np.abs(d.warped_image.data - d.image.data).mean(axis=0)[m].mean() < 4e-3


def test_dataset_generation_is_deterministic(tmp_path):
    spec = DatasetSpec(n_scenes=2, frames_per_scene=5, scene=SceneSpec(height=32, width=64))
    refs = generate_dataset(tmp_path / "a", spec, seed=7)
    generate_dataset(tmp_path / "b", spec, seed=7)
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for f in files_a:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    assert read_manifest(tmp_path / "a") == refs
    assert [r.moving for r in refs] == [False, True]
    ds = Dataset(tmp_path / "a")
    assert len(ds) == 2 and len(Dataset(tmp_path / "a", moving_only=True)) == 1
    sn = ds[1]
    assert sn.moving and sn.frames.shape == (5, 3, 32, 64)
    np.testing.assert_allclose(sn.gt_poses[0], np.eye(4), atol=1e-12)


def test_default_dataset_size():
    spec = DatasetSpec()
    assert spec.n_scenes == 8 and spec.scene.height == 64 and spec.scene.width == 128
    assert spec.n_scenes * (spec.frames_per_scene - spec.snippet_length + 1) == 40


def test_window_rebases_poses():
    sn = render_snippet(generate_scene(SceneSpec(n_frames=5), 1), pairs="all")
    w = sn.window(1, 3)
    np.testing.assert_allclose(w.gt_poses[0], np.eye(4), atol=1e-12)
    np.testing.assert_allclose(w.relative_pose(1, 0).matrix, sn.relative_pose(2, 1).matrix, atol=1e-12)
    np.testing.assert_array_equal(w.visibility[(0, 2)], sn.visibility[(1, 3)])
    with pytest.raises(ValueError):
        sn.window(3, 3)
