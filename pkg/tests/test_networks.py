import struct

import numpy as np
import pytest

from cbwkit import tensor as T
from cbwkit.networks import (
    CKPT_MAGIC,
    CameraNet,
    DepthNet,
    init_params,
    load_checkpoint,
    load_networks,
    network_state,
    save_checkpoint,
)
from cbwkit.tensor import Tensor
from oracles import central_difference, rel_error

SMALL_DEPTH = ((2, 2, 4, 4, 4), (2, 2, 2, 4, 4))
SMALL_CAMERA = (2, 2, 4, 4, 4, 4, 4)


@pytest.fixture(scope="module")
def nets():
    return init_params(0)


def test_depth_shapes_and_range(nets):
    depth, _ = nets
    x = np.random.default_rng(0).random((2, 3, 64, 128))
    depths, feats = depth(x)
    assert [d.shape for d in depths] == [(2, 1, 64, 128), (2, 1, 32, 64), (2, 1, 16, 32)]
    assert feats.shape == (2, 8, 32, 64)
    for d in depths:
        assert np.all(d.data > 1 / 10.01) and np.all(d.data < 100)


def test_zero_heads_start_mid_range(nets):
    d, _ = nets[0](np.random.default_rng(3).random((3, 32, 32)))
    for x in d:
        np.testing.assert_allclose(x.data, 1 / (10 * 0.5 + 0.01))


def test_depth_extreme_inputs_stay_in_range(nets):
    depth, _ = nets
    for v in (0.0, 1.0):
        d, _ = depth(np.full((3, 32, 32), v))
        assert all(np.all((x.data > 1 / 10.01) & (x.data < 100)) for x in d)


def test_depth_rejects_bad_size(nets):
    with pytest.raises(ValueError):
        nets[0](np.zeros((1, 3, 30, 64)))


def test_camera_shapes_zero_init_and_counter(nets):
    _, cam = nets
    before = cam.pair_evaluations
    out = cam(np.random.default_rng(1).random((2, 15, 64, 128)))
    assert out.shape == (2, 4, 6)
    assert not np.any(out.data)  # zero-initialised output layer starts at the identity pose
    assert cam.pair_evaluations - before == 2 * 4
    with pytest.raises(ValueError):
        cam(np.zeros((1, 9, 64, 128)))


def test_determinism():
    a, b = init_params(7), init_params(7)
    x = np.random.default_rng(2).random((1, 3, 32, 64))
    np.testing.assert_array_equal(a[0](x)[0][0].data, b[0](x)[0][0].data)
    assert not np.array_equal(init_params(8)[0].params["enc0.w"].data, a[0].params["enc0.w"].data)


def test_depth_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    depth = DepthNet.init(rng, *SMALL_DEPTH)
    for i in range(3):
        depth.params[f"head{i}.w"].data[...] = rng.normal(size=depth.params[f"head{i}.w"].shape)
    x = rng.random((1, 3, 32, 32))
    wts = [rng.normal(size=(1, 1, 32 >> k, 32 >> k)) for k in range(3)]
    wf = rng.normal(size=(1, 2, 16, 16))

    def loss():
        ds, f = depth(x)
        return sum((d * Tensor(w)).sum() for d, w in zip(ds, wts)) + (f * Tensor(wf)).sum()

    for name in ("enc0.w", "enc4.b", "dec4.w", "dec0.w", "head2.w", "head0.b"):
        p = depth.params[name]
        p.grad = None
        T.backward(loss())
        idx = tuple(rng.integers(0, s) for s in p.shape)
        orig = p.data[idx]

        def f(v):
            p.data[idx] = v[0]
            out = float(loss().data)
            p.data[idx] = orig
            return out

        num = central_difference(f, np.array([orig]))[0]
        assert rel_error(p.grad[idx], num, floor=1e-6) < 1e-5, name


def test_camera_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    cam = CameraNet.init(rng, n_ref=2, widths=SMALL_CAMERA)
    cam.params["pose.w"].data[...] = rng.normal(size=cam.params["pose.w"].shape)
    x = rng.random((1, 9, 32, 32))
    w = rng.normal(size=(1, 2, 6))

    def loss():
        return (cam(x) * Tensor(w)).sum()

    for name in ("conv0.w", "conv6.b", "pose.w"):
        p = cam.params[name]
        p.grad = None
        T.backward(loss())
        idx = tuple(rng.integers(0, s) for s in p.shape)
        orig = p.data[idx]

        def f(v):
            p.data[idx] = v[0]
            out = float(loss().data)
            p.data[idx] = orig
            return out

        assert rel_error(p.grad[idx], central_difference(f, np.array([orig]))[0], floor=1e-8) < 1e-5, name


def test_every_parameter_receives_gradient():
    depth, cam = init_params(5, n_ref=2, depth_widths=SMALL_DEPTH, camera_widths=SMALL_CAMERA)
    # output layers start at zero; move them off zero so gradient reaches every layer
    cam.params["pose.w"].data[...] = 0.1
    for i in range(3):
        depth.params[f"head{i}.w"].data[...] = 0.1
    x = np.random.default_rng(5).random((1, 3, 32, 32))
    ds, f = depth(x)
    T.backward(sum(d.mean() for d in ds) + f.mean() + cam(np.concatenate([x] * 3, axis=1)).sum())
    for name, p in {**depth.params, **cam.params}.items():
        assert p.grad is not None and np.any(p.grad), name


def test_checkpoint_round_trip(tmp_path, nets):
    depth, cam = nets
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, network_state(depth, cam))
    d2, c2 = load_networks(path)
    for k, v in depth.params.items():
        np.testing.assert_array_equal(d2.params[k].data, v.data.astype(np.float32))
    assert c2.n_ref == cam.n_ref and d2.dec_widths == depth.dec_widths
    x = np.random.default_rng(6).random((1, 3, 32, 64))
    np.testing.assert_allclose(d2(x)[0][0].data, depth(x)[0][0].data, rtol=1e-5)


def test_checkpoint_byte_layout(tmp_path):
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, {"a.w": np.arange(6.0).reshape(2, 3), "s": np.array(1.5)})
    raw = path.read_bytes()
    expected = CKPT_MAGIC
    expected += struct.pack("<I", 3) + b"a.w" + struct.pack("<III", 2, 2, 3) + struct.pack("<6f", *range(6))
    expected += struct.pack("<I", 1) + b"s" + struct.pack("<I", 0) + struct.pack("<f", 1.5)
    assert raw == expected
    back = load_checkpoint(path)
    assert list(back) == ["a.w", "s"] and back["s"].shape == ()


def test_checkpoint_rejects_corruption(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(path)
    save_checkpoint(path, {"a": np.ones(10)})
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(ValueError):
        load_checkpoint(path)
