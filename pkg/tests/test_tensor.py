import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cbwkit import tensor as T
from cbwkit.tensor import Tensor
from oracles import bilinear_point, central_difference, conv2d_loops, rel_error

RNG = np.random.default_rng(1234)


def grad_of(fn, *arrays_in):
    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays_in]
    T.backward(fn(*ts))
    return [t.grad for t in ts]


def check_fd(fn, *arrays_in, tol=1e-4):
    analytic = grad_of(fn, *arrays_in)
    for i, a in enumerate(arrays_in):

        def f(x, i=i):
            args = [Tensor(b) for b in arrays_in]
            args[i] = Tensor(x)
            with T.no_grad():
                return float(fn(*args).data)

        numeric = central_difference(f, a)
        assert rel_error(analytic[i], numeric) < tol, (i, analytic[i], numeric)


# -- elementwise -------------------------------------------------------------------


def test_add_example():
    np.testing.assert_array_equal(T.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data, [4.0, 6.0])


def test_robust_error_floor_at_zero():
    x = Tensor(0.0)
    eps = 0.01
    assert float(T.sqrt(T.square(x) + eps * eps).data) == pytest.approx(0.01, abs=1e-15)


def test_product_rule_example():
    ga, gb = grad_of(lambda a, b: (a * b).sum(), np.array([2.0]), np.array([3.0]))
    assert ga.tolist() == [3.0] and gb.tolist() == [2.0]


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        T.add(Tensor(np.ones(2)), Tensor(np.ones(3)))


def test_rank0_broadcast_allowed():
    out = Tensor(np.ones((2, 2))) * Tensor(3.0)
    np.testing.assert_array_equal(out.data, 3 * np.ones((2, 2)))


def test_division_by_zero_strict_and_guarded():
    with pytest.raises(ZeroDivisionError):
        T.div(Tensor([1.0]), Tensor([0.0]))
    with T.division_guard(1e-3):
        assert T.div(Tensor([1.0]), Tensor([0.0])).data[0] == pytest.approx(1000.0)
    with pytest.raises(ZeroDivisionError):
        T.div(Tensor([1.0]), Tensor([0.0]))


UNARY = {
    "exp": T.exp,
    "log": lambda a: T.log(T.abs(a) + 0.5),
    "sqrt": lambda a: T.sqrt(T.square(a) + 0.3),
    "square": T.square,
    "abs": T.abs,
    "neg": T.neg,
    "sin": T.sin,
    "cos": T.cos,
    "sigmoid": T.sigmoid,
    "elu": T.elu,
    "min_const": lambda a: T.minimum(a, 0.1),
    "max_const": lambda a: T.maximum(a, -0.1),
    "clamp": lambda a: T.clamp(a, -0.5, 0.5),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients_match_finite_differences(name):
    # keep samples away from kinks so central differences are valid
    x = RNG.uniform(-1.5, 1.5, size=(3, 4))
    x = np.where(np.abs(x) < 0.05, 0.3, x)
    x = np.where(np.abs(np.abs(x) - 0.5) < 0.02, 0.7, x)
    x = np.where(np.abs(x - 0.1) < 0.02, 0.3, x)
    x = np.where(np.abs(x + 0.1) < 0.02, -0.3, x)
    weights = RNG.normal(size=x.shape)
    check_fd(lambda a: (UNARY[name](a) * Tensor(weights)).sum(), x)


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
def test_binary_gradients_match_finite_differences(op):
    a = RNG.normal(size=(2, 3))
    b = RNG.uniform(0.5, 2.0, size=(2, 3))
    w = RNG.normal(size=(2, 3))
    f = getattr(T, op)
    check_fd(lambda x, y: (f(x, y) * Tensor(w)).sum(), a, b)
    check_fd(lambda x, y: (f(x, y.sum()) * Tensor(w)).sum(), a, b)


def test_clamp_and_abs_subgradients():
    ga = grad_of(lambda a: T.clamp(a, 0.0, 1.0).sum(), np.array([-1.0, 0.5, 2.0]))[0]
    assert ga.tolist() == [0.0, 1.0, 0.0]
    assert grad_of(lambda a: T.abs(a).sum(), np.array([0.0, -2.0]))[0].tolist() == [0.0, -1.0]


def test_where_and_shape_ops_gradients():
    a, b = RNG.normal(size=(3, 4)), RNG.normal(size=(3, 4))
    cond = RNG.random((3, 4)) > 0.5
    w = RNG.normal(size=(4, 3))
    check_fd(lambda x, y: (T.where(cond, x, y).transpose(1, 0) * Tensor(w)).sum(), a, b)
    check_fd(lambda x, y: T.square(T.concat([x, y], axis=0)[1:5]).sum(), a, b)
    check_fd(lambda x, y: T.square(T.stack([x, y], axis=-1)).mean(), a, b)
    check_fd(lambda x, y: T.square(T.matmul(x, y.transpose(1, 0))).sum(), a, b)
    check_fd(lambda x, y: T.square(T.broadcast_to(x[0].reshape(1, 4), (3, 4)) - y).sum(), a, b)


def test_getitem_fancy_index_accumulates():
    g = grad_of(lambda a: a[np.array([0, 0, 2])].sum(), np.arange(3.0))[0]
    assert g.tolist() == [2.0, 0.0, 1.0]


# -- reductions --------------------------------------------------------------------


def test_reduce_examples():
    assert float(T.reduce(Tensor([1.0, 2.0, 3.0]), "mean").data) == 2.0
    np.testing.assert_array_equal(T.reduce(Tensor([[1.0, 2.0], [3.0, 4.0]]), "sum", axis=0).data, [4.0, 6.0])
    g = grad_of(lambda a: T.reduce(a, "mean"), np.arange(4.0))[0]
    np.testing.assert_array_equal(g, [0.25] * 4)


def test_reduce_empty_set_raises():
    with pytest.raises(ValueError):
        T.reduce(Tensor(np.ones(3)), "sum", axis=())
    with pytest.raises(ValueError):
        T.reduce(Tensor(np.ones(3)), "sum", axis=3)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=st.floats(-5, 5)))
def test_mean_of_constant_is_constant(shape_source):
    c = 1.7
    x = Tensor(np.full(shape_source.shape, c))
    assert float(x.mean().data) == pytest.approx(c, abs=1e-14)


# -- conv2d ------------------------------------------------------------------------


def test_conv_identity_kernel():
    x = RNG.normal(size=(2, 3, 5, 6))
    w = np.zeros((3, 3, 1, 1))
    w[np.arange(3), np.arange(3)] = 1.0
    out = T.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(3)))
    np.testing.assert_array_equal(out.data, x)


@pytest.mark.parametrize("mode", ["reflection", "zero"])
def test_conv_averaging_constant_image(mode):
    x = np.full((1, 1, 6, 7), 2.5)
    w = np.full((1, 1, 3, 3), 1 / 9)
    out = T.conv2d(Tensor(x), Tensor(w), None, 1, 1, mode).data
    if mode == "reflection":
        np.testing.assert_allclose(out, 2.5, atol=1e-14)
    else:
        np.testing.assert_allclose(out[..., 1:-1, 1:-1], 2.5, atol=1e-14)


def test_conv_matches_loop_oracle_4x4():
    x = RNG.normal(size=(1, 1, 4, 4))
    w = RNG.normal(size=(1, 1, 3, 3))
    np.testing.assert_allclose(T.conv2d(Tensor(x), Tensor(w)).data, conv2d_loops(x, w), atol=1e-12, rtol=0)


@pytest.mark.parametrize("stride,padding,mode", [(1, 0, "zero"), (2, 1, "zero"), (1, 1, "reflection"), (2, 1, "reflection"), (3, 2, "zero")])
def test_conv_forward_and_gradients(stride, padding, mode):
    x = RNG.normal(size=(2, 3, 7, 8))
    w = RNG.normal(size=(4, 3, 3, 3))
    b = RNG.normal(size=4)
    xp = np.pad(x, ((0, 0), (0, 0), (padding,) * 2, (padding,) * 2), mode="reflect" if mode == "reflection" else "constant")
    np.testing.assert_allclose(T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding, mode).data, conv2d_loops(xp, w, b, stride), atol=1e-12)
    out_shape = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding, mode).shape
    assert out_shape[2:] == ((7 + 2 * padding - 3) // stride + 1, (8 + 2 * padding - 3) // stride + 1)
    g = RNG.normal(size=out_shape)
    check_fd(lambda a, k, c: (T.conv2d(a, k, c, stride, padding, mode) * Tensor(g)).sum(), x, w, b)


def test_conv_channel_mismatch_raises():
    with pytest.raises(ValueError):
        T.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))


def test_pooling_and_resampling_gradients():
    x = RNG.normal(size=(1, 2, 4, 6))
    g = RNG.normal(size=(1, 2, 2, 4))
    check_fd(lambda a: (T.avg_pool(a, 3) * Tensor(g)).sum(), x)
    check_fd(lambda a: T.square(T.upsample2x(a)).sum(), x)
    check_fd(lambda a: T.square(T.downsample2x(a)).sum(), x)
    check_fd(lambda a: T.square(T.pad2d(a, 1, "reflection")).sum(), x)
    check_fd(lambda a: T.square(T.pad2d(a, 2, "reflection")).sum(), x)


# -- grid sampling -----------------------------------------------------------------


def test_grid_sample_identity_and_midpoint():
    m = RNG.normal(size=(1, 2, 4, 5))
    ys, xs = np.meshgrid(np.arange(4.0), np.arange(5.0), indexing="ij")
    coords = np.stack([xs, ys], axis=-1)[None]
    out, inb = T.grid_sample_bilinear(Tensor(m), Tensor(coords))
    np.testing.assert_array_equal(out.data, m)
    assert inb.data.min() == 1.0
    img = np.array([[[[2.0, 4.0], [2.0, 4.0]]]])
    val, _ = T.grid_sample_bilinear(Tensor(img), Tensor(np.array([[[[0.5, 0.0]]]])))
    assert float(val.data.squeeze()) == 3.0


def test_grid_sample_out_of_bounds_is_zero_and_masked():
    m = np.ones((1, 1, 3, 3))
    coords = np.array([[[[-0.1, 1.0], [1.0, 2.01], [2.0, 2.0]]]])
    out, inb = T.grid_sample_bilinear(Tensor(m), Tensor(coords))
    assert out.data.squeeze().tolist() == [0.0, 0.0, 1.0]
    assert inb.data.squeeze().tolist() == [0.0, 0.0, 1.0]


def test_grid_sample_matches_point_oracle():
    h, w = 9, 13
    m = RNG.normal(size=(1, 1, h, w))
    coords = np.stack([RNG.uniform(-1, w, 1000), RNG.uniform(-1, h, 1000)], axis=-1).reshape(1, 1, 1000, 2)
    out, inb = T.grid_sample_bilinear(Tensor(m), Tensor(coords))
    ref = [bilinear_point(m[0, 0], x, y) for x, y in coords[0, 0]]
    assert np.max(np.abs(out.data.ravel() - np.array([r[0] for r in ref]))) < 1e-12
    assert inb.data.ravel().tolist() == [float(r[1]) for r in ref]


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10_000))
def test_grid_sample_is_linear_in_map(alpha, beta, seed):
    r = np.random.default_rng(seed)
    m1, m2 = r.normal(size=(1, 2, 5, 6)), r.normal(size=(1, 2, 5, 6))
    c = Tensor(np.stack([r.uniform(-0.5, 5.5, (3, 4)), r.uniform(-0.5, 4.5, (3, 4))], axis=-1)[None])
    lhs = T.grid_sample_bilinear(Tensor(alpha * m1 + beta * m2), c)[0].data
    rhs = alpha * T.grid_sample_bilinear(Tensor(m1), c)[0].data + beta * T.grid_sample_bilinear(Tensor(m2), c)[0].data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_grid_sample_gradients_match_finite_differences():
    m = RNG.normal(size=(1, 2, 5, 6))
    # interior, away from integer coordinates where the bilinear weights have kinks
    coords = np.stack([RNG.uniform(0.2, 4.8, (3, 4)), RNG.uniform(0.2, 3.8, (3, 4))], axis=-1)[None]
    coords = np.where(np.abs(coords - np.round(coords)) < 0.05, coords + 0.1, coords)
    check_fd(lambda a, c: T.grid_sample_bilinear(a, c)[0].mean(), m, coords)
    w = RNG.normal(size=(1, 2, 3, 4))
    check_fd(lambda a, c: (T.grid_sample_bilinear(a, c)[0] * Tensor(w)).sum(), m, coords)


# -- spatial gradient --------------------------------------------------------------


def test_spatial_gradient_examples():
    dx, dy = T.spatial_gradient(Tensor(np.full((1, 1, 3, 4), 2.0)))
    assert not dx.data.any() and not dy.data.any()
    ramp = np.tile(np.arange(5.0), (3, 1))[None, None]
    dx, _ = T.spatial_gradient(Tensor(ramp))
    np.testing.assert_array_equal(dx.data[..., :-1], 1.0)
    np.testing.assert_array_equal(dx.data[..., -1], 0.0)


def test_spatial_gradient_random_3x3_exact():
    m = RNG.normal(size=(1, 1, 3, 3))
    dx, dy = T.spatial_gradient(Tensor(m))
    a = m[0, 0]
    exp_dx = np.array([[a[r, 1] - a[r, 0], a[r, 2] - a[r, 1], 0.0] for r in range(3)])
    exp_dy = np.array([[a[1, c] - a[0, c] for c in range(3)], [a[2, c] - a[1, c] for c in range(3)], [0.0] * 3])
    np.testing.assert_array_equal(dx.data[0, 0], exp_dx)
    np.testing.assert_array_equal(dy.data[0, 0], exp_dy)
    g = RNG.normal(size=(1, 1, 3, 3))
    check_fd(lambda x: (T.spatial_gradient(x)[0] * Tensor(g)).sum() + T.square(T.spatial_gradient(x)[1]).sum(), m)


# -- backward / detach -------------------------------------------------------------


def test_backward_examples():
    x = Tensor(3.0, requires_grad=True)
    T.backward(x * x)
    assert float(x.grad) == 6.0
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    T.backward((a + a).sum())
    np.testing.assert_array_equal(a.grad, [2.0, 2.0])


def test_backward_requires_taped_rank0():
    with pytest.raises(RuntimeError):
        T.backward(Tensor(1.0))
    with pytest.raises(RuntimeError):
        T.backward(T.detach(Tensor(1.0, requires_grad=True) * 2.0))
    with pytest.raises(ValueError):
        T.backward(Tensor(np.ones(2), requires_grad=True) * 2.0)


def test_tape_visits_each_node_once_in_topological_order():
    a = Tensor(np.ones(2), requires_grad=True)
    b = a * 2.0
    c = b + b
    loss = (c * b).sum()
    tape = T.Tape.record(loss)
    nodes = list(tape)
    assert len(nodes) == len({id(n) for n in nodes})
    pos = {id(n): i for i, n in enumerate(nodes)}
    for n in nodes:
        for p in n._parents:
            if id(p) in pos:
                assert pos[id(p)] < pos[id(n)]


def test_detach_semantics():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    T.backward((T.detach(x) * x).sum())
    np.testing.assert_array_equal(x.grad, x.data)
    c = Tensor(np.arange(3.0))
    np.testing.assert_array_equal(T.detach(c).data, c.data)
    m = Tensor(np.array([0.5, 2.0]), requires_grad=True)
    y = Tensor(np.array([1.0, 1.0]), requires_grad=True)
    T.backward((T.detach(m) * y).sum())
    assert m.grad is None or not np.any(m.grad)
    np.testing.assert_array_equal(y.grad, m.data)


def test_grad_buffer_shape_matches_data():
    x = Tensor(RNG.normal(size=(2, 3, 4)), requires_grad=True)
    T.backward(T.square(x).mean())
    assert x.grad.shape == x.data.shape
