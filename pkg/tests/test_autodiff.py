import numpy as np
import pytest
from scipy.ndimage import uniform_filter

from histopet.autodiff import (GraphError, ShapeError, Tensor, add, avg_pool2d, concat_channels, conv3d,
                               conv3d_transpose, filter2d_valid, grad_check, grad_enabled, no_grad,
                               prelu, tensor)


def _t(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def conv_direct(x, w, s, p):
    # textbook cross-correlation by explicit patch sums
    b, ci, d, h, ww = x.shape
    co, k = w.shape[0], w.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0)) + tuple((q, q) for q in p))
    od = [(n + 2 * q - kk) // ss + 1 for n, kk, ss, q in zip((d, h, ww), k, s, p)]
    out = np.zeros((b, co, *od))
    for z in range(od[0]):
        for y in range(od[1]):
            for xx in range(od[2]):
                patch = xp[:, :, z * s[0]:z * s[0] + k[0], y * s[1]:y * s[1] + k[1],
                           xx * s[2]:xx * s[2] + k[2]]
                out[:, :, z, y, xx] = np.einsum("bcijk,ocijk->bo", patch, w)
    return out


def conv_transpose_direct(x, w, s, p, out_size):
    # scatter each input voxel through the kernel, then crop the padding
    b, ci, d, h, ww = x.shape
    co, k = w.shape[1], w.shape[2:]
    full = np.zeros((b, co) + tuple(n + 2 * q for n, q in zip(out_size, p)))
    for z in range(d):
        for y in range(h):
            for xx in range(ww):
                full[:, :, z * s[0]:z * s[0] + k[0], y * s[1]:y * s[1] + k[1], xx * s[2]:xx * s[2] + k[2]] += \
                    np.einsum("bc,cojkl->bojkl", x[:, :, z, y, xx], w)
    return full[:, :, p[0]:p[0] + out_size[0], p[1]:p[1] + out_size[1], p[2]:p[2] + out_size[2]]


# --- forward values against oracles -----------------------------------------------

@pytest.mark.parametrize("stride,kernel", [((1, 1, 1), (3, 3, 3)), ((1, 2, 2), (3, 3, 3)),
                                           ((1, 2, 2), (3, 4, 4)), ((1, 1, 1), (1, 1, 1))])
def test_conv3d_matches_direct_sum(rng, stride, kernel):
    x = rng.normal(size=(2, 3, 4, 6, 5))
    w = rng.normal(size=(4, 3) + kernel)
    b = rng.normal(size=4)
    p = tuple(1 if kk > 1 else 0 for kk in kernel)
    got = conv3d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=p).data
    ref = conv_direct(x, w, stride, p) + b[None, :, None, None, None]
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)


def test_conv3d_transpose_matches_scatter(rng):
    x = rng.normal(size=(2, 3, 3, 4, 5))
    w = rng.normal(size=(3, 2, 3, 4, 4))
    got = conv3d_transpose(Tensor(x), Tensor(w)).data
    assert got.shape == (2, 2, 3, 8, 10)
    np.testing.assert_allclose(got, conv_transpose_direct(x, w, (1, 2, 2), (1, 1, 1), (3, 8, 10)),
                               rtol=1e-12, atol=1e-12)


def test_same_conv_keeps_shape_and_float32(rng):
    x = Tensor(rng.normal(size=(1, 2, 3, 8, 8)).astype(np.float32), True)
    w = Tensor(rng.normal(size=(5, 2, 3, 3, 3)).astype(np.float32), True)
    y = conv3d(x, w)
    assert y.shape == (1, 5, 3, 8, 8) and y.dtype == np.float32
    y.sum().backward()
    assert x.grad.dtype == np.float32 and w.grad.dtype == np.float32


def test_adjoint_identity(rng):
    for _ in range(10):
        x = rng.normal(size=(2, 3, 4, 8, 8))
        w = rng.normal(size=(5, 3, 3, 4, 4))
        y = rng.normal(size=(2, 5, 4, 4, 4))
        lhs = np.sum(conv3d(Tensor(x), Tensor(w), stride=(1, 2, 2), padding=1).data * y)
        rhs = np.sum(x * conv3d_transpose(Tensor(y), Tensor(w), output_size=(4, 8, 8)).data)
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs))


def test_filter_and_pool_match_scipy(rng):
    img = rng.normal(size=(2, 20, 17))
    taps = np.ones(5) / 5
    ref = uniform_filter(img, size=(1, 5, 5), mode="constant")[:, 2:-2, 2:-2]
    np.testing.assert_allclose(filter2d_valid(Tensor(img), taps).data, ref, atol=1e-12)
    pooled = avg_pool2d(Tensor(img)).data
    assert pooled.shape == (2, 10, 8)
    np.testing.assert_allclose(pooled[1, 3, 2], img[1, 6:8, 4:6].mean())


# --- gradients ------------------------------------------------------------------------

LINEAR_TOL = 1e-10
NONLINEAR_TOL = 1e-5


def _linear_check(op, inputs, rng):
    # loss linear in each input coordinate: central differences are exact up to rounding
    probe = rng.normal(size=op(inputs).shape)
    return grad_check(lambda t: (op(t) * probe).sum(), inputs, eps=1.0, rng=0)


def test_linear_op_gradients(rng):
    x, w, b = _t(rng, 2, 3, 4, 8, 8), _t(rng, 4, 3, 3, 3, 3), _t(rng, 4)
    assert _linear_check(lambda t: conv3d(t[0], t[1], t[2]), [x, w, b], rng) < LINEAR_TOL
    w4 = _t(rng, 4, 3, 3, 4, 4)
    assert _linear_check(lambda t: conv3d(t[0], t[1], t[2], stride=(1, 2, 2), padding=1),
                         [x, w4, b], rng) < LINEAR_TOL
    xt, wt, bt = _t(rng, 2, 4, 4, 4, 4), _t(rng, 4, 3, 3, 4, 4), _t(rng, 3)
    assert _linear_check(lambda t: conv3d_transpose(t[0], t[1], t[2]), [xt, wt, bt], rng) < LINEAR_TOL
    y = _t(rng, 2, 2, 4, 8, 8)
    assert _linear_check(lambda t: concat_channels(t[0], t[1]), [x, y], rng) < LINEAR_TOL
    assert _linear_check(lambda t: add(t[0], t[1]), [x, _t(rng, 2, 3, 4, 8, 8)], rng) < LINEAR_TOL
    img = _t(rng, 2, 3, 16, 15)
    assert _linear_check(lambda t: filter2d_valid(t[0], np.hanning(13)[1:-1]), [img], rng) < LINEAR_TOL
    assert _linear_check(lambda t: avg_pool2d(t[0]), [img], rng) < LINEAR_TOL
    assert _linear_check(lambda t: t[0].sum(axis=(1, 3)), [img], rng) < LINEAR_TOL
    assert _linear_check(lambda t: t[0].mean(axis=2, keepdims=True), [img], rng) < LINEAR_TOL
    assert _linear_check(lambda t: t[0].reshape(6, -1)[1:4, ::2], [img], rng) < LINEAR_TOL


def test_elementwise_gradients(rng):
    a = Tensor(rng.uniform(0.5, 2.0, size=(3, 4, 5)), True)
    b = Tensor(rng.uniform(0.5, 2.0, size=(4, 1)), True)
    fns = [lambda t: (t[0] * t[1] - t[1] / t[0]).sum(),
           lambda t: ((t[0] + 1.0) ** 2.5).sum() + (3.0 - t[1]).sum(),
           lambda t: (-t[0] / 2.0 + 2.0 / t[1]).mean(),
           lambda t: (t[0] ** 0.5).sum() * t[1].sum(),
           lambda t: t[0].astype(np.float64).sum()]
    for f in fns:
        assert grad_check(f, [a, b]) < NONLINEAR_TOL


def test_piecewise_gradients_away_from_kinks(rng):
    x = _t(rng, 2, 3, 4, 6, 6)
    x.data[np.abs(x.data) < 0.05] += 0.2  # keep well off zero
    a = Tensor(np.array([0.25, -0.1, 0.6]), True)
    assert grad_check(lambda t: (prelu(t[0], t[1]) ** 2).sum(), [x, a]) < NONLINEAR_TOL
    assert grad_check(lambda t: (t[0].relu() * t[0]).sum() + t[0].abs().mean(), [x]) < NONLINEAR_TOL
    assert grad_check(lambda t: (t[0].max(axis=(2, 3)) ** 2).sum() + t[0].max(), [x]) < NONLINEAR_TOL


def test_kink_aware_check_skips_branch_flips():
    x = Tensor(np.array([1e-7, 1.0, -2.0]), True)
    f = lambda t: t[0].relu().sum()  # noqa: E731
    assert grad_check(f, [x], eps=1e-4) > 0.1  # the first coordinate straddles the kink
    res = grad_check(f, [x], eps=1e-4, skip_kinks=True)
    assert res < 1e-12 and res.skipped == 1 and res.checked == 2


def test_broadcast_gradients_are_reduced(rng):
    a = Tensor(rng.normal(size=(2, 3, 4)), True)
    b = Tensor(rng.normal(size=(3, 1)), True)
    (a * b).sum().backward()
    assert b.grad.shape == (3, 1)
    np.testing.assert_allclose(b.grad[:, 0], a.data.sum(axis=(0, 2)))


# --- graph mechanics --------------------------------------------------------------------

def test_shared_nodes_accumulate(rng):
    x = Tensor(rng.normal(size=4), True)
    y = x * 2.0
    (y * y + y).sum().backward()
    np.testing.assert_allclose(x.grad, 8.0 * x.data + 2.0)


def test_backward_rules():
    x = tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(GraphError):
        (x * 2.0).backward()
    y = (x * x).sum()
    y.backward(retain_graph=True)
    y.backward()
    np.testing.assert_allclose(x.grad, 2 * 2 * x.data)
    with pytest.raises(GraphError):
        tensor([1.0]).sum().backward()


def test_no_grad_builds_no_graph():
    x = tensor([1.0, 2.0], requires_grad=True)
    assert grad_enabled()
    with no_grad():
        assert not grad_enabled()
        y = (x * 3.0).sum()
    assert grad_enabled() and not y.requires_grad


@pytest.mark.parametrize("call", [
    lambda: conv3d(Tensor(np.zeros((1, 2, 3, 4))), Tensor(np.zeros((1, 2, 3, 3, 3)))),
    lambda: conv3d(Tensor(np.zeros((1, 2, 3, 4, 4))), Tensor(np.zeros((1, 3, 3, 3, 3)))),
    lambda: conv3d_transpose(Tensor(np.zeros((1, 2, 3, 4, 4))), Tensor(np.zeros((3, 1, 3, 4, 4)))),
    lambda: prelu(Tensor(np.zeros((1, 2, 3, 4, 4))), Tensor(np.zeros(3))),
    lambda: concat_channels(Tensor(np.zeros((1, 2, 3, 4, 4))), Tensor(np.zeros((1, 2, 3, 4, 5)))),
    lambda: add(Tensor(np.zeros((1, 2))), Tensor(np.zeros((2, 1)))),
    lambda: filter2d_valid(Tensor(np.zeros((5, 5))), np.ones(11)),
])
def test_shape_errors(call):
    with pytest.raises(ShapeError):
        call()


def test_grad_check_requires_float64():
    with pytest.raises(TypeError):
        grad_check(lambda t: t[0].sum(), [Tensor(np.zeros(3, dtype=np.float32), True)])
