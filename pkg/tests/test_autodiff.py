import numpy as np
import pytest

from cityfm.neural import autodiff as ad
from cityfm.neural.autodiff import Tensor
from cityfm.neural.optim import grad_check


def _check(build, arrays, tol=1e-6):
    """Compare tape gradients of sum(build(*leaves) * probe) with central differences."""
    rng = np.random.default_rng(0)
    probe = rng.normal(size=build(*[Tensor(a) for a in arrays]).shape)

    def loss(params):
        leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
        out = build(*[leaves[f"x{i}"] for i in range(len(arrays))])
        total = ad.custom(float(np.sum(out.data * probe)), (out,), (probe,))
        total.backward()
        return float(total.data), {k: t.grad for k, t in leaves.items() if t.grad is not None}

    err = grad_check(loss, {f"x{i}": a for i, a in enumerate(arrays)}, n_samples=300)
    assert err <= tol


def test_elementwise_and_matmul():
    rng = np.random.default_rng(1)
    a, b, c = rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=(5,))
    _check(lambda x, y, z: ad.tanh(x @ y + z) * 0.5, [a, b, c])
    _check(lambda x, y: ad.mul(x, y), [a, rng.normal(size=(3, 4))])
    _check(lambda x: ad.mean(ad.reshape(x, (2, 6)), axis=1), [a])


def test_gather_rows_accumulates_repeats():
    rng = np.random.default_rng(2)
    _check(lambda x: ad.gather_rows(x, [0, 2, 2, 1]), [rng.normal(size=(3, 4))])


def test_embedding_bag():
    rng = np.random.default_rng(3)
    ids, offsets = np.array([0, 3, 3, 1, 2, 0]), np.array([0, 1, 4, 6])
    table = rng.normal(size=(4, 3))
    out = ad.embedding_bag(Tensor(table), ids, offsets).data
    np.testing.assert_allclose(out[1], table[[3, 3, 1]].mean(axis=0))
    _check(lambda t: ad.embedding_bag(t, ids, offsets), [table])
    with pytest.raises(ValueError, match="empty bag"):
        ad.embedding_bag(Tensor(table), ids, np.array([0, 0, 6]))


def naive_conv(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for i in range(n):
        for oc in range(o):
            for r in range(ho):
                for s in range(wo):
                    patch = xp[i, :, r * stride:r * stride + k, s * stride:s * stride + k]
                    out[i, oc, r, s] = np.sum(patch * w[oc]) + b[oc]
    return out


@pytest.mark.parametrize("stride, pad, size", [(2, 1, 8), (1, 1, 5), (2, 0, 7)])
def test_conv2d_matches_loops(stride, pad, size):
    rng = np.random.default_rng(4)
    x, w, b = rng.normal(size=(2, 3, size, size)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    got = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
    np.testing.assert_allclose(got, naive_conv(x, w, b, stride, pad), atol=1e-12)
    _check(lambda xx, ww, bb: ad.conv2d(xx, ww, bb, stride, pad), [x, w, b])


def test_conv2d_shape_mismatch():
    with pytest.raises(ValueError):
        ad.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((3, 1, 3, 3))), Tensor(np.zeros(3)))


def test_shared_subgraph_gradients_add():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    y = x * x + x
    total = ad.custom(float(y.data.sum()), (y,), (np.ones(2),))
    total.backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_backward_needs_scalar_or_seed():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_quadratic_toy_loss():
    theta = {"w": np.random.default_rng(5).normal(size=(10, 3))}
    assert grad_check(lambda p: (float(np.sum(p["w"] ** 2)), {"w": 2 * p["w"]}), theta) <= 1e-8


def test_grad_check_flags_a_wrong_gradient():
    theta = {"w": np.ones(4)}
    assert grad_check(lambda p: (float(np.sum(p["w"] ** 2)), {"w": 3 * p["w"]}), theta) > 0.1
    with pytest.raises(FloatingPointError):
        grad_check(lambda p: (float("nan"), {"w": p["w"]}), theta)
