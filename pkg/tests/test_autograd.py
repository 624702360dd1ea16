"""Finite-difference checks for every reverse-mode primitive."""

import numpy as np
import pytest

from fewspot.nn import autograd as ag
from fewspot.nn.autograd import Tensor

H = 1e-6
TOL = 1e-6


def numeric_grad(f, x, h=H):
    """Central finite differences of a scalar function of one array."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * h)
    return g


def check(build, *shapes, seed=0, tol=TOL):
    """build maps Tensors to a scalar Tensor; compare grads per input."""
    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal(s) for s in shapes]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    out.backward()
    for i, (a, t) in enumerate(zip(arrays, tensors)):
        def scalar(x, i=i):
            args = [Tensor(arr.copy()) for arr in arrays]
            args[i] = Tensor(x.copy())
            return build(*args).item()

        want = numeric_grad(scalar, a.copy())
        scale = max(np.max(np.abs(want)), 1.0)
        assert np.max(np.abs(t.grad - want)) / scale < tol, f"input {i}"


def test_add_sub_with_broadcasting():
    check(lambda a, b: ((a + b) * (a - b)).sum(), (3, 4), (4,))
    check(lambda a, b: (a + b).sum(), (2, 1, 3), (5, 3))


def test_mul_div():
    check(lambda a, b: (a * b).sum(), (4, 3), (4, 3))
    check(lambda a, b: (a / (b * b + 1.0)).sum(), (5,), (5,))


def test_scalar_operands():
    check(lambda a: (2.5 * a + 1.0 - a / 3.0).sum(), (4,))
    check(lambda a: (1.0 / (a * a + 2.0)).sum(), (6,))


def test_power_sqrt_exp_log():
    check(lambda a: ((a * a + 1.0) ** 1.5).sum(), (4,))
    check(lambda a: ag.sqrt(a * a + 0.5).sum(), (5,))
    check(lambda a: ag.exp(a * 0.3).sum(), (3, 3))
    check(lambda a: ag.log(a * a + 1.0).sum(), (4,))


def test_relu_away_from_kink():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((40,))
    a[np.abs(a) < 0.1] += 0.2  # keep clear of the nondifferentiable point
    t = Tensor(a.copy(), requires_grad=True)
    ag.relu(t).sum().backward()
    want = numeric_grad(lambda x: np.maximum(x, 0.0).sum(), a.copy())
    assert np.max(np.abs(t.grad - want)) < TOL


def test_max_splits_ties_evenly():
    t = Tensor(np.array([[1.0, 3.0, 3.0], [2.0, 2.0, 0.0]]), requires_grad=True)
    ag.tmax(t, axis=1).sum().backward()
    np.testing.assert_allclose(t.grad, [[0.0, 0.5, 0.5], [0.5, 0.5, 0.0]])


def test_max_gradcheck_unique():
    check(lambda a: ag.tmax(a, axis=1).sum(), (4, 6), seed=3)


def test_sum_mean_axes():
    check(lambda a: a.sum(axis=0).sum(), (3, 4))
    check(lambda a: a.mean(axis=1, keepdims=True).sum(), (3, 4))
    check(lambda a: a.mean() * 3.0, (4,))


def test_logsumexp_matches_dense_formula():
    check(lambda a: ag.logsumexp(a, axis=1).sum(), (5, 7))
    x = np.array([[1000.0, 1000.0]])
    out = ag.logsumexp(Tensor(x), axis=1)
    assert out.item() == pytest.approx(1000.0 + np.log(2.0))


def test_matmul():
    check(lambda a, b: (a @ b).sum(), (3, 4), (4, 5))


def test_reshape_transpose_getitem():
    check(lambda a: a.reshape(6).sum(), (2, 3))
    check(lambda a: ag.transpose(a, (1, 0)).sum(), (2, 3))
    check(lambda a: (a[1] * a[1]).sum(), (3, 4))


def test_concat_stack():
    check(lambda a, b: ag.concat([a, b], axis=0).sum(), (2, 3), (4, 3))
    check(lambda a, b: (ag.stack([a, b], axis=0) ** 2.0).sum(), (2, 3), (2, 3))


def test_take_accumulates_repeated_indices():
    t = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    ag.take(t, np.array([0, 0, 2])).sum().backward()
    np.testing.assert_array_equal(t.grad, [2.0, 0.0, 1.0])


def test_broadcast_to():
    check(lambda a: (ag.broadcast_to(a, (4, 3)) * 2.0).sum(), (1, 3))


def test_cross_entropy_mean_matches_manual():
    rng = np.random.default_rng(5)
    logits = rng.standard_normal((6, 4))
    labels = np.array([0, 1, 2, 3, 0, 2])

    def manual(x):
        lse = np.log(np.exp(x).sum(axis=1))
        return np.mean(lse - x[np.arange(len(labels)), labels])

    t = Tensor(logits.copy(), requires_grad=True)
    loss = ag.cross_entropy_mean(t, labels)
    assert loss.item() == pytest.approx(manual(logits), abs=1e-12)
    loss.backward()
    want = numeric_grad(manual, logits.copy())
    assert np.max(np.abs(t.grad - want)) < TOL


def test_grad_accumulates_across_uses():
    t = Tensor(np.array([2.0]), requires_grad=True)
    (t * t + t * 3.0).sum().backward()
    np.testing.assert_allclose(t.grad, [2 * 2.0 + 3.0])


def test_backward_handles_deep_graphs():
    # iterative traversal: a 5000-node chain must not hit the recursion limit
    t = Tensor(np.array([0.001]), requires_grad=True)
    x = t
    for _ in range(5000):
        x = x + t
    x.sum().backward()
    np.testing.assert_allclose(t.grad, [5001.0])


def test_no_grad_blocks_graph_building():
    t = Tensor(np.ones(3), requires_grad=True)
    with ag.no_grad():
        out = (t * 2.0).sum()
    assert out._parents is None or not out.requires_grad


def test_non_scalar_backward_needs_seed_gradient():
    t = Tensor(np.ones((2, 2)), requires_grad=True)
    out = t * 2.0
    with pytest.raises(ValueError):
        out.backward()
    out.backward(np.ones((2, 2)))
    np.testing.assert_allclose(t.grad, 2 * np.ones((2, 2)))


def test_float32_operations_stay_float32():
    t = Tensor(np.ones((3, 3), dtype=np.float32), requires_grad=True)
    out = ((t * 2.0 + 1.0) / 3.0 - 0.5).sum()
    assert out.data.dtype == np.float32
    out.backward()
    assert t.grad.dtype == np.float32
