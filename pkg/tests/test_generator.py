"""Dummy-prototype generator: shape, set-function property, trainability."""

import numpy as np

from fewspot import losses
from fewspot.generator import NUM_DUMMIES, DummyPrototypeGenerator
from fewspot.nn.autograd import Tensor
from fewspot.nn.optim import Adam


def make_gen(dim=6, seed=0):
    return DummyPrototypeGenerator(dim, np.random.default_rng(seed))


def test_output_shape():
    gen = make_gen()
    protos = np.random.default_rng(1).standard_normal((5, 6))
    out = gen(Tensor(protos))
    assert out.shape == (NUM_DUMMIES, 6)
    assert NUM_DUMMIES == 3


def test_permutation_invariance():
    # a set function: reordering the input prototypes changes nothing
    gen = make_gen()
    rng = np.random.default_rng(2)
    protos = rng.standard_normal((7, 6))
    base = gen(Tensor(protos)).data
    for _ in range(5):
        perm = rng.permutation(7)
        out = gen(Tensor(protos[perm])).data
        np.testing.assert_allclose(out, base, atol=1e-10)


def test_works_for_any_class_count():
    gen = make_gen()
    rng = np.random.default_rng(3)
    for m in (2, 4, 10, 40):
        out = gen(Tensor(rng.standard_normal((m, 6))))
        assert out.shape == (NUM_DUMMIES, 6)


def test_deterministic_given_seed():
    a = make_gen(seed=7)
    b = make_gen(seed=7)
    for pa, pb in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)


def test_gradcheck_through_dproto_loss():
    gen = make_gen(dim=4, seed=4)
    rng = np.random.default_rng(5)
    protos = rng.standard_normal((3, 4))
    q = rng.standard_normal((6, 4))
    labels = np.array([0, 1, 2, 0, 0, 1])

    def loss_value():
        return losses.dproto_loss(Tensor(q), labels, Tensor(protos), gen(Tensor(protos)))

    for p in gen.parameters():
        p.grad = None
    loss_value().backward()
    h = 1e-5
    for p in gen.parameters():
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            hi = loss_value().item()
            flat[j] = orig - h
            lo = loss_value().item()
            flat[j] = orig
            want = (hi - lo) / (2 * h)
            scale = max(abs(want), 1e-3)
            assert abs(gflat[j] - want) / scale < 1e-4


def test_joint_toy_training_decreases_loss():
    # embeddings fixed; only the generator learns to place dummies near
    # the held-out "unknown" queries
    rng = np.random.default_rng(6)
    gen = make_gen(dim=4, seed=8)
    protos = rng.standard_normal((3, 4))
    unknown_q = rng.standard_normal((10, 4)) + np.array([3.0, 3.0, 0.0, 0.0])
    labels = np.zeros(10, dtype=np.intp)
    opt = Adam(gen.parameters(), lr=1e-2)

    def step():
        for p in gen.parameters():
            p.grad = None
        loss = losses.dproto_loss(Tensor(unknown_q), labels, Tensor(protos), gen(Tensor(protos)))
        loss.backward()
        opt.step()
        return loss.item()

    first = step()
    for _ in range(199):
        last = step()
    assert last < first * 0.8
