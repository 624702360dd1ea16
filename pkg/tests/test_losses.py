"""Metric-learning losses: closed-form values and finite differences."""

import numpy as np
import pytest

from fewspot import losses
from fewspot.errors import ValidationError
from fewspot.nn.autograd import Tensor

FD_H = 1e-5
FD_TOL = 1e-4


def fd_gradcheck(build, arrays, h=FD_H):
    """Max relative error between backward() grads and central differences."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    build(*tensors).backward()
    worst = 0.0
    for i, (a, t) in enumerate(zip(arrays, tensors)):
        def value(x, i=i):
            args = [Tensor(arr.copy()) for arr in arrays]
            args[i] = Tensor(x.copy())
            return build(*args).item()

        flat = a.copy()
        grad_num = np.zeros_like(flat).reshape(-1)
        fv = flat.reshape(-1)
        for j in range(fv.size):
            orig = fv[j]
            fv[j] = orig + h
            hi = value(flat)
            fv[j] = orig - h
            lo = value(flat)
            fv[j] = orig
            grad_num[j] = (hi - lo) / (2 * h)
        grad_num = grad_num.reshape(a.shape)
        scale = max(np.max(np.abs(grad_num)), 1e-3)
        worst = max(worst, np.max(np.abs(t.grad - grad_num)) / scale)
    return worst


def episode_arrays(rng, num_classes=3, support=2, query=2, dim=5):
    """Support embeddings, support labels, query embeddings, query labels."""
    sup = rng.standard_normal((num_classes * support, dim))
    sup_labels = np.repeat(np.arange(num_classes), support)
    qry = rng.standard_normal((num_classes * query, dim))
    qry_labels = np.repeat(np.arange(num_classes), query)
    return sup, sup_labels, qry, qry_labels


# -- prototypes ------------------------------------------------------


def test_prototypes_match_brute_force():
    rng = np.random.default_rng(0)
    emb = rng.standard_normal((12, 6))
    labels = np.array([0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2])
    got = losses.compute_prototypes(Tensor(emb), labels, 3).data
    for c in range(3):
        total = np.zeros(6)
        count = 0
        for e, lab in zip(emb, labels):
            if lab == c:
                total = total + e
                count += 1
        assert np.max(np.abs(got[c] - total / count)) < 1e-12


def test_prototypes_unbalanced_counts():
    emb = np.array([[1.0], [3.0], [10.0]])
    got = losses.compute_prototypes(Tensor(emb), np.array([0, 0, 1]), 2).data
    np.testing.assert_allclose(got, [[2.0], [10.0]], atol=1e-15)


def test_prototypes_reject_empty_class():
    with pytest.raises(ValidationError, match="class 1"):
        losses.compute_prototypes(Tensor(np.ones((2, 3))), np.array([0, 2]), 3)


def test_prototype_gradients_flow_to_support():
    emb = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
    protos = losses.compute_prototypes(emb, np.array([0, 0]), 1)
    protos.sum().backward()
    np.testing.assert_allclose(emb.grad, 0.5 * np.ones((2, 2)))


# -- prototypical loss ----------------------------------------------


def test_pn_loss_symmetric_query_gives_ln2():
    protos = Tensor(np.array([[-1.0], [1.0]]))
    q = Tensor(np.array([[0.0]]))
    loss = losses.pn_loss(q, np.array([0]), protos)
    assert loss.item() == pytest.approx(np.log(2.0), abs=1e-9)


def test_pn_loss_hand_computed_asymmetric():
    # distances 0 and 2 -> logits (0, -2) -> CE = ln(1 + e^-2)
    protos = Tensor(np.array([[0.0], [2.0]]))
    q = Tensor(np.array([[0.0]]))
    loss = losses.pn_loss(q, np.array([0]), protos)
    assert loss.item() == pytest.approx(np.log1p(np.exp(-2.0)), abs=1e-6)


def test_pn_loss_equidistant_m_classes_gives_ln_m():
    for m in (2, 3, 4, 5):
        protos = np.zeros((m, m))
        protos[np.arange(m), np.arange(m)] = 1.0  # unit simplex corners
        loss = losses.pn_loss(Tensor(np.zeros((1, m))), np.array([0]), Tensor(protos))
        assert loss.item() == pytest.approx(np.log(m), abs=1e-6)


def test_pn_loss_translation_invariant():
    rng = np.random.default_rng(1)
    sup, sup_labels, qry, qry_labels = episode_arrays(rng)
    shift = rng.standard_normal(5)
    p1 = losses.compute_prototypes(Tensor(sup), sup_labels, 3)
    p2 = losses.compute_prototypes(Tensor(sup + shift), sup_labels, 3)
    a = losses.pn_loss(Tensor(qry), qry_labels, p1).item()
    b = losses.pn_loss(Tensor(qry + shift), qry_labels, p2).item()
    assert a == pytest.approx(b, abs=1e-9)


def test_pn_loss_needs_two_classes():
    with pytest.raises(ValidationError, match="2 classes"):
        losses.pn_loss(Tensor(np.ones((1, 2))), np.array([0]), Tensor(np.ones((1, 2))))


def test_pn_gradcheck_through_prototypes():
    rng = np.random.default_rng(2)
    sup, sup_labels, qry, qry_labels = episode_arrays(rng, 4, 2, 2, 8)

    def build(sup_t, qry_t):
        protos = losses.compute_prototypes(sup_t, sup_labels, 4)
        return losses.pn_loss(qry_t, qry_labels, protos)

    assert fd_gradcheck(build, [sup, qry]) < FD_TOL


# -- angular prototypical loss ---------------------------------------


def test_ap_loss_hand_computed():
    # aligned query: cos=(1,0); w=1, b=0, margin 0.5 -> logits (0.5, 0)
    protos = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    q = Tensor(np.array([[1.0, 0.0]]))
    w, b = Tensor(np.array(1.0)), Tensor(np.array(0.0))
    loss = losses.ap_loss(q, np.array([0]), protos, w, b)
    assert loss.item() == pytest.approx(np.log1p(np.exp(-0.5)), abs=1e-6)


def test_ap_default_scalars():
    w, b = losses.make_ap_scalars()
    assert w.item() == 10.0 and b.item() == -5.0
    assert w.requires_grad and b.requires_grad


def test_ap_loss_scale_invariant():
    rng = np.random.default_rng(3)
    sup, sup_labels, qry, qry_labels = episode_arrays(rng)
    w, b = losses.make_ap_scalars()
    p = losses.compute_prototypes(Tensor(sup), sup_labels, 3)
    a = losses.ap_loss(Tensor(qry), qry_labels, p, w, b).item()
    p2 = losses.compute_prototypes(Tensor(sup * 7.0), sup_labels, 3)
    b2 = losses.ap_loss(Tensor(qry * 3.0), qry_labels, p2, w, b).item()
    assert a == pytest.approx(b2, abs=1e-9)


def test_ap_loss_rejects_zero_norm():
    protos = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    q = Tensor(np.zeros((1, 2)))
    w, b = losses.make_ap_scalars()
    with pytest.raises(ValidationError, match="zero-norm"):
        losses.ap_loss(q, np.array([0]), protos, w, b)


def test_ap_gradcheck_including_scalars():
    rng = np.random.default_rng(4)
    sup, sup_labels, qry, qry_labels = episode_arrays(rng, 3, 2, 2, 6)
    w0 = np.array(10.0)
    b0 = np.array(-5.0)

    def build(sup_t, qry_t, w_t, b_t):
        protos = losses.compute_prototypes(sup_t, sup_labels, 3)
        return losses.ap_loss(qry_t, qry_labels, protos, w_t, b_t)

    assert fd_gradcheck(build, [sup, qry, w0, b0]) < FD_TOL


# -- triplet loss ----------------------------------------------------


def test_triplet_hinge_satisfied_margin_is_zero():
    emb = Tensor(np.array([[0.0], [0.0], [1.0]]))
    loss = losses.triplet_hinge_mean(emb, [0], [1], [2], 0.5)
    assert loss.item() == pytest.approx(0.0, abs=1e-5)


def test_triplet_hinge_violating_margin():
    # d(a,p)=1, d(a,n)=0.2 -> 1 - 0.2 + 0.5 = 1.3
    emb = Tensor(np.array([[0.0], [1.0], [0.2]]))
    loss = losses.triplet_hinge_mean(emb, [0], [1], [2], 0.5)
    assert loss.item() == pytest.approx(1.3, abs=1e-5)


def test_sample_triplets_structure():
    labels = np.array([0, 0, 1, 1, 2, 2, 2])
    rng = np.random.default_rng(5)
    anchors, positives, negatives = losses.sample_triplets(labels, rng)
    np.testing.assert_array_equal(anchors, np.arange(7))
    for a, p, n in zip(anchors, positives, negatives):
        assert labels[a] == labels[p] and a != p
        assert labels[a] != labels[n]


def test_sample_triplets_errors():
    with pytest.raises(ValidationError, match="single sample"):
        losses.sample_triplets(np.array([0, 1, 1]), np.random.default_rng(0))
    with pytest.raises(ValidationError, match="2 classes"):
        losses.sample_triplets(np.array([0, 0]), np.random.default_rng(0))


def test_tl_loss_translation_invariant():
    rng = np.random.default_rng(6)
    emb = rng.standard_normal((8, 4))
    labels = np.repeat(np.arange(4), 2)
    a = losses.tl_loss(Tensor(emb), labels, np.random.default_rng(42)).item()
    b = losses.tl_loss(Tensor(emb + 3.5), labels, np.random.default_rng(42)).item()
    assert a == pytest.approx(b, abs=1e-9)


def test_tl_gradcheck_active_triplets():
    rng = np.random.default_rng(7)
    emb = rng.standard_normal((8, 6)) * 0.3  # small spread keeps hinges active
    labels = np.repeat(np.arange(4), 2)
    trip_rng_seed = 9

    def build(emb_t):
        return losses.tl_loss(emb_t, labels, np.random.default_rng(trip_rng_seed))

    assert fd_gradcheck(build, [emb]) < FD_TOL


# -- dummy-prototype loss --------------------------------------------


def test_dproto_loss_label_zero_prefers_dummies():
    known = Tensor(np.array([[5.0, 0.0], [0.0, 5.0]]))
    dummies = Tensor(np.array([[0.0, 0.0], [9.0, 9.0], [-9.0, 9.0]]))
    q = Tensor(np.array([[0.1, 0.1]]))  # closest to dummy 0
    loss = losses.dproto_loss(q, np.array([0]), known, dummies)
    assert loss.item() < 0.15


def test_dproto_loss_known_class_wins():
    known = Tensor(np.array([[5.0, 0.0], [0.0, 5.0]]))
    dummies = Tensor(np.array([[-5.0, -5.0], [9.0, 9.0], [-9.0, 9.0]]))
    q = Tensor(np.array([[4.9, 0.0]]))
    loss = losses.dproto_loss(q, np.array([1]), known, dummies)
    assert loss.item() < 0.05


def test_dproto_unknown_logit_is_max_over_dummies():
    known = np.array([[3.0, 0.0], [0.0, 3.0]])
    dummies = np.array([[1.0, 0.0], [0.0, 2.0], [-4.0, 0.0]])
    q = np.array([[0.0, 0.0]])
    loss = losses.dproto_loss(Tensor(q), np.array([0]), Tensor(known), Tensor(dummies)).item()
    d_known = np.array([3.0, 3.0])
    d_dummy_best = 1.0  # closest dummy
    logits = np.concatenate([[-d_dummy_best], -d_known])
    want = -logits[0] + np.log(np.exp(logits).sum())
    assert loss == pytest.approx(want, abs=1e-6)


def test_dproto_gradcheck():
    rng = np.random.default_rng(8)
    q = rng.standard_normal((6, 5))
    labels = np.array([0, 1, 2, 0, 1, 2])
    known = rng.standard_normal((3, 5))
    dummies = rng.standard_normal((3, 5))

    def build(q_t, known_t, dummy_t):
        return losses.dproto_loss(q_t, labels, known_t, dummy_t)

    assert fd_gradcheck(build, [q, known, dummies]) < FD_TOL


def test_pairwise_euclidean_brute_force():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal((5, 3))
    got = losses.pairwise_euclidean(Tensor(a), Tensor(b)).data
    for i in range(4):
        for j in range(5):
            want = np.sqrt(np.sum((a[i] - b[j]) ** 2) + 1e-12)
            assert got[i, j] == pytest.approx(want, abs=1e-12)
