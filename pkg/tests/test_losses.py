import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camsep.errors import DegenerateCenterError
from camsep.gradcheck import numeric_grad, random_loss_instance, relative_error
from camsep.losses import (LossWeights, base_loss, batch_camera_centers, batch_centers_backward,
                           cacc_loss, casc_loss, cluster_centroids, memory_camera_centers,
                           total_loss)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def two_center_memory(g_pos, g_neg):
    """Memory with one center of class 0 (camera 0) and one of class 1."""
    return memory_camera_centers(np.array([g_pos, g_neg]), np.array([0, 1]), np.array([0, 0]))


def test_memory_center_singleton_and_symmetric_pair():
    snap = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]])
    mc = memory_camera_centers(snap, [0, 0, 1], [0, 0, 2])
    centers = {(c.class_id, c.camera_id): c for c in mc}
    np.testing.assert_allclose(centers[(0, 0)].vector, [0.7071, 0.7071], atol=1e-4)
    assert centers[(0, 0)].member_count == 2
    np.testing.assert_array_equal(centers[(1, 2)].vector, [0.6, 0.8])


def test_memory_centers_match_group_by():
    rng = np.random.default_rng(0)
    snap = rng.standard_normal((40, 5))
    labels = rng.integers(-1, 4, 40)
    cams = rng.integers(0, 3, 40)
    mc = memory_camera_centers(snap, labels, cams)
    groups = {}
    for x, k, c in zip(snap, labels, cams):
        if k != -1:
            groups.setdefault((int(k), int(c)), []).append(x)
    assert len(mc) == len(groups)
    for center in mc:
        members = groups[(center.class_id, center.camera_id)]
        assert center.member_count == len(members)
        np.testing.assert_allclose(center.vector, unit(np.mean(members, axis=0)), atol=1e-6)


def test_batch_center_single_member_is_itself():
    f = np.array([unit([1, 2, 3])])
    np.testing.assert_array_equal(batch_camera_centers(f, [0], [0]).vectors[0], f[0])


def test_antipodal_members_are_degenerate():
    f = np.array([[1.0, 0.0], [-1.0, 0.0]])
    with pytest.raises(DegenerateCenterError):
        batch_camera_centers(f, [0, 0], [1, 1])
    mem = two_center_memory([1.0, 0.0], [0.0, 1.0])
    with pytest.raises(DegenerateCenterError):
        cacc_loss(f, [0, 0], [1, 1], mem)


def test_batch_center_gradient():
    rng = np.random.default_rng(1)
    for _ in range(5):
        f, labels, cams, _, _ = random_loss_instance(rng)
        centers = batch_camera_centers(f, labels, cams)
        R = rng.standard_normal(centers.vectors.shape)
        g = batch_centers_backward(centers, R, len(f))
        num = numeric_grad(lambda: float((batch_camera_centers(f, labels, cams).vectors * R).sum()), f)
        assert relative_error(g, num) < 1e-6


@pytest.mark.parametrize("tau", [0.05, 0.07, 0.5, 3.0])
def test_cacc_symmetric_pair_is_ln2(tau):
    p = unit([1.0, 1.0, 0.0])
    mem = two_center_memory(unit([1.0, 0.0, 0.3]), unit([0.0, 1.0, 0.3]))
    loss, _ = cacc_loss(p[None], [0], [0], mem, LossWeights(tau_cacc=tau, n_negatives=1))
    assert abs(loss - math.log(2)) < 1e-9
    loss, _ = casc_loss(p[None], [0], [0], mem, LossWeights(tau_cacc=tau, n_negatives=1))
    assert abs(loss - math.log(2)) < 1e-9


def test_cacc_saturated_hand_value():
    p = np.array([[1.0, 0.0]])
    mem = two_center_memory([1.0, 0.0], [0.0, 1.0])
    loss, _ = cacc_loss(p, [0], [0], mem, LossWeights(tau_cacc=0.07, n_negatives=1))
    expected = math.log1p(math.exp(-1 / 0.07))
    assert abs(loss - expected) < 1e-15
    assert loss == pytest.approx(6.2e-7, rel=0.1)


def test_cacc_positives_are_all_class_centers():
    # two positives at different similarity, one negative; literal formula
    tau = 0.3
    p = unit([1.0, 0.2, 0.0])
    g1, g2, n1 = unit([1, 0, 0]), unit([0.5, 1, 0]), unit([0, 0, 1])
    mem = memory_camera_centers(np.array([g1, g2, n1]), [0, 0, 1], [0, 1, 0])
    loss, _ = cacc_loss(p[None], [0], [0], mem, LossWeights(tau_cacc=tau, n_negatives=5))
    S = lambda g: math.exp(p @ g / tau)
    expected = -0.5 * sum(math.log(S(g) / (S(g) + S(n1))) for g in (g1, g2))
    assert abs(loss - expected) < 1e-12
    loss_x, _ = cacc_loss(p[None], [0], [0], mem, LossWeights(tau_cacc=tau, include_own_camera=False))
    assert abs(loss_x + math.log(S(g2) / (S(g2) + S(n1)))) < 1e-12


def test_cacc_negatives_are_most_similar():
    tau = 0.5
    p = unit([1.0, 0.0, 0.0])
    g = unit([1, 0.1, 0])
    near, far = unit([0.9, 0.0, 0.4]), unit([-1, 0, 0.1])
    mem = memory_camera_centers(np.array([g, near, far]), [0, 1, 2], [0, 0, 0])
    loss, _ = cacc_loss(p[None], [0], [0], mem, LossWeights(tau_cacc=tau, n_negatives=1))
    S = lambda v: math.exp(p @ v / tau)
    assert abs(loss + math.log(S(g) / (S(g) + S(near)))) < 1e-12


def test_anchor_without_positive_is_skipped(caplog):
    mem = two_center_memory([1.0, 0.0], [0.0, 1.0])
    f = np.array([unit([1, 1]), unit([1, -1])])
    loss, grad = cacc_loss(f, [0, 5], [0, 0], mem, LossWeights(n_negatives=1))
    alone, _ = cacc_loss(f[:1], [0], [0], mem, LossWeights(n_negatives=1))
    assert loss == pytest.approx(alone)
    assert not grad[1].any()
    assert "no positive" in caplog.text


def test_casc_equals_cacc_when_groups_collapse():
    rng = np.random.default_rng(2)
    for _ in range(20):
        _, _, _, mem, w = random_loss_instance(rng, n_classes=3, n_cams=2)
        # each distinct (k, c) group repeats one vector the same number of times
        keys = [(k, c) for k in range(3) for c in range(2)]
        chosen = rng.permutation(len(keys))[: int(rng.integers(1, 7))]
        f0 = rng.standard_normal((len(chosen), 5))
        f0 /= np.linalg.norm(f0, axis=1, keepdims=True)
        f = np.repeat(f0, 3, axis=0)
        labels = np.repeat([keys[i][0] for i in chosen], 3)
        cams = np.repeat([keys[i][1] for i in chosen], 3)
        a, _ = cacc_loss(f, labels, cams, mem, w)
        b, _ = casc_loss(f, labels, cams, mem, w)
        assert abs(a - b) < 1e-7


def test_rotation_invariance():
    rng = np.random.default_rng(3)
    f, labels, cams, _, w = random_loss_instance(rng)
    snap = rng.standard_normal((24, 5))
    snap /= np.linalg.norm(snap, axis=1, keepdims=True)
    mlab, mcam = rng.integers(0, 3, 24), rng.integers(0, 2, 24)
    Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    a, _ = cacc_loss(f, labels, cams, memory_camera_centers(snap, mlab, mcam), w)
    b, _ = cacc_loss(f @ Q, labels, cams, memory_camera_centers(snap @ Q, mlab, mcam), w)
    assert abs(a - b) < 1e-9


def test_margin_drives_loss_to_zero():
    p = np.array([[1.0, 0.0]])
    tau = 0.1
    losses = []
    for ratio in (1, 5, 14):
        m = ratio * tau
        # positive similarity 1, negative similarity 1 - m
        neg = np.array([1 - m, math.sqrt(max(0.0, 1 - (1 - m) ** 2))])
        mem = two_center_memory([1.0, 0.0], neg)
        losses.append(cacc_loss(p, [0], [0], mem, LossWeights(tau_cacc=tau, n_negatives=1))[0])
    assert losses[0] > losses[1] > losses[2] > 0
    assert losses[2] < 1e-5


def test_base_one_cluster_is_zero_and_equidistant_is_ln2():
    f = np.array([unit([1.0, 2.0])])
    loss, g = base_loss(f, [0], np.array([unit([0.3, 1.0])]))
    assert loss == 0.0
    np.testing.assert_allclose(g, 0.0, atol=1e-15)
    cents = np.array([unit([1.0, 1.0]), unit([1.0, -1.0])])
    loss, _ = base_loss(np.array([[1.0, 0.0]]), [0], cents)
    assert abs(loss - math.log(2)) < 1e-12


def test_cluster_centroids_unit_mean():
    snap = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    c = cluster_centroids(snap, [0, 0, 1])
    np.testing.assert_allclose(c, [[0.7071067811865475, 0.7071067811865475], [0.0, -1.0]])


@pytest.mark.parametrize("which", ["base", "cacc", "casc"])
def test_gradients_finite_difference(which):
    rng = np.random.default_rng(4)
    for _ in range(5):
        f, labels, cams, mem, w = random_loss_instance(rng)
        if which == "base":
            cents = cluster_centroids(rng.standard_normal((12, 5)), np.arange(12) % 3)
            fn = lambda: base_loss(f, labels, cents, w.tau_base)
        elif which == "cacc":
            fn = lambda: cacc_loss(f, labels, cams, mem, w)
        else:
            fn = lambda: casc_loss(f, labels, cams, mem, w)
        _, g = fn()
        assert relative_error(g, numeric_grad(lambda: fn()[0], f)) < 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_losses_finite_nonnegative(seed):
    rng = np.random.default_rng(seed)
    f, labels, cams, mem, w = random_loss_instance(rng)
    for fn in (cacc_loss, casc_loss):
        loss, g = fn(f, labels, cams, mem, w)
        assert np.isfinite(loss) and loss >= 0 and np.all(np.isfinite(g))


def test_total_loss():
    assert total_loss(1.0, 2.0, 3.0) == pytest.approx(4.8, abs=1e-12)
    assert total_loss(1.5, 2.0, 3.0, LossWeights(lambda_sep=0.0, lambda_cacc=0.0)) == 1.5
