import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from laplace_cortex.autodiff import soft_solve_forward
from laplace_cortex.errors import DimsMismatch, EmptyDomain, InvalidArgument
from laplace_cortex.gradcheck import central_differences, check_full_chain
from laplace_cortex.labelize import soft_one_hot
from laplace_cortex.loss import (CE_CLIP, DICE_EPS, combined_loss, cross_entropy, dice_ce,
                                 laplacian_targets, soft_dice)
from laplace_cortex.volume import GridDims, LabelField3D, SoftSegmentation


def _one_hot(labels, C):
    return np.stack([labels == c + 1 for c in range(C)]).astype(np.float64)


def _random_case(seed, C=4, shape=(3, 4, 5)):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, C + 1, shape)
    labels.flat[0] = 1
    probs = rng.dirichlet(np.ones(C), size=shape).transpose(3, 0, 1, 2)
    return probs, LabelField3D(GridDims.from_shape(shape), labels)


def test_perfect_prediction():
    _, gt = _random_case(0)
    pred = _one_hot(gt.labels, 4)
    d, c, _ = dice_ce(pred, gt)
    assert d + c < 1e-4
    assert c == pytest.approx(-math.log(1 - CE_CLIP), rel=1e-6)


def test_dice_hand_example():
    labels = np.array([1, 1, 1, 1, 2, 2, 2, 2]).reshape(1, 1, 8)
    pred = np.zeros((2, 1, 1, 8))
    pred[0, 0, 0, [2, 3, 4, 5]] = 1
    pred[1, 0, 0, [0, 1, 6, 7]] = 1
    loss, _ = soft_dice(pred, labels)
    term = (2 * 2 + DICE_EPS) / (4 + 4 + DICE_EPS)
    assert loss == pytest.approx(1 - term, rel=1e-14)
    assert 1 - loss == pytest.approx(0.5, abs=1e-5)


def test_all_ignored():
    labels = np.zeros((2, 2, 2), int)
    with pytest.raises(EmptyDomain):
        soft_dice(np.full((4, 2, 2, 2), 0.25), labels)
    with pytest.raises(EmptyDomain):
        cross_entropy(np.full((4, 2, 2, 2), 0.25), labels)


def test_shape_and_channel_errors():
    with pytest.raises(DimsMismatch):
        soft_dice(np.full((4, 2, 2, 2), 0.25), np.ones((2, 2, 3), int))
    with pytest.raises(InvalidArgument):
        soft_dice(np.full((2, 2, 2, 2), 0.5), np.full((2, 2, 2), 3))


def test_ce_uniform_and_gradient():
    _, gt = _random_case(1)
    pred = np.full((4,) + gt.labels.shape, 0.25)
    loss, grad = cross_entropy(pred, gt)
    assert loss == pytest.approx(math.log(4), rel=1e-14)
    n = int((gt.labels > 0).sum())
    v = (2, 1, 3)
    k = gt.labels[v] - 1
    assert grad[k][v] == pytest.approx(-1 / 0.25 / n, rel=1e-14)
    assert np.count_nonzero(grad[:, v[0], v[1], v[2]]) == 1
    assert not grad[:, gt.labels == 0].any()


@pytest.mark.parametrize("fn", [soft_dice, cross_entropy])
def test_loss_gradients(fn):
    probs, gt = _random_case(2)
    _, grad = fn(probs, gt)
    fd = central_differences(lambda p: fn(p, gt)[0], probs, 1e-6)
    assert np.abs(grad - fd).max() < 1e-7


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bounds(seed):
    probs, gt = _random_case(seed)
    d, c, _ = dice_ce(probs, gt)
    assert 0 <= d <= 1 + DICE_EPS
    assert c >= 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ignored_voxels_do_not_matter(seed):
    probs, gt = _random_case(seed)
    rng = np.random.default_rng(seed + 1)
    other = probs.copy()
    ign = gt.labels == 0
    other[:, ign] = rng.dirichlet(np.ones(4), size=int(ign.sum())).T
    assert dice_ce(probs, gt)[:2] == dice_ce(other, gt)[:2]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.permutations(range(4)))
def test_permutation_equivariance(seed, perm):
    probs, gt = _random_case(seed)
    perm = np.array(perm)
    # class code c+1 becomes perm[c]+1
    codes = gt.labels.astype(int)
    relabeled = np.where(codes > 0, perm[np.maximum(codes - 1, 0)] + 1, 0)
    moved = np.empty_like(probs)
    moved[perm] = probs
    a = dice_ce(probs, gt)
    b = dice_ce(moved, LabelField3D(gt.dims, relabeled))
    assert a[0] == pytest.approx(b[0], abs=1e-14) and a[1] == pytest.approx(b[1], abs=1e-14)


def test_combined_perfect():
    probs, gt = _random_case(3)
    laminar = LabelField3D(gt.dims, np.where(gt.labels > 0, (gt.labels * 2) % 11 + 1, 0))
    b, _, _ = combined_loss(_one_hot(gt.labels, 4), gt, _one_hot(laminar.labels, 11), laminar)
    assert b.total < 1e-3


def test_combined_detached_equals_tissue_only():
    probs, gt = _random_case(4)
    laminar = LabelField3D(gt.dims, np.where(gt.labels > 0, 3, 0))
    ch = soft_one_hot(np.random.default_rng(0).random(gt.labels.shape))
    base, gbase, none = combined_loss(probs, gt)
    assert none is None
    full, gfull, gch = combined_loss(probs, gt, ch, laminar)
    zero, gzero, _ = combined_loss(probs, gt, ch, laminar, laplace_weight=0.0)
    assert zero.total == base.total == base.dice_tissue + base.ce_tissue
    assert full.dice_tissue == base.dice_tissue and full.ce_tissue == base.ce_tissue
    assert np.array_equal(gfull, gbase) and np.array_equal(gzero, gbase)
    assert full.total == pytest.approx(base.total + full.dice_laplace + full.ce_laplace)
    with pytest.raises(InvalidArgument):
        combined_loss(probs, gt, ch, None)


def test_fused_prediction_scores_worse(sulcus_phantom):
    ph = sulcus_phantom
    targets = laplacian_targets(ph.phi_gt, ph.gt_labels)
    resolved = 0.9 * SoftSegmentation.one_hot(ph.gt_labels).probs + 0.025
    scores = {}
    for name, probs in (("fused", ph.corrupted_probs.probs), ("resolved", resolved)):
        phi, _ = soft_solve_forward(probs)
        scores[name] = combined_loss(probs, ph.gt_labels, soft_one_hot(phi), targets)[0]
    assert scores["fused"].dice_laplace > scores["resolved"].dice_laplace


def test_laplacian_targets_respect_ignore():
    dims = GridDims(3, 1, 1)
    tissue = LabelField3D(dims, np.array([[[1, 0, 2]]]))
    t = laplacian_targets(np.array([[[0.45, 0.45, 0.0]]]), tissue).labels.ravel()
    assert t.tolist() == [6, 0, 2]


def test_full_chain_gradcheck():
    res = check_full_chain(GridDims(6, 6, 6), iters=3, seed=0)
    assert res.max_rel_error < 1e-3
