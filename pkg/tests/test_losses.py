import numpy as np
import pytest

from ogsf.autodiff import Tensor, backward
from ogsf.losses import (DEFAULT_ALPHA, LossWeights, fine_tune_loss, flow_loss,
                         level_ground_truth, occlusion_loss, total_loss)
from ogsf.network import LevelPrediction

from helpers import finite_difference, relative_error


def level(l, flow, occ, abs_indices=None, requires_grad=False):
    flow = Tensor(np.asarray(flow, dtype=float), requires_grad=requires_grad)
    occ = Tensor(np.asarray(occ, dtype=float).reshape(-1, 1), requires_grad=requires_grad)
    n = flow.shape[0]
    zeros = Tensor(np.zeros((n, 3)))
    ones = Tensor(np.ones((n, 1)))
    idx = np.arange(n) if abs_indices is None else np.asarray(abs_indices)
    return LevelPrediction(l, flow, occ, zeros, zeros, ones, idx)


def four_levels(rng, counts=(8, 6, 4, 2)):
    preds, gt_flows, gt_occs = [], [], []
    for l, n in enumerate(counts):
        preds.append(level(l, rng.normal(size=(n, 3)), rng.uniform(0.1, 0.9, n)))
        gt_flows.append(rng.normal(size=(n, 3)))
        gt_occs.append(rng.integers(0, 2, n).astype(float))
    return preds, gt_flows, gt_occs


def test_loss_weights_defaults():
    w = LossWeights()
    assert w.alpha == (0.02, 0.04, 0.08, 0.16)
    np.testing.assert_allclose(w.beta, [1.4 * a for a in w.alpha])
    assert w.lam == 0.3


def test_flow_loss_zero_when_perfect():
    rng = np.random.default_rng(0)
    preds, gt_flows, gt_occs = four_levels(rng)
    exact = [p.flow.data.copy() for p in preds]
    loss = flow_loss(preds, exact, gt_occs, DEFAULT_ALPHA)
    assert float(loss.data) == 0.0


def test_flow_loss_single_point_hand_values():
    # one level-0 point with error norm 2: non-occluded 0.02*(2+2), occluded 0.02*2
    pred = [level(0, [[2.0, 0.0, 0.0]], [0.5])]
    loss = flow_loss(pred, [np.zeros((1, 3))], [np.array([1.0])], DEFAULT_ALPHA)
    np.testing.assert_allclose(float(loss.data), 0.08, atol=1e-9)
    pred = [level(0, [[2.0, 0.0, 0.0]], [0.5])]
    loss = flow_loss(pred, [np.zeros((1, 3))], [np.array([0.0])], DEFAULT_ALPHA)
    np.testing.assert_allclose(float(loss.data), 0.04, atol=1e-9)


def test_flow_loss_requires_ground_truth():
    pred = [level(0, [[1.0, 0, 0]], [0.5])]
    with pytest.raises(ValueError):
        flow_loss(pred, None, None, DEFAULT_ALPHA)
    with pytest.raises(ValueError):
        flow_loss(pred, [np.zeros((1, 3))], [np.array([0.3])], DEFAULT_ALPHA)


def test_occlusion_loss_hand_values():
    pred = [level(0, np.zeros((1, 3)), [1.0])]
    loss = occlusion_loss(pred, [np.array([0.0])], LossWeights().beta)
    np.testing.assert_allclose(float(loss.data), 0.028, atol=1e-12)
    # predicted 0.5 everywhere at level l: 0.5 * m * beta_l
    rng = np.random.default_rng(1)
    for l, m in [(0, 5), (2, 7)]:
        pred = [level(l, np.zeros((m, 3)), np.full(m, 0.5))]
        loss = occlusion_loss(pred, [rng.integers(0, 2, m).astype(float)], LossWeights().beta)
        np.testing.assert_allclose(float(loss.data), 0.5 * m * LossWeights().beta[l], atol=1e-9)


def test_occlusion_loss_perfect_zero():
    occ = np.array([1.0, 0.0, 1.0])
    pred = [level(0, np.zeros((3, 3)), occ)]
    assert float(occlusion_loss(pred, [occ], LossWeights().beta).data) == 0.0


def test_occlusion_loss_shape_mismatch():
    pred = [level(0, np.zeros((2, 3)), [0.5, 0.5])]
    with pytest.raises(ValueError):
        occlusion_loss(pred, [np.array([1.0])], LossWeights().beta)


def test_total_loss_arithmetic():
    f = Tensor(1.0)
    o = Tensor(2.0)
    np.testing.assert_allclose(float(total_loss(f, o, 0.3).data), 1.6)
    assert float(total_loss(f, Tensor(0.0), 0.3).data) == 1.0
    base = float(total_loss(f, o, 0.3).data)
    doubled = float(total_loss(f, o, 0.6).data)
    np.testing.assert_allclose(doubled - base, 0.3 * 2.0)
    with pytest.raises(ValueError):
        total_loss(f, o, 0.0)


def test_fine_tune_loss_values_and_bound():
    pred = [level(0, [[2.0, 0.0, 0.0]], [0.5])]
    loss = fine_tune_loss(pred, [np.zeros((1, 3))], DEFAULT_ALPHA)
    np.testing.assert_allclose(float(loss.data), 0.04, atol=1e-12)

    rng = np.random.default_rng(2)
    preds, gt_flows, gt_occs = four_levels(rng)
    ft = float(fine_tune_loss(preds, gt_flows, DEFAULT_ALPHA).data)
    full = float(flow_loss(preds, gt_flows, gt_occs, DEFAULT_ALPHA).data)
    assert ft <= full
    # equals flow_loss when every point is marked occluded
    all_occluded = [np.zeros_like(o) for o in gt_occs]
    preds2, _, _ = four_levels(np.random.default_rng(2))
    again = float(flow_loss(preds2, gt_flows, all_occluded, DEFAULT_ALPHA).data)
    np.testing.assert_allclose(ft, again, rtol=1e-12)


def test_losses_nonnegative_and_zero_iff_exact():
    rng = np.random.default_rng(3)
    preds, gt_flows, gt_occs = four_levels(rng)
    assert float(flow_loss(preds, gt_flows, gt_occs, DEFAULT_ALPHA).data) > 0
    assert float(occlusion_loss(preds, gt_occs, LossWeights().beta).data) > 0
    exact_flows = [p.flow.data.copy() for p in preds]
    exact_occs = [p.occlusion.data.reshape(-1).copy() for p in preds]
    # occlusion labels must be binary for the flow loss; copy them into predictions
    binary = [level(p.level, f, o) for p, f, o in zip(preds, exact_flows, gt_occs)]
    f = flow_loss(binary, exact_flows, gt_occs, DEFAULT_ALPHA)
    o = occlusion_loss(binary, gt_occs, LossWeights().beta)
    assert float(f.data) == 0.0 and float(o.data) == 0.0
    assert float(total_loss(f, o, 0.3).data) == 0.0


def test_level_ground_truth_uses_sample_indices():
    rng = np.random.default_rng(4)
    gt_flow = rng.normal(size=(10, 3))
    gt_occ = rng.integers(0, 2, 10).astype(float)
    preds = [level(0, np.zeros((3, 3)), np.zeros(3), abs_indices=[7, 1, 4])]
    flows, occs = level_ground_truth(preds, gt_flow, gt_occ)
    np.testing.assert_array_equal(flows[0], gt_flow[[7, 1, 4]])
    np.testing.assert_array_equal(occs[0], gt_occ[[7, 1, 4]])


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    n = 6
    flow0 = rng.normal(size=(n, 3))
    occ0 = rng.uniform(0.1, 0.9, n)
    gt_flow = rng.normal(size=(n, 3))
    gt_occ = rng.integers(0, 2, n).astype(float)

    def value(flow_arr, occ_arr):
        preds = [level(0, flow_arr, occ_arr)]
        f = flow_loss(preds, [gt_flow], [gt_occ], DEFAULT_ALPHA)
        o = occlusion_loss(preds, [gt_occ], LossWeights().beta)
        return total_loss(f, o, 0.3)

    flow = Tensor(flow0.copy(), requires_grad=True)
    occ = Tensor(occ0.reshape(-1, 1).copy(), requires_grad=True)
    pred = LevelPrediction(0, flow, occ, Tensor(np.zeros((n, 3))), Tensor(np.zeros((n, 3))),
                           Tensor(np.ones((n, 1))), np.arange(n))
    loss = total_loss(flow_loss([pred], [gt_flow], [gt_occ], DEFAULT_ALPHA),
                      occlusion_loss([pred], [gt_occ], LossWeights().beta), 0.3)
    grads = backward(loss)

    fd_flow = finite_difference(lambda a: float(value(a, occ0).data), flow0.copy())
    fd_occ = finite_difference(lambda a: float(value(flow0, a).data), occ0.copy())
    assert relative_error(grads[flow], fd_flow) < 1e-4
    assert relative_error(grads[occ].reshape(-1), fd_occ) < 1e-4
