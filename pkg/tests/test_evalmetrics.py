import json
import math

import numpy as np
import pytest

from vidboot.errors import ContractError
from vidboot.evalmetrics import (
    ate,
    depth_metrics,
    evaluate_depth,
    evaluate_odometry,
    evaluate_seg,
    format_depth_table,
    format_seg_table,
    iou,
    write_report,
)
from vidboot.losses import VOID
from vidboot.networks import init_params

V = VOID

# Hand-built case.  Per class (TP, FP, FN) over the 14 non-void pixels:
# 0: (3, 1, 1) -> 3/5, 1: (4, 1, 0) -> 4/5, 2: (3, 1, 1) -> 3/5,
# 3: (1, 0, 1) -> 1/2, 4: absent from both maps -> n/a.
IOU_GT = np.array([[0, 0, 1, 1],
                   [0, 0, 1, 1],
                   [2, 2, 2, 2],
                   [V, V, 3, 3]])
IOU_PRED = np.array([[0, 1, 1, 1],
                     [0, 0, 1, 1],
                     [2, 2, 0, 2],
                     [1, 1, 3, 2]])


def pose_from_center(c, rot=np.eye(3)):
    """World-to-camera matrix of a camera centred at ``c``."""
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = -rot @ np.asarray(c, dtype=float)
    return m


def depth_gt(rng):
    return rng.uniform(1.0, 10.0, size=(6, 7))


def test_depth_identity(rng):
    gt = depth_gt(rng)
    r = depth_metrics(gt, gt)
    assert (r.abs_rel, r.sq_rel, r.rmse, r.rmse_log) == (0.0, 0.0, 0.0, 0.0)
    assert (r.delta1, r.delta2, r.delta3, r.scale) == (1.0, 1.0, 1.0, 1.0)


def test_depth_doubled_without_scaling(rng):
    gt = depth_gt(rng)
    r = depth_metrics(2 * gt, gt, scale_mode="none")
    assert r.abs_rel == 1.0 and r.delta1 == 0.0 and r.scale == 0.5
    assert math.isclose(r.rmse_log, math.log(2.0), rel_tol=1e-12)


def test_depth_doubled_with_median_scaling(rng):
    gt = depth_gt(rng)
    r = depth_metrics(2 * gt, gt)
    assert r.abs_rel < 1e-15 and r.rmse < 1e-14 and r.delta1 == 1.0 and r.scale == 0.5


def test_depth_closed_form_values():
    gt = np.array([[1.0, 2.0], [4.0, 5.0]])
    pred = np.array([[1.5, 2.0], [2.0, 5.0]])
    r = depth_metrics(pred, gt, scale_mode="none")
    err = pred - gt
    assert math.isclose(r.abs_rel, (0.5 / 1 + 0 + 2 / 4 + 0) / 4)
    assert math.isclose(r.sq_rel, (0.25 / 1 + 4 / 4) / 4)
    assert math.isclose(r.rmse, math.sqrt(np.mean(err**2)))
    assert r.delta1 == 0.5 and r.delta2 == 0.75 and r.delta3 == 0.75


def test_median_mode_invariant_to_rescaling(rng):
    gt = depth_gt(rng)
    pred = gt * rng.uniform(0.7, 1.4, size=gt.shape)
    a = depth_metrics(pred, gt).as_dict()
    # predictions stay inside the evaluation clamp [0.1, 100] for these k
    for k in (0.2, 3.0, 5.0):
        b = depth_metrics(pred * k, gt).as_dict()
        for key in ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3"):
            assert abs(a[key] - b[key]) < 1e-12


def test_depth_valid_mask_and_errors(rng):
    gt = depth_gt(rng)
    valid = np.zeros(gt.shape, bool)
    valid[0, 0] = True
    pred = gt.copy()
    pred[1:] = 99.0
    assert depth_metrics(pred, gt, valid, "none").abs_rel == 0.0
    with pytest.raises(ContractError):
        depth_metrics(pred, gt, np.zeros(gt.shape, bool))
    with pytest.raises(ContractError):
        depth_metrics(pred, gt, scale_mode="mean")
    with pytest.raises(ContractError):
        depth_metrics(pred[:2], gt)


def test_iou_identity_and_disjoint():
    r = iou(IOU_GT, IOU_GT, 5)
    assert r.per_class == [1.0, 1.0, 1.0, 1.0, None] and r.mean_iou == 1.0
    r = iou(np.zeros((3, 3)), np.ones((3, 3)), 2)
    assert r.per_class == [0.0, 0.0] and r.mean_iou == 0.0


def test_iou_hand_built_case():
    r = iou(IOU_PRED, IOU_GT, 5)
    assert r.per_class == [3 / 5, 4 / 5, 3 / 5, 1 / 2, None]
    assert r.mean_iou == (3 / 5 + 4 / 5 + 3 / 5 + 1 / 2) / 4
    assert r.pixel_count == 14
    assert r.as_dict()["per_class"][4] == "n/a"


def test_iou_class_permutation():
    perm = np.array([3, 0, 4, 1, 2])
    lut = np.concatenate([perm, np.zeros(256 - 5, int)])
    lut[V] = V
    a = iou(IOU_PRED, IOU_GT, 5)
    b = iou(lut[IOU_PRED], lut[IOU_GT], 5)
    for c in range(5):
        assert b.per_class[perm[c]] == a.per_class[c]
    assert math.isclose(a.mean_iou, b.mean_iou, rel_tol=1e-15)


def test_iou_rejects_out_of_range_gt():
    with pytest.raises(ContractError):
        iou(np.zeros((2, 2)), np.full((2, 2), 7), 5)


def test_ate_identity_and_doubled(rng):
    centers = [np.zeros(3), np.array([0.3, 0.0, 1.0]), np.array([0.5, -0.1, 2.1])]
    rots = [np.eye(3), np.eye(3), np.eye(3)]
    gt = [pose_from_center(c, r) for c, r in zip(centers, rots)]
    assert ate(gt, gt) == 0.0
    doubled = [pose_from_center(2 * c, r) for c, r in zip(centers, rots)]
    assert ate(doubled, gt) < 1e-15


def test_ate_one_frame_offset_hand_value():
    gt_c = [np.zeros(3), np.array([1.0, 0, 0]), np.array([2.0, 0, 0])]
    pred_c = [np.zeros(3), np.array([1.0, 0, 0]), np.array([2.0, 0.1, 0])]
    # s = <g,p>/<p,p> = 5 / 5.01; residual 0 on frame 0, (1 - s) on frame 1,
    # |(2s - 2, 0.1 s)| on frame 2.
    s = 5.0 / 5.01
    expected = (0.0 + (1 - s) + math.hypot(2 * s - 2, 0.1 * s)) / 3
    got = ate([pose_from_center(c) for c in pred_c], [pose_from_center(c) for c in gt_c])
    assert abs(got - expected) < 1e-9


def test_ate_is_anchored_at_first_frame():
    gt = [pose_from_center(c) for c in ([0, 0, 0], [1, 0, 0], [2, 0, 0])]
    shifted = [pose_from_center(c) for c in ([5, 5, 5], [6, 5, 5], [7, 5, 5])]
    assert ate(shifted, gt) < 1e-12


def test_ate_length_mismatch():
    with pytest.raises(ContractError):
        ate([np.eye(4)] * 2, [np.eye(4)] * 3)


def test_report_writes_nan_as_null(tmp_path):
    path = write_report(tmp_path / "r.json", {"a": float("nan"), "b": [1.0, float("inf")]})
    assert json.loads(path.read_text()) == {"a": None, "b": [1.0, None]}


def test_tables_render():
    t = format_depth_table(depth_metrics(np.ones((2, 2)), np.ones((2, 2))))
    assert "abs_rel" in t and "1.0000" in t
    t = format_seg_table(iou(IOU_PRED, IOU_GT, 5))
    assert "n/a" in t and "62.50%" in t


def test_model_level_evaluation_runs(small_seq):
    p = init_params(0)
    d = evaluate_depth(p, small_seq, frames=[0, 5])
    assert d["frames"] == [0, 5] and d["summary"].pixel_count == 2 * 64 * 64
    s = evaluate_seg(p, small_seq, frames=[0])
    assert 0.0 <= s.mean_iou <= 1.0
    o = evaluate_odometry(p, small_seq, stride=5, skip=2)
    assert o["snippets"] == len(range(0, 20, 5)) and np.isfinite(o["ate"])
