import numpy as np
import pytest
from skimage.metrics import structural_similarity

from vidboot import autodiff as ad
from vidboot.autodiff import Tape, Tensor
from vidboot.errors import ContractError
from vidboot.geometry import Intrinsics, PoseSE3, pose_invert, project, rodrigues
from vidboot.losses import (
    TERMS,
    VOID,
    FramePrediction,
    LossWeights,
    depth_prior_loss,
    outlier_mask_reg,
    photometric_loss,
    semantic_consistency_loss,
    semantic_prior_loss,
    smoothness_loss,
    ssim_loss,
    ssim_map,
    supervised_depth_loss,
    supervised_seg_loss,
    total_loss,
)

K8 = Intrinsics(7.0, 7.0, 3.5, 3.5, 8, 8)


def one_pixel_shift():
    """Plane at depth 3.5 and a sideways move giving exactly +1 px of disparity."""
    d = np.full((8, 8), 3.5)
    pose = PoseSE3(np.eye(3), np.array([0.5, 0.0, 0.0]))  # fx * tx / d = 1
    return d, pose


def test_photometric_one_pixel_shift_oracle(rng):
    img_t, img_tp = rng.uniform(size=(3, 8, 8)), rng.uniform(size=(3, 8, 8))
    o = rng.uniform(0.2, 1.0, size=(8, 8))
    d, pose = one_pixel_shift()
    warp = project(Tensor(d), pose, K8)
    got = photometric_loss(Tensor(img_t), Tensor(img_tp), warp, Tensor(o)).item()
    per_pixel = np.abs(img_tp[:, :, 1:] - img_t[:, :, :-1]).mean(axis=0) * o[:, :-1]
    assert np.isclose(got, per_pixel.mean(), atol=1e-12)


def test_photometric_zero_for_identical_frames(rng):
    img = rng.uniform(size=(3, 8, 8))
    warp = project(Tensor(np.full((8, 8), 2.0)), PoseSE3.identity(), K8)
    assert photometric_loss(Tensor(img), Tensor(img), warp, Tensor(np.ones((8, 8)))).item() == 0.0


def plane_view(pose_cw, K, depth_plane=5.0):
    """Analytic image and depth of a textured plane Z = depth_plane (world)."""
    v, u = np.mgrid[0 : K.height, 0 : K.width].astype(float)
    rays_c = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)])
    r_wc = pose_cw[:3, :3].T
    c = -r_wc @ pose_cw[:3, 3]
    rays_w = np.einsum("ij,jhw->ihw", r_wc, rays_c)
    s = (depth_plane - c[2]) / rays_w[2]
    X = c[:, None, None] + s * rays_w
    img = np.stack([0.5 + 0.2 * np.sin(1.3 * X[0] + k) * np.cos(0.9 * X[1] - k) for k in (0.0, 0.7, 1.9)])
    return img, s  # ray parameter with unit-z camera rays is the camera depth


def test_photometric_plane_scene_with_gt_depth_and_pose_is_near_zero():
    K = Intrinsics(28.0, 28.0, 15.5, 15.5, 32, 32)
    p0 = np.eye(4)
    p1 = np.eye(4)
    p1[:3, :3] = rodrigues(Tensor(np.array([0.01, -0.03, 0.005]))).data
    p1[:3, 3] = [0.15, -0.05, 0.1]
    img0, d0 = plane_view(p0, K)
    img1, _ = plane_view(p1, K)
    rel = PoseSE3.from_matrix(p1 @ np.linalg.inv(p0))
    warp = project(Tensor(d0), rel, K)
    loss = photometric_loss(Tensor(img0), Tensor(img1), warp, Tensor(np.ones((32, 32)))).item()
    assert warp.valid.mean() > 0.5
    assert loss < 0.01


def test_ssim_map_matches_skimage(rng):
    x, y = rng.uniform(size=(1, 9, 9)), rng.uniform(size=(1, 9, 9))
    _, full = structural_similarity(x[0], y[0], win_size=3, data_range=1.0, full=True,
                                    use_sample_covariance=False, gaussian_weights=False)
    np.testing.assert_allclose(ssim_map(Tensor(x), Tensor(y)).data[0], full[1:-1, 1:-1], atol=1e-12)


def test_ssim_loss_zero_for_identical_and_positive_otherwise(rng):
    img = rng.uniform(size=(3, 8, 8))
    warp = project(Tensor(np.full((8, 8), 2.0)), PoseSE3.identity(), K8)
    ones = Tensor(np.ones((8, 8)))
    assert abs(ssim_loss(Tensor(img), Tensor(img), warp, ones).item()) < 1e-12
    assert ssim_loss(Tensor(img), Tensor(rng.uniform(size=(3, 8, 8))), warp, ones).item() > 0.1


def test_semantic_consistency_one_pixel_shift_and_stop_gradient(rng):
    s_t = ad.softmax_channels(Tensor(rng.normal(size=(4, 8, 8)))).data
    s_tp = ad.softmax_channels(Tensor(rng.normal(size=(4, 8, 8)))).data
    o = rng.uniform(0.2, 1.0, size=(8, 8))
    d, pose = one_pixel_shift()
    tape = Tape()
    td, to, ts = tape.watch(d), tape.watch(o), tape.watch(s_t)
    warp = project(td, pose, K8)
    loss = semantic_consistency_loss(ts, Tensor(s_tp), warp, to)
    per = np.abs(s_tp[:, :, 1:] - s_t[:, :, :-1]).sum(axis=0) * o[:, :-1]
    assert np.isclose(loss.item(), per.mean(), atol=1e-12)
    tape.backward(loss)
    assert np.all(td.grad == 0) and np.all(to.grad == 0)
    assert np.any(ts.grad != 0)


def smooth_oracle(d, img):
    n = d / d.mean()
    ex = np.exp(-np.abs(np.diff(img, axis=2)).mean(axis=0))
    ey = np.exp(-np.abs(np.diff(img, axis=1)).mean(axis=0))
    return np.sum(np.abs(np.diff(n, axis=1)) * ex) + np.sum(np.abs(np.diff(n, axis=0)) * ey)


def test_smoothness_oracle_and_scale_invariance(rng):
    d, img = rng.uniform(1, 5, size=(6, 7)), rng.uniform(size=(3, 6, 7))
    base = smoothness_loss(Tensor(d), img).item()
    assert np.isclose(base, smooth_oracle(d, img), rtol=1e-12)
    for k in (0.1, 2.5, 100.0, 1e-3):
        assert abs(smoothness_loss(Tensor(k * d), img).item() - base) < 1e-9
    assert smoothness_loss(Tensor(np.full((6, 7), 3.0)), img).item() == 0.0


def test_smoothness_rejects_nonpositive_depth():
    with pytest.raises(ContractError):
        smoothness_loss(Tensor(np.zeros((4, 4))), np.zeros((3, 4, 4)))


def test_outlier_reg_and_floor():
    o = np.array([[1.0, 0.5], [0.25, 0.0]])
    assert np.isclose(outlier_mask_reg(Tensor(o)).item(), -(np.log(0.5) + np.log(0.25) + np.log(1e-7)))
    assert outlier_mask_reg(Tensor(np.ones((3, 3)))).item() == 0.0


def test_priors_are_l1_sums_with_frozen_target(rng):
    d, dp = rng.uniform(1, 3, size=(5, 5)), rng.uniform(1, 3, size=(5, 5))
    assert np.isclose(depth_prior_loss(Tensor(d), Tensor(dp)).item(), np.abs(d - dp).sum())
    assert depth_prior_loss(Tensor(d), Tensor(d)).item() == 0.0
    s, sp = rng.uniform(size=(3, 4, 4)), rng.uniform(size=(3, 4, 4))
    assert np.isclose(semantic_prior_loss(Tensor(s), Tensor(sp)).item(), np.abs(s - sp).sum())
    tape = Tape()
    a, b = tape.watch(d), tape.watch(dp)
    tape.backward(depth_prior_loss(a, b))
    np.testing.assert_array_equal(a.grad, np.sign(d - dp))
    assert np.all(b.grad == 0)


def test_prior_shape_mismatch():
    with pytest.raises(ContractError):
        depth_prior_loss(Tensor(np.ones((2, 2))), Tensor(np.ones((3, 3))))


def test_cross_entropy_oracle_and_void(rng):
    logits = rng.normal(size=(4, 3, 3))
    labels = rng.integers(0, 4, size=(3, 3)).astype(np.uint8)
    labels[0, 0] = VOID
    p = np.exp(logits) / np.exp(logits).sum(axis=0)
    keep = labels != VOID
    ii, jj = np.nonzero(keep)
    expected = -np.mean(np.log(p[labels[ii, jj], ii, jj]))
    assert np.isclose(supervised_seg_loss(Tensor(logits), labels).item(), expected, rtol=1e-12)
    assert supervised_seg_loss(Tensor(logits), np.full((3, 3), VOID, np.uint8)).item() == 0.0
    with pytest.raises(ContractError):
        supervised_seg_loss(Tensor(logits), np.full((3, 3), 7, np.uint8))


def test_l1_oracle_and_mask(rng):
    d, gt = rng.uniform(1, 3, size=(4, 4)), rng.uniform(1, 3, size=(4, 4))
    m = rng.uniform(size=(4, 4)) > 0.3
    assert np.isclose(supervised_depth_loss(Tensor(d), gt, m).item(), np.abs(d - gt)[m].mean())
    assert supervised_depth_loss(Tensor(d), gt, np.zeros((4, 4), bool)).item() == 0.0


def test_loss_weights_validation_and_order():
    w = LossWeights.from_sequence([1, 2, 3, 4, 5, 6, 7])
    assert [w.for_term(t) for t in TERMS] == [1, 2, 3, 4, 5, 6, 7]
    with pytest.raises(ContractError):
        LossWeights(w_pho=-1.0)
    with pytest.raises(ContractError):
        LossWeights.from_sequence([1, 2])


def snippet(rng, h=16, w=16, classes=3, scales=2, seg_scales=2):
    K = Intrinsics(14.0, 14.0, 7.5, 7.5, w, h)
    imgs = [rng.uniform(size=(3, h, w)) for _ in range(3)]
    preds, frozen = [], []
    for _ in range(3):
        d = [rng.uniform(2, 4, size=(h >> s, w >> s)) for s in range(scales)]
        o = [rng.uniform(0.5, 1, size=(h >> s, w >> s)) for s in range(scales)]
        sg = [ad.softmax_channels(Tensor(rng.normal(size=(classes, h >> s, w >> s)))).data for s in range(seg_scales)]
        preds.append(FramePrediction([Tensor(x) for x in d], [Tensor(x) for x in o], [Tensor(x) for x in sg]))
        frozen.append(FramePrediction([Tensor(x * 1.1) for x in d], [Tensor(x) for x in o], [Tensor(x) for x in sg]))
    small = PoseSE3(rodrigues(Tensor(np.array([0.0, 0.02, 0.0]))).data, np.array([0.05, 0.0, 0.01]))
    poses = {(0, 1): small, (1, 0): pose_invert(small), (1, 2): small, (2, 1): pose_invert(small)}
    return imgs, K, preds, poses, frozen


def test_total_loss_decomposes_into_weighted_terms(rng):
    imgs, K, preds, poses, frozen = snippet(rng)
    w = LossWeights(1.0, 0.15, 0.8, 0.025, 0.08, 0.08, 1.5)
    rep = total_loss(imgs, K, preds, poses, w, frozen)
    assert set(rep.terms) == set(TERMS)
    assert abs(rep.total.item() - sum(rep.weighted.values())) < 1e-9
    for t in TERMS:
        assert np.isclose(rep.weighted[t], w.for_term(t) * rep.terms[t])


def test_total_loss_without_frozen_or_seg_omits_terms(rng):
    imgs, K, preds, poses, _ = snippet(rng)
    for p in preds:
        p.seg = None
    rep = total_loss(imgs, K, preds, poses, LossWeights())
    assert set(rep.terms) == {"pho", "ssim", "sm", "om"}


def test_total_loss_flags_no_valid_pixels(rng):
    imgs, K, preds, _, _ = snippet(rng)
    away = PoseSE3(np.eye(3), np.array([0.0, 0.0, -50.0]))
    poses = {k: away for k in ((0, 1), (1, 0), (1, 2), (2, 1))}
    rep = total_loss(imgs, K, preds, poses, LossWeights())
    assert rep.valid_pixel_count == 0 and rep.terms["pho"] == 0.0 and rep.warnings


def test_total_loss_contract_errors(rng):
    imgs, K, preds, poses, frozen = snippet(rng)
    with pytest.raises(ContractError):
        total_loss(imgs[:2], K, preds[:2], poses, LossWeights())
    bad = dict(poses)
    del bad[(2, 1)]
    with pytest.raises(ContractError):
        total_loss(imgs, K, preds, bad, LossWeights())
    preds[1].outlier = preds[1].outlier[:1]
    with pytest.raises(ContractError):
        total_loss(imgs, K, preds, poses, LossWeights())
