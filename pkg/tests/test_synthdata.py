import numpy as np
import pytest

from vidboot.errors import ContractError, DatasetFormatError
from vidboot.geometry import PoseSE3, project
from vidboot.synthdata import (
    UnlabeledVideo,
    VideoView,
    default_intrinsics,
    generate_sequence,
    make_snippets,
    read_dataset,
    read_pfm,
    snippet_indices,
    sparse_label_view,
    warp_check,
    warp_error,
    write_dataset,
    write_pfm,
)


def test_generation_is_deterministic():
    a, b = generate_sequence(11, 5), generate_sequence(11, 5)
    for fa, fb in zip(a.frames, b.frames):
        np.testing.assert_array_equal(fa.image, fb.image)
        np.testing.assert_array_equal(fa.depth, fb.depth)
        np.testing.assert_array_equal(fa.labels, fb.labels)
        np.testing.assert_array_equal(fa.pose, fb.pose)
    c = generate_sequence(12, 5)
    assert not np.array_equal(a.frames[0].image, c.frames[0].image)


def test_frame_contents(small_seq):
    f = small_seq.frames[0]
    assert f.image.shape == (64, 64, 3) and f.image.dtype == np.uint8
    assert f.depth.dtype == np.float32 and np.all(f.depth > 0)
    assert f.labels.max() < small_seq.num_classes
    r = f.pose[:3, :3]
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)


def test_too_short_sequence_rejected():
    with pytest.raises(ContractError):
        generate_sequence(0, 2)


def test_few_classes_keep_labels_in_range():
    seq = generate_sequence(4, 4, num_classes=3)
    assert max(int(f.labels.max()) for f in seq.frames) < 3


def test_gt_depth_projects_like_an_independent_pinhole_model(small_seq):
    # Back-project pixels of frame 0 with plain matrix algebra and compare
    # with the library's projection into frame 4.
    K = small_seq.intrinsics
    f0, f4 = small_seq.frames[0], small_seq.frames[4]
    Kmat = np.array([[K.fx, 0, K.cx], [0, K.fy, K.cy], [0, 0, 1.0]])
    v, u = np.mgrid[0 : K.height, 0 : K.width]
    pix = np.stack([u.ravel(), v.ravel(), np.ones(u.size)])
    cam0 = np.linalg.inv(Kmat) @ pix * f0.depth.astype(np.float64).ravel()
    world = np.linalg.inv(f0.pose) @ np.vstack([cam0, np.ones(u.size)])
    cam4 = (f4.pose @ world)[:3]
    uv = (Kmat @ cam4)[:2] / cam4[2]
    warp = project(f0.depth.astype(np.float64), small_seq.relative_pose(0, 4), K)
    np.testing.assert_allclose(warp.coords.data.reshape(2, -1), uv, atol=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_render_matches_warp_of_neighbour(seed):
    seq = generate_sequence(100 + seed, 11)
    for k in (1, 5, 10):
        err, mask = warp_check(seq, k, 0)
        assert mask.mean() > 0.4
        assert err < 0.02


def test_warp_check_detects_a_wrong_pose(small_seq):
    f0, f5 = small_seq.frames[0], small_seq.frames[5]
    good, _ = warp_check(small_seq, 5, 0)
    true = small_seq.relative_pose(0, 5)
    wrong = PoseSE3(true.rotation.data, true.translation.data + np.array([0.3, 0.0, 0.0]))
    bad, _ = warp_error(f0.image, f0.depth, f5.image, f5.depth, wrong, small_seq.intrinsics, rel_tol=1.0)
    assert bad > 5 * good


def test_dynamic_pixels_are_excluded_and_labeled(dyn_seq):
    assert any(f.dynamic.any() for f in dyn_seq.frames)
    moving = next(i for i, f in enumerate(dyn_seq.frames) if f.dynamic.any())
    other = moving + 1 if moving + 1 < len(dyn_seq) else moving - 1
    _, mask = warp_check(dyn_seq, other, moving)
    assert not (mask & dyn_seq.frames[moving].dynamic).any()


def test_pfm_round_trip(tmp_path, rng):
    a = rng.uniform(0.5, 20, size=(5, 7)).astype(np.float32)
    write_pfm(tmp_path / "d.pfm", a)
    data = (tmp_path / "d.pfm").read_bytes()
    assert data.startswith(b"Pf\n7 5\n-1.0\n")
    np.testing.assert_array_equal(read_pfm(tmp_path / "d.pfm"), a)


def test_pfm_rejects_truncation(tmp_path, rng):
    write_pfm(tmp_path / "d.pfm", rng.uniform(size=(4, 4)))
    (tmp_path / "t.pfm").write_bytes((tmp_path / "d.pfm").read_bytes()[:-3])
    (tmp_path / "h.pfm").write_bytes(b"P7\n4 4\n")
    for name in ("t.pfm", "h.pfm"):
        with pytest.raises(DatasetFormatError):
            read_pfm(tmp_path / name)


def test_dataset_round_trip_is_lossless(tmp_path, dyn_seq):
    seq = sparse_label_view(dyn_seq, 4)
    write_dataset(tmp_path / "ds", seq)
    back = read_dataset(tmp_path / "ds")
    assert len(back) == len(seq) and back.num_classes == seq.num_classes
    assert back.intrinsics == seq.intrinsics and back.labeled_indices == seq.labeled_indices
    for fa, fb in zip(seq.frames, back.frames):
        np.testing.assert_array_equal(fa.image, fb.image)
        np.testing.assert_array_equal(fa.pose, fb.pose)
        np.testing.assert_array_equal(fa.dynamic, fb.dynamic)
        if fa.labeled:
            np.testing.assert_array_equal(fa.depth, fb.depth)
            np.testing.assert_array_equal(fa.labels, fb.labels)
        else:
            assert fb.depth is None and fb.labels is None


def test_dataset_reader_reports_bad_files(tmp_path, small_seq):
    d = write_dataset(tmp_path / "ds", small_seq)
    lines = (d / "poses.txt").read_text().splitlines()
    (d / "poses.txt").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(DatasetFormatError, match="pose lines"):
        read_dataset(d)
    (d / "manifest.json").write_text("{not json")
    with pytest.raises(DatasetFormatError) as exc:
        read_dataset(d)
    assert exc.value.path.endswith("manifest.json")


def test_sparse_label_view(small_seq):
    view = sparse_label_view(small_seq, 10)
    assert view.labeled_indices == [0, 10, 20]
    assert small_seq.labeled_indices == list(range(len(small_seq)))
    with pytest.raises(ContractError):
        sparse_label_view(small_seq, 0)


def test_unlabeled_video_only_reads_frames(tmp_path, small_seq):
    d = write_dataset(tmp_path / "ds", small_seq)
    for sub in ("depth", "labels"):
        for p in (d / sub).iterdir():
            p.unlink()
    (d / "poses.txt").unlink()
    video = UnlabeledVideo(d)
    assert len(video) == len(small_seq) and video.intrinsics == small_seq.intrinsics
    np.testing.assert_array_equal(video.image(3), small_seq.frames[3].image)
    assert not hasattr(video, "frames")
    with pytest.raises(IndexError):
        video.image(len(small_seq))


def test_snippets():
    assert snippet_indices(25, 5, 10) == [(0, 10, 20)]
    assert snippet_indices(25, 2, 10) == [(0, 10, 20), (2, 12, 22), (4, 14, 24)]
    assert snippet_indices(20, 1, 10) == []
    with pytest.raises(ContractError):
        snippet_indices(20, 0, 10)


def test_make_snippets_from_view(small_seq):
    snips = make_snippets(VideoView(small_seq), 4, 3)
    assert [s.indices for s in snips] == snippet_indices(24, 4, 3)
    s = snips[1]
    assert s.images[0].shape == (3, 64, 64) and s.images[0].max() <= 1.0
    np.testing.assert_array_equal(s.images[2], small_seq.frames[s.indices[2]].image.transpose(2, 0, 1) / 255.0)


def test_default_intrinsics_centre():
    K = default_intrinsics(64, 32)
    assert (K.cx, K.cy) == (31.5, 15.5)
