import json

import numpy as np
import pytest

from clgait import geometry
from clgait.synthdata import dataset as ds
from clgait.synthdata import pseudo
from clgait.synthdata import walker as wk


def iou(a, b):
    a = a > 0.5
    b = b > 0.5
    return (a & b).sum() / max((a | b).sum(), 1)


class TestIdentity:
    def test_height_range(self):
        for s in range(20):
            p = wk.sample_identity(s, "000")
            assert 1.5 <= p.height <= 1.95

    def test_deterministic(self):
        a = wk.sample_identity(7, "003")
        b = wk.sample_identity(7, "003")
        assert a == b

    def test_distinct_labels_distinct_params(self):
        a = wk.sample_identity(7, "000")
        b = wk.sample_identity(7, "001")
        assert a != b

    def test_invalid_height_rejected(self):
        with pytest.raises(ValueError, match="height"):
            wk.IdentityParams(2.5, {}, 1.0, 0.5, 0.0, 0.2)


class TestSilhouette:
    def test_binary_and_nonempty(self):
        p = wk.sample_identity(0, "000")
        segs = wk.skeleton_segments(p, 0.3, "normal")
        sil = wk.render_silhouette(segs, 90, wk.SensorConfig())
        assert set(np.unique(sil)) <= {0.0, 1.0}
        assert sil.sum() > 100

    def test_front_back_mirror_symmetry(self):
        # rotating the walker by 180 degrees flips the orthographic
        # projection left-right
        p = wk.sample_identity(3, "000")
        segs = wk.skeleton_segments(p, 0.45, "normal")
        cfg = wk.SensorConfig()
        a = wk.render_silhouette(segs, 90, cfg)
        b = wk.render_silhouette(segs, 270, cfg)
        np.testing.assert_array_equal(a, b[:, ::-1])

    def test_identities_distinguishable(self):
        cfg = wk.SensorConfig()
        sils = []
        for label in ("000", "001", "002", "003"):
            p = wk.sample_identity(11, label)
            segs = wk.skeleton_segments(p, 0.0, "normal")
            sils.append(geometry.normalize_crop(wk.render_silhouette(segs, 90, cfg)))
        for i in range(len(sils)):
            for j in range(i + 1, len(sils)):
                assert iou(sils[i], sils[j]) < 0.95

    def test_bag_adds_mass(self):
        p = wk.sample_identity(5, "000")
        cfg = wk.SensorConfig()
        t = 0.2
        plain = wk.render_silhouette(wk.skeleton_segments(p, t, "normal"), 90, cfg)
        bag = wk.render_silhouette(wk.skeleton_segments(p, t, "bag"), 90, cfg)
        assert bag.sum() > plain.sum()

    def test_pose_changes_over_time(self):
        p = wk.sample_identity(5, "000")
        cfg = wk.SensorConfig()
        a = wk.render_silhouette(wk.skeleton_segments(p, 0.0, "normal"), 90, cfg)
        b = wk.render_silhouette(wk.skeleton_segments(p, 0.25, "normal"), 90, cfg)
        assert (a != b).any()


class TestSensorCapture:
    def test_cloud_in_front_of_camera(self):
        from clgait.numcore import rng as rngmod

        p = wk.sample_identity(2, "000")
        segs = wk.skeleton_segments(p, 0.1, "normal")
        cfg = wk.SensorConfig()
        cloud, depth, K = wk.sensor_capture(segs, 0, cfg, rngmod.stream(0, "n"))
        assert len(cloud) > 50
        assert (cloud[:, 2] > 0).all()
        # cloud depths match the depth image's filled pixels
        assert np.isclose(sorted(cloud[:, 2]), sorted(depth[depth > 0])).all()

    def test_noise_rng_determinism(self):
        from clgait.numcore import rng as rngmod

        p = wk.sample_identity(2, "000")
        segs = wk.skeleton_segments(p, 0.1, "normal")
        cfg = wk.SensorConfig()
        c1, _, _ = wk.sensor_capture(segs, 45, cfg, rngmod.stream(9, "n"))
        c2, _, _ = wk.sensor_capture(segs, 45, cfg, rngmod.stream(9, "n"))
        np.testing.assert_array_equal(c1, c2)

    def test_capsule_surface_on_capsule(self):
        p1 = np.array([0.0, 0.0, 0.0])
        p2 = np.array([0.0, 1.0, 0.0])
        r = 0.1
        pts = wk.sample_capsule_surface(p1, p2, r, 0.02)
        seg = p2 - p1
        tt = np.clip((pts - p1) @ seg / (seg @ seg), 0.0, 1.0)
        closest = p1 + tt[:, None] * seg
        dist = np.linalg.norm(pts - closest, axis=1)
        np.testing.assert_allclose(dist, r, atol=1e-9)


class TestSynthWalker:
    def test_shapes_and_alignment(self):
        p = wk.sample_identity(1, "000")
        sil_seq, pcd_seq, depth_frames = ds.synth_walker(p, 90, "normal", 8, 42)
        assert len(sil_seq.frames) == len(pcd_seq.frames) == len(depth_frames) == 8
        for sil, dep in zip(sil_seq.frames, depth_frames):
            assert sil.shape == (64, 64)
            assert dep.shape == (64, 64)
            assert (dep >= 0).all()
        assert sil_seq.timestamps == pcd_seq.timestamps

    def test_too_few_frames(self):
        p = wk.sample_identity(1, "000")
        with pytest.raises(ValueError, match="T="):
            ds.synth_walker(p, 0, "normal", 4, 0)

    def test_unknown_condition(self):
        p = wk.sample_identity(1, "000")
        with pytest.raises(ValueError, match="condition"):
            ds.synth_walker(p, 0, "wig", 8, 0)

    def test_deterministic(self):
        p = wk.sample_identity(1, "000")
        a = ds.synth_walker(p, 0, "normal", 8, 5)
        b = ds.synth_walker(p, 0, "normal", 8, 5)
        for fa, fb in zip(a[0].frames, b[0].frames):
            np.testing.assert_array_equal(fa, fb)
        for ca, cb in zip(a[1].frames, b[1].frames):
            np.testing.assert_array_equal(ca, cb)

    def test_cross_modality_overlap(self):
        # the projected depth frame should cover roughly the same body as
        # the silhouette after both are normalized; the orthographic mask vs
        # perspective range render leaves a genuine gap, so the floor is loose
        p = wk.sample_identity(4, "000")
        sil_seq, _, depth_frames = ds.synth_walker(p, 90, "normal", 8, 3)
        score = iou(sil_seq.frames[0], depth_frames[0])
        assert score > 0.4


class TestGaitSequence:
    def test_empty_frames_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            ds.GaitSequence("a", 0, "normal", "silhouette", [], [])

    def test_nonincreasing_timestamps_rejected(self):
        f = [np.zeros((2, 2))] * 2
        with pytest.raises(ValueError, match="increasing"):
            ds.GaitSequence("a", 0, "normal", "silhouette", f, [0.1, 0.1])


SMALL_CFG = wk.SensorConfig(surface_step=0.06)


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    manifest = ds.generate_dataset(
        root, num_ids=2, seqs_per_id=2, frames=8, seed=123, cfg=SMALL_CFG
    )
    return root, manifest


class TestDatasetIO:

    def test_manifest_contents(self, small):
        root, manifest = small
        assert manifest["seed"] == 123
        assert manifest["identities"] == ["000", "001"]
        assert len(manifest["sequences"]) == 4
        assert manifest["splits"]["train"] == ["000", "001"]
        # 3 files per frame per sequence
        assert len(manifest["checksums"]) == 4 * 8 * 3

    def test_round_trip(self, small):
        root, manifest = small
        data = ds.read_dataset(root)
        assert data.seed == 123
        assert len(data.records) == 4
        rec = data.records[0]
        assert rec.sil.shape == (8, 64, 64)
        assert rec.depth.shape == (8, 64, 64)
        assert rec.sil.dtype == np.float32
        clouds = rec.load_clouds()
        assert len(clouds) == 8 and clouds[0].shape[1] == 3

    def test_split_records(self, small):
        root, _ = small
        data = ds.read_dataset(root, verify=False)
        assert len(data.split_records("train")) == 4
        assert data.split_records("test") == []

    def test_checksum_corruption_detected(self, small):
        root, manifest = small
        rel = sorted(manifest["checksums"])[0]
        p = root / rel
        orig = p.read_bytes()
        try:
            p.write_bytes(orig[:-1] + bytes([orig[-1] ^ 0xFF]))
            with pytest.raises(ValueError, match=str(p)):
                ds.read_dataset(root)
        finally:
            p.write_bytes(orig)

    def test_missing_file_detected(self, small):
        root, manifest = small
        rel = sorted(manifest["checksums"])[0]
        p = root / rel
        orig = p.read_bytes()
        try:
            p.unlink()
            with pytest.raises(FileNotFoundError, match=str(p)):
                ds.read_dataset(root)
        finally:
            p.write_bytes(orig)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="manifest"):
            ds.read_dataset(tmp_path / "nope")

    def test_parallel_generation_identical(self, small, tmp_path):
        root, manifest = small
        m2 = ds.generate_dataset(
            tmp_path / "p",
            num_ids=2,
            seqs_per_id=2,
            frames=8,
            seed=123,
            jobs=4,
            cfg=SMALL_CFG,
        )
        assert m2["checksums"] == manifest["checksums"]

    def test_split_fractions(self, tmp_path):
        m = ds.generate_dataset(
            tmp_path / "s",
            num_ids=4,
            seqs_per_id=1,
            frames=8,
            seed=1,
            views=(0,),
            conditions=("normal",),
            split_fractions=(0.5, 0.25, 0.25),
            cfg=SMALL_CFG,
        )
        assert m["splits"] == {"train": ["000", "001"], "val": ["002"], "test": ["003"]}


class TestPseudoPairs:
    def make_inputs(self):
        from clgait.numcore import rng as rngmod

        p = wk.sample_identity(8, "000")
        segs = wk.skeleton_segments(p, 0.2, "normal")
        cfg = wk.SensorConfig()
        sil_raw = wk.render_silhouette(segs, 90, cfg)
        # a plausible "estimated" depth: constant range over the person
        depth = np.where(sil_raw > 0, 3.0, 0.0)
        K = geometry.CameraIntrinsics(150.0, 150.0, 48.0, 48.0)
        return sil_raw, depth, K

    def test_outputs(self):
        sil_raw, depth, K = self.make_inputs()
        sil, cloud, pdepth = pseudo.pseudo_pairs_from_depth(sil_raw, depth, K, 0.05)
        assert sil.shape == (64, 64)
        assert pdepth.shape == (64, 64)
        assert cloud.ndim == 2 and cloud.shape[1] == 3
        assert (cloud[:, 2] > 0).all()
        assert iou(sil, pdepth) > 0.5

    def test_voxel_reduces_points(self):
        sil_raw, depth, K = self.make_inputs()
        _, fine, _ = pseudo.pseudo_pairs_from_depth(sil_raw, depth, K, 0.02)
        _, coarse, _ = pseudo.pseudo_pairs_from_depth(sil_raw, depth, K, 0.15)
        assert len(coarse) < len(fine)

    def test_shape_mismatch(self):
        sil_raw, depth, K = self.make_inputs()
        with pytest.raises(ValueError, match="!="):
            pseudo.pseudo_pairs_from_depth(sil_raw[:-1], depth, K, 0.05)

    def test_no_overlap(self):
        _, depth, K = self.make_inputs()
        with pytest.raises(ValueError, match="no overlap"):
            pseudo.pseudo_pairs_from_depth(np.zeros_like(depth), depth, K, 0.05)
