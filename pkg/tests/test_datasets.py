"""Tests for scene generation, dataset I/O, and text formats."""

import numpy as np
import pytest

from splatmark import codec, datasets, metrics
from splatmark.renderer import CameraView, render


class TestImages:
    def test_round_trip_quantized(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.random((12, 10, 3))
        path = tmp_path / "img.png"
        datasets.save_image(path, img)
        back = datasets.load_image(path)
        assert back.shape == img.shape
        # 8-bit storage: half-step quantization error at most.
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12

    def test_exact_at_8bit_levels(self, tmp_path):
        img = np.zeros((4, 4, 3))
        img[1, 2] = (10 / 255, 128 / 255, 255 / 255)
        path = tmp_path / "img.png"
        datasets.save_image(path, img)
        np.testing.assert_allclose(datasets.load_image(path), img, atol=1e-12)

    def test_rejects_bad_shape(self, tmp_path):
        with pytest.raises(ValueError, match="HxWx3"):
            datasets.save_image(tmp_path / "x.png", np.zeros((4, 4)))


class TestCameras:
    def test_round_trip(self, tmp_path):
        cams = [datasets._ring_camera(a, 32) for a in (0.0, 1.1, 2.7)]
        path = tmp_path / "cams.txt"
        datasets.write_cameras(path, cams)
        back = datasets.read_cameras(path)
        assert len(back) == 3
        for orig, got in zip(cams, back):
            assert (got.fx, got.fy, got.cx, got.cy) == (
                orig.fx, orig.fy, orig.cx, orig.cy)
            assert (got.width, got.height) == (orig.width, orig.height)
            np.testing.assert_allclose(got.T_wc, orig.T_wc, rtol=0, atol=1e-15)

    def test_bad_line_length(self, tmp_path):
        path = tmp_path / "cams.txt"
        path.write_text("1 2 3\n")
        with pytest.raises(ValueError, match="18 numbers"):
            datasets.read_cameras(path)

    def test_comments_and_blanks_ignored(self, tmp_path):
        path = tmp_path / "cams.txt"
        datasets.write_cameras(path, [datasets._ring_camera(0.5, 16)])
        path.write_text("# header\n\n" + path.read_text())
        assert len(datasets.read_cameras(path)) == 1


class TestConfig:
    def test_parse_value_types(self):
        assert datasets.parse_value("3") == 3
        assert isinstance(datasets.parse_value("3"), int)
        assert datasets.parse_value("3.5") == 3.5
        assert datasets.parse_value("true") is True
        assert datasets.parse_value("False") is False
        assert datasets.parse_value("hello") == "hello"

    def test_round_trip(self, tmp_path):
        values = {"n": 5, "lr": 0.01, "flag": True, "name": "toy"}
        path = tmp_path / "cfg.txt"
        datasets.write_config(path, values)
        assert datasets.read_config(path) == values

    def test_rejects_missing_equals(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("just a line\n")
        with pytest.raises(ValueError, match="key=value"):
            datasets.read_config(path)


class TestLookAt:
    def test_target_on_optical_axis(self):
        t_wc = datasets.look_at((2.0, 1.0, 3.0), (0.0, 0.0, 0.0))
        target_cam = t_wc @ np.array([0.0, 0.0, 0.0, 1.0])
        assert abs(target_cam[0]) < 1e-12
        assert abs(target_cam[1]) < 1e-12
        assert target_cam[2] > 0

    def test_rotation_is_orthonormal(self):
        t_wc = datasets.look_at((1.0, -2.0, 0.5), (0.0, 0.0, 0.0))
        rot = t_wc[:3, :3]
        np.testing.assert_allclose(rot @ rot.T, np.eye(3), atol=1e-12)


class TestToyScene:
    def test_deterministic(self):
        cloud_a, ds_a = datasets.make_toy_scene(seed=5, n_gaussians=40,
                                                n_views=3, image_size=16)
        cloud_b, ds_b = datasets.make_toy_scene(seed=5, n_gaussians=40,
                                                n_views=3, image_size=16)
        assert cloud_a.allclose(cloud_b, atol=0)
        for va, vb in zip(ds_a.train, ds_b.train):
            np.testing.assert_array_equal(va.image, vb.image)

    def test_ground_truth_matches_cloud_render(self):
        cloud, ds = datasets.make_toy_scene(seed=6, n_gaussians=30,
                                            n_views=2, image_size=16,
                                            n_holdout=1)
        for view in ds.train + ds.holdout:
            np.testing.assert_array_equal(
                view.image, render(cloud, view.camera).image)

    def test_split_sizes_and_meta(self):
        _, ds = datasets.make_toy_scene(seed=7, n_gaussians=10, n_views=4,
                                        image_size=16, n_holdout=2)
        assert len(ds.train) == 4
        assert len(ds.holdout) == 2
        assert ds.metadata["seed"] == 7
        assert ds.metadata["n_gaussians"] == 10

    def test_validates_args(self):
        with pytest.raises(ValueError, match="n_gaussians"):
            datasets.make_toy_scene(seed=0, n_gaussians=0)
        with pytest.raises(ValueError, match="n_views"):
            datasets.make_toy_scene(seed=0, n_gaussians=5, n_views=1)

    def test_dataset_rejects_shared_poses(self):
        _, ds = datasets.make_toy_scene(seed=8, n_gaussians=10, n_views=2,
                                        image_size=16, n_holdout=1)
        with pytest.raises(ValueError, match="share"):
            datasets.SceneDataset(train=ds.train, holdout=[ds.train[0]])

    def test_dataset_rejects_dim_mismatch(self):
        _, small = datasets.make_toy_scene(seed=9, n_gaussians=5, n_views=2,
                                           image_size=16, n_holdout=0)
        _, large = datasets.make_toy_scene(seed=9, n_gaussians=5, n_views=2,
                                           image_size=32, n_holdout=0)
        with pytest.raises(ValueError, match="dims"):
            datasets.SceneDataset(train=small.train + large.train)


class TestSaveLoad:
    def test_round_trip(self, tmp_path):
        cloud, ds = datasets.make_toy_scene(seed=11, n_gaussians=20,
                                            n_views=3, image_size=16,
                                            n_holdout=1)
        datasets.save_dataset(tmp_path / "toy", ds, cloud)
        back = datasets.load_dataset(tmp_path / "toy")
        assert len(back.train) == 3
        assert len(back.holdout) == 1
        assert back.metadata["seed"] == 11
        for orig, got in zip(ds.train + ds.holdout, back.train + back.holdout):
            np.testing.assert_allclose(got.camera.T_wc, orig.camera.T_wc,
                                       atol=1e-15)
            # PNG storage quantizes to 1/255.
            assert np.abs(got.image - orig.image).max() <= 0.5 / 255 + 1e-12

    def test_missing_train_cameras(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="cameras_train"):
            datasets.load_dataset(tmp_path)


class TestPerturb:
    def test_perturb_changes_all_fields(self):
        rng = np.random.default_rng(12)
        cloud = datasets.random_cloud(rng, 15)
        noisy = datasets.perturb_cloud(cloud, 0.05, rng)
        for name in ("mu", "scale_log", "rot_raw", "opacity_logit", "sh"):
            assert not np.array_equal(getattr(noisy, name), getattr(cloud, name))
        assert cloud.allclose(datasets.perturb_cloud(cloud, 0.0, rng), atol=0)


class TestBaselineTrainset:
    def test_images_replaced_and_flagged(self):
        cdc = codec.build_codec(4, channels=4, image_size=16, seed=0)
        _, ds = datasets.make_toy_scene(seed=13, n_gaussians=10, n_views=2,
                                        image_size=16, n_holdout=1)
        msg = np.array([1, 0, 1, 1])
        marked = datasets.baseline_watermark_trainset(cdc, ds, msg)
        assert marked.metadata["watermarked"] is True
        assert len(marked.train) == len(ds.train)
        assert marked.holdout is not ds.holdout
        for orig, got in zip(ds.train, marked.train):
            expect, _ = codec.encode_image(cdc, orig.image, msg)
            np.testing.assert_array_equal(got.image, expect)
            assert got.camera is orig.camera

    def test_rejects_wrong_length(self):
        cdc = codec.build_codec(4, channels=4, image_size=16, seed=0)
        _, ds = datasets.make_toy_scene(seed=14, n_gaussians=5, n_views=2,
                                        image_size=16)
        with pytest.raises(ValueError, match="bits"):
            datasets.baseline_watermark_trainset(cdc, ds, np.array([1, 0]))
