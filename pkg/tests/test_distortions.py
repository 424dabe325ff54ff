"""Cloud distortions: exact identity, noise statistics, removal counts,
order preservation, serialization round-trips, and policy sampling."""

import numpy as np
import pytest

from splatmark.distortions import (DistortionPolicy, DistortionSpec,
                                   apply_distortion, sample_distortion)
from splatmark.scene import FIELD_NAMES, GaussianCloud


def random_cloud(n, seed, sh_order=1):
    rng = np.random.default_rng(seed)
    bases = (sh_order + 1) ** 2
    return GaussianCloud(
        mu=rng.normal(size=(n, 3)),
        scale_log=rng.normal(size=(n, 3)) * 0.3 - 2.0,
        rot_raw=rng.normal(size=(n, 4)),
        opacity_logit=rng.normal(size=n),
        sh=rng.normal(size=(n, 3, bases)),
        sh_order=sh_order,
    )


class TestApply:
    def test_identity_bitwise(self):
        cloud = random_cloud(50, 0)
        out, keep = apply_distortion(cloud, DistortionSpec("identity"))
        assert np.array_equal(keep, np.arange(50))
        for f in FIELD_NAMES:
            assert np.array_equal(getattr(out, f), getattr(cloud, f))
        out.mu[0, 0] += 1.0  # returned cloud is an independent copy
        assert cloud.mu[0, 0] != out.mu[0, 0]

    def test_gn_sigma_zero_is_identity(self):
        cloud = random_cloud(30, 1)
        out, _ = apply_distortion(cloud, DistortionSpec("gn", sigma=0.0, seed=3))
        assert np.array_equal(out.mu, cloud.mu)

    def test_gn_noise_statistics(self):
        # sample std of the position displacement should match sigma
        cloud = random_cloud(10_000, 2)
        out, keep = apply_distortion(cloud, DistortionSpec("gn", sigma=0.01, seed=5))
        delta = out.mu - cloud.mu
        assert abs(delta.std() - 0.01) < 0.0005
        assert keep.size == cloud.n
        for f in ("scale_log", "rot_raw", "opacity_logit", "sh"):
            assert np.array_equal(getattr(out, f), getattr(cloud, f))

    def test_gn_reproducible(self):
        cloud = random_cloud(40, 3)
        a, _ = apply_distortion(cloud, DistortionSpec("gn", sigma=0.02, seed=9))
        b, _ = apply_distortion(cloud, DistortionSpec("gn", sigma=0.02, seed=9))
        assert np.array_equal(a.mu, b.mu)

    def test_dropout_count_and_order(self):
        cloud = random_cloud(100, 4)
        out, keep = apply_distortion(cloud, DistortionSpec("dropout", p=0.10, seed=7))
        assert out.n == 90 and keep.size == 90
        assert np.all(np.diff(keep) > 0)  # original order preserved
        for f in FIELD_NAMES:
            assert np.array_equal(getattr(out, f), getattr(cloud, f)[keep])

    def test_crop_contiguous_gap(self):
        cloud = random_cloud(100, 5)
        out, keep = apply_distortion(cloud, DistortionSpec("crop", p=0.10, seed=11))
        assert out.n == 90
        gaps = np.where(np.diff(keep) != 1)[0]
        if keep[0] != 0 or keep[-1] != 99:
            assert gaps.size == 0  # interval cut at either end
        else:
            assert gaps.size == 1
            assert keep[gaps[0] + 1] - keep[gaps[0]] == 11  # one 10-long gap

    def test_spatial_crop_removes_extreme_slab(self):
        cloud = random_cloud(200, 6)
        spec = DistortionSpec("crop", p=0.25, spatial=True, seed=13)
        out, keep = apply_distortion(cloud, spec)
        assert out.n == 150
        removed = np.setdiff1d(np.arange(200), keep)
        # removed points are all on one side of every survivor on some axis
        found = False
        for ax in range(3):
            lo = cloud.mu[removed, ax].max() <= cloud.mu[keep, ax].min() + 1e-12
            hi = cloud.mu[removed, ax].min() >= cloud.mu[keep, ax].max() - 1e-12
            found = found or lo or hi
        assert found

    def test_tiny_fraction_removes_nothing(self):
        cloud = random_cloud(10, 7)
        out, keep = apply_distortion(cloud, DistortionSpec("dropout", p=0.05, seed=1))
        assert out.n == 10 and keep.size == 10


class TestSpecValidation:
    def test_bad_kind(self):
        with pytest.raises(ValueError):
            DistortionSpec("resample")

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            DistortionSpec("gn", sigma=-0.1)
        with pytest.raises(ValueError):
            DistortionSpec("dropout", p=1.0)
        with pytest.raises(ValueError):
            DistortionSpec("crop", p=-0.2)
        with pytest.raises(ValueError):
            DistortionSpec("gn", spatial=True)

    def test_line_round_trip(self):
        specs = [
            DistortionSpec("identity"),
            DistortionSpec("gn", sigma=0.01, seed=7),
            DistortionSpec("dropout", p=0.1, seed=3),
            DistortionSpec("crop", p=0.25, seed=12),
            DistortionSpec("crop", p=0.5, spatial=True, seed=2),
        ]
        for spec in specs:
            assert DistortionSpec.from_line(spec.to_line()) == spec

    def test_parse_errors(self):
        with pytest.raises(ValueError):
            DistortionSpec.from_line("gn:sigma")
        with pytest.raises(ValueError):
            DistortionSpec.from_line("gn:width=3")


class TestPolicy:
    def test_identity_only_policy(self):
        policy = DistortionPolicy(kinds=("identity",))
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert sample_distortion(policy, rng).kind == "identity"

    def test_probability_one_on_identity(self):
        policy = DistortionPolicy(probs=(1.0, 0.0, 0.0, 0.0))
        rng = np.random.default_rng(1)
        for _ in range(20):
            assert sample_distortion(policy, rng).kind == "identity"

    def test_uniform_draw_counts(self):
        policy = DistortionPolicy()
        rng = np.random.default_rng(2)
        counts = {}
        for _ in range(4000):
            k = sample_distortion(policy, rng).kind
            counts[k] = counts.get(k, 0) + 1
        for kind in policy.kinds:
            assert 900 <= counts[kind] <= 1100

    def test_seeded_sequence_identical(self):
        policy = DistortionPolicy()
        rng_a, rng_b = np.random.default_rng(7), np.random.default_rng(7)
        seq_a = [sample_distortion(policy, rng_a) for _ in range(10)]
        seq_b = [sample_distortion(policy, rng_b) for _ in range(10)]
        assert seq_a == seq_b

    def test_bad_policies(self):
        with pytest.raises(ValueError):
            DistortionPolicy(kinds=())
        with pytest.raises(ValueError):
            DistortionPolicy(kinds=("identity", "gn"), probs=(0.7,))
        with pytest.raises(ValueError):
            DistortionPolicy(probs=(0.5, 0.5, 0.5, -0.5))

    def test_sampled_specs_carry_policy_parameters(self):
        policy = DistortionPolicy(sigma=0.02, p=0.3, spatial_crop=True)
        rng = np.random.default_rng(8)
        for _ in range(40):
            spec = sample_distortion(policy, rng)
            if spec.kind == "gn":
                assert spec.sigma == 0.02
            if spec.kind == "dropout":
                assert spec.p == 0.3
            if spec.kind == "crop":
                assert spec.p == 0.3 and spec.spatial
