"""Renderer: activations, covariance, SH color, projection, compositing
against a brute-force oracle, and full backward vs finite differences."""

import numpy as np
import pytest

from splatmark import datasets, gaussians, renderer, sh
from splatmark.scene import GaussianCloud

from conftest import central_diff, rel_err


def tiny_cloud(seed, n=5, sh_order=1):
    rng = np.random.default_rng(seed)
    return datasets.random_cloud(rng, n, sh_order=sh_order)


def tiny_camera(size=8, angle=0.3):
    return datasets._ring_camera(angle, size)


class TestActivations:
    @pytest.mark.parametrize("seed", range(5))
    def test_roundtrip_and_ranges(self, seed):
        rng = np.random.default_rng(seed)
        act = gaussians.apply_activations(
            rng.normal(size=(4, 3)), rng.normal(size=(4, 4)) + 0.5,
            rng.normal(size=4))
        assert np.all(act.scale > 0)
        assert np.allclose(np.linalg.norm(act.rot, axis=1), 1.0)
        assert np.all((act.opacity > 0) & (act.opacity < 1))

    @pytest.mark.parametrize("seed", range(5))
    def test_backward_matches_fd(self, seed):
        rng = np.random.default_rng(seed)
        s0 = rng.normal(size=(2, 3))
        q0 = rng.normal(size=(2, 4)) + 0.3
        o0 = rng.normal(size=2)
        ws = rng.normal(size=(2, 3))
        wq = rng.normal(size=(2, 4))
        wo = rng.normal(size=2)

        def f(s, q, o):
            a = gaussians.apply_activations(s, q, o)
            return float((a.scale * ws).sum() + (a.rot * wq).sum() + (a.opacity * wo).sum())

        act = gaussians.apply_activations(s0, q0, o0)
        ds, dq, do = gaussians.activations_backward(act, ws, wq, wo)
        assert rel_err(ds, central_diff(lambda s: f(s, q0, o0), s0)) < 1e-5
        assert rel_err(dq, central_diff(lambda q: f(s0, q, o0), q0)) < 1e-5
        assert rel_err(do, central_diff(lambda o: f(s0, q0, o), o0)) < 1e-5

    def test_degenerate_quaternion_rejected(self):
        with pytest.raises(gaussians.DegenerateRotationError):
            gaussians.apply_activations(
                np.zeros((1, 3)), np.zeros((1, 4)), np.zeros(1))


class TestCovariance:
    @pytest.mark.parametrize("seed", range(5))
    def test_against_direct_construction(self, seed):
        rng = np.random.default_rng(seed)
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        s = np.exp(rng.normal(size=3) * 0.3)
        R = gaussians.quat_to_rotmat(q[None])[0]
        sigma = gaussians.build_covariance(s[None], q[None] )[0]
        ref = R @ np.diag(s**2) @ R.T
        assert np.abs(sigma - ref).max() < 1e-12
        # symmetric positive definite
        assert np.allclose(sigma, sigma.T)
        assert np.all(np.linalg.eigvalsh(sigma) > 0)

    def test_rotmat_orthonormal_and_known_case(self):
        # 90 degree rotation about z
        q = np.array([np.cos(np.pi / 4), 0.0, 0.0, np.sin(np.pi / 4)])
        R = gaussians.quat_to_rotmat(q[None])[0]
        assert np.allclose(R @ np.array([1.0, 0, 0]), [0, 1, 0], atol=1e-12)
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_covariance_backward_fd(self, seed):
        rng = np.random.default_rng(seed)
        s0 = np.exp(rng.normal(size=(2, 3)) * 0.2)
        q0 = rng.normal(size=(2, 4)) + 0.4
        q0 /= np.linalg.norm(q0, axis=1, keepdims=True)
        w = rng.normal(size=(2, 3, 3))

        def f(s, q):
            return float((gaussians.build_covariance(s, q) * w).sum())

        ds, dq = gaussians.build_covariance_backward(s0, q0, w)
        assert rel_err(ds, central_diff(lambda s: f(s, q0), s0)) < 1e-5
        assert rel_err(dq, central_diff(lambda q: f(s0, q), q0)) < 1e-5


class TestSphericalHarmonics:
    def test_order0_constant(self):
        dirs = np.random.default_rng(0).normal(size=(6, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        basis = sh.sh_basis(dirs, 0)
        assert np.allclose(basis, sh.SH_C0)

    def test_order1_hand_formulas(self):
        # real SH degree 1: (-c1*y, c1*z, -c1*x) with c1 = 0.4886025119029199
        dirs = np.random.default_rng(1).normal(size=(8, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        basis = sh.sh_basis(dirs, 1)
        c1 = 0.4886025119029199
        x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        assert np.allclose(basis[:, 1], -c1 * y, atol=1e-12)
        assert np.allclose(basis[:, 2], c1 * z, atol=1e-12)
        assert np.allclose(basis[:, 3], -c1 * x, atol=1e-12)

    @pytest.mark.parametrize("order", [0, 1, 2, 3])
    def test_basis_orthonormal_on_sphere(self, order):
        # Monte Carlo orthonormality: mean over uniform sphere of 4*pi*b_i*b_j
        rng = np.random.default_rng(2)
        dirs = rng.normal(size=(200000, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        basis = sh.sh_basis(dirs, order)
        gram = 4 * np.pi * (basis.T @ basis) / len(dirs)
        assert np.abs(gram - np.eye(basis.shape[1])).max() < 0.05

    @pytest.mark.parametrize("seed", range(5))
    def test_color_backward_fd(self, seed):
        rng = np.random.default_rng(seed)
        order = int(rng.integers(0, 4))
        b = sh.n_sh_bases(order)
        h0 = rng.normal(size=(3, 3, b)) * 0.4
        d0 = rng.normal(size=(3, 3))
        d0 /= np.linalg.norm(d0, axis=1, keepdims=True)
        w = rng.normal(size=(3, 3))

        def f_h(h):
            return float((sh.eval_sh_color(h, d0, order) * w).sum())

        rgb = sh.eval_sh_color(h0, d0, order)
        dh, ddir = sh.eval_sh_color_backward(h0, d0, order, rgb, w)
        assert rel_err(dh, central_diff(f_h, h0)) < 1e-5


class TestProjection:
    def test_pinhole_center_point(self):
        cam = tiny_camera(size=16, angle=0.0)
        # a point at the camera's look-at target (origin) projects to cx, cy
        p_cam = (cam.T_wc @ np.array([0.0, 0, 0, 1]))[:3]
        u = cam.fx * p_cam[0] / p_cam[2] + cam.cx
        v = cam.fy * p_cam[1] / p_cam[2] + cam.cy
        assert abs(u - cam.cx) < 1e-9 and abs(v - cam.cy) < 1e-9

    def test_perspective_jacobian_fd(self):
        rng = np.random.default_rng(0)
        p = rng.normal(size=(4, 3))
        p[:, 2] = np.abs(p[:, 2]) + 1.0
        J = renderer.perspective_jacobian(p, 40.0, 50.0)

        def proj(pt):
            return np.array([40.0 * pt[0] / pt[2], 50.0 * pt[1] / pt[2]])

        for i in range(4):
            num = np.zeros((2, 3))
            for j in range(3):
                e = np.zeros(3)
                e[j] = 1e-6
                num[:, j] = (proj(p[i] + e) - proj(p[i] - e)) / 2e-6
            assert rel_err(J[i], num) < 1e-6

    def test_near_plane_culling(self):
        cam = tiny_camera(size=8, angle=0.0)
        c = tiny_cloud(0, n=3)
        # move all points behind the camera
        behind = cam.center + cam.rotation.T @ np.array([0, 0, -1.0])
        c.mu[:] = behind
        proj = renderer.project_cloud(c, cam)
        assert proj.order.size == 0

    def test_depth_sort_stable(self):
        depths = np.array([2.0, 1.0, 2.0, 0.5])
        order = renderer.depth_sort(depths)
        assert list(order) == [3, 1, 0, 2]  # ties keep index order


def brute_force_render(cloud, cam, background):
    """Independent per-pixel reference: no bbox, no early termination."""
    proj = renderer.project_cloud(cloud, cam)
    H, W = cam.height, cam.width
    bg = np.asarray(background, dtype=float)
    img = np.zeros((H, W, 3))
    for yi in range(H):
        for xi in range(W):
            T = 1.0
            acc = np.zeros(3)
            for i in proj.order:
                d = np.array([xi + 0.5, yi + 0.5]) - proj.mean2d[i]
                icov = np.linalg.inv(proj.cov2d[i])
                g = np.exp(-0.5 * d @ icov @ d)
                # same 3-sigma support as the fast path
                x0, x1, y0, y1 = renderer._bbox(proj.mean2d[i], proj.radius[i], W, H)
                if not (x0 <= xi < x1 and y0 <= yi < y1):
                    continue
                if T < renderer.T_EPS:
                    continue
                a = proj.act.opacity[i] * g
                acc += T * a * proj.colors[i]
                T *= 1.0 - a
            img[yi, xi] = np.clip(acc + T * bg, 0.0, 1.0)
    return img


class TestCompositing:
    @pytest.mark.parametrize("seed", range(5))
    def test_against_brute_force(self, seed):
        cloud = tiny_cloud(seed, n=6)
        cam = tiny_camera(size=12, angle=0.7 * seed)
        bg = (0.1, 0.5, 0.9)
        fast = renderer.render(cloud, cam, bg).image
        ref = brute_force_render(cloud, cam, bg)
        assert np.abs(fast - ref).max() < 1e-10

    def test_empty_cloud_is_background(self):
        cam = tiny_camera()
        empty = GaussianCloud(np.zeros((0, 3)), np.zeros((0, 3)),
                              np.zeros((0, 4)), np.zeros(0),
                              np.zeros((0, 3, 4)), sh_order=1)
        out = renderer.render(empty, cam, (0.2, 0.4, 0.6)).image
        assert np.allclose(out, np.array([0.2, 0.4, 0.6]))

    def test_opaque_front_hides_back(self):
        # two identical gaussians, the front one nearly opaque
        cam = tiny_camera(size=16, angle=0.0)
        toward = (cam.center / np.linalg.norm(cam.center))
        c = GaussianCloud(
            mu=np.stack([0.3 * toward, -0.3 * toward]),
            scale_log=np.full((2, 3), np.log(0.25)),
            rot_raw=np.tile([1.0, 0, 0, 0], (2, 1)),
            opacity_logit=np.array([12.0, 12.0]),
            sh=np.zeros((2, 3, 4)),
            sh_order=1)
        c.sh[0, :, 0] = (np.array([1.0, 0, 0]) - 0.5) / sh.SH_C0  # front: red
        c.sh[1, :, 0] = (np.array([0.0, 1, 0]) - 0.5) / sh.SH_C0  # back: green
        img = renderer.render(c, cam, (0, 0, 0)).image
        h, w = img.shape[:2]
        center = img[h // 2, w // 2]
        assert center[0] > 0.9 and center[1] < 0.1

    def test_render_deterministic(self, ):
        cloud = tiny_cloud(3, n=20)
        cam = tiny_camera(size=24, angle=1.1)
        a = renderer.render(cloud, cam).image
        b = renderer.render(cloud, cam).image
        assert np.array_equal(a, b)


class TestRenderBackward:
    @pytest.mark.parametrize("seed", range(5))
    def test_full_chain_matches_fd(self, seed):
        rng = np.random.default_rng(seed)
        cloud = tiny_cloud(seed, n=5)
        cam = tiny_camera(size=8, angle=0.9 * seed + 0.2)
        bg = (0.3, 0.2, 0.1)
        w = rng.normal(size=(8, 8, 3))

        grads = renderer.render_backward(cloud, cam, bg, w)

        def loss_for(field, arr):
            c2 = cloud.copy()
            setattr(c2, field, arr)
            return float((renderer.render(c2, cam, bg).image * w).sum())

        for field in ("mu", "scale_log", "rot_raw", "opacity_logit", "sh"):
            x0 = getattr(cloud, field).copy()
            num = central_diff(lambda a, f=field: loss_for(f, a), x0, eps=1e-6)
            got = getattr(grads, field)
            assert rel_err(got, num) < 1e-3, field

    def test_upstream_shape_checked(self):
        cloud = tiny_cloud(0, n=2)
        cam = tiny_camera(size=8)
        with pytest.raises(ValueError):
            renderer.render_backward(cloud, cam, (0, 0, 0), np.zeros((4, 4, 3)))
