"""Optimal two-view correction, shared-image correction, and the weighted
linear n-view solver with its covariance."""

import numpy as np
import pytest

import trilost as tl
from trilost.camera import ImagePlanePoint, image_plane_to_pixel
from trilost.optimal import (
    hs_polynomial,
    quat_coeffs,
    quat_lambda_limit,
    real_roots,
)

from conftest import fixture_a, identity_camera, make_rng, random_obs_set
from oracles import (
    numeric_jacobian,
    reprojection_mle,
    scan_polynomial_cost,
    svd_pseudoinverse,
)


def shared_attitude_pair(rng, noise_px=0.0, sigma_px=0.1):
    """Two anchors observed in a single image (one camera, one attitude)."""
    K = tl.camera_from_fov(60.0, 1024)
    while True:
        truth = rng.normal(scale=10.0, size=3)
        center = truth + rng.normal(scale=40.0, size=3)
        T = tl.pointing_attitude(truth, center)
        obs = []
        for _ in range(2):
            p = center + rng.normal(scale=12.0, size=3)
            v = T.matrix @ (p - truth)
            if v[2] < 0.5 * np.linalg.norm(v):
                break
            x = ImagePlanePoint(v[0] / v[2], v[1] / v[2])
            pix = image_plane_to_pixel(K, x)
            obs.append(tl.LosObservation(
                pixel=tl.PixelPoint(pix.u + noise_px * rng.normal(),
                                    pix.v + noise_px * rng.normal()),
                intrinsics=K, attitude=T, anchor=p,
                pixel_cov=tl.PixelCovariance.isotropic(sigma_px)))
        if len(obs) == 2:
            sep = np.degrees(np.arccos(np.clip(
                obs[0].unit_los_localization @ obs[1].unit_los_localization,
                -1.0, 1.0)))
            if sep > 2.0:
                return truth, obs


class TestEpipolarSetup:
    def test_epipolar_constraint_holds_noise_free(self):
        rng = make_rng(501)
        for _ in range(20):
            truth, obs = random_obs_set(rng, n=2)
            s = tl.epipolar_setup(obs[0], obs[1])
            x1 = obs[0].image_plane.homogeneous
            x2 = obs[1].image_plane.homogeneous
            scale = np.linalg.norm(s.E)
            assert abs(x2 @ s.E @ x1) < 1e-10 * scale

    def test_coincident_anchors_rejected(self):
        _, obs = fixture_a()
        moved = tl.LosObservation(
            pixel=obs[1].pixel, intrinsics=obs[1].intrinsics,
            attitude=obs[1].attitude, anchor=obs[0].anchor,
            pixel_cov=obs[1].pixel_cov)
        with pytest.raises(tl.CoincidentCameras):
            tl.epipolar_setup(obs[0], moved)

    def test_reduction_sends_point_to_origin_and_epipole_to_x_axis(self):
        rng = make_rng(502)
        _, obs = random_obs_set(rng, n=2, noise_px=1.0)
        s = tl.epipolar_setup(obs[0], obs[1])
        x1 = obs[0].image_plane.homogeneous
        np.testing.assert_allclose((s.M1 @ x1)[:2], [0.0, 0.0], atol=1e-12)
        ep = s.M1 @ s.e1
        assert abs(ep[1]) < 1e-10 * np.linalg.norm(ep)
        assert ep[0] > 0


class TestHsPolynomial:
    def test_expansion_matches_direct_product_form(self):
        rng = make_rng(503)
        for _ in range(30):
            _, obs = random_obs_set(rng, n=2, noise_px=2.0)
            s = tl.epipolar_setup(obs[0], obs[1])
            poly = hs_polynomial(s, 1.3, 0.7)
            for t in rng.normal(scale=3.0, size=8):
                assert poly(t) == pytest.approx(poly.direct_form(t),
                                                rel=1e-9, abs=1e-12)

    def test_polynomial_is_cost_derivative_up_to_positive_factor(self):
        # g(t) = J'(t) * (1 + f1^2 t^2)^2 * q2(t)^2 / 2, so the real roots of
        # g are exactly the stationary points of the correction cost J
        rng = make_rng(504)
        for _ in range(10):
            _, obs = random_obs_set(rng, n=2, noise_px=2.0)
            s = tl.epipolar_setup(obs[0], obs[1])
            poly = hs_polynomial(s, 1.4, 0.8)
            for t in rng.uniform(-2.0, 2.0, size=5):
                q2 = (s.a * t + s.b) ** 2 + s.f2**2 * (s.c * t + s.d) ** 2
                denom = (1.0 + s.f1**2 * t**2) ** 2 * q2**2
                h = 1e-6
                dJ = (poly.cost(t + h) - poly.cost(t - h)) / (2 * h)
                assert dJ == pytest.approx(2.0 * poly(t) / denom,
                                           rel=1e-4, abs=1e-7)

    def test_degree_six(self):
        rng = make_rng(505)
        _, obs = random_obs_set(rng, n=2, noise_px=2.0)
        s = tl.epipolar_setup(obs[0], obs[1])
        poly = hs_polynomial(s, 1.0, 2.0)
        assert poly.coeffs.shape == (7,)
        assert poly.coeffs[6] != 0.0


class TestHsTriangulate:
    def test_fixture_exact(self):
        truth, obs = fixture_a()
        _, _, est = tl.hs_triangulate(obs[0], obs[1])
        np.testing.assert_allclose(est.position, truth, atol=1e-12)

    def test_noise_free_leaves_measurements_unchanged(self):
        rng = make_rng(506)
        for _ in range(20):
            truth, obs = random_obs_set(rng, n=2)
            c1, c2, est = tl.hs_triangulate(obs[0], obs[1])
            np.testing.assert_allclose([c1.x, c1.y],
                                       [obs[0].image_plane.x, obs[0].image_plane.y],
                                       atol=1e-9)
            np.testing.assert_allclose(est.position, truth,
                                       rtol=1e-9, atol=1e-9)

    def test_corrected_pair_satisfies_epipolar_constraint(self):
        rng = make_rng(507)
        for _ in range(30):
            _, obs = random_obs_set(rng, n=2, noise_px=3.0)
            s = tl.epipolar_setup(obs[0], obs[1])
            c1, c2, est = tl.hs_triangulate(obs[0], obs[1])
            resid = c2.homogeneous @ s.E @ c1.homogeneous
            assert abs(resid) < 1e-9 * np.linalg.norm(s.E)
            # corrected rays now intersect: the two-ray solve is exact
            assert est.diagnostics.residual_norm < 1e-9

    def test_chosen_root_is_global_minimum(self):
        rng = make_rng(508)
        for _ in range(15):
            _, obs = random_obs_set(rng, n=2, noise_px=3.0)
            s = tl.epipolar_setup(obs[0], obs[1])
            w1 = w2 = 1.0 / obs[0].image_plane_sigma() ** 2
            poly = hs_polynomial(s, w1, w2)
            roots = real_roots(poly.coeffs)
            chosen = min((float(poly.cost(t)) for t in roots),
                         default=np.inf)
            chosen = min(chosen, poly.asymptote_cost)
            _, scanned = scan_polynomial_cost(poly)
            assert chosen <= scanned + 1e-6 * abs(scanned) + 1e-12

    def test_infinite_tail_cost_when_first_epipole_at_infinity(self):
        # the fixture-A baseline is parallel to the image plane, so the
        # reduced epipole sits at infinity and the t -> inf cost diverges
        _, obs = fixture_a()
        s = tl.epipolar_setup(obs[0], obs[1])
        assert s.f1 == 0.0
        poly = hs_polynomial(s, 1.0, 1.0)
        assert poly.asymptote_cost == np.inf


class TestQuat:
    @pytest.mark.parametrize("noise_px,bound", [(0.5, 1e-7), (2.0, 5e-6)])
    def test_matches_two_view_optimal_solver_on_shared_image(self, noise_px,
                                                             bound):
        # same weighted reprojection optimum, two very different solvers;
        # the gap grows ~quadratically with the noise level
        rng = make_rng(510)
        for _ in range(30):
            truth, obs = shared_attitude_pair(rng, noise_px=noise_px)
            _, _, q = tl.quat_triangulate(obs[0], obs[1])
            _, _, h = tl.hs_triangulate(obs[0], obs[1])
            scale = max(1.0, np.linalg.norm(h.position))
            assert np.linalg.norm(q.position - h.position) / scale < bound

    def test_noise_free_exact(self):
        rng = make_rng(511)
        for _ in range(20):
            truth, obs = shared_attitude_pair(rng)
            _, _, q = tl.quat_triangulate(obs[0], obs[1])
            np.testing.assert_allclose(q.position, truth, rtol=1e-9, atol=1e-9)

    def test_attitude_mismatch_rejected(self):
        rng = make_rng(512)
        _, obs = random_obs_set(rng, n=2)
        with pytest.raises(ValueError):
            tl.quat_triangulate(obs[0], obs[1])

    def test_zero_baseline_rejected(self):
        rng = make_rng(513)
        _, obs = shared_attitude_pair(rng)
        dup = tl.LosObservation(pixel=obs[1].pixel, intrinsics=obs[1].intrinsics,
                                attitude=obs[0].attitude, anchor=obs[0].anchor,
                                pixel_cov=obs[1].pixel_cov)
        with pytest.raises(tl.DegenerateBaseline):
            tl.quat_triangulate(obs[0], dup)

    def test_quadratic_coefficient_identity(self):
        # h0 f^2 = 4 w1 w2 h2 ties the constant and quadratic coefficients
        rng = make_rng(514)
        for _ in range(30):
            _, obs = shared_attitude_pair(rng, noise_px=2.0)
            T = obs[0].attitude.matrix
            base = T @ (np.asarray(obs[1].anchor) - np.asarray(obs[0].anchor))
            qc = quat_coeffs(obs[0].image_plane, obs[1].image_plane, base,
                             1.7, 0.9)
            assert qc.h0 * qc.f**2 == pytest.approx(4.0 * 1.7 * 0.9 * qc.h2,
                                                    rel=1e-10, abs=1e-20)

    def test_correction_restores_shared_vertex_constraint(self):
        # both rays leave one camera center, so the measured pair must be
        # moved onto the surface d(y1-y2) + e(x2-x1) + f(x1 y2 - x2 y1) = 0;
        # the corrected residual collapses by orders of magnitude
        def constraint(base, a, b):
            d, e, f = base
            return (d * (a.y - b.y) + e * (b.x - a.x)
                    + f * (a.x * b.y - b.x * a.y))

        rng = make_rng(515)
        for _ in range(20):
            _, obs = shared_attitude_pair(rng, noise_px=2.0)
            c1, c2, _ = tl.quat_triangulate(obs[0], obs[1])
            T = obs[0].attitude.matrix
            base = T @ (np.asarray(obs[1].anchor) - np.asarray(obs[0].anchor))
            before = constraint(base, obs[0].image_plane, obs[1].image_plane)
            after = constraint(base, c1, c2)
            assert abs(after) < 1e-4 * abs(before)
            assert abs(after) < 1e-6 * max(1.0, np.linalg.norm(base))

    def test_flat_baseline_uses_closed_form_limit(self):
        # baseline with zero image-normal component: the quadratic degenerates
        rng = make_rng(516)
        K = identity_camera()
        I = tl.Rotation.identity()
        mk = lambda u, v, p: tl.LosObservation(
            pixel=tl.PixelPoint(u, v), intrinsics=K, attitude=I,
            anchor=np.array(p, dtype=float),
            pixel_cov=tl.PixelCovariance.isotropic(0.01))
        truth = np.zeros(3)
        p1 = np.array([0.4, 0.1, 2.0])
        p2 = np.array([-0.3, 0.2, 2.0])  # same depth: f = 0 exactly
        o1 = mk(p1[0] / p1[2] + 0.002, p1[1] / p1[2] - 0.001, p1)
        o2 = mk(p2[0] / p2[2] - 0.001, p2[1] / p2[2] + 0.002, p2)
        c1, c2, est = tl.quat_triangulate(o1, o2)
        base = p2 - p1
        d, e, f = base
        assert f == 0.0
        resid = (f * (c2.x * c1.y - c1.x * c2.y)
                 + e * (c1.x - c2.x) + d * (c2.y - c1.y))
        assert abs(resid) < 1e-12
        # against the generic two-view optimal solver
        _, _, h = tl.hs_triangulate(o1, o2)
        np.testing.assert_allclose(est.position, h.position, atol=1e-8)

    def test_limit_matches_vanishing_quadratic_root(self):
        # with the baseline parallel to the image plane the quadratic term
        # vanishes and the closed-form multiplier is the linear-equation root
        rng = make_rng(517)
        for _ in range(10):
            x1 = ImagePlanePoint(*rng.uniform(-0.4, 0.4, 2))
            x2 = ImagePlanePoint(*rng.uniform(-0.4, 0.4, 2))
            base = np.array([rng.uniform(-2, 2), rng.uniform(-2, 2), 0.0])
            w1, w2 = rng.uniform(0.5, 3.0, 2)
            qc = quat_coeffs(x1, x2, base, w1, w2)
            assert qc.h2 == 0.0
            lam = quat_lambda_limit(qc, x1, x2)
            assert lam == pytest.approx(-qc.h0 / qc.h1, rel=1e-12)


class TestLost:
    def test_gamma_on_fixture(self):
        _, obs = fixture_a()
        assert tl.lost_gamma(obs, 0, 1) == pytest.approx(1.0, rel=1e-12)

    def test_gamma_times_norm_is_range_noise_free(self):
        rng = make_rng(520)
        for _ in range(30):
            truth, obs = random_obs_set(rng, n=int(rng.integers(2, 6)))
            for i in range(len(obs)):
                j = (i + 1) % len(obs)
                g = tl.lost_gamma(obs, i, j)
                nrm = np.linalg.norm(obs[i].los_camera)
                rho = np.linalg.norm(np.asarray(obs[i].anchor) - truth)
                assert g * nrm == pytest.approx(rho, rel=1e-10)

    def test_gamma_companion_invariance_noise_free(self):
        rng = make_rng(521)
        truth, obs = random_obs_set(rng, n=5)
        vals = [tl.lost_gamma(obs, 0, j) for j in range(1, 5)]
        np.testing.assert_allclose(vals, vals[0], rtol=1e-10)

    def test_parallel_rays_rejected(self):
        K = identity_camera()
        I = tl.Rotation.identity()
        mk = lambda p: tl.LosObservation(
            pixel=tl.PixelPoint(0.1, 0.0), intrinsics=K, attitude=I,
            anchor=np.array(p), pixel_cov=tl.PixelCovariance.isotropic(0.1))
        obs = [mk((0.5, 0.0, 5.0)), mk((0.7, 0.0, 7.0))]
        with pytest.raises(tl.ParallelRays):
            tl.lost_gamma(obs, 0, 1)

    def test_anisotropic_noise_rejected(self):
        _, obs = fixture_a()
        bad = tl.LosObservation(
            pixel=obs[0].pixel, intrinsics=obs[0].intrinsics,
            attitude=obs[0].attitude, anchor=obs[0].anchor,
            pixel_cov=tl.PixelCovariance(np.diag([0.01, 0.02])))
        with pytest.raises(tl.NonIsotropicNoise):
            tl.lost_triangulate([bad, obs[1]])

    def test_weights_are_inverse_sigma_gamma(self):
        rng = make_rng(522)
        truth, obs = random_obs_set(rng, n=4)
        w = tl.lost_weights(obs)
        for i, ob in enumerate(obs):
            g = tl.lost_gamma(obs, i, (i + 1) % 4)
            assert w.q[i] == pytest.approx(1.0 / (ob.image_plane_sigma() * g),
                                           rel=1e-12)

    def test_rows_shape_and_annihilation(self):
        rng = make_rng(523)
        truth, obs = random_obs_set(rng, n=3)
        A, y = tl.lost_rows(obs)
        assert A.shape == (6, 3)
        np.testing.assert_allclose(A @ truth, y, atol=1e-8 * np.abs(y).max())

    def test_matches_nonlinear_mle_noise_free(self):
        rng = make_rng(524)
        truth, obs = random_obs_set(rng, n=20, jitter_deg=8.0)
        est = tl.lost_triangulate(obs)
        sigma = np.sqrt(np.trace(tl.lost_covariance(obs)))
        start = est.position + rng.normal(scale=min(1.0, 50 * sigma), size=3)
        mle, _ = reprojection_mle(obs, [start, est.position])
        assert np.linalg.norm(est.position - mle) < 1e-6 * sigma + 1e-12

    def test_covariance_symmetric_positive_definite(self):
        rng = make_rng(525)
        for _ in range(20):
            _, obs = random_obs_set(rng, n=4, noise_px=0.3)
            P = tl.lost_covariance(obs)
            np.testing.assert_allclose(P, P.T, atol=1e-20)
            assert np.linalg.eigvalsh(P)[0] > 0

    def test_two_view_covariance_identity_sample(self):
        rng = make_rng(526)
        for _ in range(50):
            _, obs = random_obs_set(rng, n=2)
            Pl = tl.lost_covariance(obs)
            Ph = tl.hs_covariance(obs[0], obs[1])
            rel = np.linalg.norm(Pl - Ph) / np.linalg.norm(Pl)
            assert rel < 1e-12

    def test_residual_pseudoinverse_matches_svd(self):
        rng = make_rng(527)
        for _ in range(20):
            x = ImagePlanePoint(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5))
            gamma = rng.uniform(0.5, 3.0)
            sigma = rng.uniform(1e-5, 1e-3)
            R_x = np.zeros((3, 3))
            R_x[:2, :2] = sigma**2 * np.eye(2)
            got = tl.residual_cov_pseudoinverse(x, R_x, gamma)
            xbar = x.homogeneous
            S = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
            R_eps = gamma**2 * (tl.skew(xbar) @ S.T @ R_x[:2, :2] @ S
                                @ tl.skew(xbar).T)
            ref = svd_pseudoinverse(R_eps)
            np.testing.assert_allclose(got, ref, rtol=1e-8,
                                       atol=1e-10 * np.linalg.norm(ref))

    def test_residual_pseudoinverse_anisotropic_falls_back(self):
        x = ImagePlanePoint(0.2, -0.1)
        R_x = np.zeros((3, 3))
        R_x[:2, :2] = np.array([[4e-8, 1e-8], [1e-8, 9e-8]])
        got = tl.residual_cov_pseudoinverse(x, R_x, 1.5)
        xbar = x.homogeneous
        S = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        R_eps = 1.5**2 * (tl.skew(xbar) @ S.T @ R_x[:2, :2] @ S
                          @ tl.skew(xbar).T)
        ref = svd_pseudoinverse(R_eps)
        np.testing.assert_allclose(got, ref, rtol=1e-8,
                                   atol=1e-10 * np.linalg.norm(ref))
