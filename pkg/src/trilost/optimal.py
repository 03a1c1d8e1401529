"""Statistically optimal triangulation.

Three solvers:

* ``hs_triangulate`` — two-view weighted optimal correction: the corrected
  measurement pair minimizes the weighted image-plane distance to the
  measured pair subject to the epipolar constraint; the minimization
  reduces to a degree-6 polynomial in the epipolar-pencil parameter.
* ``quat_triangulate`` — the shared-attitude (both points in one image)
  specialization, which collapses to a quadratic.
* ``lost_triangulate`` — n-view linear solver whose rows are weighted by
  ``q_i = 1 / (sigma_x_i * gamma_i)`` with the range-over-norm factor
  ``gamma_i`` obtained from a companion measurement through the Law of
  Sines.  Single pass, no iteration; with these weights the solution is the
  maximum-likelihood estimate to first order.

Covariances: ``lost_covariance`` (information form) and ``hs_covariance``
(reprojection-Jacobian form); the two are algebraically identical for two
views with square pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import (
    BORESIGHT,
    ImagePlanePoint,
    LosObservation,
    PLANE_SELECTOR,
    image_plane_covariance,
)
from .errors import (
    CoincidentCameras,
    DegenerateBaseline,
    NonIsotropicNoise,
    NoRealRoot,
    ParallelRays,
    RankDeficient,
    TooFewObservations,
)
from .geometry import LeastSquaresBackend, skew, solve_stacked, stack_condition_number
from .linear import (
    LosNormalization,
    SolveDiagnostics,
    TriangulationEstimate,
    dlt_system,
    _diagnostics,
)

#: A companion-matrix eigenvalue is accepted as a real root when
#: |imag| <= REAL_ROOT_TOL * (1 + |real|).
REAL_ROOT_TOL = 1e-8

#: Switch the shared-attitude quadratic to its linear/limit form when
#: |h2| < QUAT_SWITCH_TOL * max(|h1|, |h0|, 1).
QUAT_SWITCH_TOL = 1e-9


def _require_square(ob: LosObservation):
    if not ob.intrinsics.is_square:
        raise NonIsotropicNoise(
            "optimal solvers require square, unskewed pixels (dx == dy, alpha == 0)"
        )


def _weight(ob: LosObservation) -> float:
    """Default cost weight 1 / sigma_x^2 from the observation's noise."""
    s = ob.image_plane_sigma()
    return 1.0 / (s * s)


# ---------------------------------------------------------------------------
# Polynomial utilities (ascending coefficient order throughout)
# ---------------------------------------------------------------------------

def _polymul(a, b):
    return np.convolve(a, b)


def real_roots(coeffs_ascending, tol: float = REAL_ROOT_TOL) -> np.ndarray:
    """Real roots of a polynomial via companion-matrix eigenvalues.

    ``coeffs_ascending`` is ``[c0, c1, ..., cn]`` for ``sum c_k t^k``.
    Leading coefficients are stripped when negligible relative to the
    largest coefficient.  A complex eigenvalue is accepted as real when its
    imaginary part is below ``tol * (1 + |real part|)``.
    """
    c = np.asarray(coeffs_ascending, dtype=float)
    big = np.max(np.abs(c))
    if big == 0.0:
        return np.array([])  # identically zero: every t; callers special-case
    # strip negligible leading (highest-degree) terms
    k = len(c) - 1
    while k > 0 and abs(c[k]) < 1e-14 * big:
        k -= 1
    c = c[: k + 1]
    if len(c) == 1:
        return np.array([])
    monic = c / c[-1]
    n = len(monic) - 1
    comp = np.zeros((n, n))
    comp[1:, :-1] = np.eye(n - 1)
    comp[:, -1] = -monic[:-1]
    eig = np.linalg.eigvals(comp)
    mask = np.abs(eig.imag) <= tol * (1.0 + np.abs(eig.real))
    return np.unique(eig.real[mask])


# ---------------------------------------------------------------------------
# Two-view optimal correction (general attitudes)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpipolarSetup:
    """Reduced two-view epipolar geometry around a measured point pair.

    ``M1``/``M2`` move each measured point to its image origin and rotate
    the translated epipole onto the +x axis; in these coordinates the
    epipoles are (1, 0, f1) and (1, 0, f2) and the transformed fundamental
    matrix takes a four-parameter form {a, b, c, d}.
    """

    e1: np.ndarray
    e2: np.ndarray
    alpha1: float
    alpha2: float
    M1: np.ndarray
    M2: np.ndarray
    f1: float
    f2: float
    a: float
    b: float
    c: float
    d: float
    E: np.ndarray


@dataclass(frozen=True)
class PolySix:
    """Degree-6 derivative polynomial of the two-view correction cost."""

    coeffs: np.ndarray  # ascending, length 7
    w1: float
    w2: float
    f1: float
    f2: float
    a: float
    b: float
    c: float
    d: float

    def __call__(self, t):
        return np.polynomial.polynomial.polyval(t, self.coeffs)

    def direct_form(self, t):
        """Unexpanded form of the same polynomial, for identity checks."""
        a, b, c, d, f1, f2 = self.a, self.b, self.c, self.d, self.f1, self.f2
        q = (a * t + b) ** 2 + f2 * f2 * (c * t + d) ** 2
        return (
            self.w1 * t * q * q
            - self.w2 * (1.0 + (t * f1) ** 2) ** 2 * (a * d - b * c)
            * (a * t + b) * (c * t + d)
        )

    def cost(self, t):
        """Weighted squared image-plane correction distance at parameter t."""
        a, b, c, d, f1, f2 = self.a, self.b, self.c, self.d, self.f1, self.f2
        t = np.asarray(t, dtype=float)
        term1 = self.w1 * t * t / (1.0 + (t * f1) ** 2)
        den = (a * t + b) ** 2 + f2 * f2 * (c * t + d) ** 2
        term2 = self.w2 * (c * t + d) ** 2 / den
        return term1 + term2

    @property
    def asymptote_cost(self) -> float:
        a, c, f1, f2 = self.a, self.c, self.f1, self.f2
        if f1 == 0.0:
            return float("inf")  # the first correction grows without bound as t -> inf
        den = a * a + f2 * f2 * c * c
        second = 0.0 if c == 0.0 else self.w2 * c * c / den
        return self.w1 / (f1 * f1) + second


def _rotate_translate(x: ImagePlanePoint, e: np.ndarray):
    """Mapping M that sends the measured point to the origin and the epipole
    onto the +x axis; returns (M, f, alpha)."""
    Tt = np.array([[1.0, 0.0, -x.x], [0.0, 1.0, -x.y], [0.0, 0.0, 1.0]])
    ep = Tt @ e
    wx, wy, ez = ep
    nw = np.hypot(wx, wy)
    if nw < 1e-14 * max(abs(ez), 1.0):
        raise RankDeficient("measured point coincides with the epipole")
    cth, sth = wx / nw, -wy / nw
    alpha = float(np.arctan2(-sth, cth))
    R = np.array([[cth, -sth, 0.0], [sth, cth, 0.0], [0.0, 0.0, 1.0]])
    return R @ Tt, float(ez / nw), alpha


def epipolar_setup(ob1: LosObservation, ob2: LosObservation) -> EpipolarSetup:
    """Build the reduced epipolar geometry for a measured observation pair."""
    p1, p2 = ob1.anchor, ob2.anchor
    baseline = p2 - p1
    scene = max(np.linalg.norm(p1), np.linalg.norm(p2), 1.0)
    if np.linalg.norm(baseline) < 1e-12 * scene:
        raise CoincidentCameras("anchors coincide; no epipolar geometry")

    T1, T2 = ob1.attitude.matrix, ob2.attitude.matrix
    E = T2 @ skew(baseline) @ T1.T
    e1 = T1 @ baseline
    e2 = T2 @ (-baseline)

    x1, x2 = ob1.image_plane, ob2.image_plane
    M1, f1, alpha1 = _rotate_translate(x1, e1)
    M2, f2, alpha2 = _rotate_translate(x2, e2)

    M1inv = np.linalg.inv(M1)
    M2inv = np.linalg.inv(M2)
    Ep = M2inv.T @ E @ M1inv
    a, b = Ep[1, 1], Ep[1, 2]
    c, d = Ep[2, 1], Ep[2, 2]
    return EpipolarSetup(e1, e2, alpha1, alpha2, M1, M2, f1, f2, a, b, c, d, E)


def hs_polynomial(setup: EpipolarSetup, w1: float, w2: float) -> PolySix:
    """Expand the derivative of the two-term correction cost.

    d/dt [ w1 t^2/(1 + f1^2 t^2) + w2 (ct+d)^2 / ((at+b)^2 + f2^2 (ct+d)^2) ]
    cleared of denominators gives
    w1 t ((at+b)^2 + f2^2 (ct+d)^2)^2
        - w2 (1 + f1^2 t^2)^2 (ad - bc)(at+b)(ct+d).
    """
    a, b, c, d, f1, f2 = setup.a, setup.b, setup.c, setup.d, setup.f1, setup.f2
    # q(t) = (at+b)^2 + f2^2 (ct+d)^2, ascending coefficients
    q = np.array(
        [b * b + f2 * f2 * d * d, 2.0 * (a * b + f2 * f2 * c * d), a * a + f2 * f2 * c * c]
    )
    term1 = w1 * _polymul(np.array([0.0, 1.0]), _polymul(q, q))
    r = np.array([1.0, 0.0, f1 * f1])  # 1 + f1^2 t^2
    lin = _polymul(np.array([b, a]), np.array([d, c]))
    term2 = w2 * (a * d - b * c) * _polymul(_polymul(r, r), lin)
    g = np.zeros(7)
    g[: len(term1)] += term1
    g[: len(term2)] -= term2
    return PolySix(g, w1, w2, setup.f1, setup.f2, a, b, c, d)


def _closest_point_homog(line):
    """Homogeneous closest point to the origin on a homogeneous image line."""
    lam, mu, nu = line
    return np.array([-lam * nu, -mu * nu, lam * lam + mu * mu])


def _corrected_pair(setup: EpipolarSetup, t: float):
    """Corrected homogeneous points (reduced coordinates) at parameter t."""
    a, b, c, d, f1, f2 = setup.a, setup.b, setup.c, setup.d, setup.f1, setup.f2
    x1p = np.array([f1 * t * t, t, f1 * f1 * t * t + 1.0])
    l2 = np.array([-f2 * (c * t + d), a * t + b, c * t + d])
    x2p = _closest_point_homog(l2)
    return x1p, x2p


def _corrected_pair_asymptote(setup: EpipolarSetup):
    a, c, f1, f2 = setup.a, setup.c, setup.f1, setup.f2
    x1p = np.array([f1, 0.0, f1 * f1]) if f1 != 0.0 else np.array([0.0, 1.0, 0.0])
    x2p = np.array([f2 * c * c, -a * c, f2 * f2 * c * c + a * a])
    return x1p, x2p


def _dehomog_image(h) -> ImagePlanePoint:
    if abs(h[2]) < 1e-14 * max(np.max(np.abs(h)), 1.0):
        raise NoRealRoot("corrected point escaped to infinity")
    return ImagePlanePoint(h[0] / h[2], h[1] / h[2])


def _replace_image_point(ob: LosObservation, x: ImagePlanePoint) -> LosObservation:
    from .camera import image_plane_to_pixel

    return LosObservation(
        pixel=image_plane_to_pixel(ob.intrinsics, x),
        intrinsics=ob.intrinsics,
        attitude=ob.attitude,
        anchor=np.asarray(ob.anchor),
        pixel_cov=ob.pixel_cov,
    )


def _exact_two_ray_intersection(ob1, ob2):
    """Least-squares intersection of two rays (exact when coplanar)."""
    H, y = dlt_system([ob1, ob2], LosNormalization.ImagePlane)
    return solve_stacked(H, y, LeastSquaresBackend.QRFactorization), H, y


def hs_triangulate(ob1: LosObservation, ob2: LosObservation,
                   w1: float | None = None, w2: float | None = None):
    """Optimal two-view triangulation via epipolar-constrained correction.

    Returns ``(corrected1, corrected2, TriangulationEstimate)`` where the
    corrected image-plane points satisfy the epipolar constraint exactly
    (so their rays intersect), and the estimate is that intersection with
    the analytic ``hs_covariance``.
    """
    _require_square(ob1)
    _require_square(ob2)
    if w1 is None:
        w1 = _weight(ob1)
    if w2 is None:
        w2 = _weight(ob2)

    setup = epipolar_setup(ob1, ob2)
    poly = hs_polynomial(setup, w1, w2)

    if np.max(np.abs(poly.coeffs)) == 0.0:
        t_best, use_asymptote = 0.0, False
    else:
        roots = real_roots(poly.coeffs)
        candidates = [(float(poly.cost(t)), abs(t), t) for t in roots]
        use_asymptote = False
        if candidates:
            candidates.sort()
            best_cost, _, t_best = candidates[0]
            if poly.asymptote_cost < best_cost:
                use_asymptote = True
        elif np.isfinite(poly.asymptote_cost):
            use_asymptote = True
        else:
            raise NoRealRoot("no real root and no finite asymptote cost")

    if use_asymptote:
        x1p, x2p = _corrected_pair_asymptote(setup)
        t_best = float("inf")
    else:
        x1p, x2p = _corrected_pair(setup, t_best)

    x1h = np.linalg.inv(setup.M1) @ x1p
    x2h = np.linalg.inv(setup.M2) @ x2p
    c1 = _dehomog_image(x1h)
    c2 = _dehomog_image(x2h)

    ob1c = _replace_image_point(ob1, c1)
    ob2c = _replace_image_point(ob2, c2)
    r, H, y = _exact_two_ray_intersection(ob1c, ob2c)
    cov = hs_covariance(ob1, ob2)
    diag = _diagnostics([ob1c, ob2c], H, H @ r - y, r,
                        warnings=("asymptote minimum",) if use_asymptote else ())
    return c1, c2, TriangulationEstimate(r, cov, diag)


def hs_covariance(ob1: LosObservation, ob2: LosObservation) -> np.ndarray:
    """Analytic covariance of the optimal two-view estimate.

    Information form ``[sum_i A_i^T R_u_i^-1 A_i]^-1`` with ``A_i`` the
    pixel-reprojection Jacobian evaluated at the measured geometry (ranges
    from the Law of Sines applied to the measured pair).
    """
    _require_square(ob1)
    _require_square(ob2)
    obs = [ob1, ob2]
    info = np.zeros((3, 3))
    for i, ob in enumerate(obs):
        gamma = lost_gamma(obs, i, 1 - i)
        K = ob.intrinsics.matrix
        xbar = ob.los_camera
        # d u / d r = -(1/gamma) S K (I - xbar k^T) T
        A = -(1.0 / gamma) * PLANE_SELECTOR @ K @ (
            np.eye(3) - np.outer(xbar, BORESIGHT)
        ) @ ob.attitude.matrix
        Ru_inv = np.linalg.inv(ob.pixel_cov.matrix)
        info += A.T @ Ru_inv @ A
    s = np.linalg.svd(info, compute_uv=False)
    if s[-1] < 1e-10 * s[0]:
        raise RankDeficient("two-view information matrix singular")
    P = np.linalg.inv(info)
    return 0.5 * (P + P.T)


# ---------------------------------------------------------------------------
# Shared-attitude (single image) quadratic correction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuatCoeffs:
    """Coefficients of the shared-attitude correction quadratic.

    ``(d, e, f)`` is the camera-frame baseline between the two anchors,
    ``w1``/``w2`` the cost weights, and ``h2 l^2 + h1 l + h0 = 0`` the
    stationarity condition on the Lagrange multiplier ``l``.
    """

    d: float
    e: float
    f: float
    w1: float
    w2: float
    h2: float
    h1: float
    h0: float


def quat_coeffs(x1: ImagePlanePoint, x2: ImagePlanePoint, baseline_cam,
                w1: float, w2: float) -> QuatCoeffs:
    d, e, f = (float(v) for v in baseline_cam)
    xt1, yt1, xt2, yt2 = x1.x, x1.y, x2.x, x2.y
    resid = f * (xt2 * yt1 - xt1 * yt2) + e * (xt1 - xt2) + d * (yt2 - yt1)
    h2 = f * f * w1 * w2 * resid
    h1 = -2.0 * w1 * w2 * (
        f * f * (w1 * xt1 * xt1 + w1 * yt1 * yt1 + w2 * xt2 * xt2 + w2 * yt2 * yt2)
        - 2.0 * f * (d * w1 * xt1 + d * w2 * xt2 + e * w1 * yt1 + e * w2 * yt2)
        + (d * d + e * e) * (w1 + w2)
    )
    # h0 = 4 w1 w2 h2 / f^2; written via resid to stay finite as f -> 0
    h0 = 4.0 * w1 * w2 * w1 * w2 * resid
    return QuatCoeffs(d, e, f, w1, w2, h2, h1, h0)


def quat_corrected(coeffs: QuatCoeffs, x1: ImagePlanePoint, x2: ImagePlanePoint, lam: float):
    """Corrected image-plane pair for a candidate multiplier value."""
    d, e, f, w1, w2 = coeffs.d, coeffs.e, coeffs.f, coeffs.w1, coeffs.w2
    xt1, yt1, xt2, yt2 = x1.x, x1.y, x2.x, x2.y
    D = f * f * lam * lam - 4.0 * w1 * w2
    cx1 = (d * f * lam * lam + 2.0 * w2 * (e - f * yt2) * lam - 4.0 * w1 * w2 * xt1) / D
    cy1 = (e * f * lam * lam + 2.0 * w2 * (f * xt2 - d) * lam - 4.0 * w1 * w2 * yt1) / D
    cx2 = (d * f * lam * lam + 2.0 * w1 * (f * yt1 - e) * lam - 4.0 * w1 * w2 * xt2) / D
    cy2 = (e * f * lam * lam + 2.0 * w1 * (d - f * xt1) * lam - 4.0 * w1 * w2 * yt2) / D
    return ImagePlanePoint(cx1, cy1), ImagePlanePoint(cx2, cy2)


def quat_lambda_limit(coeffs: QuatCoeffs, x1: ImagePlanePoint, x2: ImagePlanePoint) -> float:
    """Closed-form multiplier for a baseline parallel to the image plane (f = 0)."""
    d, e, w1, w2 = coeffs.d, coeffs.e, coeffs.w1, coeffs.w2
    num = 2.0 * w1 * w2 * (e * (x1.x - x2.x) + d * (x2.y - x1.y))
    den = (d * d + e * e) * (w1 + w2)
    return num / den


def quat_triangulate(ob1: LosObservation, ob2: LosObservation,
                     w1: float | None = None, w2: float | None = None):
    """Optimal correction when both points are measured in one image.

    Both observations must share the camera attitude and intrinsics.
    Returns ``(corrected1, corrected2, TriangulationEstimate)``.
    """
    _require_square(ob1)
    _require_square(ob2)
    if np.max(np.abs(ob1.attitude.matrix - ob2.attitude.matrix)) > 1e-12:
        raise ValueError("shared-attitude solver requires identical attitudes")
    if w1 is None:
        w1 = _weight(ob1)
    if w2 is None:
        w2 = _weight(ob2)

    baseline_cam = ob1.attitude.matrix @ (ob2.anchor - ob1.anchor)
    if np.linalg.norm(baseline_cam) == 0.0:
        raise DegenerateBaseline("anchors coincide: baseline (d, e, f) is zero")

    x1, x2 = ob1.image_plane, ob2.image_plane
    coeffs = quat_coeffs(x1, x2, baseline_cam, w1, w2)

    def cost(pair):
        c1, c2 = pair
        return (
            w1 * ((c1.x - x1.x) ** 2 + (c1.y - x1.y) ** 2)
            + w2 * ((c2.x - x2.x) ** 2 + (c2.y - x2.y) ** 2)
        )

    f = coeffs.f
    small_h2 = abs(coeffs.h2) < QUAT_SWITCH_TOL * max(abs(coeffs.h1), abs(coeffs.h0), 1.0)
    if f == 0.0:
        lam_best = quat_lambda_limit(coeffs, x1, x2)
    elif small_h2:
        lam_best = -coeffs.h0 / coeffs.h1
    else:
        disc = coeffs.h1 * coeffs.h1 - 4.0 * coeffs.h2 * coeffs.h0
        if disc < 0:
            raise NoRealRoot("correction quadratic has no real root")
        sq = np.sqrt(disc)
        # numerically stable quadratic roots
        qq = -0.5 * (coeffs.h1 + np.copysign(sq, coeffs.h1))
        lams = [qq / coeffs.h2]
        if qq != 0.0:
            lams.append(coeffs.h0 / qq)
        lam_best = min(lams, key=lambda l: cost(quat_corrected(coeffs, x1, x2, l)))

    c1, c2 = quat_corrected(coeffs, x1, x2, lam_best)
    ob1c = _replace_image_point(ob1, c1)
    ob2c = _replace_image_point(ob2, c2)
    r, H, y = _exact_two_ray_intersection(ob1c, ob2c)
    cov = hs_covariance(ob1, ob2)
    return c1, c2, TriangulationEstimate(r, cov, _diagnostics([ob1c, ob2c], H, H @ r - y, r))


# ---------------------------------------------------------------------------
# LOST: linear n-view MLE
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LostWeights:
    """Per-observation range factors and row weights."""

    gamma: np.ndarray
    q: np.ndarray
    companion: np.ndarray  # index of the paired observation


def lost_gamma(obs, i: int, j: int) -> float:
    """Range-over-norm factor of observation i using companion j.

    Law of Sines on the triangle (position, anchor_i, anchor_j):
    ``gamma_i = |d_ij x ell_j| / |ell_i x ell_j|`` with the unnormalized
    measured LOS vectors rotated into the localization frame.  Noise-free
    this equals ``rho_i / |K^-1 ubar_i|``.
    """
    if i == j:
        raise ValueError("companion must differ from the observation itself")
    ell_i = obs[i].los_localization
    ell_j = obs[j].los_localization
    d = obs[j].anchor - obs[i].anchor
    den = np.linalg.norm(np.cross(ell_i, ell_j))
    num = np.linalg.norm(np.cross(d, ell_j))
    if den < 1e-12 * np.linalg.norm(ell_i) * np.linalg.norm(ell_j):
        raise ParallelRays("companion ray is parallel; range factor undefined")
    return float(num / den)


def lost_weights(obs) -> LostWeights:
    """Cyclic-companion weights ``q_i = 1 / (sigma_x_i * gamma_i)``."""
    n = len(obs)
    companion = np.array([(i + 1) % n for i in range(n)])
    gamma = np.array([lost_gamma(obs, i, int(companion[i])) for i in range(n)])
    sigma = np.array([ob.image_plane_sigma() for ob in obs])
    return LostWeights(gamma, 1.0 / (sigma * gamma), companion)


def lost_rows(obs, weights: LostWeights | None = None):
    """Weighted 2n x 3 stack ``q_i S [xbar_i x] T_i r = q_i S [xbar_i x] T_i p_i``."""
    if weights is None:
        weights = lost_weights(obs)
    blocks, rhs = [], []
    for ob, q in zip(obs, weights.q):
        M = PLANE_SELECTOR @ skew(ob.los_camera) @ ob.attitude.matrix
        blocks.append(q * M)
        rhs.append(q * (M @ ob.anchor))
    return np.vstack(blocks), np.concatenate(rhs)


def lost_triangulate(
    obs, backend: LeastSquaresBackend = LeastSquaresBackend.QRFactorization
) -> TriangulationEstimate:
    """Single-pass optimally weighted linear triangulation."""
    obs = list(obs)
    if len(obs) < 2:
        raise TooFewObservations("need at least two LOS observations")
    for ob in obs:
        _require_square(ob)
        if not ob.pixel_cov.is_isotropic:
            raise NonIsotropicNoise(
                "scalar row weights require isotropic pixel noise; "
                "propagate a general covariance via residual_cov_pseudoinverse"
            )
    w = lost_weights(obs)
    H, y = lost_rows(obs, w)
    r = solve_stacked(H, y, backend)
    cov = lost_covariance(obs, w)
    return TriangulationEstimate(r, cov, _diagnostics(obs, H, H @ r - y, r))


def lost_covariance(obs, weights: LostWeights | None = None) -> np.ndarray:
    """Analytic covariance: inverse of the weighted-row information matrix.

    ``P = [sum_i q_i^2 (S [xbar_i x] T_i)^T (S [xbar_i x] T_i)]^-1``; the
    weighted rows have unit residual covariance, so no sandwich is needed.
    """
    obs = list(obs)
    if weights is None:
        weights = lost_weights(obs)
    info = np.zeros((3, 3))
    for ob, q in zip(obs, weights.q):
        M = PLANE_SELECTOR @ skew(ob.los_camera) @ ob.attitude.matrix
        info += (q * q) * (M.T @ M)
    s = np.linalg.svd(info, compute_uv=False)
    if s[-1] < 1e-10 * s[0]:
        raise RankDeficient("information matrix singular (degenerate geometry)")
    P = np.linalg.inv(info)
    return 0.5 * (P + P.T)


def residual_cov_pseudoinverse(x_meas: ImagePlanePoint, R_xbar, gamma: float) -> np.ndarray:
    """Moore-Penrose pseudoinverse of the cross-product residual covariance.

    The residual of one unweighted row triple has covariance
    ``R_eps = -gamma^2 [xbar x] R_xbar [xbar x]`` (rank 2, null space along
    ``xbar``).  For isotropic in-plane noise the pseudoinverse has the
    closed form ``(1 / (sigma^2 gamma^2 |xbar|^4)) [xbar x]^2 S^T S [xbar x]^2``;
    otherwise an SVD pseudoinverse is used.
    """
    R_xbar = np.asarray(R_xbar, dtype=float)
    xbar = x_meas.homogeneous
    iso_sigma2 = R_xbar[0, 0]
    isotropic = (
        abs(R_xbar[0, 0] - R_xbar[1, 1]) <= 1e-12 * max(abs(iso_sigma2), 1e-300)
        and abs(R_xbar[0, 1]) <= 1e-12 * max(abs(iso_sigma2), 1e-300)
        and np.max(np.abs(R_xbar[2, :])) == 0.0
        and np.max(np.abs(R_xbar[:, 2])) == 0.0
    )
    if isotropic and iso_sigma2 > 0.0:
        n2 = float(xbar @ xbar)
        sk2 = skew(xbar) @ skew(xbar)
        core = sk2 @ (PLANE_SELECTOR.T @ PLANE_SELECTOR) @ sk2
        return core / (iso_sigma2 * gamma * gamma * n2 * n2)
    R_eps = -(gamma * gamma) * (skew(xbar) @ R_xbar @ skew(xbar))
    return np.linalg.pinv(R_eps, rcond=1e-12)
