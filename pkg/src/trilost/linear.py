"""Trigonometric (suboptimal) triangulation: cross-product linear solvers in
three equivalent formulations, the explicit-range solver, and their analytic
covariances.

All solvers consume ``LosObservation`` lists and return
``TriangulationEstimate``.  The measurement model is
``xbar_i ~ T_i (p_i - r)`` (homogeneous); ranges reported in diagnostics are
``rho_i = a_i . (p_i - rhat)``, positive when the anchor sits down-range of
the solved position.  For intersection-style datasets (cameras as anchors
observing the solved point) ranges come out negative; that is chirality, not
failure, and is reported rather than raised.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from itertools import combinations

import numpy as np

from .camera import LosObservation, image_plane_covariance
from .errors import RankDeficient, TooFewObservations, WrongArity
from .geometry import (
    LeastSquaresBackend,
    dehomogenize,
    null_direction,
    skew,
    solve_stacked,
    stack_condition_number,
)


class LosNormalization(Enum):
    """Row scaling of the cross-product stack.

    ImagePlane keeps the raw K^-1 ubar rows (each row's noise scales with
    that observation's range-over-norm factor); UnitVector rescales every
    LOS to unit length, which weights observations differently.  The two are
    estimators with different (both suboptimal) weightings.
    """

    ImagePlane = "image-plane"
    UnitVector = "unit-vector"


@dataclass(frozen=True)
class SolveDiagnostics:
    """Numerical context for a triangulation solve."""

    condition_number: float
    residual_norm: float
    ranges: tuple
    negative_range_flags: tuple
    warnings: tuple = ()


@dataclass(frozen=True)
class TriangulationEstimate:
    """Position estimate, its 3x3 covariance (when available), diagnostics."""

    position: np.ndarray
    covariance: np.ndarray | None
    diagnostics: SolveDiagnostics


def _los_vectors(obs, norm: LosNormalization):
    """Per-observation LOS 3-vectors in the camera frame, per normalization."""
    out = []
    for ob in obs:
        ell = ob.los_camera
        if norm is LosNormalization.UnitVector:
            ell = ell / np.linalg.norm(ell)
        out.append(ell)
    return out


def _ranges(obs, position):
    """Signed range of each anchor along the measured unit LOS from ``position``."""
    rho = []
    for ob in obs:
        a = ob.unit_los_localization
        rho.append(float(a @ (ob.anchor - position)))
    return tuple(rho)


def _diagnostics(obs, H, residual, position, warnings=()):
    rho = _ranges(obs, position)
    return SolveDiagnostics(
        condition_number=stack_condition_number(H),
        residual_norm=float(np.linalg.norm(residual)),
        ranges=rho,
        negative_range_flags=tuple(r < 0 for r in rho),
        warnings=tuple(warnings),
    )


def dlt_system(obs, norm: LosNormalization = LosNormalization.ImagePlane):
    """Build the stacked 3n x 3 cross-product system ``H r = y``.

    Each observation contributes the block ``[ell x] T_i`` with right-hand
    side ``[ell x] T_i p_i``; at the true position every block annihilates
    ``T_i (p_i - r)`` because the measured LOS is parallel to it.
    """
    blocks, rhs = [], []
    for ob, ell in zip(obs, _los_vectors(obs, norm)):
        Hi = skew(ell) @ ob.attitude.matrix
        blocks.append(Hi)
        rhs.append(Hi @ ob.anchor)
    return np.vstack(blocks), np.concatenate(rhs)


def dlt_triangulate(
    obs,
    norm: LosNormalization = LosNormalization.ImagePlane,
    backend: LeastSquaresBackend = LeastSquaresBackend.QRFactorization,
    with_covariance: bool = True,
) -> TriangulationEstimate:
    """Cross-product linear triangulation over n >= 2 observations."""
    obs = list(obs)
    if len(obs) < 2:
        raise TooFewObservations("need at least two LOS observations")
    H, y = dlt_system(obs, norm)
    r = solve_stacked(H, y, backend)
    cov = dlt_covariance(obs, norm) if with_covariance else None
    return TriangulationEstimate(r, cov, _diagnostics(obs, H, H @ r - y, r))


def dlt_covariance(obs, norm: LosNormalization = LosNormalization.ImagePlane) -> np.ndarray:
    """First-order covariance of the cross-product solution.

    Sandwich form ``(H^T H)^-1 (sum_i H_i^T R_eps_i H_i) (H^T H)^-1`` where
    the residual covariance of block i is
    ``R_eps_i = -gamma_i^2 [ell_i x] R_ell_i [ell_i x]`` evaluated at the
    measured LOS; ``gamma_i`` is the range-over-norm factor.
    """
    obs = list(obs)
    if len(obs) < 2:
        raise TooFewObservations("need at least two LOS observations")
    H, y = dlt_system(obs, norm)
    HtH = H.T @ H
    s = np.linalg.svd(H, compute_uv=False)
    if s[-1] < 1e-10 * s[0]:
        raise RankDeficient("covariance undefined: stacked system rank deficient")
    # Ranges from the solve itself (first-order evaluation at measurements).
    r = solve_stacked(H, y, LeastSquaresBackend.QRFactorization)
    middle = np.zeros((3, 3))
    for ob in obs:
        xbar = ob.los_camera
        nrm = np.linalg.norm(xbar)
        gamma = float(ob.unit_los_localization @ (ob.anchor - r)) / nrm
        R_x = image_plane_covariance(ob.intrinsics, ob.pixel_cov)
        ell = xbar
        R_ell = R_x
        if norm is LosNormalization.UnitVector:
            ell = xbar / nrm
            R_ell = R_x / (nrm * nrm)
            gamma = gamma * nrm  # rho replaces gamma when rows are unit-normalized
        Hi = skew(ell) @ ob.attitude.matrix
        R_eps = -(gamma * gamma) * (skew(ell) @ R_ell @ skew(ell))
        middle += Hi.T @ R_eps @ Hi
    HtH_inv = np.linalg.inv(HtH)
    P = HtH_inv @ middle @ HtH_inv
    return 0.5 * (P + P.T)


def plucker_matrix_dual(ell, p) -> np.ndarray:
    """Dual line matrix of the line through ``p`` with direction ``ell``.

    A homogeneous point ``rbar`` lies on the line iff the product with this
    matrix vanishes; its first three rows are exactly the cross-product
    triangulation rows and the fourth is the coplanarity row
    ``(ell x p) . r = 0``.
    """
    ell = np.asarray(ell, dtype=float)
    p = np.asarray(p, dtype=float)
    m = np.cross(ell, p)
    L = np.zeros((4, 4))
    L[:3, :3] = skew(ell)
    L[:3, 3] = np.cross(p, ell)
    L[3, :3] = m
    return L


def plucker_triangulate(obs) -> TriangulationEstimate:
    """Null-space triangulation over the stacked 4n x 4 dual line matrices."""
    obs = list(obs)
    if len(obs) < 2:
        raise TooFewObservations("need at least two LOS observations")
    blocks = []
    for ob in obs:
        ell_loc = ob.los_localization
        blocks.append(plucker_matrix_dual(ell_loc, ob.anchor))
    A = np.vstack(blocks)
    v = null_direction(A)
    if abs(v[3]) < 1e-10:
        raise RankDeficient("null direction is a point at infinity (parallel rays)")
    r = dehomogenize(v)
    cov = dlt_covariance(obs, LosNormalization.ImagePlane)
    return TriangulationEstimate(r, cov, _diagnostics(obs, A, A @ v, r))


def collinearity_rows(ob: LosObservation):
    """The two independent rows of one observation's cross-product block.

    Returns ``(S [xbar x] T, S [xbar x] T p)`` — the classical two-equation
    per-image form; the dropped third row is a linear combination of these.
    """
    xbar = ob.los_camera
    M = skew(xbar) @ ob.attitude.matrix
    return M[:2, :], M[:2, :] @ ob.anchor


def collinearity_triangulate(
    obs, backend: LeastSquaresBackend = LeastSquaresBackend.QRFactorization
) -> TriangulationEstimate:
    """Triangulation from the stacked 2n x 3 collinearity rows."""
    obs = list(obs)
    if len(obs) < 2:
        raise TooFewObservations("need at least two LOS observations")
    blocks, rhs = [], []
    for ob in obs:
        A, b = collinearity_rows(ob)
        blocks.append(A)
        rhs.append(b)
    H = np.vstack(blocks)
    y = np.concatenate(rhs)
    r = solve_stacked(H, y, backend)
    cov = dlt_covariance(obs, LosNormalization.ImagePlane)
    return TriangulationEstimate(r, cov, _diagnostics(obs, H, H @ r - y, r))


#: Observation count beyond which the pairwise range stack is flagged as
#: quadratically large (2 * C(n, 2) rows).
EXPLICIT_RANGE_WARN_N = 50


def explicit_range_system(obs):
    """Pairwise range equations: 2 * C(n, 2) rows over the n unknown ranges.

    For each ordered pair (i, j), projecting ``rho_j a_j - rho_i a_i = d_ij``
    onto ``a_i`` and ``a_j`` gives two scalar equations (the Law of Cosines
    written out componentwise).
    """
    n = len(obs)
    units = [ob.unit_los_localization for ob in obs]
    anchors = [ob.anchor for ob in obs]
    rows, rhs = [], []
    for i, j in combinations(range(n), 2):
        d = anchors[j] - anchors[i]
        c = float(units[i] @ units[j])
        row = np.zeros(n)
        row[i], row[j] = -1.0, c
        rows.append(row)
        rhs.append(float(units[i] @ d))
        row = np.zeros(n)
        row[i], row[j] = -c, 1.0
        rows.append(row)
        rhs.append(float(units[j] @ d))
    return np.vstack(rows), np.array(rhs)


def explicit_range_triangulate(
    obs, backend: LeastSquaresBackend = LeastSquaresBackend.QRFactorization
) -> TriangulationEstimate:
    """Solve for all ranges, then average the implied positions.

    The position is ``mean_i (p_i - rho_i a_i)``.  For n = 2 this estimator
    is algebraically identical to the unit-vector cross-product solution.
    """
    obs = list(obs)
    n = len(obs)
    if n < 2:
        raise TooFewObservations("need at least two LOS observations")
    warnings = ()
    if n > EXPLICIT_RANGE_WARN_N:
        warnings = (
            f"pairwise range stack has {n * (n - 1)} rows for n = {n}; "
            "row count grows quadratically",
        )
    G, h = explicit_range_system(obs)
    rho = solve_stacked(G, h, backend)
    units = [ob.unit_los_localization for ob in obs]
    r = np.mean([ob.anchor - rho_i * a for ob, rho_i, a in zip(obs, rho, units)], axis=0)
    cov = explicit_range_covariance_n2(obs) if n == 2 else None
    diag = SolveDiagnostics(
        condition_number=stack_condition_number(G),
        residual_norm=float(np.linalg.norm(G @ rho - h)),
        ranges=tuple(float(x) for x in rho),
        negative_range_flags=tuple(float(x) < 0 for x in rho),
        warnings=warnings,
    )
    return TriangulationEstimate(r, cov, diag)


def explicit_range_covariance_n2(obs) -> np.ndarray:
    """First-order covariance of the two-observation range solver.

    Chain: image-plane noise -> unit-vector perturbations (block diagonal
    D), -> range perturbations through the inverse of the 2x2 range system
    (C), -> position through the averaging step, giving
    ``P = (1/4) (A C + B) D R D^T (A C + B)^T``.
    """
    obs = list(obs)
    if len(obs) != 2:
        raise WrongArity("closed-form range covariance is defined for exactly 2 observations")
    a1, a2 = (ob.unit_los_localization for ob in obs)
    d = obs[1].anchor - obs[0].anchor
    c = float(a1 @ a2)
    if abs(c * c - 1.0) < 1e-14:
        raise RankDeficient("parallel rays: range system singular")
    G, h = explicit_range_system(obs)
    rho = np.linalg.solve(G, h)
    r1, r2 = float(rho[0]), float(rho[1])

    A = np.column_stack([a1, a2])                    # 3x2
    B = np.hstack([r1 * np.eye(3), r2 * np.eye(3)])  # 3x6
    Ginv = np.array([[1.0, -c], [c, -1.0]]) / (c * c - 1.0)
    N = np.vstack(
        [
            np.concatenate([d - r2 * a2, -r2 * a1]),
            np.concatenate([r1 * a2, d + r1 * a1]),
        ]
    )                                                # 2x6
    C = Ginv @ N

    D = np.zeros((6, 6))
    R = np.zeros((6, 6))
    for k, ob in enumerate(obs):
        xbar = ob.los_camera
        nrm = np.linalg.norm(xbar)
        a_cam = xbar / nrm
        # d a_loc / d xbar = T^T (I - a a^T) / |xbar|
        Dk = ob.attitude.matrix.T @ (np.eye(3) - np.outer(a_cam, a_cam)) / nrm
        D[3 * k : 3 * k + 3, 3 * k : 3 * k + 3] = Dk
        R[3 * k : 3 * k + 3, 3 * k : 3 * k + 3] = image_plane_covariance(
            ob.intrinsics, ob.pixel_cov
        )
    M = (A @ C + B) @ D
    P = 0.25 * M @ R @ M.T
    return 0.5 * (P + P.T)


def law_of_cosines_residual(rho_i: float, rho_j: float, obs_i: LosObservation,
                            obs_j: LosObservation):
    """Residuals of the two pairwise range equations for candidate ranges.

    Both vanish at the true ranges; the first is linear in ``rho_i`` with
    slope -1 and in ``rho_j`` with slope ``a_i . a_j``.
    """
    a_i = obs_i.unit_los_localization
    a_j = obs_j.unit_los_localization
    d = obs_j.anchor - obs_i.anchor
    c = float(a_i @ a_j)
    res1 = rho_j * c - rho_i - float(a_i @ d)
    res2 = rho_j - rho_i * c - float(a_j @ d)
    return res1, res2
