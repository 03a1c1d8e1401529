"""Pinhole camera model: pixel <-> image-plane <-> LOS conversions and the
measurement-noise covariance models.

Measurement convention: a camera with attitude ``T`` (localization->camera)
at position ``r`` observing a known point ``p`` measures the homogeneous
image-plane point ``xbar = v / v_z`` with ``v = T (p - r)``; pixels are
``ubar = K xbar``.  Pixel noise is zero-mean Gaussian with covariance
``R_u``; it maps into the image plane as ``K^-1 S^T nu``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonIsotropicNoise, NotUnit
from .geometry import Rotation, Vec3, skew

#: Boresight selector k = (0, 0, 1): picks the z (optical-axis) component.
BORESIGHT = np.array([0.0, 0.0, 1.0])

#: Selector S = [I2 | 0]: picks the in-plane components of a 3-vector.
PLANE_SELECTOR = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class CameraIntrinsics:
    """Calibration parameters of the affine pixel map.

    ``dx``/``dy`` are pixels per unit image-plane length, ``alpha`` is the
    skew term (pixels), ``(up, vp)`` the principal point (pixels):

        K = [[dx, alpha, up],
             [ 0,    dy, vp],
             [ 0,     0,  1]]
    """

    dx: float
    dy: float
    alpha: float = 0.0
    up: float = 0.0
    vp: float = 0.0

    def __post_init__(self):
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError("dx and dy must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.dx, self.alpha, self.up], [0.0, self.dy, self.vp], [0.0, 0.0, 1.0]]
        )

    @property
    def inverse_matrix(self) -> np.ndarray:
        """Closed-form inverse of the upper-triangular calibration matrix."""
        dx, dy, a, up, vp = self.dx, self.dy, self.alpha, self.up, self.vp
        return np.array(
            [
                [1.0 / dx, -a / (dx * dy), (a * vp - dy * up) / (dx * dy)],
                [0.0, 1.0 / dy, -vp / dy],
                [0.0, 0.0, 1.0],
            ]
        )

    @property
    def is_square(self) -> bool:
        """True when pixels are square and unskewed (dx == dy, alpha == 0)."""
        return self.alpha == 0.0 and abs(self.dx - self.dy) <= 1e-12 * self.dx

    def image_plane_sigma(self, sigma_u: float) -> float:
        """Convert an isotropic pixel sigma to an image-plane sigma.

        Only meaningful for square, unskewed pixels; the statistically
        optimal solvers require that, so reject anything else loudly.
        """
        if not self.is_square:
            raise NonIsotropicNoise(
                "sigma conversion requires square pixels (dx == dy, alpha == 0)"
            )
        return sigma_u / self.dx


@dataclass(frozen=True)
class PixelPoint:
    """A detector coordinate (u, v) in pixels."""

    u: float
    v: float

    @property
    def homogeneous(self) -> np.ndarray:
        return np.array([self.u, self.v, 1.0])


@dataclass(frozen=True)
class ImagePlanePoint:
    """A point on the camera's z = 1 plane (dimensionless x, y)."""

    x: float
    y: float

    @property
    def homogeneous(self) -> np.ndarray:
        return np.array([self.x, self.y, 1.0])

    @property
    def norm(self) -> float:
        """Norm of the homogeneous vector, |xbar| = sqrt(x^2 + y^2 + 1)."""
        return math.sqrt(self.x * self.x + self.y * self.y + 1.0)


class PixelCovariance:
    """2x2 symmetric positive-definite pixel-noise covariance (pixels^2)."""

    __slots__ = ("matrix",)

    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=float)
        if m.shape != (2, 2):
            raise ValueError("pixel covariance must be 2x2")
        if np.max(np.abs(m - m.T)) > 1e-14 * max(1.0, np.max(np.abs(m))):
            raise ValueError("pixel covariance must be symmetric")
        eigvals = np.linalg.eigvalsh(0.5 * (m + m.T))
        if eigvals[0] <= 0:
            raise ValueError("pixel covariance must be positive definite")
        m = 0.5 * (m + m.T)
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    def __setattr__(self, name, value):
        raise AttributeError("PixelCovariance is immutable")

    @classmethod
    def isotropic(cls, sigma_u: float) -> "PixelCovariance":
        if sigma_u <= 0:
            raise ValueError("sigma_u must be positive")
        return cls(sigma_u * sigma_u * np.eye(2))

    @property
    def is_isotropic(self) -> bool:
        m = self.matrix
        return (
            abs(m[0, 1]) <= 1e-12 * max(m[0, 0], m[1, 1])
            and abs(m[0, 0] - m[1, 1]) <= 1e-9 * max(m[0, 0], m[1, 1])
        )

    @property
    def sigma_u(self) -> float:
        """Isotropic pixel sigma; raises when the covariance is not isotropic."""
        if not self.is_isotropic:
            raise NonIsotropicNoise("pixel covariance is not isotropic")
        return math.sqrt(self.matrix[0, 0])

    def __repr__(self):
        return f"PixelCovariance({self.matrix.tolist()})"


@dataclass(frozen=True)
class LosObservation:
    """One pixel measurement with everything needed to use it.

    Fields:
        pixel: measured detector coordinate.
        intrinsics: calibration of the measuring camera.
        attitude: localization->camera transform at measurement time.
        anchor: the known point (localization frame) this LOS connects to —
            the observed landmark in resection, the camera position in
            intersection; the triangulation algebra is identical.
        pixel_cov: pixel-noise covariance.
    """

    pixel: PixelPoint
    intrinsics: CameraIntrinsics
    attitude: Rotation
    anchor: np.ndarray
    pixel_cov: PixelCovariance = field(default_factory=lambda: PixelCovariance.isotropic(1.0))

    def __post_init__(self):
        a = np.asarray(self.anchor, dtype=float)
        if a.shape != (3,) or not np.all(np.isfinite(a)):
            raise ValueError("anchor must be a finite 3-vector")
        a = a.copy()
        a.flags.writeable = False
        object.__setattr__(self, "anchor", a)

    @property
    def image_plane(self) -> ImagePlanePoint:
        return pixel_to_image_plane(self.intrinsics, self.pixel)

    @property
    def los_camera(self) -> np.ndarray:
        """Homogeneous measured LOS in the camera frame, xbar = K^-1 ubar."""
        return self.image_plane.homogeneous

    @property
    def los_localization(self) -> np.ndarray:
        """Unnormalized measured LOS rotated into the localization frame."""
        return self.attitude.matrix.T @ self.los_camera

    @property
    def unit_los_localization(self) -> np.ndarray:
        v = self.los_localization
        return v / np.linalg.norm(v)

    def image_plane_sigma(self) -> float:
        """Isotropic image-plane noise sigma of this observation."""
        return self.intrinsics.image_plane_sigma(self.pixel_cov.sigma_u)


def pixel_to_image_plane(K: CameraIntrinsics, u: PixelPoint) -> ImagePlanePoint:
    """Apply the analytic K^-1 to a pixel; third component is exactly 1."""
    x = (u.u - K.up) / K.dx - K.alpha * (u.v - K.vp) / (K.dx * K.dy)
    y = (u.v - K.vp) / K.dy
    return ImagePlanePoint(x, y)


def image_plane_to_pixel(K: CameraIntrinsics, x: ImagePlanePoint) -> PixelPoint:
    """Forward map, ubar = K xbar."""
    u = K.dx * x.x + K.alpha * x.y + K.up
    v = K.dy * x.y + K.vp
    return PixelPoint(u, v)


def image_plane_to_unit_vector(x: ImagePlanePoint) -> Vec3:
    """Unit LOS vector a = xbar / |xbar| (camera frame, positive z)."""
    h = x.homogeneous
    return h / np.linalg.norm(h)


def qmm_covariance(a, sigma_theta: float) -> np.ndarray:
    """Isotropic rank-2 unit-vector covariance sigma^2 (I - a a^T).

    Raises:
        NotUnit: when |a| deviates from 1 by more than 1e-9.
    """
    a = np.asarray(a, dtype=float)
    if abs(np.linalg.norm(a) - 1.0) > 1e-9:
        raise NotUnit(f"direction must be unit (|a| = {np.linalg.norm(a):.12f})")
    return sigma_theta * sigma_theta * (np.eye(3) - np.outer(a, a))


def image_plane_covariance(K: CameraIntrinsics, R_u: PixelCovariance) -> np.ndarray:
    """Map pixel noise into the image plane: R_xbar = K^-1 S^T R_u S K^-T.

    The third row and column are identically zero (the homogeneous
    component carries no noise).
    """
    Kinv = K.inverse_matrix
    lifted = PLANE_SELECTOR.T @ R_u.matrix @ PLANE_SELECTOR
    R = Kinv @ lifted @ Kinv.T
    R[2, :] = 0.0
    R[:, 2] = 0.0
    return R


def unit_vector_covariance(x: ImagePlanePoint, R_x) -> np.ndarray:
    """First-order covariance of the unit vector a(xbar).

    Uses the Jacobian J = (-1/|xbar|) [a x]^2 S^T applied to the 2x2
    in-plane covariance ``R_x``; the result has rank <= 2 with ``a`` in its
    null space.
    """
    R_x = np.asarray(R_x, dtype=float)
    if R_x.shape != (2, 2):
        raise ValueError("R_x must be the 2x2 in-plane covariance")
    a = image_plane_to_unit_vector(x)
    J = (-1.0 / x.norm) * (skew(a) @ skew(a)) @ PLANE_SELECTOR.T
    return J @ R_x @ J.T


def qmm_dominates(x: ImagePlanePoint, sigma: float) -> bool:
    """Is the isotropic cone model conservative for this measurement?

    Compares sigma^2 (I - a a^T) against the exact first-order unit-vector
    covariance for in-plane noise sigma^2 I2 (the two agree at boresight).
    True when the difference is PSD (eigenvalues >= -1e-12).
    """
    a = image_plane_to_unit_vector(x)
    R_qmm = qmm_covariance(a, sigma)
    R_a = unit_vector_covariance(x, sigma * sigma * np.eye(2))
    diff = R_qmm - R_a
    return bool(np.linalg.eigvalsh(0.5 * (diff + diff.T))[0] >= -1e-12)


def fov_to_dx(fov_deg: float, n_pixels: int) -> float:
    """Focal scale (pixels per unit image-plane length) for a given FOV.

    Convention: ``dx = (n_pixels / 2) / tan(fov / 2)`` with the principal
    point at the detector center.
    """
    if not (0.0 < fov_deg < 180.0):
        raise ValueError("FOV must lie in (0, 180) degrees")
    return (n_pixels / 2.0) / math.tan(math.radians(fov_deg) / 2.0)


def camera_from_fov(fov_deg: float, n_pixels: int) -> CameraIntrinsics:
    """Square-pixel camera with the detector-center principal point."""
    d = fov_to_dx(fov_deg, n_pixels)
    half = n_pixels / 2.0
    return CameraIntrinsics(dx=d, dy=d, alpha=0.0, up=half, vp=half)
