"""Frame-aware vector/matrix primitives shared by all solvers.

Conventions used throughout the package:

* ``Vec3`` / ``HomVec4`` are plain float ndarrays of shape (3,) / (4,).
  A homogeneous 4-vector dehomogenizes to ``h[:3] / h[3]``.
* ``Rotation`` wraps a proper-orthonormal 3x3 matrix ``T`` that maps
  localization-frame vectors into camera-frame vectors.
* All operations are pure; every type is immutable after construction, so
  everything here is safe to call from parallel Monte Carlo workers.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import AmbiguousNullSpace, RankDeficient

# Type aliases: everything is a plain ndarray, the names document intent.
Vec3 = np.ndarray
HomVec4 = np.ndarray
Skew3 = np.ndarray

#: Relative singular-value threshold below which a stacked system is
#: treated as rank deficient.  Overridable per call for ill-scaled problems.
RANK_TOL = 1e-10


class LeastSquaresBackend(Enum):
    """How overdetermined stacks are solved."""

    NormalEquations = "normal"
    QRFactorization = "qr"
    TotalLeastSquaresSVD = "tls"


class Rotation:
    """A proper-orthonormal frame transform (localization -> camera).

    The matrix is validated on construction: ``T @ T.T = I`` and
    ``det(T) = +1`` within ``tol``.  The wrapped array is set read-only.
    """

    __slots__ = ("matrix",)

    def __init__(self, matrix, tol: float = 1e-9):
        m = np.asarray(matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got {m.shape}")
        err = np.max(np.abs(m @ m.T - np.eye(3)))
        if err > tol:
            raise ValueError(f"matrix is not orthonormal (|T T^T - I| = {err:.3e})")
        det = np.linalg.det(m)
        if abs(det - 1.0) > max(tol, 1e-9):
            raise ValueError(f"matrix is not a proper rotation (det = {det:.12f})")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    def __setattr__(self, name, value):  # immutability guard
        raise AttributeError("Rotation is immutable")

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3))

    @classmethod
    def from_quaternion(cls, q) -> "Rotation":
        """Build from a scalar-last Hamilton quaternion (x, y, z, w).

        The quaternion is normalized first; the resulting matrix is used
        directly as the localization->camera transform.
        """
        q = np.asarray(q, dtype=float)
        if q.shape != (4,):
            raise ValueError("quaternion must have four components (x, y, z, w)")
        n = np.linalg.norm(q)
        if n == 0.0:
            raise ValueError("zero quaternion")
        x, y, z, w = q / n
        m = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ]
        )
        return cls(m)

    def compose(self, other: "Rotation") -> "Rotation":
        """Return the rotation applying ``other`` first, then ``self``."""
        return Rotation(self.matrix @ other.matrix)

    def inverse(self) -> "Rotation":
        return Rotation(self.matrix.T)

    def apply(self, v) -> Vec3:
        """Map a localization-frame vector into the camera frame."""
        return self.matrix @ np.asarray(v, dtype=float)

    def apply_inverse(self, v) -> Vec3:
        """Map a camera-frame vector back into the localization frame."""
        return self.matrix.T @ np.asarray(v, dtype=float)

    def __repr__(self):
        return f"Rotation({self.matrix.tolist()})"


def skew(v) -> Skew3:
    """Skew-symmetric cross-product matrix: ``skew(v) @ w == cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def dehomogenize(h) -> Vec3:
    """Convert a homogeneous 4-vector to a 3-vector (defined for h[3] != 0)."""
    h = np.asarray(h, dtype=float)
    if h.shape != (4,):
        raise ValueError("expected a 4-vector")
    if h[3] == 0.0:
        raise RankDeficient("cannot dehomogenize a point at infinity (h[3] = 0)")
    return h[:3] / h[3]


def solve_stacked(A, b, backend: LeastSquaresBackend = LeastSquaresBackend.QRFactorization,
                  rank_tol: float = RANK_TOL):
    """Solve the overdetermined stack ``A x ~= b`` in the requested sense.

    Returns the minimizer of ``|A x - b|_2`` (for the TLS backend, of the
    total-least-squares criterion over ``[A | b]``).

    Raises:
        RankDeficient: smallest singular value of ``A`` is below
            ``rank_tol`` times the largest.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if m < n:
        raise ValueError(f"stack has fewer rows ({m}) than unknowns ({n})")

    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] < rank_tol * s[0] or s[0] == 0.0:
        raise RankDeficient(
            f"stacked system is rank deficient (singular values {s[0]:.3e} .. {s[-1]:.3e})"
        )

    if backend is LeastSquaresBackend.NormalEquations:
        return np.linalg.solve(A.T @ A, A.T @ b)
    if backend is LeastSquaresBackend.QRFactorization:
        q, r = np.linalg.qr(A)
        return np.linalg.solve(r, q.T @ b)
    if backend is LeastSquaresBackend.TotalLeastSquaresSVD:
        # Right singular vector of [A | b] for the smallest singular value.
        stacked = np.column_stack([A, b])
        _, _, vt = np.linalg.svd(stacked)
        v = vt[-1]
        if abs(v[n]) < 1e-14:
            raise RankDeficient("total least squares solution at infinity")
        return -v[:n] / v[n]
    raise ValueError(f"unknown backend {backend!r}")


def stack_condition_number(A) -> float:
    """2-norm condition number of a stack (inf when singular)."""
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    return float(s[0] / s[-1]) if s[-1] > 0 else float("inf")


def null_direction(A, ambiguity_tol: float = 1e-10) -> HomVec4:
    """Unit right singular vector of the smallest singular value of ``A``.

    The sign is fixed so the fourth component is >= 0 (falling back to the
    largest-magnitude component when the fourth is zero), which makes the
    result deterministic across LAPACK implementations.

    Raises:
        AmbiguousNullSpace: the two smallest singular values agree to within
            ``ambiguity_tol`` relative to the largest, so "the" null
            direction is not unique.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[1] != 4:
        raise ValueError("expected an m x 4 matrix")
    if A.shape[0] < 3:
        raise ValueError("need at least 3 rows to pin down a null direction")

    _, s, vt = np.linalg.svd(A)
    scale = s[0] if s[0] > 0 else 1.0
    if (s[-2] - s[-1]) < ambiguity_tol * scale:
        raise AmbiguousNullSpace(
            f"two smallest singular values nearly equal ({s[-2]:.6e} vs {s[-1]:.6e})"
        )
    v = vt[-1]
    if v[3] < 0:
        v = -v
    elif v[3] == 0.0:
        lead = np.argmax(np.abs(v))
        if v[lead] < 0:
            v = -v
    return v
