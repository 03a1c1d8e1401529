"""Triangulation of a moving observer under known linear dynamics.

Each LOS observation at time ``t_i`` constrains the initial state through
the position rows of the state transition matrix:

    [ell_i x] Phi_r(t_i) xi0 = [ell_i x] (p_i - dr_i)

with ``p_i`` the effective target point and ``dr_i`` a known camera mounting
offset; stacking gives a 3n x 6 system for ``xi0 = (r0, v0)``.

When the system is homogeneous (all effective targets at the origin) the
solution family is a uniform scaling of the true trajectory and the solve
raises ``Unobservable``; a known target offset breaks the scaling family and
restores a unique solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import LosObservation, image_plane_covariance
from .errors import Unobservable
from .geometry import skew

#: Relative singular-value threshold for "near-zero" in observability tests.
OBSERVABILITY_TOL = 1e-8


class StmProvider:
    """Contract for state-transition-matrix sources.

    Implementations must be pure and reentrant: ``stm(t)`` returns the 6x6
    matrix advancing the state from the epoch to ``t`` (seconds), with
    ``stm(0) = I``.  ``position_rows(t)`` returns its first three rows.
    """

    def stm(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def position_rows(self, t: float) -> np.ndarray:
        return self.stm(t)[:3, :]


@dataclass(frozen=True)
class CwStm(StmProvider):
    """Closed-form rendezvous (Clohessy-Wiltshire) state transition matrix.

    Frame: x radial, y along-track, z cross-track; ``n_mm`` is the chief's
    mean motion in rad/s.
    """

    n_mm: float

    def __post_init__(self):
        if not self.n_mm > 0:
            raise ValueError("mean motion must be positive")

    def stm(self, t: float) -> np.ndarray:
        return cw_stm(t, self.n_mm)


@dataclass(frozen=True)
class DoubleIntegratorStm(StmProvider):
    """Force-free straight-line dynamics: r(t) = r0 + v0 t."""

    def stm(self, t: float) -> np.ndarray:
        phi = np.eye(6)
        phi[:3, 3:] = t * np.eye(3)
        return phi


@dataclass(frozen=True)
class StaticStm(StmProvider):
    """Degenerate provider for a stationary observer: Phi_r = [I | 0]."""

    def stm(self, t: float) -> np.ndarray:
        return np.eye(6)

    def position_rows(self, t: float) -> np.ndarray:
        return np.hstack([np.eye(3), np.zeros((3, 3))])


def cw_stm(t: float, n_mm: float) -> np.ndarray:
    """Closed-form relative-motion STM for a circular-orbit chief.

    Satisfies the linearized relative equations of motion
    ``x'' = 3 n^2 x + 2 n y'``, ``y'' = -2 n x'``, ``z'' = -n^2 z``.
    """
    if not n_mm > 0:
        raise ValueError("mean motion must be positive")
    n = n_mm
    nt = n * t
    c, s = np.cos(nt), np.sin(nt)
    phi_rr = np.array(
        [[4.0 - 3.0 * c, 0.0, 0.0], [6.0 * (s - nt), 1.0, 0.0], [0.0, 0.0, c]]
    )
    phi_rv = np.array(
        [
            [s / n, 2.0 * (1.0 - c) / n, 0.0],
            [2.0 * (c - 1.0) / n, (4.0 * s - 3.0 * nt) / n, 0.0],
            [0.0, 0.0, s / n],
        ]
    )
    phi_vr = np.array(
        [[3.0 * n * s, 0.0, 0.0], [6.0 * n * (c - 1.0), 0.0, 0.0], [0.0, 0.0, -n * s]]
    )
    phi_vv = np.array(
        [[c, 2.0 * s, 0.0], [-2.0 * s, 4.0 * c - 3.0, 0.0], [0.0, 0.0, c]]
    )
    return np.block([[phi_rr, phi_rv], [phi_vr, phi_vv]])


@dataclass(frozen=True)
class DynamicObservation:
    """A LOS observation tagged with its epoch and known offsets.

    ``camera_offset`` is the camera's known displacement from the propagated
    state; ``target_offset`` is a known displacement of the observed point
    from ``base.anchor``.  Effective target = anchor + target_offset.
    """

    base: LosObservation
    time: float
    camera_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    target_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("camera_offset", "target_offset"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be a finite 3-vector")
            object.__setattr__(self, name, v)
        if not np.isfinite(self.time):
            raise ValueError("time must be finite")

    @property
    def effective_target(self) -> np.ndarray:
        return self.base.anchor + self.target_offset


@dataclass(frozen=True)
class StateEstimate6:
    """Initial-state estimate with observability diagnostics."""

    xi0: np.ndarray
    covariance: np.ndarray | None
    singular_values: np.ndarray
    null_directions: np.ndarray  # (k, 6) right singular vectors of near-zero SVs
    residual_norm: float
    unobservable_directions: tuple  # per-state-component flags


def dynamic_system(obs, stm: StmProvider):
    """Stack the 3n x 6 system ``H xi0 = y``."""
    blocks, rhs = [], []
    for dob in obs:
        ell = dob.base.los_localization
        sk = skew(ell)
        blocks.append(sk @ stm.position_rows(dob.time))
        rhs.append(sk @ (dob.effective_target - dob.camera_offset))
    return np.vstack(blocks), np.concatenate(rhs)


def _near_zero_count(s, tol=OBSERVABILITY_TOL):
    scale = s[0] if s[0] > 0 else 1.0
    return int(np.sum(s < tol * scale))


def dynamic_dlt(obs, stm: StmProvider, rank_tol: float = OBSERVABILITY_TOL) -> StateEstimate6:
    """Least-squares initial-state estimate from time-tagged LOS measurements.

    Raises ``Unobservable`` when the stack has a near-null direction *and*
    the system is homogeneous (all effective targets at the origin): then an
    entire scaling family fits the data.  Inhomogeneous rank-deficient
    systems (e.g. a stationary observer with no velocity information)
    return the minimum-norm solution with per-direction flags instead.
    """
    obs = list(obs)
    if len(obs) < 2:
        raise ValueError("need at least two observation epochs")
    H, y = dynamic_system(obs, stm)
    u, s, vt = np.linalg.svd(H, full_matrices=False)
    scale = s[0] if s[0] > 0 else 1.0
    k = _near_zero_count(s, rank_tol)

    target_scale = max(
        max(np.linalg.norm(d.effective_target) for d in obs),
        max(np.linalg.norm(d.camera_offset) for d in obs),
    )
    homogeneous = target_scale == 0.0 or float(np.linalg.norm(y)) < 1e-12 * scale * target_scale

    if k > 0 and homogeneous:
        null = vt[-k:]
        raise Unobservable(
            "homogeneous system with a null direction: every scaled copy of the "
            f"trajectory fits the data (null direction {null[-1].round(12).tolist()})"
        )

    # Minimum-norm pseudoinverse solution; exact LS solution at full rank.
    s_inv = np.array([1.0 / si if si >= rank_tol * scale else 0.0 for si in s])
    xi0 = vt.T @ (s_inv * (u.T @ y))

    null = vt[len(s) - k :] if k > 0 else np.zeros((0, 6))
    # A state component is flagged when it projects onto any null direction.
    flags = tuple(bool(np.any(np.abs(null[:, i]) > 1e-8)) for i in range(6)) if k else (False,) * 6

    cov = dynamic_covariance(obs, stm, xi0) if k == 0 else None
    return StateEstimate6(
        xi0=xi0,
        covariance=cov,
        singular_values=s,
        null_directions=null,
        residual_norm=float(np.linalg.norm(H @ xi0 - y)),
        unobservable_directions=flags,
    )


def dynamic_covariance(obs, stm: StmProvider, xi0) -> np.ndarray:
    """Sandwich covariance of the stacked dynamic solve.

    Residual covariance per epoch:
    ``R_eps_i = -gamma_i^2 [ell_i x] (T_i^T R_xbar_i T_i) [ell_i x]`` with
    ranges evaluated on the solved trajectory.
    """
    H, _ = dynamic_system(obs, stm)
    HtH_inv = np.linalg.inv(H.T @ H)
    middle = np.zeros((6, 6))
    for dob in obs:
        ell = dob.base.los_localization
        nrm_xbar = np.linalg.norm(dob.base.los_camera)
        r_i = stm.position_rows(dob.time) @ xi0 + dob.camera_offset
        rho = float(np.linalg.norm(dob.effective_target - r_i))
        gamma = rho / nrm_xbar
        T = dob.base.attitude.matrix
        R_x = image_plane_covariance(dob.base.intrinsics, dob.base.pixel_cov)
        R_eps = -(gamma * gamma) * (skew(ell) @ (T.T @ R_x @ T) @ skew(ell))
        Hi = skew(ell) @ stm.position_rows(dob.time)
        middle += Hi.T @ R_eps @ Hi
    P = HtH_inv @ middle @ HtH_inv
    return 0.5 * (P + P.T)


def observability_report(obs, stm: StmProvider, tol: float = OBSERVABILITY_TOL) -> dict:
    """Singular-value diagnosis of the stacked dynamic system.

    The scaling-family flag is raised when exactly one singular value is
    near zero and every effective target is the same stationary point of
    the dynamics (the scaling center) — the classical bearings-only
    ambiguity.
    """
    obs = list(obs)
    H, _ = dynamic_system(obs, stm)
    _, s, vt = np.linalg.svd(H, full_matrices=False)
    k = _near_zero_count(s, tol)
    null = vt[len(s) - k :] if k > 0 else np.zeros((0, 6))

    targets = np.array([d.effective_target for d in obs])
    center = targets[0]
    center_scale = max(float(np.linalg.norm(center)), 1.0)
    common = bool(np.all(np.linalg.norm(targets - center, axis=1) <= 1e-9 * center_scale))
    stationary = False
    if common:
        fixed_state = np.concatenate([center, np.zeros(3)])
        stationary = all(
            np.linalg.norm(stm.position_rows(d.time) @ fixed_state - center)
            <= 1e-9 * center_scale
            for d in obs
        )
    homothety = bool(k == 1 and common and stationary)
    return {
        "singular_values": s,
        "null_directions": null,
        "near_zero_count": k,
        "homothety": homothety,
    }
