"""Shared fixtures: seeded RNGs and random observation-set builders."""

from __future__ import annotations

import numpy as np
import pytest

import trilost as tl
from trilost.camera import ImagePlanePoint, image_plane_to_pixel

DATA_DIR = __file__.rsplit("/", 1)[0] + "/data"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@pytest.fixture
def rng() -> np.random.Generator:
    return make_rng(987654321)


def identity_camera() -> tl.CameraIntrinsics:
    return tl.CameraIntrinsics(dx=1.0, dy=1.0, alpha=0.0, up=0.0, vp=0.0)


def fixture_a():
    """Canonical two-ray set: observer at the origin, identity attitude and
    intrinsics, anchors (1,0,1) and (-1,0,1), noise-free pixels (1,0), (-1,0)."""
    K = identity_camera()
    I = tl.Rotation.identity()
    mk = lambda u, p: tl.LosObservation(
        pixel=tl.PixelPoint(u, 0.0),
        intrinsics=K,
        attitude=I,
        anchor=np.array(p, dtype=float),
        pixel_cov=tl.PixelCovariance.isotropic(0.1),
    )
    return np.zeros(3), [mk(1.0, (1.0, 0.0, 1.0)), mk(-1.0, (-1.0, 0.0, 1.0))]


def jittered_attitude(rng, truth, anchor, max_deg=10.0) -> tl.Rotation:
    """Boresight near (but not exactly at) the observer-to-anchor direction."""
    T = tl.pointing_attitude(truth, anchor)
    ang = rng.uniform(0.0, np.radians(max_deg))
    ax = rng.normal(size=3)
    ax /= np.linalg.norm(ax)
    c, s = np.cos(ang), np.sin(ang)
    Rj = c * np.eye(3) + s * tl.skew(ax) + (1 - c) * np.outer(ax, ax)
    return tl.Rotation(T.matrix @ Rj.T)


def random_obs_set(rng, n, noise_px=0.0, sigma_px=0.1, fov_deg=60.0,
                   n_pixels=1024, min_sep_deg=1.0, jitter_deg=10.0,
                   scene_scale=40.0):
    """Random solvable geometry: observer plus n anchors with pairwise ray
    separation of at least ``min_sep_deg``; optionally noisy pixels."""
    K = tl.camera_from_fov(fov_deg, n_pixels)
    while True:
        truth = rng.normal(scale=10.0, size=3)
        obs, dirs = [], []
        for _ in range(n):
            for _attempt in range(100):
                p = truth + rng.normal(scale=scene_scale, size=3)
                T = jittered_attitude(rng, truth, p, jitter_deg)
                v = T.matrix @ (p - truth)
                if v[2] > 0.3 * np.linalg.norm(v):
                    break
            else:
                break
            dirs.append((p - truth) / np.linalg.norm(p - truth))
            x = ImagePlanePoint(v[0] / v[2], v[1] / v[2])
            pix = image_plane_to_pixel(K, x)
            obs.append(
                tl.LosObservation(
                    pixel=tl.PixelPoint(
                        pix.u + noise_px * rng.normal(),
                        pix.v + noise_px * rng.normal(),
                    ),
                    intrinsics=K,
                    attitude=T,
                    anchor=p,
                    pixel_cov=tl.PixelCovariance.isotropic(sigma_px),
                )
            )
        if len(obs) < n:
            continue
        sep_ok = all(
            np.degrees(np.arccos(np.clip(dirs[i] @ dirs[j], -1.0, 1.0))) >= min_sep_deg
            for i in range(n)
            for j in range(i + 1, n)
        )
        if sep_ok:
            return truth, obs


def rigid_transform_obs(ob: tl.LosObservation, R: np.ndarray, t: np.ndarray):
    """Apply a localization-frame rigid motion x -> R x + t to one observation."""
    return tl.LosObservation(
        pixel=ob.pixel,
        intrinsics=ob.intrinsics,
        attitude=tl.Rotation(ob.attitude.matrix @ R.T),
        anchor=R @ np.asarray(ob.anchor, dtype=float) + t,
        pixel_cov=ob.pixel_cov,
    )
