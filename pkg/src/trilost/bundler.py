"""Bundler v0.3 reconstruction files: parsing, conversion, re-triangulation.

The Bundler camera looks down its negative third axis with image y up and
keypoint coordinates centered on the principal point.  This package's camera
looks down its positive third axis with pixel v down.  The conversion is
centralized in :func:`bundler_camera_frame` and is exact:

* attitude ``T = diag(1, -1, -1) @ R``  (a proper rotation),
* camera position ``c = -R^T t``,
* pixel ``(u, v) = (x, -y)`` with intrinsics ``dx = dy = f``, zero skew,
  principal point at (0, 0).

Radial distortion coefficients are ignored with a per-file warning (the
triangulation model is pinhole); strict mode refuses such files.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraIntrinsics, LosObservation, PixelCovariance, PixelPoint
from .errors import (
    IndexOutOfRange,
    MalformedHeader,
    OutOfEnvelope,
    TruncatedFile,
)
from .geometry import Rotation

BUNDLER_HEADER = "# Bundle file v0.3"

#: Sign-flip between the two camera conventions (a proper rotation).
_FLIP = np.diag([1.0, -1.0, -1.0])

#: Explicit-range re-triangulation is refused above this view count unless
#: explicitly overridden (pairwise row growth is quadratic in views).
RANGE_VIEW_LIMIT = 50


@dataclass(frozen=True)
class BundlerCamera:
    focal: float
    k1: float
    k2: float
    rotation: np.ndarray     # (3, 3) Bundler world-to-camera
    translation: np.ndarray  # (3,)


@dataclass(frozen=True)
class BundlerView:
    camera: int
    keypoint: int
    x: float
    y: float


@dataclass(frozen=True)
class BundlerPoint:
    position: np.ndarray     # (3,)
    color: tuple             # (r, g, b) ints
    views: tuple             # BundlerView


@dataclass(frozen=True)
class BundlerDataset:
    cameras: tuple
    points: tuple
    warnings: tuple = ()

    @property
    def n_cameras(self) -> int:
        return len(self.cameras)

    @property
    def n_points(self) -> int:
        return len(self.points)


class _TokenStream:
    """Whitespace token cursor with typed conversion errors."""

    def __init__(self, tokens):
        self._toks = tokens
        self._pos = 0

    def remaining(self) -> int:
        return len(self._toks) - self._pos

    def _next(self) -> str:
        if self._pos >= len(self._toks):
            raise TruncatedFile("unexpected end of file")
        t = self._toks[self._pos]
        self._pos += 1
        return t

    def number(self) -> float:
        t = self._next()
        try:
            v = float(t)
        except ValueError:
            raise MalformedHeader(f"expected a number, found {t!r}") from None
        if math.isnan(v) or math.isinf(v):
            raise MalformedHeader(f"non-finite value {t!r}")
        return v

    def integer(self) -> int:
        t = self._next()
        try:
            return int(t)
        except ValueError:
            raise MalformedHeader(f"expected an integer, found {t!r}") from None


def parse_bundler(path, strict: bool = False) -> BundlerDataset:
    """Parse a Bundler v0.3 ``.out`` file, converting nothing.

    Raw Bundler-convention records are returned; convert per camera with
    :func:`bundler_camera_frame`.  ``strict`` refuses nonzero radial
    distortion instead of warning.
    """
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        text = fh.read()

    lines = text.splitlines()
    if not lines or lines[0].strip() != BUNDLER_HEADER:
        raise MalformedHeader(f"missing {BUNDLER_HEADER!r} header line")
    body = "\n".join(lines[1:])
    toks = _TokenStream(body.split())

    n_cameras = toks.integer()
    n_points = toks.integer()
    if n_cameras < 0 or n_points < 0:
        raise MalformedHeader("negative count in header")
    # Bounds-check claimed counts against the actual token supply before
    # allocating any per-record storage.
    min_tokens = n_cameras * 15 + n_points * 7
    if min_tokens > toks.remaining():
        raise TruncatedFile(
            f"header claims {n_cameras} cameras / {n_points} points but the "
            f"file holds at most {toks.remaining()} values"
        )

    warnings = []
    cameras = []
    for ci in range(n_cameras):
        f = toks.number()
        k1 = toks.number()
        k2 = toks.number()
        R = np.array([[toks.number() for _ in range(3)] for _ in range(3)])
        t = np.array([toks.number() for _ in range(3)])
        if (k1 != 0.0 or k2 != 0.0) and not warnings:
            msg = "radial distortion coefficients present; pinhole model ignores them"
            if strict:
                raise OutOfEnvelope(msg)
            warnings.append(msg)
        cameras.append(BundlerCamera(f, k1, k2, R, t))

    points = []
    for pi in range(n_points):
        pos = np.array([toks.number() for _ in range(3)])
        color = tuple(toks.integer() for _ in range(3))
        n_views = toks.integer()
        if n_views <= 0:
            raise MalformedHeader(f"point {pi} declares {n_views} views")
        if n_views * 4 > toks.remaining():
            raise TruncatedFile(f"point {pi} claims {n_views} views beyond end of file")
        views = []
        for _ in range(n_views):
            cam = toks.integer()
            if not (0 <= cam < n_cameras):
                raise IndexOutOfRange(
                    f"point {pi} references camera {cam} of {n_cameras}"
                )
            key = toks.integer()
            x = toks.number()
            y = toks.number()
            views.append(BundlerView(cam, key, x, y))
        points.append(BundlerPoint(pos, color, tuple(views)))

    return BundlerDataset(tuple(cameras), tuple(points), tuple(warnings))


def write_bundler(ds: BundlerDataset, path) -> None:
    """Serialize a dataset back to Bundler v0.3 text."""
    num = lambda v: repr(float(v))
    out = [BUNDLER_HEADER, f"{ds.n_cameras} {ds.n_points}"]
    for c in ds.cameras:
        out.append(f"{num(c.focal)} {num(c.k1)} {num(c.k2)}")
        for row in c.rotation:
            out.append(" ".join(num(v) for v in row))
        out.append(" ".join(num(v) for v in c.translation))
    for p in ds.points:
        out.append(" ".join(num(v) for v in p.position))
        out.append(" ".join(str(int(c)) for c in p.color))
        view_txt = [str(len(p.views))]
        for v in p.views:
            view_txt.append(f"{v.camera} {v.keypoint} {num(v.x)} {num(v.y)}")
        out.append(" ".join(view_txt))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")


def bundler_camera_frame(cam: BundlerCamera):
    """Convert one Bundler camera to (attitude, position, intrinsics).

    This is the single point where the convention flip happens; see the
    module docstring for the exact mapping.
    """
    T = Rotation(_FLIP @ cam.rotation)
    anchor = -cam.rotation.T @ cam.translation
    K = CameraIntrinsics(dx=cam.focal, dy=cam.focal, alpha=0.0, up=0.0, vp=0.0)
    return T, anchor, K


def view_pixel(view: BundlerView) -> PixelPoint:
    """Bundler keypoint coordinates mapped to this package's pixel frame."""
    return PixelPoint(view.x, -view.y)


def point_observations(ds: BundlerDataset, point_index: int,
                       sigma_px: float = 0.5) -> list:
    """LosObservation list for one reconstructed point."""
    pt = ds.points[point_index]
    obs = []
    for v in pt.views:
        T, anchor, K = bundler_camera_frame(ds.cameras[v.camera])
        obs.append(
            LosObservation(
                pixel=view_pixel(v),
                intrinsics=K,
                attitude=T,
                anchor=anchor,
                pixel_cov=PixelCovariance.isotropic(sigma_px),
            )
        )
    return obs


@dataclass
class PointResult:
    index: int
    reference: np.ndarray
    n_views: int
    estimates: dict = field(default_factory=dict)   # method -> (3,) or None
    residuals: dict = field(default_factory=dict)   # method -> float or None
    failures: dict = field(default_factory=dict)    # method -> reason string


@dataclass
class ReconstructionReport:
    methods: tuple
    sigma_px: float
    points: list

    def residual_array(self, method: str) -> np.ndarray:
        vals = [p.residuals.get(method) for p in self.points]
        return np.array([v for v in vals if v is not None], dtype=float)

    def failure_count(self, method: str) -> int:
        return sum(1 for p in self.points if method in p.failures)

    def median_residual(self, method: str) -> float:
        vals = self.residual_array(method)
        return float(np.median(vals)) if vals.size else float("nan")

    def histogram(self, method: str, bins: int = 20):
        """Residual histogram; counts sum to points minus failures."""
        vals = self.residual_array(method)
        if vals.size == 0:
            return np.zeros(bins, dtype=int), np.linspace(0.0, 1.0, bins + 1)
        counts, edges = np.histogram(vals, bins=bins)
        return counts, edges

    def to_json_dict(self, histogram_bins: int = 20) -> dict:
        summary = {}
        for m in self.methods:
            counts, edges = self.histogram(m, histogram_bins)
            summary[m] = {
                "median_residual": self.median_residual(m),
                "failures": self.failure_count(m),
                "histogram_counts": counts.tolist(),
                "histogram_edges": edges.tolist(),
            }
        return {
            "schema": 1,
            "sigma_px": self.sigma_px,
            "n_points": len(self.points),
            "methods": summary,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)

    def histogram_csv_rows(self, bins: int = 20) -> list:
        rows = []
        for m in self.methods:
            counts, edges = self.histogram(m, bins)
            for k in range(len(counts)):
                rows.append([m, edges[k], edges[k + 1], int(counts[k])])
        return rows


HISTOGRAM_CSV_HEADER = ["method", "bin_low", "bin_high", "count"]


def _solve_point(ds, index, methods, sigma_px, allow_large_range):
    from .linear import (
        LosNormalization,
        dlt_triangulate,
        explicit_range_triangulate,
        plucker_triangulate,
    )
    from .optimal import hs_triangulate, lost_triangulate

    pt = ds.points[index]
    res = PointResult(index=index, reference=pt.position, n_views=len(pt.views))
    if len(pt.views) < 2:
        for m in methods:
            res.failures[m] = "fewer than 2 views"
        return res
    obs = point_observations(ds, index, sigma_px)
    for m in methods:
        try:
            if m == "dlt":
                est = dlt_triangulate(obs, LosNormalization.ImagePlane).position
            elif m == "dlt-unit":
                est = dlt_triangulate(obs, LosNormalization.UnitVector).position
            elif m == "lost":
                est = lost_triangulate(obs).position
            elif m == "plucker":
                est = plucker_triangulate(obs).position
            elif m == "range":
                if len(obs) > RANGE_VIEW_LIMIT and not allow_large_range:
                    res.failures[m] = (
                        f"{len(obs)} views exceeds the explicit-range limit of "
                        f"{RANGE_VIEW_LIMIT}; pass the override to force it"
                    )
                    continue
                est = explicit_range_triangulate(obs).position
            elif m == "hs":
                if len(obs) != 2:
                    res.failures[m] = "two-view method on a multi-view point"
                    continue
                _, _, tri = hs_triangulate(obs[0], obs[1])
                est = tri.position
            else:
                res.failures[m] = f"unknown method {m!r}"
                continue
        except Exception as exc:  # per-point failures are records, not raises
            res.failures[m] = f"{type(exc).__name__}: {exc}"
            continue
        if not np.all(np.isfinite(est)):
            res.failures[m] = "non-finite solution"
            continue
        res.estimates[m] = est
        res.residuals[m] = float(np.linalg.norm(est - pt.position))
    return res


def retriangulate(ds: BundlerDataset, methods=("dlt", "lost"), sigma_px: float = 0.5,
                  allow_large_range: bool = False,
                  threads: int | None = None) -> ReconstructionReport:
    """Re-triangulate every point from its views and compare to the reference.

    Points are independent and solved in parallel; results are assembled in
    point order.  Per-point failures (too few views, degenerate geometry,
    refused methods) are recorded, never raised.
    """
    methods = tuple(methods)
    idx = range(ds.n_points)
    worker = lambda i: _solve_point(ds, i, methods, sigma_px, allow_large_range)
    from .montecarlo import _resolve_threads

    n_threads = _resolve_threads(threads)
    if n_threads > 1 and ds.n_points > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as ex:
            points = list(ex.map(worker, idx))
    else:
        points = [worker(i) for i in idx]
    return ReconstructionReport(methods=methods, sigma_px=sigma_px, points=points)


def synthetic_dataset(n_points: int = 500, n_cameras: int = 20, noise_px: float = 0.5,
                      seed: int = 0, views_per_point: int = 6) -> BundlerDataset:
    """Forward-projected synthetic scene in Bundler conventions.

    Cameras sit on a ring of strongly varying radius (asymmetric ranges)
    looking at a point cloud near the origin; keypoints are the exact
    projections plus isotropic pixel noise.  The reference positions are the
    true points, so re-triangulation residuals measure estimator error.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    pts = rng.normal(scale=2.0, size=(n_points, 3))
    focal = 800.0

    cams = []
    centers = []
    for k in range(n_cameras):
        ang = 2.0 * math.pi * k / n_cameras
        radius = 8.0 + 42.0 * (k % 2 == 0) + rng.uniform(-2.0, 2.0)
        c = np.array([radius * math.cos(ang), radius * math.sin(ang),
                      rng.uniform(-3.0, 3.0)])
        # our-convention attitude: boresight at the cloud center
        z = -c / np.linalg.norm(c)
        helper = np.array([0.0, 0.0, 1.0])
        if abs(z @ helper) > 0.9:
            helper = np.array([1.0, 0.0, 0.0])
        x = np.cross(helper, z)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        T = np.vstack([x, y, z])
        R_b = _FLIP @ T          # invert the convention flip
        t = -R_b @ c
        cams.append(BundlerCamera(focal, 0.0, 0.0, R_b, t))
        centers.append((c, T))

    points = []
    for i in range(n_points):
        p = pts[i]
        dists = np.array([np.linalg.norm(p - c) for c, _ in centers])
        chosen = np.argsort(dists)[:views_per_point]
        views = []
        for cam_idx in sorted(int(j) for j in chosen):
            c, T = centers[cam_idx]
            v = T @ (p - c)
            if v[2] <= 0.1:
                continue
            u_px = focal * v[0] / v[2] + noise_px * rng.normal()
            v_px = focal * v[1] / v[2] + noise_px * rng.normal()
            views.append(BundlerView(cam_idx, i, float(u_px), float(-v_px)))
        if len(views) < 2:
            continue
        color = tuple(int(c) for c in rng.integers(0, 256, size=3))
        points.append(BundlerPoint(p, color, tuple(views)))

    return BundlerDataset(tuple(cams), tuple(points))
