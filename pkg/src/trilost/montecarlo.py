"""Deterministic, seeded Monte Carlo engine for triangulation methods.

Noise is generated per fixed-size chunk from independent counter-based
streams spawned off the master seed, so results are bit-identical for a
given seed regardless of worker count.  Per-chunk batch kernels produce the
estimates; moments are accumulated per chunk and combined with a fixed-order
pairwise reduction.
"""

from __future__ import annotations

import itertools
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from . import _kernels
from .errors import MissingMethod, WrongArity
from .scenarios import ScenarioConfig

CHUNK_SIZE = 8192
#: Failure rates above this fraction of draws mark the report as suspicious.
SUSPICIOUS_FAILURE_FRACTION = 1e-3

KNOWN_METHODS = ("dlt", "dlt-unit", "range", "hs", "quat", "lost")
#: Methods restricted to exactly two observations.
TWO_VIEW_METHODS = ("range", "hs", "quat")


@dataclass
class MethodStats:
    """Sample statistics of one method's position error over all draws."""

    method: str
    samples_ok: int
    failures: int
    mean_error: np.ndarray
    covariance: np.ndarray
    total_std: float
    analytic_total_std: float | None = None
    nees_mean: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "samples_ok": self.samples_ok,
            "failures": self.failures,
            "mean_error": self.mean_error.tolist(),
            "covariance": self.covariance.tolist(),
            "total_std": self.total_std,
            "analytic_total_std": self.analytic_total_std,
            "nees_mean": self.nees_mean,
        }


@dataclass
class PairStats:
    """Statistics of the per-draw difference between two methods."""

    first: str
    second: str
    samples: int
    difference_total_std: float
    closer_first: int
    closer_second: int
    ties: int

    @property
    def fraction_first_closer(self) -> float:
        decided = self.closer_first + self.closer_second
        return self.closer_first / decided if decided else float("nan")

    def to_json_dict(self) -> dict:
        return {
            "first": self.first,
            "second": self.second,
            "samples": self.samples,
            "difference_total_std": self.difference_total_std,
            "closer_first": self.closer_first,
            "closer_second": self.closer_second,
            "ties": self.ties,
            "fraction_first_closer": self.fraction_first_closer,
        }


@dataclass
class MonteCarloReport:
    """Aggregated results of one seeded run."""

    scenario: str
    seed: int
    samples: int
    sigma_u: float
    backend: str
    runtime_s: float
    truth: np.ndarray
    methods: dict = field(default_factory=dict)   # name -> MethodStats
    pairs: dict = field(default_factory=dict)     # "a|b" -> PairStats
    suspicious_failures: bool = False

    def method(self, name: str) -> MethodStats:
        try:
            return self.methods[name]
        except KeyError:
            raise MissingMethod(f"method {name!r} was not part of this run") from None

    def pair(self, first: str, second: str) -> PairStats:
        key = f"{first}|{second}"
        if key in self.pairs:
            return self.pairs[key]
        rev = f"{second}|{first}"
        if rev in self.pairs:
            p = self.pairs[rev]
            return PairStats(
                first=second,
                second=first,
                samples=p.samples,
                difference_total_std=p.difference_total_std,
                closer_first=p.closer_second,
                closer_second=p.closer_first,
                ties=p.ties,
            )
        raise MissingMethod(f"pair ({first}, {second}) was not part of this run")

    def to_json_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "samples": self.samples,
            "sigma_u": self.sigma_u,
            "backend": self.backend,
            "runtime_s": self.runtime_s,
            "truth": self.truth.tolist(),
            "methods": {k: v.to_json_dict() for k, v in self.methods.items()},
            "pairs": {k: v.to_json_dict() for k, v in self.pairs.items()},
            "suspicious_failures": self.suspicious_failures,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)

    def to_csv_rows(self, x: float | None = None, y: float | None = None,
                    reference: str = "lost") -> list:
        """Flat ``x,y,method,sigma_analytic,sigma_sample,loss_pct`` rows.

        ``loss_pct`` compares each method's sample std against the
        reference method's; blank where unavailable.
        """
        if x is None:
            x = float(self.truth[0])
        if y is None:
            y = float(self.truth[1])
        ref = self.methods.get(reference)
        rows = []
        for name, st in self.methods.items():
            loss = ""
            if ref is not None and ref.total_std > 0:
                loss = 100.0 * (st.total_std / ref.total_std - 1.0)
            rows.append(
                [x, y, name,
                 "" if st.analytic_total_std is None else st.analytic_total_std,
                 st.total_std, loss]
            )
        return rows


CSV_HEADER = ["x", "y", "method", "sigma_analytic", "sigma_sample", "loss_pct"]


def precision_loss(report: MonteCarloReport, baseline: str, reference: str = "lost") -> float:
    """Percentage increase of the baseline's sample std over the reference's."""
    sb = report.method(baseline).total_std
    sr = report.method(reference).total_std
    return 100.0 * (sb / sr - 1.0)


# ---------------------------------------------------------------------------
# Engine internals
# ---------------------------------------------------------------------------

def _resolve_threads(threads: int | None) -> int:
    cap = os.environ.get("TRILOST_THREADS")
    if threads is None:
        threads = min(8, os.cpu_count() or 1)
    if cap:
        threads = min(threads, max(1, int(cap)))
    return max(1, threads)


def _chunk_noise(seed: int, chunk_index: int, shape) -> np.ndarray:
    """Standard-normal draws from this chunk's dedicated stream."""
    ss = np.random.SeedSequence(seed, spawn_key=(chunk_index,))
    rng = np.random.Generator(np.random.Philox(ss))
    u = rng.random(shape)
    # rng.random() can in principle return exactly 0, whose normal quantile
    # is -inf; nudge onto the open interval.
    tiny = 2.0 ** -53
    return ndtri(np.where(u > 0.0, u, tiny))


class _Chunked:
    """Per-chunk estimate computation shared by all workers."""

    def __init__(self, cfg: ScenarioConfig, backend):
        self.cfg = cfg
        self.backend = backend
        self.truth = cfg.observer
        self.n = cfg.n_obs
        self.true_px = cfg.true_pixels()                    # (n, 2)
        self.T = np.stack([a.matrix for a in cfg.attitudes])  # (n, 3, 3)
        self.p = np.asarray(cfg.targets, dtype=float)
        self.Kinv = np.stack([K.inverse_matrix for K in cfg.cameras])
        sigma_u = cfg.sigma_u if cfg.sigma_u > 0 else 1.0
        self.sigma_x = np.array(
            [K.image_plane_sigma(sigma_u) for K in cfg.cameras]
        )
        self.weights = 1.0 / self.sigma_x**2
        self.methods = tuple(cfg.methods)
        self.nees_info = {}
        for m in self.methods:
            if m in TWO_VIEW_METHODS and self.n != 2:
                raise WrongArity(f"method {m!r} requires exactly 2 observations, got {self.n}")
            if m not in KNOWN_METHODS:
                raise MissingMethod(f"unknown Monte Carlo method {m!r}")
        if "quat" in self.methods:
            if not np.allclose(self.T[0], self.T[1], atol=1e-12):
                raise ValueError("shared-attitude method requires identical attitudes")

    def estimates(self, chunk_index: int, draws: int) -> dict:
        """Run every method on one chunk of noisy draws."""
        normals = _chunk_noise(self.cfg.seed, chunk_index, (draws, self.n, 2))
        px = self.true_px[None, :, :] + self.cfg.sigma_u * normals  # (D, n, 2)
        ones = np.ones((draws, self.n, 1))
        px_h = np.concatenate([px, ones], axis=-1)
        xbar = np.einsum("nij,dnj->dni", self.Kinv, px_h)  # (D, n, 3)
        xbar[..., 2] = 1.0

        out = {}
        for m in self.methods:
            if m == "dlt":
                est = self.backend.batch_dlt(xbar, self.T, self.p, unit_norm=False)
            elif m == "dlt-unit":
                est = self.backend.batch_dlt(xbar, self.T, self.p, unit_norm=True)
            elif m == "range":
                est = self.backend.batch_range2(xbar, self.T, self.p)
            elif m == "lost":
                est = self.backend.batch_lost(xbar, self.T, self.p, self.sigma_x)
            elif m == "hs":
                est = self.backend.batch_hs(
                    xbar, self.T[0], self.T[1], self.p[0], self.p[1], self.weights
                )
            elif m == "quat":
                est = self.backend.batch_quat(xbar, self.T[0], self.p, self.weights)
            out[m] = est
        return out

    def partial(self, chunk_index: int, draws: int) -> dict:
        est = self.estimates(chunk_index, draws)
        part = {"methods": {}, "pairs": {}}
        errs = {}
        oks = {}
        for m, e in est.items():
            err = e - self.truth[None, :]
            ok = np.all(np.isfinite(err), axis=1)
            errs[m], oks[m] = err, ok
            good = err[ok]
            entry = {
                "n": int(ok.sum()),
                "fail": int(draws - ok.sum()),
                "s1": good.sum(axis=0),
                "s2": good.T @ good,
            }
            info = self.nees_info.get(m)
            if info is not None:
                entry["nees"] = float(np.einsum("di,ij,dj->", good, info, good))
            part["methods"][m] = entry
        for a, b in itertools.combinations(self.methods, 2):
            both = oks[a] & oks[b]
            d = errs[a][both] - errs[b][both]
            na = np.linalg.norm(errs[a][both], axis=1)
            nb = np.linalg.norm(errs[b][both], axis=1)
            part["pairs"][f"{a}|{b}"] = {
                "n": int(both.sum()),
                "d1": d.sum(axis=0),
                "d2": d.T @ d,
                "closer_a": int((na < nb).sum()),
                "closer_b": int((nb < na).sum()),
                "ties": int((na == nb).sum()),
            }
        return part


def _combine(x: dict, y: dict) -> dict:
    out = {"methods": {}, "pairs": {}}
    for m in x["methods"]:
        a, b = x["methods"][m], y["methods"][m]
        e = {
            "n": a["n"] + b["n"],
            "fail": a["fail"] + b["fail"],
            "s1": a["s1"] + b["s1"],
            "s2": a["s2"] + b["s2"],
        }
        if "nees" in a:
            e["nees"] = a["nees"] + b["nees"]
        out["methods"][m] = e
    for k in x["pairs"]:
        a, b = x["pairs"][k], y["pairs"][k]
        out["pairs"][k] = {
            "n": a["n"] + b["n"],
            "d1": a["d1"] + b["d1"],
            "d2": a["d2"] + b["d2"],
            "closer_a": a["closer_a"] + b["closer_a"],
            "closer_b": a["closer_b"] + b["closer_b"],
            "ties": a["ties"] + b["ties"],
        }
    return out


def _tree_reduce(parts: list) -> dict:
    """Fixed-order pairwise combination, independent of worker scheduling."""
    while len(parts) > 1:
        nxt = [
            _combine(parts[i], parts[i + 1]) for i in range(0, len(parts) - 1, 2)
        ]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def _moments(n: int, s1: np.ndarray, s2: np.ndarray):
    if n == 0:
        nan3 = np.full(3, np.nan)
        return nan3, np.full((3, 3), np.nan), float("nan")
    mean = s1 / n
    if n == 1:
        cov = np.zeros((3, 3))
    else:
        cov = (s2 - n * np.outer(mean, mean)) / (n - 1)
    return mean, cov, float(np.sqrt(max(0.0, np.trace(cov))))


def run_monte_carlo(cfg: ScenarioConfig, backend: str = "auto",
                    threads: int | None = None,
                    with_analytic: bool = True) -> MonteCarloReport:
    """Run the scenario's methods over ``cfg.samples`` noisy draws.

    Deterministic for a fixed (seed, backend) pair: noise comes from
    per-chunk counter-based streams and the reduction order is fixed, so
    the report is bit-identical across worker counts.
    """
    t0 = time.perf_counter()
    kb = _kernels.get_backend(backend)
    work = _Chunked(cfg, kb)

    analytic = {}
    if with_analytic and cfg.sigma_u > 0:
        from .linear import LosNormalization, dlt_covariance, explicit_range_covariance_n2
        from .optimal import hs_covariance, lost_covariance

        obs = cfg.observations()
        for m in cfg.methods:
            try:
                if m == "dlt":
                    P = dlt_covariance(obs, LosNormalization.ImagePlane)
                elif m == "dlt-unit":
                    P = dlt_covariance(obs, LosNormalization.UnitVector)
                elif m == "range":
                    P = explicit_range_covariance_n2(obs)
                elif m == "lost":
                    P = lost_covariance(obs)
                elif m in ("hs", "quat"):
                    P = hs_covariance(obs[0], obs[1])
                else:
                    continue
            except Exception:
                continue
            analytic[m] = float(np.sqrt(np.trace(P)))
            work.nees_info[m] = np.linalg.inv(P)

    counts = [CHUNK_SIZE] * (cfg.samples // CHUNK_SIZE)
    if cfg.samples % CHUNK_SIZE:
        counts.append(cfg.samples % CHUNK_SIZE)

    n_threads = _resolve_threads(threads)
    if n_threads > 1 and len(counts) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as ex:
            parts = list(ex.map(work.partial, range(len(counts)), counts))
    else:
        parts = [work.partial(i, c) for i, c in enumerate(counts)]

    total = _tree_reduce(parts)

    methods = {}
    suspicious = False
    for m in cfg.methods:
        e = total["methods"][m]
        mean, cov, tstd = _moments(e["n"], e["s1"], e["s2"])
        nees = e.get("nees")
        methods[m] = MethodStats(
            method=m,
            samples_ok=e["n"],
            failures=e["fail"],
            mean_error=mean,
            covariance=cov,
            total_std=tstd,
            analytic_total_std=analytic.get(m),
            nees_mean=None if nees is None or e["n"] == 0 else nees / e["n"],
        )
        if e["fail"] > SUSPICIOUS_FAILURE_FRACTION * cfg.samples:
            suspicious = True

    pairs = {}
    for k, e in total["pairs"].items():
        a, b = k.split("|")
        _, dcov, dstd = _moments(e["n"], e["d1"], e["d2"])
        pairs[k] = PairStats(
            first=a,
            second=b,
            samples=e["n"],
            difference_total_std=dstd,
            closer_first=e["closer_a"],
            closer_second=e["closer_b"],
            ties=e["ties"],
        )

    return MonteCarloReport(
        scenario=cfg.name,
        seed=cfg.seed,
        samples=cfg.samples,
        sigma_u=cfg.sigma_u,
        backend=kb.name,
        runtime_s=time.perf_counter() - t0,
        truth=np.asarray(cfg.observer, dtype=float),
        methods=methods,
        pairs=pairs,
        suspicious_failures=suspicious,
    )
