"""Command-line surface.

Subcommands: ``triangulate``, ``scenario run``, ``uranus-map``, ``trn-sweep``,
``relnav demo``, ``reconstruct``, ``selftest``.  Exit codes: 0 success,
1 usage error, 2 data error, 3 numerical failure.  With ``--json-errors``,
failures also emit one machine-readable JSON object on stderr.

All outputs are deterministic for identical argv and seed: JSON is emitted
with sorted keys, CSV with a fixed column order and line terminator, and
wall-clock fields are excluded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from . import __version__
from .camera import CameraIntrinsics, LosObservation, PixelCovariance, PixelPoint
from .errors import DataError, MalformedHeader, MissingMethod, NumericalError
from .geometry import Rotation
from .linear import (
    LosNormalization,
    collinearity_triangulate,
    dlt_triangulate,
    explicit_range_triangulate,
    plucker_triangulate,
)
from .optimal import hs_triangulate, lost_triangulate, quat_triangulate

OBSERVATION_SCHEMA = 1
ESTIMATE_SCHEMA = 1


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


# ---------------------------------------------------------------------------
# Observation JSON
# ---------------------------------------------------------------------------

def _attitude_from_json(d: dict) -> Rotation:
    if "matrix" in d:
        return Rotation(np.array(d["matrix"], dtype=float))
    if "quaternion" in d:
        return Rotation.from_quaternion(np.array(d["quaternion"], dtype=float))
    raise MalformedHeader("attitude needs a 'matrix' or a scalar-last 'quaternion'")


def load_observations(path) -> list:
    """Read the versioned observation JSON document.

    Schema 1: ``{"schema": 1, "observations": [{"pixel": [u, v],
    "intrinsics": {dx, dy, alpha, up, vp}, "attitude": {"matrix": ...} |
    {"quaternion": [x, y, z, w]}, "anchor": [x, y, z], "sigma_px": s}]}``.
    Quaternions are scalar-last Hamilton.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedHeader(f"cannot read observation JSON: {exc}") from None
    if doc.get("schema") != OBSERVATION_SCHEMA:
        raise MalformedHeader(f"unsupported observation schema {doc.get('schema')!r}")
    obs = []
    try:
        for o in doc["observations"]:
            K = CameraIntrinsics(**o["intrinsics"])
            obs.append(
                LosObservation(
                    pixel=PixelPoint(*[float(v) for v in o["pixel"]]),
                    intrinsics=K,
                    attitude=_attitude_from_json(o["attitude"]),
                    anchor=np.array(o["anchor"], dtype=float),
                    pixel_cov=PixelCovariance.isotropic(float(o["sigma_px"])),
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedHeader(f"malformed observation record: {exc}") from None
    return obs


def dump_observations(obs, path=None) -> str:
    doc = {
        "schema": OBSERVATION_SCHEMA,
        "observations": [
            {
                "pixel": [ob.pixel.u, ob.pixel.v],
                "intrinsics": {
                    "dx": ob.intrinsics.dx,
                    "dy": ob.intrinsics.dy,
                    "alpha": ob.intrinsics.alpha,
                    "up": ob.intrinsics.up,
                    "vp": ob.intrinsics.vp,
                },
                "attitude": {"matrix": ob.attitude.matrix.tolist()},
                "anchor": np.asarray(ob.anchor, dtype=float).tolist(),
                "sigma_px": ob.pixel_cov.sigma_u,
            }
            for ob in obs
        ],
    }
    text = json.dumps(doc, sort_keys=True, indent=2)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return text


def _estimate_json(method: str, est) -> str:
    d = {
        "schema": ESTIMATE_SCHEMA,
        "method": method,
        "position": est.position.tolist(),
        "covariance": None if est.covariance is None else est.covariance.tolist(),
        "diagnostics": {
            "condition_number": est.diagnostics.condition_number,
            "residual_norm": est.diagnostics.residual_norm,
            "warnings": list(est.diagnostics.warnings),
        },
    }
    return json.dumps(d, sort_keys=True, indent=2)


_TRIANGULATE_METHODS = (
    "dlt", "dlt-unit", "plucker", "collinearity", "range", "hs", "quat", "lost"
)


def _run_triangulate(args) -> int:
    obs = load_observations(args.infile)
    m = args.method
    if m == "dlt":
        est = dlt_triangulate(obs, LosNormalization.ImagePlane,
                              with_covariance=True)
    elif m == "dlt-unit":
        est = dlt_triangulate(obs, LosNormalization.UnitVector,
                              with_covariance=True)
    elif m == "plucker":
        est = plucker_triangulate(obs)
    elif m == "collinearity":
        est = collinearity_triangulate(obs)
    elif m == "range":
        est = explicit_range_triangulate(obs)
    elif m == "hs":
        _, _, est = hs_triangulate(obs[0], obs[1])
    elif m == "quat":
        _, _, est = quat_triangulate(obs[0], obs[1])
    else:
        est = lost_triangulate(obs)
    print(_estimate_json(m, est))
    return 0


# ---------------------------------------------------------------------------
# Scenario / map / sweep commands
# ---------------------------------------------------------------------------

def _run_scenario(args) -> int:
    from .montecarlo import run_monte_carlo
    from .scenarios import ScenarioConfig

    with open(args.config, "r", encoding="utf-8") as fh:
        cfg = ScenarioConfig.from_json(fh.read())
    overrides = {}
    if args.samples is not None:
        overrides["samples"] = args.samples
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.methods:
        overrides["methods"] = tuple(args.methods.split(","))
    if overrides:
        d = cfg.to_json_dict()
        d.update(overrides)
        cfg = ScenarioConfig.from_json_dict(d)
    report = run_monte_carlo(cfg, backend=args.backend, threads=args.threads)
    d = report.to_json_dict()
    del d["runtime_s"]  # keep output byte-identical across runs
    print(json.dumps(d, sort_keys=True, indent=2))
    return 0


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    text = buf.getvalue()
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _run_uranus_map(args) -> int:
    from .montecarlo import CSV_HEADER, run_monte_carlo
    from .scenarios import (
        VisibilityRule,
        analytic_total_std,
        build_moon_point_scenario,
        build_uranus_grid,
    )

    grid = build_uranus_grid(extent_km=args.extent, resolution=args.resolution,
                             rule=VisibilityRule())
    rows = []
    sampled = 0
    for cell in grid:
        if not cell["triangulable"]:
            continue
        pos = cell["position"]
        cfg = build_moon_point_scenario(pos, methods=("dlt", "lost"),
                                        samples=args.samples, seed=args.seed)
        sample_std = {}
        if args.mc_points and sampled < args.mc_points:
            rep = run_monte_carlo(cfg, backend=args.backend, threads=args.threads)
            sample_std = {m: rep.methods[m].total_std for m in cfg.methods}
            sampled += 1
        stds = {m: analytic_total_std(cfg, m) for m in cfg.methods}
        for m in cfg.methods:
            loss = 100.0 * (stds[m] / stds["lost"] - 1.0)
            rows.append([pos[0], pos[1], m, stds[m],
                         sample_std.get(m, ""), loss])
    _write_csv(args.out, CSV_HEADER, rows)
    return 0


def _run_trn_sweep(args) -> int:
    from .montecarlo import run_monte_carlo
    from .scenarios import analytic_total_std, build_trn_scenario

    altitudes = [float(a) for a in args.altitudes.split(",")]
    methods = tuple(args.methods.split(","))
    rows = []
    for alt in altitudes:
        cfg = build_trn_scenario(args.variant, alt, methods=methods,
                                 samples=args.samples, seed=args.seed)
        sample_std = {}
        if args.samples > 0 and args.mc:
            rep = run_monte_carlo(cfg, backend=args.backend, threads=args.threads)
            sample_std = {m: rep.methods[m].total_std for m in methods}
        stds = {m: analytic_total_std(cfg, m) for m in methods}
        ref = stds.get("lost", min(stds.values()))
        for m in methods:
            rows.append([alt, args.variant, m, stds[m],
                         sample_std.get(m, ""), 100.0 * (stds[m] / ref - 1.0)])
    header = ["altitude_m", "variant", "method", "sigma_analytic",
              "sigma_sample", "loss_pct"]
    _write_csv(args.out, header, rows)
    return 0


def _run_relnav(args) -> int:
    from .dynamic import dynamic_dlt, observability_report
    from .errors import Unobservable
    from .scenarios import build_relnav_scenario

    offset = np.array([float(v) for v in args.offset.split(",")])
    out = {"schema": 1}

    base = build_relnav_scenario(n_epochs=args.epochs)
    obs0 = base.observations()
    rep0 = observability_report(obs0, base.stm)
    try:
        dynamic_dlt(obs0, base.stm)
        out["chief_at_origin"] = {"unobservable": False}
    except Unobservable as exc:
        out["chief_at_origin"] = {"unobservable": True, "detail": str(exc)}
    nd = rep0["null_directions"]
    cosine = None
    if len(nd):
        v = nd[0]
        cosine = float(
            abs(v @ base.xi0) / (np.linalg.norm(v) * np.linalg.norm(base.xi0))
        )
    out["chief_at_origin"].update(
        {
            "singular_values": [float(s) for s in rep0["singular_values"]],
            "homothety": bool(rep0["homothety"]),
            "null_alignment_with_truth": cosine,
        }
    )

    shifted = build_relnav_scenario(n_epochs=args.epochs, target_offset=offset)
    est = dynamic_dlt(shifted.observations(), shifted.stm)
    err = float(np.linalg.norm(est.xi0 - shifted.xi0) / np.linalg.norm(shifted.xi0))
    out["with_offset"] = {
        "offset_m": offset.tolist(),
        "recovered_state": est.xi0.tolist(),
        "true_state": shifted.xi0.tolist(),
        "relative_error": err,
    }
    print(json.dumps(out, sort_keys=True, indent=2))
    return 0


def _run_reconstruct(args) -> int:
    from .bundler import (
        HISTOGRAM_CSV_HEADER,
        parse_bundler,
        retriangulate,
    )

    ds = parse_bundler(args.infile, strict=args.strict_distortion)
    for w in ds.warnings:
        print(f"warning: {w}", file=sys.stderr)
    methods = tuple(args.methods.split(","))
    report = retriangulate(ds, methods=methods, sigma_px=args.sigma_px,
                           allow_large_range=args.allow_large_range,
                           threads=args.threads)
    if args.hist_csv:
        _write_csv(args.hist_csv, HISTOGRAM_CSV_HEADER,
                   report.histogram_csv_rows(args.hist_bins))
    print(report.to_json())
    return 0


def _run_selftest(args) -> int:
    """Quick end-to-end invariant check; exits nonzero on any failure."""
    from .linear import dlt_covariance, explicit_range_covariance_n2
    from .optimal import hs_covariance, lost_covariance
    from .montecarlo import run_monte_carlo
    from .scenarios import build_trn_scenario

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(2024)))
    failures = []

    def check(label, ok):
        print(f"{'ok  ' if ok else 'FAIL'} {label}")
        if not ok:
            failures.append(label)

    # noise-free exactness across solvers on random geometries
    from .camera import camera_from_fov, image_plane_to_pixel, ImagePlanePoint
    from .scenarios import pointing_attitude

    worst = 0.0
    for _ in range(args.geometries):
        n = int(rng.integers(2, 6))
        truth = rng.normal(scale=10.0, size=3)
        obs = []
        K = camera_from_fov(60.0, 1024)
        for i in range(n):
            p = truth + rng.normal(scale=50.0, size=3)
            T = pointing_attitude(truth, p)
            v = T.matrix @ (p - truth)
            x = ImagePlanePoint(v[0] / v[2], v[1] / v[2])
            pix = image_plane_to_pixel(K, x)
            obs.append(LosObservation(pixel=pix, intrinsics=K, attitude=T,
                                      anchor=p,
                                      pixel_cov=PixelCovariance.isotropic(0.1)))
        for solver in (
            lambda o: dlt_triangulate(o).position,
            lambda o: lost_triangulate(o).position,
        ):
            err = np.linalg.norm(solver(obs) - truth) / max(1.0, np.linalg.norm(truth))
            worst = max(worst, err)
    check(f"noise-free exactness ({args.geometries} geometries, worst {worst:.2e})",
          worst < 1e-9)

    # two-view covariance identity
    cfg = build_trn_scenario("canted45", 1000.0)
    obs = cfg.observations()
    Pl = lost_covariance(obs)
    Ph = hs_covariance(obs[0], obs[1])
    rel = np.linalg.norm(Pl - Ph) / np.linalg.norm(Pl)
    check(f"two-view covariance identity (rel {rel:.2e})", rel < 1e-10)

    # Monte Carlo determinism
    cfg = build_trn_scenario("canted45", 1000.0, samples=2000, seed=11)
    d1 = run_monte_carlo(cfg, threads=1).to_json_dict()
    d2 = run_monte_carlo(cfg, threads=4).to_json_dict()
    d1.pop("runtime_s"), d2.pop("runtime_s")
    check("Monte Carlo bit-determinism across worker counts",
          json.dumps(d1, sort_keys=True) == json.dumps(d2, sort_keys=True))

    # analytic vs sample std coarse agreement
    rep = run_monte_carlo(cfg)
    st = rep.methods["lost"]
    ratio = st.total_std / st.analytic_total_std
    check(f"sample/analytic std ratio {ratio:.3f} within 10%",
          abs(ratio - 1.0) < 0.1)

    if failures:
        raise NumericalError(f"selftest failures: {', '.join(failures)}")
    print("selftest passed")
    return 0


# ---------------------------------------------------------------------------
# Parser assembly
# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    p = _Parser(prog="trilost", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"trilost {__version__}")
    p.add_argument("--json-errors", action="store_true",
                   help="emit machine-readable error JSON on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("triangulate", help="triangulate one JSON observation set")
    t.add_argument("--method", choices=_TRIANGULATE_METHODS, default="lost")
    t.add_argument("--in", dest="infile", required=True)
    t.set_defaults(func=_run_triangulate)

    sc = sub.add_parser("scenario", help="scenario operations")
    scsub = sc.add_subparsers(dest="scenario_command", required=True)
    sr = scsub.add_parser("run", help="Monte Carlo over a scenario config")
    sr.add_argument("--config", required=True)
    sr.add_argument("--samples", type=int, default=None)
    sr.add_argument("--seed", type=int, default=None)
    sr.add_argument("--methods", default=None, help="comma-separated override")
    sr.add_argument("--backend", default="auto")
    sr.add_argument("--threads", type=int, default=None)
    sr.set_defaults(func=_run_scenario)

    um = sub.add_parser("uranus-map", help="two-moon precision map CSV")
    um.add_argument("--out", default="-")
    um.add_argument("--resolution", type=int, default=101)
    um.add_argument("--extent", type=float, default=3.0e6)
    um.add_argument("--mc-points", type=int, default=0,
                    help="also Monte Carlo the first N triangulable points")
    um.add_argument("--samples", type=int, default=10000)
    um.add_argument("--seed", type=int, default=0)
    um.add_argument("--backend", default="auto")
    um.add_argument("--threads", type=int, default=None)
    um.set_defaults(func=_run_uranus_map)

    ts = sub.add_parser("trn-sweep", help="descent-scenario precision sweep CSV")
    ts.add_argument("--variant", choices=("nadir", "canted45"), default="canted45")
    ts.add_argument("--altitudes", default="400,600,800,1000,1500,2000")
    ts.add_argument("--methods", default="dlt,lost")
    ts.add_argument("--mc", action="store_true", help="add sampled stds")
    ts.add_argument("--samples", type=int, default=10000)
    ts.add_argument("--seed", type=int, default=0)
    ts.add_argument("--backend", default="auto")
    ts.add_argument("--threads", type=int, default=None)
    ts.add_argument("--out", default="-")
    ts.set_defaults(func=_run_trn_sweep)

    rn = sub.add_parser("relnav", help="relative-navigation operations")
    rnsub = rn.add_subparsers(dest="relnav_command", required=True)
    rd = rnsub.add_parser("demo", help="observability demo with and without offset")
    rd.add_argument("--offset", default="10,0,0")
    rd.add_argument("--epochs", type=int, default=10)
    rd.set_defaults(func=_run_relnav)

    rc = sub.add_parser("reconstruct", help="re-triangulate a Bundler dataset")
    rc.add_argument("--in", dest="infile", required=True)
    rc.add_argument("--methods", default="dlt,lost")
    rc.add_argument("--sigma-px", type=float, default=0.5)
    rc.add_argument("--hist-csv", default=None)
    rc.add_argument("--hist-bins", type=int, default=20)
    rc.add_argument("--strict-distortion", action="store_true")
    rc.add_argument("--allow-large-range", action="store_true")
    rc.add_argument("--threads", type=int, default=None)
    rc.set_defaults(func=_run_reconstruct)

    st = sub.add_parser("selftest", help="run the built-in invariant suite")
    st.add_argument("--geometries", type=int, default=200)
    st.set_defaults(func=_run_selftest)

    return p


def _emit_error(args_jsonerr: bool, exc: Exception, code: int) -> None:
    print(f"error: {exc}", file=sys.stderr)
    if args_jsonerr:
        doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        print(json.dumps(doc, sort_keys=True), file=sys.stderr)


def cli_main(argv=None) -> int:
    parser = _build_parser()
    json_errors = bool(argv and "--json-errors" in argv) or "--json-errors" in sys.argv
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        if json_errors:
            doc = {"error": "UsageError", "message": str(exc), "exit_code": 1}
            print(json.dumps(doc, sort_keys=True), file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (DataError, OSError) as exc:
        _emit_error(args.json_errors, exc, 2)
        return 2
    except NumericalError as exc:
        _emit_error(args.json_errors, exc, 3)
        return 3


def main() -> None:  # console-script entry point
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
