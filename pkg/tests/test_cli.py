"""Command-line surface: exit codes, determinism, serialization round trips."""

import csv
import io
import json
import pathlib

import numpy as np
import pytest

import trilost as tl
from trilost.bundler import synthetic_dataset, write_bundler
from trilost.cli import (
    cli_main,
    dump_observations,
    load_observations,
)

DATA = pathlib.Path(__file__).parent / "data"
FIXTURE_A = DATA / "fixture_a.json"


def run_cli(capsys, *argv):
    code = cli_main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def parallel_ray_doc():
    """Two observations sharing one line of sight: no triangulation exists."""
    rec = {
        "intrinsics": {"dx": 1.0, "dy": 1.0, "alpha": 0.0, "up": 0.0, "vp": 0.0},
        "attitude": {"matrix": np.eye(3).tolist()},
        "pixel": [0.0, 0.0],
        "sigma_px": 0.1,
    }
    return {
        "schema": 1,
        "observations": [dict(rec, anchor=[0.0, 0.0, 1.0]),
                         dict(rec, anchor=[0.0, 0.0, 2.0])],
    }


class TestTriangulate:
    @pytest.mark.parametrize("method", ["dlt", "dlt-unit", "plucker",
                                        "collinearity", "range", "hs",
                                        "quat", "lost"])
    def test_every_method_solves_the_fixture(self, capsys, method):
        code, out, _ = run_cli(capsys, "triangulate", "--method", method,
                               "--in", str(FIXTURE_A))
        assert code == 0
        doc = json.loads(out)
        assert doc["schema"] == 1
        assert doc["method"] == method
        np.testing.assert_allclose(doc["position"], [0.0, 0.0, 0.0], atol=1e-9)
        assert set(doc["diagnostics"]) == {"condition_number", "residual_norm",
                                           "warnings"}

    def test_dlt_reports_covariance(self, capsys):
        code, out, _ = run_cli(capsys, "triangulate", "--method", "dlt",
                               "--in", str(FIXTURE_A))
        assert code == 0
        P = np.array(json.loads(out)["covariance"])
        assert P.shape == (3, 3)
        np.testing.assert_allclose(P, P.T)
        assert np.all(np.linalg.eigvalsh(P) > 0)

    def test_quaternion_attitude_accepted(self, capsys, tmp_path):
        doc = json.loads(FIXTURE_A.read_text())
        for o in doc["observations"]:
            o["attitude"] = {"quaternion": [0.0, 0.0, 0.0, 1.0]}
        f = tmp_path / "quat.json"
        f.write_text(json.dumps(doc))
        code, out, _ = run_cli(capsys, "triangulate", "--in", str(f))
        assert code == 0
        np.testing.assert_allclose(json.loads(out)["position"], np.zeros(3),
                                   atol=1e-9)

    def test_attitude_without_rotation_rejected(self, capsys, tmp_path):
        doc = json.loads(FIXTURE_A.read_text())
        doc["observations"][0]["attitude"] = {"euler": [0, 0, 0]}
        f = tmp_path / "bad.json"
        f.write_text(json.dumps(doc))
        code, _, err = run_cli(capsys, "triangulate", "--in", str(f))
        assert code == 2
        assert "matrix" in err


class TestObservationJson:
    def test_load_dump_round_trip(self, tmp_path):
        obs = load_observations(FIXTURE_A)
        f = tmp_path / "dumped.json"
        dump_observations(obs, f)
        back = load_observations(f)
        assert len(back) == len(obs) == 2
        for a, b in zip(back, obs):
            assert (a.pixel.u, a.pixel.v) == (b.pixel.u, b.pixel.v)
            np.testing.assert_array_equal(a.attitude.matrix, b.attitude.matrix)
            np.testing.assert_array_equal(a.anchor, b.anchor)
            assert a.intrinsics == b.intrinsics
            assert a.pixel_cov.sigma_u == b.pixel_cov.sigma_u

    def test_quaternion_matches_matrix_form(self, tmp_path):
        # z-axis quarter turn, scalar-last, active convention.
        s = np.sqrt(0.5)
        q = [0.0, 0.0, s, s]
        R = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        base = json.loads(FIXTURE_A.read_text())["observations"][0]
        doc_q = {"schema": 1, "observations": [dict(base, attitude={"quaternion": q})]}
        doc_m = {"schema": 1, "observations": [dict(base, attitude={"matrix": R.tolist()})]}
        fq, fm = tmp_path / "q.json", tmp_path / "m.json"
        fq.write_text(json.dumps(doc_q))
        fm.write_text(json.dumps(doc_m))
        oq = load_observations(fq)[0]
        om = load_observations(fm)[0]
        np.testing.assert_allclose(oq.attitude.matrix, om.attitude.matrix,
                                   atol=1e-15)

    def test_wrong_schema_rejected(self, tmp_path):
        f = tmp_path / "v9.json"
        f.write_text(json.dumps({"schema": 9, "observations": []}))
        with pytest.raises(tl.MalformedHeader, match="schema"):
            load_observations(f)


class TestExitCodes:
    def test_usage_error_is_exit_1(self, capsys):
        code, _, err = run_cli(capsys, "no-such-command")
        assert code == 1
        assert "usage error" in err

    def test_usage_error_json(self, capsys):
        code, _, err = run_cli(capsys, "--json-errors", "no-such-command")
        assert code == 1
        doc = json.loads(err.strip().splitlines()[-1])
        assert doc == {"error": "UsageError", "message": doc["message"],
                       "exit_code": 1}

    def test_data_error_is_exit_2(self, capsys, tmp_path):
        missing = tmp_path / "nope.json"
        code, _, err = run_cli(capsys, "triangulate", "--in", str(missing))
        assert code == 2
        assert "error:" in err

    def test_data_error_json(self, capsys, tmp_path):
        f = tmp_path / "broken.json"
        f.write_text("{not json")
        code, _, err = run_cli(capsys, "--json-errors", "triangulate",
                               "--in", str(f))
        assert code == 2
        doc = json.loads(err.strip().splitlines()[-1])
        assert doc["error"] == "MalformedHeader"
        assert doc["exit_code"] == 2

    def test_numerical_error_is_exit_3(self, capsys, tmp_path):
        f = tmp_path / "parallel.json"
        f.write_text(json.dumps(parallel_ray_doc()))
        code, _, err = run_cli(capsys, "--json-errors", "triangulate",
                               "--method", "lost", "--in", str(f))
        assert code == 3
        doc = json.loads(err.strip().splitlines()[-1])
        assert doc["exit_code"] == 3

    def test_missing_scenario_config_is_exit_2(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "scenario", "run", "--config",
                               str(tmp_path / "absent.json"))
        assert code == 2

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli_main(["--version"])
        assert exc.value.code == 0
        assert capsys.readouterr().out.startswith("trilost ")


class TestScenarioRun:
    def make_config(self, tmp_path, samples=1024):
        cfg = tl.build_trn_scenario("canted45", 1000.0, samples=samples, seed=7)
        f = tmp_path / "cfg.json"
        f.write_text(cfg.to_json())
        return f

    def test_output_is_byte_identical_across_runs(self, capsys, tmp_path):
        f = self.make_config(tmp_path)
        argv = ("scenario", "run", "--config", str(f), "--threads", "2")
        code1, out1, _ = run_cli(capsys, *argv)
        code2, out2, _ = run_cli(capsys, *argv)
        assert code1 == code2 == 0
        assert out1 == out2
        doc = json.loads(out1)
        assert "runtime_s" not in doc
        assert set(doc["methods"]) == {"hs", "quat", "lost"}

    def test_cli_overrides_apply(self, capsys, tmp_path):
        f = self.make_config(tmp_path, samples=4096)
        code, out, _ = run_cli(capsys, "scenario", "run", "--config", str(f),
                               "--samples", "256", "--seed", "3",
                               "--methods", "dlt,lost")
        assert code == 0
        doc = json.loads(out)
        assert doc["samples"] == 256
        assert doc["seed"] == 3
        assert set(doc["methods"]) == {"dlt", "lost"}

    def test_seed_changes_the_stream(self, capsys, tmp_path):
        f = self.make_config(tmp_path)
        _, out1, _ = run_cli(capsys, "scenario", "run", "--config", str(f),
                             "--seed", "1")
        _, out2, _ = run_cli(capsys, "scenario", "run", "--config", str(f),
                             "--seed", "2")
        assert out1 != out2


class TestSweepsAndMaps:
    def test_trn_sweep_csv(self, capsys):
        code, out, _ = run_cli(capsys, "trn-sweep", "--variant", "canted45",
                               "--altitudes", "500,1000",
                               "--methods", "dlt,lost", "--out", "-")
        assert code == 0
        rows = list(csv.reader(io.StringIO(out)))
        assert rows[0] == ["altitude_m", "variant", "method", "sigma_analytic",
                           "sigma_sample", "loss_pct"]
        assert len(rows) == 1 + 4  # two altitudes x two methods
        by = {(r[0], r[2]): r for r in rows[1:]}
        assert float(by[("500.0", "lost")][5]) == 0.0
        assert float(by[("500.0", "dlt")][5]) > 0.0

    def test_uranus_map_csv(self, capsys, tmp_path):
        out_csv = tmp_path / "map.csv"
        code, _, _ = run_cli(capsys, "uranus-map", "--resolution", "5",
                             "--extent", "1.5e6", "--out", str(out_csv))
        assert code == 0
        rows = list(csv.reader(out_csv.open()))
        assert rows[0] == ["x", "y", "method", "sigma_analytic",
                           "sigma_sample", "loss_pct"]
        assert len(rows) > 1
        for r in rows[1:]:
            assert r[2] in ("dlt", "lost")
            assert r[4] == ""  # no Monte Carlo sampling requested
            if r[2] == "lost":
                assert float(r[5]) == 0.0

    def test_relnav_demo(self, capsys):
        code, out, _ = run_cli(capsys, "relnav", "demo", "--offset", "10,0,5",
                               "--epochs", "8")
        assert code == 0
        doc = json.loads(out)
        origin = doc["chief_at_origin"]
        assert origin["unobservable"] is True
        assert origin["homothety"] is True
        assert origin["null_alignment_with_truth"] == pytest.approx(1.0, abs=1e-6)
        assert doc["with_offset"]["relative_error"] < 1e-6


class TestReconstruct:
    def test_reconstruct_with_histogram_csv(self, capsys, tmp_path):
        ds = synthetic_dataset(n_points=25, n_cameras=6, noise_px=0.4, seed=12)
        infile = tmp_path / "scene.out"
        write_bundler(ds, infile)
        hist = tmp_path / "hist.csv"
        code, out, err = run_cli(capsys, "reconstruct", "--in", str(infile),
                                 "--methods", "dlt,lost",
                                 "--hist-csv", str(hist), "--hist-bins", "8")
        assert code == 0
        doc = json.loads(out)
        assert doc["schema"] == 1
        assert doc["n_points"] == ds.n_points

        rows = list(csv.reader(hist.open()))
        assert rows[0] == ["method", "bin_low", "bin_high", "count"]
        assert len(rows) == 1 + 2 * 8
        for m in ("dlt", "lost"):
            csv_total = sum(int(r[3]) for r in rows[1:] if r[0] == m)
            assert csv_total == doc["n_points"] - doc["methods"][m]["failures"]

    def test_strict_distortion_refused(self, capsys, tmp_path):
        text = (DATA / "minimal.out").read_text().replace(
            "100.0 0.0 0.0", "100.0 0.01 0.0")
        infile = tmp_path / "distorted.out"
        infile.write_text(text)
        code, _, err = run_cli(capsys, "reconstruct", "--in", str(infile),
                               "--strict-distortion")
        assert code == 2
        assert "distortion" in err

        code, out, err = run_cli(capsys, "reconstruct", "--in", str(infile))
        assert code == 0
        assert "warning" in err


class TestSelftest:
    def test_selftest_passes(self, capsys):
        code, out, _ = run_cli(capsys, "selftest", "--geometries", "25")
        assert code == 0
        assert "selftest passed" in out
        assert "FAIL" not in out
