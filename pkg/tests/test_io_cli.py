import csv
import json

import numpy as np
import pytest

from lagr import Dataset, InputError
from lagr.cli import RUNTIME_KEYS, main
from lagr.errors import ConfigurationError, ParseError, SchemaError
from lagr.io import (BOSTON_SCHEMA, SURFACE_COLUMNS, DatasetSchema, load_dataset, read_scenario_file,
                     write_dataset)

from conftest import random_dataset

SCHEMA = DatasetSchema("u", "v", "y", ("X1", "X2"))


def _write(path, text):
    path.write_text(text)
    return str(path)


def test_load_small_file(tmp_path):
    p = _write(tmp_path / "d.csv", "u,v,y,X1,X2\n0,0,1,2,3\n1,0,2,3,4\n0,1,3,4,5\n")
    ds = load_dataset(p, SCHEMA)
    assert ds.n == 3 and ds.p == 3 and ds.intercept_included
    assert ds.covariate_names == ("(Intercept)", "X1", "X2")


def test_load_errors(tmp_path):
    p = _write(tmp_path / "a.csv", "u,v,X1,X2\n0,0,1,2\n")
    with pytest.raises(SchemaError, match="y"):
        load_dataset(p, SCHEMA)
    p = _write(tmp_path / "b.csv", "u,v,y,X1,X2\n0,0,1,2,3\n0,0,1,abc,3\n")
    with pytest.raises(ParseError, match="row 3"):
        load_dataset(p, SCHEMA)
    with pytest.raises(InputError):
        load_dataset(str(tmp_path / "missing.csv"), SCHEMA)
    p = _write(tmp_path / "c.csv", "")
    with pytest.raises(SchemaError):
        load_dataset(p, SCHEMA)


def test_duplicate_rows_accepted(tmp_path):
    p = _write(tmp_path / "d.csv", "u,v,y,X1,X2\n0,0,1,2,3\n0,0,1,2,3\n")
    assert load_dataset(p, SCHEMA).n == 2


def test_round_trip_is_exact(tmp_path):
    ds = random_dataset(np.random.default_rng(0), n=25)
    schema = write_dataset(str(tmp_path / "rt.csv"), ds)
    back = load_dataset(str(tmp_path / "rt.csv"), schema)
    assert back == ds


def test_boston_bundled():
    ds = load_dataset("@boston", BOSTON_SCHEMA)
    assert ds.n == 506
    assert ds.p - 1 == 5
    assert ds.covariate_names[1:] == ("CRIM", "RM", "RAD", "TAX", "LSTAT")


def test_scenario_file(tmp_path):
    p = _write(tmp_path / "s.ini", "[study]\nn = 100,200\nrho = 0\nsigma_eps = 0.5,1\nreplicates = 1\nseed = 4\n")
    settings, opts = read_scenario_file(p)
    assert len(settings) == 4 and all(s.seed == 4 for s in settings)
    p = _write(tmp_path / "e.ini", "[study]\nn =\n")
    with pytest.raises(ConfigurationError, match="empty"):
        read_scenario_file(p)
    p = _write(tmp_path / "u.ini", "[study]\nbogus = 1\n")
    with pytest.raises(ConfigurationError, match="bogus"):
        read_scenario_file(p)
    p = _write(tmp_path / "r.ini", "[study]\nrho = 1.0\n")
    with pytest.raises(ConfigurationError, match="rho"):
        read_scenario_file(p)


def test_full_study_grid_shape(tmp_path):
    p = _write(tmp_path / "s.ini", "[study]\nreplicates = 5\n")
    settings, opts = read_scenario_file(p)
    assert len(settings) == 18 and opts["methods"] == ["LAGR", "VCR"]


@pytest.fixture
def small_csv(tmp_path):
    ds = random_dataset(np.random.default_rng(3), n=40)
    path = str(tmp_path / "small.csv")
    write_dataset(path, ds, SCHEMA)
    return path


def _fit_args(path, out, *extra):
    return ["fit", "--input", path, "--x-col", "u", "--y-col", "v", "--response", "y", "--covariates", "X1,X2",
            "--bandwidth", "0.4", "--output-dir", str(out)] + list(extra)


def _read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_cli_fit_outputs(small_csv, tmp_path):
    out = tmp_path / "fit"
    assert main(_fit_args(small_csv, out, "--workers", "1")) == 0
    rows = _read_rows(out / "surface.csv")
    assert tuple(rows[0]) == SURFACE_COLUMNS
    assert len(rows) == 40 * 3
    for r in rows:
        zero = float(r["estimate"]) == 0 and float(r["gradient_u"]) == 0 and float(r["gradient_v"]) == 0
        assert (r["active"] == "false") == zero
    path_rows = _read_rows(out / "tuning_path.csv")
    assert len(path_rows) == 40 * 50
    man = json.loads((out / "manifest.json").read_text())
    for key in ("gamma", "lam", "grid_points", "grid_ratio", "bandwidth", "bandwidth_mode", "family", "kernel",
                "method", "standardize"):
        assert key in man["config"]
    assert man["seed"] == 1 and man["input"]["n"] == 40


def _same_outputs(a, b, names):
    for name in names:
        if name == "manifest.json":
            da, db = (json.loads((d / name).read_text()) for d in (a, b))
            for k in RUNTIME_KEYS:
                da.pop(k), db.pop(k)
            assert da == db
        else:
            assert (a / name).read_bytes() == (b / name).read_bytes()


def test_cli_fit_worker_determinism_and_manifest_rerun(small_csv, tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(_fit_args(small_csv, a, "--workers", "1")) == 0
    assert main(_fit_args(small_csv, b, "--workers", "8")) == 0
    names = ("surface.csv", "tuning_path.csv", "manifest.json")
    _same_outputs(a, b, names)
    assert main(["fit", "--manifest", str(a / "manifest.json"), "--output-dir", str(c), "--workers", "1"]) == 0
    _same_outputs(a, c, names)


def test_cli_lambda_zero_equals_vcr(small_csv, tmp_path):
    assert main(_fit_args(small_csv, tmp_path / "l0", "--lambda", "0", "--workers", "1")) == 0
    assert main(_fit_args(small_csv, tmp_path / "vcr", "--method", "vcr", "--workers", "1")) == 0
    a = _read_rows(tmp_path / "l0" / "surface.csv")
    b = _read_rows(tmp_path / "vcr" / "surface.csv")
    cols = ("u", "v", "coefficient", "estimate", "gradient_u", "gradient_v")
    assert [[r[c] for c in cols] for r in a] == [[r[c] for c in cols] for r in b]


def test_cli_single_observation_fails_nonzero(tmp_path, capsys):
    p = _write(tmp_path / "one.csv", "u,v,y,X1,X2\n0,0,1,2,3\n")
    code = main(_fit_args(p, tmp_path / "o", "--workers", "1"))
    assert code == 1
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["failures"] and "DegenerateNeighborhoodError" in man["failures"][0]["error"]
    assert "failed" in capsys.readouterr().err


def test_cli_errors_exit_2(tmp_path, capsys):
    assert main(["fit", "--input", str(tmp_path / "nope.csv"), "--x-col", "u", "--y-col", "v", "--response", "y",
                 "--covariates", "X1", "--output-dir", str(tmp_path)]) == 2
    assert main(["fit", "--gamma", "1.0", "--output-dir", str(tmp_path), "--workers", "1"]) == 2
    assert "gamma" in capsys.readouterr().err
    empty = _write(tmp_path / "e.ini", "[study]\nsigma_eps =\n")
    assert main(["simulate", "--spec", empty, "--output-dir", str(tmp_path)]) == 2


def test_cli_simulate_determinism(tmp_path):
    spec = _write(tmp_path / "s.ini", "[study]\nn = 100\nrho = 0\nsigma_eps = 0.5\nreplicates = 1\nseed = 7\n")
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["simulate", "--spec", spec, "--output-dir", str(a), "--workers", "1"]) == 0
    assert main(["simulate", "--spec", spec, "--output-dir", str(b), "--workers", "8"]) == 0
    names = ("study.csv", "study_replicates.csv", "manifest.json")
    _same_outputs(a, b, names)
    rows = _read_rows(a / "study.csv")
    assert len(rows) == 2 * 4
    assert main(["simulate", "--manifest", str(a / "manifest.json"), "--output-dir", str(c), "--workers", "1"]) == 0
    _same_outputs(a, c, names)


def test_cli_oracle_flags_gamma(tmp_path, capsys):
    out = tmp_path / "or"
    code = main(["oracle", "--gamma", "1", "--ns", "100", "--replicates", "2", "--surface-replicates", "1",
                 "--output-dir", str(out), "--workers", "1"])
    assert code == 0
    rep = json.loads((out / "oracle_report.json").read_text())
    assert rep["gamma_ok"] is False and len(rep["levels"]) == 1
    cap = capsys.readouterr()
    assert "gamma" in cap.err and "zero-frequency gap" in cap.out


def test_cli_predict(small_csv, tmp_path):
    pts = _write(tmp_path / "p.csv", "u,v,X1,X2\n0.5,0.5,0.1,-0.2\n0.3,0.6,1.0,0.0\n")
    out = tmp_path / "pr"
    assert main(["predict", "--input", small_csv, "--x-col", "u", "--y-col", "v", "--response", "y",
                 "--covariates", "X1,X2", "--bandwidth", "0.5", "--at", pts, "--output-dir", str(out),
                 "--workers", "1"]) == 0
    rows = _read_rows(out / "predictions.csv")
    assert len(rows) == 2 and all(np.isfinite(float(r["prediction"])) for r in rows)


def test_output_dir_environment_override(small_csv, tmp_path, monkeypatch):
    monkeypatch.setenv("LAGR_OUTPUT_DIR", str(tmp_path / "env"))
    args = _fit_args(small_csv, "x", "--workers", "1")
    i = args.index("--output-dir")
    del args[i:i + 2]
    assert main(args) == 0
    assert (tmp_path / "env" / "surface.csv").exists()
