import csv
import json
import math
from importlib import resources

import numpy as np
import pytest
from scipy.stats import norm

from hdcqr.cli import EXIT_IDENT, EXIT_INPUT, EXIT_OK, main, read_config
from hdcqr.errors import DataError

TINY = str(resources.files("hdcqr") / "datasets" / "tiny.csv")
FAST = ["--grid-m", "12", "--B", "20", "--seed", "3"]


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def tiny_fit(tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    assert main(["fit", "--data", TINY, "--out", str(out)] + FAST) == EXIT_OK
    return out


def test_fit_outputs(tiny_fit):
    rows = _rows(tiny_fit / "coefficients.csv")
    assert len(rows) == 13 * 5
    assert {r["feature"] for r in rows} == {"intercept", "age", "dose", "marker", "noise"}
    meta = json.loads((tiny_fit / "run.json").read_text())
    assert meta["config"]["B"] == 20 and meta["config"]["grid_m"] == 12
    assert "threads" not in meta["config"]
    assert len(_rows(tiny_fit / "selection_freq.csv")) == 5
    cv = _rows(tiny_fit / "cv_errors.csv")
    assert sum(r["selected"] == "1" for r in cv) == 1


def test_fit_interval_width(tiny_fit):
    z = norm.ppf(0.975)
    checked = 0
    for r in _rows(tiny_fit / "coefficients.csv"):
        if r["se"] == "NA":
            continue
        se = float(r["se"])
        width = float(r["ci_hi"]) - float(r["ci_lo"])
        assert width == pytest.approx(2 * z * se, rel=1e-9, abs=1e-12)
        checked += 1
    assert checked > 0


def test_fit_report_taus(tmp_path):
    argv = ["fit", "--data", TINY, "--out", str(tmp_path), "--report-taus", "0.25,0.5"] + FAST
    assert main(argv) == EXIT_OK
    rows = _rows(tmp_path / "coefficients.csv")
    assert len(rows) == 10
    assert {float(r["tau"]) for r in rows} == {0.25, 0.5}


def test_cv_single_lambda(tmp_path):
    argv = ["cv", "--data", TINY, "--out", str(tmp_path), "--lambda-grid", "0.05"] + FAST
    assert main(argv) == EXIT_OK
    rows = _rows(tmp_path / "cv_errors.csv")
    assert len(rows) == 1 and rows[0]["selected"] == "1"


def test_cv_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["cv", "--data", TINY, "--out", str(d)] + FAST) == EXIT_OK
    text = (a / "cv_errors.csv").read_bytes()
    assert text == (b / "cv_errors.csv").read_bytes()
    rows = _rows(a / "cv_errors.csv")
    assert len(rows) == 8 and sum(r["selected"] == "1" for r in rows) == 1
    assert list(rows[0]) == ["lambda", "cv_error", "fold_1", "fold_2", "fold_3", "fold_4",
                             "fold_5", "violations", "degenerate", "selected"]


def test_simulate_single_rep(tmp_path):
    argv = ["simulate", "--example", "1", "--n", "60", "--p", "70", "--reps", "1", "--B", "4",
            "--grid-m", "8", "--null-coefs", "2", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    rows = _rows(tmp_path / "metrics.csv")
    assert len(rows) == (1 + 3 + 2) * 3
    assert all(r["empsd"] == "NA" for r in rows)
    sel = _rows(tmp_path / "selection.csv")
    assert float(sel[0]["tp"]) <= 3
    meta = json.loads((tmp_path / "run.json").read_text())
    assert meta["config"]["example"] == 1 and meta["truth"]["support"] == [20, 40, 60]


def test_config_file_and_precedence(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# settings\nnu = 0.15\nfolds=3\nseed=9\nB=6\ngrid_m=10\n")
    out = tmp_path / "o"
    assert main(["cv", "--data", TINY, "--config", str(conf), "--seed", "4",
                 "--out", str(out)]) == EXIT_OK
    assert len(_rows(out / "cv_errors.csv")[0]) == 2 + 3 + 3
    vals = read_config(conf)
    assert vals == {"nu": 0.15, "K": 3, "seed": 9, "B": 6, "grid_m": 10}


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.conf"
    bad.write_text("bogus = 1\n")
    with pytest.raises(DataError):
        read_config(bad)
    assert main(["cv", "--data", TINY, "--config", str(bad), "--out", str(tmp_path)]) == EXIT_INPUT


def test_exit_missing_file(tmp_path):
    assert main(["fit", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == EXIT_INPUT


def test_exit_bad_levels(tmp_path):
    assert main(["cv", "--data", TINY, "--nu", "0.5", "--tau-u", "0.4",
                 "--out", str(tmp_path)]) == EXIT_INPUT


def test_exit_unknown_example(tmp_path):
    assert main(["simulate", "--example", "5", "--out", str(tmp_path)]) == EXIT_INPUT


def test_exit_identifiability(tmp_path, capsys):
    code = main(["cv", "--data", TINY, "--tau-u", "0.99", "--grid-m", "20",
                 "--out", str(tmp_path)])
    assert code == EXIT_IDENT
    err = capsys.readouterr().err
    assert "last identifiable level" in err


def test_fmt_na():
    from hdcqr.cli import _fmt
    assert _fmt(math.nan) == "NA" and _fmt(0.1) == "0.1" and _fmt(np.True_) == "1"
