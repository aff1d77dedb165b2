"""End-to-end command-line runs in temporary directories."""

import csv
import io
import json

import numpy as np
import pytest

from cepsfield.cli import _coerce, _config_hash, _parse_beta, _parse_mask, main
from cepsfield.covariance import assemble, simulate
from cepsfield.datasets import mercer_hall_straw_path
from cepsfield.extensions import SelectionMap, SignalNoiseSpec, extract_signal
from cepsfield.lattice import LatticeSample
from cepsfield.model import CepstralGrid
from cepsfield.objectives import model_acf

P1_THETA = [0.3, 0.1, 0.2, 0.25, -0.05]
NOISE_THETA = [0.0, 0.0, 0.0, 0.0, -0.9]


def write_grid(path, theta=P1_THETA):
    CepstralGrid.from_free_params(1, theta).save(path)
    return str(path)


def write_lattice(path, n_rows=6, n_cols=6, seed=17, theta=P1_THETA):
    grid = CepstralGrid.from_free_params(1, theta)
    cov = assemble(model_acf(grid, max(n_rows, n_cols) - 1), n_rows, n_cols)
    values = simulate(cov, seed=seed).reshape(n_rows, n_cols)
    np.savetxt(path, values, delimiter=",", fmt="%.10g")
    return str(path), values


def test_parse_mask_variants():
    assert _parse_mask("none", 2) is None
    assert _parse_mask("", 2) is None
    sep = _parse_mask("separable", 1)
    assert sep.sum() == 4  # both diagonals of the p=1 ring
    assert sep[0, 0] and sep[2, 2] and sep[0, 2] and sep[2, 0]
    quad = _parse_mask("quadrant", 2)
    assert quad.sum() == 8
    pair = _parse_mask("pairs:1,1", 1)
    assert pair[2, 2] and pair[0, 0] and pair.sum() == 2
    with pytest.raises(SystemExit):
        _parse_mask("pairs:0,0", 1)
    with pytest.raises(SystemExit):
        _parse_mask("pairs:3,0", 1)
    with pytest.raises(SystemExit):
        _parse_mask("pairs:a,b", 1)
    with pytest.raises(SystemExit):
        _parse_mask("diagonal", 1)


def test_coerce_and_beta():
    assert _coerce("yes", bool) is True
    assert _coerce("0", bool) is False
    with pytest.raises(SystemExit):
        _coerce("maybe", bool)
    assert _coerce("7", int) == 7
    assert _coerce("2.5", float) == 2.5
    np.testing.assert_allclose(_parse_beta("1,2,3", 3), [1.0, 2.0, 3.0])
    np.testing.assert_allclose(_parse_beta("", 2), [0.0, 0.0])
    with pytest.raises(SystemExit):
        _parse_beta("1,2", 3)


def test_dataset_writes_bundled_file(tmp_path, capsys):
    out = tmp_path / "straw.csv"
    assert main(["dataset", "--out", str(out)]) == 0
    assert out.read_bytes() == mercer_hall_straw_path().read_bytes()
    assert "wrote" in capsys.readouterr().out


def test_simulate_is_deterministic(tmp_path):
    gpath = write_grid(tmp_path / "grid.txt")
    d1, d2 = tmp_path / "a", tmp_path / "b"
    base = ["simulate", "--grid-file", gpath, "--rows", "5", "--cols", "4",
            "--reps", "2", "--seed", "9"]
    assert main(base + ["--out-dir", str(d1)]) == 0
    assert main(base + ["--out-dir", str(d2)]) == 0
    assert (d1 / "rep_000.csv").read_bytes() == (d2 / "rep_000.csv").read_bytes()
    assert (d1 / "rep_000.csv").read_bytes() != (d1 / "rep_001.csv").read_bytes()
    manifest = (d1 / "manifest.txt").read_text()
    assert "rows=5" in manifest and "config_hash=" in manifest
    first = (d1 / "rep_000.csv").read_text().splitlines()
    assert first[0].startswith("# config ")
    assert len(first) == 6 and len(first[1].split(",")) == 4


def test_config_file_and_flag_precedence(tmp_path):
    gpath = write_grid(tmp_path / "grid.txt")
    cfgfile = tmp_path / "sim.cfg"
    cfgfile.write_text(
        f"grid_file={gpath}\nrows=5\ncols=4\nseed=3  # comment survives\n"
    )
    out = tmp_path / "out"
    rc = main(["simulate", "--config", str(cfgfile), "--rows", "6",
               "--out-dir", str(out)])
    assert rc == 0
    body = (out / "rep_000.csv").read_text().splitlines()
    assert len(body) == 7  # flag beats the file: 6 rows plus header
    assert len(body[1].split(",")) == 4  # file beats the default of 25
    bad = tmp_path / "bad.cfg"
    bad.write_text("rows=5\nshape=weird\n")
    with pytest.raises(SystemExit, match="unknown config keys"):
        main(["simulate", "--config", str(bad), "--out-dir", str(out)])


def test_fit_reports_and_serializes(tmp_path):
    dpath, _ = write_lattice(tmp_path / "field.csv")
    out = tmp_path / "fit"
    rc = main(["fit", "--data", dpath, "--p", "1", "--method", "qmle_exact",
               "--out-dir", str(out)])
    assert rc == 0
    report = (out / "report.txt").read_text()
    first = report.splitlines()[0]
    assert first.startswith("# config ") and len(first.split()[-1]) == 12
    assert "qmle_exact" in report and "residual_moran" in report
    payload = json.loads((out / "result.json").read_text())
    assert payload["config_hash"] == first.split()[-1]
    assert len(payload["theta_free"]) == 5
    resid = np.loadtxt(out / "residuals.csv", delimiter=",", skiprows=1)
    assert resid.shape == (6, 6)


def test_fit_mle_adds_criteria_line(tmp_path):
    dpath, _ = write_lattice(tmp_path / "field.csv", seed=23)
    out = tmp_path / "fit"
    rc = main(["fit", "--data", dpath, "--p", "1", "--method", "mle",
               "--design", "constant", "--out-dir", str(out)])
    assert rc == 0
    report = (out / "report.txt").read_text()
    assert "criteria: aic" in report and "bic" in report


def test_fit_bayes_writes_draws(tmp_path):
    dpath, _ = write_lattice(tmp_path / "field.csv", n_rows=5, n_cols=5, seed=3)
    out = tmp_path / "fit"
    rc = main(["fit", "--data", dpath, "--p", "1", "--method", "bayes",
               "--mcmc-iters", "300", "--proposal-scale", "0.15",
               "--mesh-order", "64", "--out-dir", str(out)])
    assert rc == 0
    lines = (out / "draws.csv").read_text().splitlines()
    reader = csv.reader(io.StringIO(lines[0]))
    assert next(reader) == [
        "theta(0,0)", "theta(-1,1)", "theta(0,1)", "theta(1,0)", "theta(1,1)",
    ]
    assert len(lines) > 100
    payload = json.loads((out / "result.json").read_text())
    assert 0.0 < payload["acceptance_rate"] <= 1.0


def test_fit_plots_are_png(tmp_path):
    dpath, _ = write_lattice(tmp_path / "field.csv", n_rows=5, n_cols=5, seed=3)
    out = tmp_path / "fit"
    rc = main(["fit", "--data", dpath, "--p", "1", "--method", "qmle_exact",
               "--plots", "--out-dir", str(out)])
    assert rc == 0
    for name in ("data.png", "residuals.png"):
        assert (out / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_plot_command(tmp_path):
    dpath, _ = write_lattice(tmp_path / "field.csv", n_rows=4, n_cols=4)
    out = tmp_path / "field.png"
    assert main(["plot", "--data", dpath, "--out", str(out)]) == 0
    assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_study_aggregates_replicates(tmp_path):
    gpath = write_grid(tmp_path / "grid.txt")
    out = tmp_path / "study"
    rc = main(["study", "--grid-file", gpath, "--rows", "6", "--cols", "6",
               "--reps", "2", "--p", "1", "--method", "qmle_exact",
               "--seed", "5", "--out-dir", str(out)])
    assert rc == 0
    table = (out / "study.csv").read_text().splitlines()
    assert table[1] == "parameter,true,mean,sd,mse"
    assert table[2].startswith("theta(0,0),")
    assert len(table) == 7  # header, column names, five coefficients
    assert "replicates: 2 used of 2" in (out / "study.txt").read_text()


def test_extract_matches_library(tmp_path):
    _, values = write_lattice(tmp_path / "raw.csv", n_rows=4, n_cols=4, seed=11)
    rows = [",".join(f"{v:.10g}" for v in row) for row in values]
    cells = rows[1].split(",")
    cells[2] = "nan"
    rows[1] = ",".join(cells)
    dpath = tmp_path / "field.csv"
    dpath.write_text("\n".join(rows) + "\n")
    spath = write_grid(tmp_path / "signal.txt", P1_THETA)
    npath = write_grid(tmp_path / "noise.txt", NOISE_THETA)
    out = tmp_path / "extract"
    rc = main(["extract", "--data", str(dpath), "--signal-grid", spath,
               "--noise-grid", npath, "--out-dir", str(out)])
    assert rc == 0
    got_mean = np.loadtxt(out / "signal_mean.csv", delimiter=",", skiprows=1)
    got_sd = np.loadtxt(out / "signal_sd.csv", delimiter=",", skiprows=1)

    keep = np.ones((4, 4), dtype=bool)
    keep[1, 2] = False
    filled = np.where(keep, values, 0.0)
    sample = LatticeSample.from_values(filled, design_spec="none")
    spec = SignalNoiseSpec(
        signal=CepstralGrid.from_free_params(1, P1_THETA),
        noise=CepstralGrid.from_free_params(1, NOISE_THETA),
    )
    want = extract_signal(sample, spec, selection=SelectionMap(keep=keep))
    np.testing.assert_allclose(got_mean, want.mean, atol=1e-8)
    np.testing.assert_allclose(got_sd, want.sd, atol=1e-8)


def test_missing_inputs_and_errors(tmp_path, capsys):
    with pytest.raises(SystemExit, match="grid_file"):
        main(["simulate", "--out-dir", str(tmp_path)])
    with pytest.raises(SystemExit, match="data"):
        main(["fit", "--out-dir", str(tmp_path)])
    rc = main(["fit", "--data", str(tmp_path / "absent.csv")])
    assert rc == 2
    assert capsys.readouterr().err.startswith("error:")


def test_config_hash_is_stable():
    a = _config_hash({"rows": 5, "cols": 4})
    b = _config_hash({"cols": 4, "rows": 5})
    assert a == b and len(a) == 12
    assert a != _config_hash({"rows": 5, "cols": 5})
