from pathlib import Path

import numpy as np
import pytest

from app import cli
from app.services.band_output import history_path, iters_path, read_bands
from app.services.selftest import CheckResult, SelftestReport

SHIPPED_CONFIGS = Path(cli.__file__).parent / "data" / "configs"

SINGLE = """
mode = single
n0 = 4
m0 = 4
levels = 1
permittivity = disc 0.5 0.5 0.3 8.0
k1 = 1.0
k2 = -0.5
p = 3
tol = 1e-6
"""

SCAN = """
mode = scan
n0 = 4
m0 = 4
levels = 1
kappa = 3
p = 2
tol = 1e-3
threads = 2
"""


@pytest.fixture
def write_config(tmp_path):
    def _write(text, name="run.conf"):
        path = tmp_path / name
        path.write_text(text)
        return path

    return _write


def test_single_mode(write_config, tmp_path, capsys):
    out = tmp_path / "single.csv"
    code = cli.main([str(write_config(SINGLE)), "--out", str(out)])
    assert code == cli.EXIT_OK

    rows = read_bands(out)
    assert len(rows) == 1
    assert rows[0]["converged"]
    assert rows[0]["eigenvalues"].shape == (3,)
    assert history_path(out).exists()

    stdout = capsys.readouterr().out
    assert "mode = single" in stdout
    assert f"output = {out}" in stdout
    assert "eigenvalues:" in stdout


def test_shipped_single_point_config(tmp_path):
    out = tmp_path / "single.csv"
    assert cli.main([str(SHIPPED_CONFIGS / "single_point.conf"), "--out", str(out)]) == cli.EXIT_OK

    row = read_bands(out)[0]
    assert row["converged"]
    # the four lowest plane waves at the zone corner share |k + G|^2 = 2 pi^2
    assert np.allclose(row["eigenvalues"], 2 * np.pi**2, rtol=0.01)


def test_shipped_selftest_config(capsys):
    assert cli.main([str(SHIPPED_CONFIGS / "selftest.conf")]) == cli.EXIT_OK
    assert "ALL CHECKS PASSED" in capsys.readouterr().out


def test_single_mode_not_converged(write_config, tmp_path):
    text = SINGLE.replace("tol = 1e-6", "tol = 1e-12") + "max_iter = 1\n"
    code = cli.main([str(write_config(text)), "--out", str(tmp_path / "s.csv")])
    assert code == cli.EXIT_NOT_CONVERGED
    assert (tmp_path / "s.csv").exists()


def test_scan_mode(write_config, tmp_path):
    out = tmp_path / "bands.csv"
    assert cli.main([str(write_config(SCAN)), "--out", str(out)]) == cli.EXIT_OK
    assert len(read_bands(out)) == 9
    assert len(iters_path(out).read_text().splitlines()) == 4


def test_mode_flag_overrides_file(write_config, monkeypatch):
    called = []
    monkeypatch.setattr(cli, "selftest", lambda: called.append(True) or SelftestReport([CheckResult("x", True)]))
    assert cli.main([str(write_config(SCAN)), "--mode", "selftest"]) == cli.EXIT_OK
    assert called


def test_config_error(write_config, capsys):
    code = cli.main([str(write_config("mode = scan\np = -1\n"))])
    assert code == cli.EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert cli.main([str(tmp_path / "nope.conf")]) == cli.EXIT_CONFIG
    assert "cannot read config file" in capsys.readouterr().err


def test_input_error_during_run(write_config, tmp_path, capsys):
    raster = tmp_path / "eps.txt"
    raster.write_text("2 2\n1 1 1 1\n")
    text = SINGLE.replace("permittivity = disc 0.5 0.5 0.3 8.0", f"permittivity = raster {raster.name}")
    assert cli.main([str(write_config(text)), "--out", str(tmp_path / "x.csv")]) == cli.EXIT_CONFIG
    assert "input error" in capsys.readouterr().err


def test_selftest_failure_exit_code(write_config, monkeypatch):
    monkeypatch.setattr(cli, "selftest", lambda: SelftestReport([CheckResult("null space", False)]))
    assert cli.main([str(write_config("mode = selftest\n"))]) == cli.EXIT_SELFTEST


def test_thread_override_from_environment(write_config, tmp_path, monkeypatch, capsys):
    seen = {}

    def fake_scan(config):
        seen["threads"] = config.threads
        return cli.EXIT_OK

    monkeypatch.setattr(cli.settings, "THREADS", 5)
    monkeypatch.setattr(cli, "run_scan", fake_scan)
    assert cli.main([str(write_config(SCAN))]) == cli.EXIT_OK
    assert seen["threads"] == 5
    assert "threads = 5" in capsys.readouterr().out
