import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freespectra import cli
from freespectra.config import ConfigError, parse_config

MINIMAL = """\
[run]
command = density
seed = 1

[model]
poly = x1
r = 1
"""


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


# -- parsing -----------------------------------------------------------------------------

def test_minimal_config_fills_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.command == "density" and cfg.seed == 1
    assert cfg["spectra"]["eps"] == 1e-3
    assert cfg["simulation"]["n"] == [512]
    assert cfg.solver_options().tol == 1e-11
    assert cfg.polynomial.arity == 1


def test_hex_seed_and_lists():
    cfg = parse_config(MINIMAL.replace("seed = 1", "seed = 0xff") + "[simulation]\nn = 100, 200\nlaw = gue\n")
    assert cfg.seed == 255
    assert cfg["simulation"]["n"] == [100, 200]
    assert cfg["simulation"]["law"] == "gaussian"


def test_undeclared_generator_reports_column():
    text = MINIMAL.replace("poly = x1", "poly = x1 + x3")
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == 6
    assert info.value.column == len("poly = x1 + ") + 1


def test_duplicate_key():
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + "r = 2\n")
    assert info.value.line == 8 and "duplicate" in str(info.value)


def test_unknown_key_and_section():
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + "colour = blue\n")
    assert info.value.line == 8 and info.value.column == 1
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + "[extras]\nx = 1\n")
    assert info.value.line == 8


@pytest.mark.parametrize(
    "patch, where",
    [
        (("seed = 1", "seed = -1"), 3),
        (("command = density", "command = plot"), 2),
        (("r = 1", "r = one"), 7),
    ],
)
def test_bad_values_name_their_line(patch, where):
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL.replace(*patch))
    assert info.value.line == where


def test_missing_required_key():
    with pytest.raises(ConfigError, match="seed"):
        parse_config(MINIMAL.replace("seed = 1\n", ""))


def test_det_count_must_match():
    with pytest.raises(ConfigError, match="deterministic"):
        parse_config(MINIMAL.replace("r = 1", "r = 1\nt = 1"))


def test_gamma_mode():
    text = MINIMAL.replace("poly = x1\n", "") + "gamma = [[1, 0], [0, -1]]\nalphas = [[[1, 0], [0, 1]]]\n"
    cfg = parse_config(text)
    np.testing.assert_array_equal(cfg["model"]["gamma"], np.diag([1, -1]))
    assert cfg.polynomial is None
    with pytest.raises(ConfigError):
        parse_config(text.replace("alphas = [[[1, 0], [0, 1]]]\n", "alphas = []\n"))


def test_echo_round_trip():
    cfg = parse_config(MINIMAL + "[simulation]\ntruncation = 12, 0.5\n[spectra]\ngrid = -3, 3, 0.01\n")
    again = parse_config(cfg.to_text())
    assert again == cfg
    assert again.to_text() == cfg.to_text()


@settings(max_examples=40)
@given(
    st.floats(1e-6, 1.0),
    st.integers(0, 2**64 - 1),
    st.lists(st.integers(1, 5000), min_size=1, max_size=4),
    st.sampled_from(["gaussian", "rademacher", "uniform", "student_t(5)", "two_point(0.25)"]),
)
def test_echo_round_trip_property(eps, seed, sizes, law):
    text = MINIMAL.replace("seed = 1", f"seed = {seed}")
    text += f"[spectra]\neps = {eps!r}\n[simulation]\nn = {', '.join(map(str, sizes))}\nlaw = {law}\n"
    cfg = parse_config(text)
    assert parse_config(cfg.to_text()) == cfg


# -- command line --------------------------------------------------------------------------

def test_density_command(tmp_path, capsys):
    path = write(tmp_path, MINIMAL + "[spectra]\ngrid = -0.5, 0.5, 0.25\n")
    assert cli.main(["--config", str(path), "--out", str(tmp_path / "out")]) == 0
    rows = (tmp_path / "out" / "density.csv").read_text().splitlines()
    assert rows[0] == "x,density,converged"
    x, rho, ok = rows[3].split(",")
    assert float(x) == 0.0 and float(rho) == pytest.approx(1 / np.pi, abs=1e-3) and ok == "1"
    assert "density:" in capsys.readouterr().out


def test_gap_negative_control_exits_one(tmp_path):
    text = MINIMAL.replace("density", "verify-gap") + "[simulation]\nn = 60\ntrials = 2\n[verify]\ngap = -0.5, 0.5\n"
    path = write(tmp_path, text)
    assert cli.main(["--config", str(path), "--out", str(tmp_path / "o")]) == 1
    report = json.loads((tmp_path / "o" / "gap.json").read_text())
    assert report["verdict"] == "fail"


def test_config_errors_exit_two(tmp_path, capsys):
    path = write(tmp_path, MINIMAL.replace("poly = x1", "poly = x1 + x3"))
    assert cli.main(["--config", str(path)]) == 2
    err = capsys.readouterr().err
    assert "line 6, column 13" in err
    assert cli.main(["--config", str(tmp_path / "missing.ini")]) == 2


def test_reruns_are_byte_identical(tmp_path):
    text = MINIMAL.replace("density", "verify-inclusion") + "[simulation]\nn = 40\ntrials = 3\n[verify]\neps = 0.3\n"
    path = write(tmp_path, text)
    out = tmp_path / "o"
    assert cli.main(["--config", str(path), "--out", str(out), "--threads", "2"]) == 0
    first = (out / "inclusion_n40.json").read_bytes()
    assert cli.main(["--config", str(path), "--out", str(out), "--threads", "1"]) == 0
    assert (out / "inclusion_n40.json").read_bytes() == first
    assert (out / "inclusion_n40.timing.json").exists()


def test_seed_override_and_env_threads(tmp_path, monkeypatch, capsys):
    path = write(tmp_path, MINIMAL)
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert cli.main(["--config", str(path), "--seed", "0x10", "--echo-config"]) == 0
    echoed = parse_config(capsys.readouterr().out)
    assert echoed.seed == 16
    assert echoed["run"]["threads"] == 1


def test_positional_command_overrides_config(tmp_path, capsys):
    path = write(tmp_path, MINIMAL.replace("poly = x1", "poly = x1^2"))
    assert cli.main(["linearize", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
    data = json.loads((tmp_path / "o" / "linearization.json").read_text())
    assert "command = linearize" in data["config"]
    assert "m=3" in capsys.readouterr().out


def test_simulate_writes_eigenvalues(tmp_path):
    text = MINIMAL.replace("density", "simulate") + "[simulation]\nn = 5, 6\ntrials = 2\n"
    path = write(tmp_path, text)
    assert cli.main(["--config", str(path), "--out", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "simulation.csv").read_text().splitlines()
    assert rows[0] == "n,trial,index,eigenvalue"
    assert len(rows) == 1 + 2 * 5 + 2 * 6


def test_model_size_needs_explicit_n_for_projection(tmp_path, capsys):
    text = MINIMAL.replace("poly = x1\nr = 1", "poly = x1 + a1\nr = 1\nt = 1\ndets = projection(0.5)").replace("density", "support")
    path = write(tmp_path, text)
    assert cli.main(["--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "model_n" in capsys.readouterr().err
