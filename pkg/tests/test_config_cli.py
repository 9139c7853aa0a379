import json
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blipsum import DriveProtocol
from blipsum.cli import main, run
from blipsum.config import UNIT_BANNER, RunConfig, dump_config, parse_config
from blipsum.errors import ConfigError

MINIMAL = """
[system]
delta = 1.0
"""


# -- parsing ---------------------------------------------------------------------


def test_minimal_config_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg == RunConfig()
    assert cfg.bath.alpha == 0.0 and cfg.system.epsilon0 == 0.0 and cfg.drive.kind == "none"
    text = dump_config(cfg)
    assert text.startswith(UNIT_BANNER)
    assert "n_max = 6" in text


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("[engine]\nniba = true\nzero_lambda = false\n", "line 2 (engine.niba)"),
        ("[drive]\nkind = table\nknots_t = 0, 2, 1\nknots_eps = 0, 1, 1\n", "line 3 (drive.knots_t)"),
        ("[bath]\nalpha = lots\n", "line 2: bath.alpha expects a number"),
        ("[bath]\nalfa = 0.1\n", "line 2: unknown key bath.alfa"),
        ("[baths]\n", "line 1: unknown section [baths]"),
        ("delta = 1\n", "line 1: assignment before any [section]"),
        ("[system]\ndelta\n", "line 2: expected 'key = value'"),
        ("[engine]\nn_max = 2.5\n", "engine.n_max expects an integer"),
        ("[engine]\nniba = maybe\n", "engine.niba expects a boolean"),
        ("[system]\ndelta = 1\n\n[system]\ndelta = 2\n", "line 5: system.delta given twice (first at line 2)"),
        ("[engine]\ntimes = 0, 1, 3\n[bath]\ntau_max = 2\n", "line 4 (bath.tau_max)"),
        ("[engine]\ntimes = 0, 1, 3\n[drive]\nkind = table\nknots_t = 0, 2\nknots_eps = 0, 1\n",
         "drive table ends at 2.0"),
        ("[engine]\nt_stop = 2\n", "t_stop with t_points"),
        ("[fewmode]\nmodes = 6\n", "fewmode.modes"),
        ("[bath]\nalpha = -1\n", "line 2 (bath.alpha)"),
    ],
)
def test_config_errors_name_line_and_field(text, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert fragment in str(info.value)


def test_time_grid_shorthand():
    cfg = parse_config("[engine]\nt_stop = 2\nt_points = 5\n")
    assert cfg.engine.target_time_grid == (0.0, 0.5, 1.0, 1.5, 2.0)


def test_overrides():
    cfg = parse_config(MINIMAL, overrides=["bath.alpha=0.3", "engine.workers = 2"])
    assert cfg.bath.alpha == 0.3 and cfg.engine.workers == 2
    with pytest.raises(ConfigError, match="override 'bath.beta=1'"):
        parse_config(MINIMAL, overrides=["bath.beta=1"])
    with pytest.raises(ConfigError, match="section.key=value"):
        parse_config(MINIMAL, overrides=["alpha=1"])


def test_table_file(tmp_path):
    (tmp_path / "drive.csv").write_text("t,epsilon_d\n0,0\n1,0.5\n3,0.0\n")
    cfg = parse_config("[drive]\nkind = table\ntable_file = drive.csv\n", base_dir=str(tmp_path))
    assert cfg.drive == DriveProtocol.table([0, 1, 3], [0, 0.5, 0.0])
    assert parse_config(dump_config(cfg)) == cfg
    with pytest.raises(ConfigError, match="drive.table_file"):
        parse_config("[drive]\ntable_file = missing.csv\n", base_dir=str(tmp_path))


finite = st.floats(0.05, 3.0)


@st.composite
def configs(draw):
    lines = ["[system]", f"delta = {draw(finite)!r}", f"epsilon0 = {draw(st.floats(-2, 2))!r}"]
    lines += ["[bath]", f"alpha = {draw(st.floats(0, 1))!r}", f"s = {draw(st.sampled_from([0.5, 1.0, 2.0]))!r}",
              f"temperature = {draw(st.floats(0, 5))!r}"]
    kind = draw(st.sampled_from(["none", "constant", "pulse", "sinusoidal", "table"]))
    lines += ["[drive]", f"kind = {kind}"]
    if kind in ("constant", "pulse", "sinusoidal"):
        lines.append(f"amplitude = {draw(st.floats(-2, 2))!r}")
    if kind == "pulse":
        on = draw(st.floats(0.1, 1.0))
        lines += [f"t_on = {on!r}", f"t_off = {on + draw(finite)!r}"]
    if kind == "sinusoidal":
        lines += [f"frequency = {draw(finite)!r}", f"phase = {draw(st.sampled_from([0.0, math.pi]))!r}"]
    if kind == "table":
        ts = sorted(set(draw(st.lists(st.floats(0.01, 5.0), min_size=1, max_size=5))))
        lines += ["knots_t = 0.0, " + ", ".join(repr(t) for t in ts),
                  "knots_eps = 0.0, " + ", ".join(repr(draw(st.floats(-1, 1))) for _ in ts)]
        t_last = ts[-1]
    else:
        t_last = 3.0
    times = sorted(set(draw(st.lists(st.floats(0, t_last), min_size=1, max_size=6))))
    lines += ["[engine]", "times = " + ", ".join(repr(t) for t in times),
              f"n_max = {draw(st.integers(1, 8))}", f"seed = {draw(st.integers(0, 2**63))}",
              f"niba = {draw(st.booleans())}".lower()]
    if "niba = true" in lines:
        lines += ["zero_lambda = true", "nearest_sojourn_only = true"]
    lines += ["[tpm]", f"tau = {min(t_last, draw(finite))!r}"]
    return "\n".join(lines) + "\n"


@given(configs())
@settings(max_examples=60)
def test_dump_round_trip(text):
    cfg = parse_config(text)
    dumped = dump_config(cfg)
    assert parse_config(dumped) == cfg
    assert dump_config(parse_config(dumped)) == dumped


# -- running -------------------------------------------------------------------------

FREE = """
[system]
delta = 1.0
[engine]
t_stop = 3.141592653589793
t_points = 7
mc_samples = 20000
"""


def _write(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text)
    return str(path)


def test_transition_free_case(tmp_path, capsys):
    out = tmp_path / "p.csv"
    assert main(["transition", _write(tmp_path, FREE), "--out", str(out)]) == 0
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    header = out.read_text().splitlines()[0]
    assert header == "t,p,stderr,trunc,imag_residual,order_1,order_2,order_3,order_4,order_5,order_6"
    assert np.max(np.abs(data[:, 1] - np.sin(0.5 * data[:, 0]) ** 2)) <= 2e-3
    line = capsys.readouterr().out.strip()
    assert line.startswith("transition: max p=") and "wall=" in line and "max err=" in line


def test_niba_subcommand_free_case(tmp_path):
    out = tmp_path / "n.csv"
    assert main(["niba", _write(tmp_path, FREE), "--out", str(out)]) == 0
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert np.max(np.abs(data[:, 1] - np.sin(0.5 * data[:, 0]) ** 2)) <= 2e-3


def test_oracle_compare_free(tmp_path):
    out, summary = tmp_path / "c.csv", tmp_path / "c.json"
    cfg = _write(tmp_path, FREE + "[bath]\ntau_max = 3.2\n")
    assert main(["oracle-compare", cfg, "--set", "engine.t_stop=2", "--out", str(out), "--summary", str(summary)]) == 0
    assert out.read_text().splitlines()[0] == "t,p_series,p_oracle,deviation,stderr,trunc"
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert np.max(data[:, 3]) <= 1e-2
    report = json.loads(summary.read_text())
    assert report["oracle"] == "tls-ode" and report["within_tolerance"]


def test_oracle_compare_few_mode(tmp_path):
    text = """
[system]
epsilon0 = 0.5
[bath]
alpha = 0.05
omega_c = 1.0
[engine]
times = 0.0, 0.5, 1.0
mc_samples = 5000
[fewmode]
modes = 1
fock_cutoff = 8
tolerance = 1e-3
"""
    out = tmp_path / "c.csv"
    assert main(["oracle-compare", _write(tmp_path, text), "--out", str(out)]) == 0
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert np.max(data[:, 3]) <= 1e-4


def test_kernels_zero_coupling(tmp_path):
    out = tmp_path / "k.csv"
    assert main(["kernels", _write(tmp_path, FREE), "--out", str(out)]) == 0
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert out.read_text().splitlines()[0] == "tau,S,R"
    assert not data[:, 1:].any()


def test_work_stats(tmp_path):
    out = tmp_path / "w.csv"
    cfg = _write(tmp_path, FREE + "[drive]\nkind = sinusoidal\namplitude = 0.5\nfrequency = 1.0\n")
    assert main(["work-stats", cfg, "--out", str(out)]) == 0
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    t = data[:, 0]
    assert np.allclose(data[:, 1], 0.5 * np.sin(t), atol=1e-15)
    assert np.allclose(data[:, 2], 0.5 * (1 - np.cos(t)), atol=1e-15)
    assert np.array_equal(data[:, 3], -data[:, 1]) and np.array_equal(data[:, 4], data[:, 1])


def test_tpm_subcommand(tmp_path):
    out = tmp_path / "chi.csv"
    cfg = _write(tmp_path, FREE + "[drive]\nkind = pulse\namplitude = 0.7\nt_on = 0.5\nt_off = 5\n[tpm]\ntau = 2\n")
    assert main(["tpm", cfg, "--out", str(out)]) == 0
    chi = np.loadtxt(out, delimiter=",", skiprows=1)
    dist = np.loadtxt(tmp_path / "chi_distribution.csv", delimiter=",", skiprows=1)
    middle = chi[chi[:, 0] == 0.0]
    assert middle[0, 1] == pytest.approx(1.0, abs=1e-14)
    assert np.all(dist[:, 2] >= -1e-10)
    assert dist[:, 1].sum() == pytest.approx(1.0, abs=1e-12)


def test_echo_prints_dump(tmp_path, capsys):
    assert main(["kernels", _write(tmp_path, FREE), "--echo", "--out", str(tmp_path / "k.csv")]) == 0
    out = capsys.readouterr().out
    assert out.startswith(UNIT_BANNER)
    assert parse_config(out.split("kernels:")[0]) == parse_config(FREE)


# -- failures --------------------------------------------------------------------------


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["transition", _write(tmp_path, "[engine]\nniba = true\n")]) == 2
    assert "error: category=config:" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["transition", str(tmp_path / "nope.ini")]) == 2
    assert "category=config" in capsys.readouterr().err


def test_resource_error_exit_code(tmp_path, capsys):
    out = tmp_path / "p.csv"
    assert main(["transition", _write(tmp_path, FREE), "--set", "engine.max_configurations=64", "--out", str(out)]) == 4
    assert "error: category=resource:" in capsys.readouterr().err
    assert not out.exists()


def test_convergence_error_exit_code(tmp_path, capsys):
    text = """
[bath]
alpha = 0.5
omega_c = 1.0
[engine]
times = 0.0, 2.0
mc_samples = 100
[fewmode]
modes = 1
fock_cutoff = 4
tolerance = 1e-9
"""
    out = tmp_path / "c.csv"
    assert main(["oracle-compare", _write(tmp_path, text), "--out", str(out)]) == 3
    assert "error: category=convergence:" in capsys.readouterr().err
    assert not out.exists()


def test_partial_outputs_removed(tmp_path, capsys):
    out = tmp_path / "p.csv"
    summary = tmp_path / "no_such_dir" / "s.json"
    code = main(["transition", _write(tmp_path, FREE), "--out", str(out), "--summary", str(summary)])
    assert code == 2
    assert not out.exists()
    assert "category=config" in capsys.readouterr().err


def test_alpha_without_oracle_is_config_error(tmp_path, capsys):
    assert main(["oracle-compare", _write(tmp_path, FREE + "[bath]\nalpha = 0.1\n")]) == 2


def test_run_api(tmp_path):
    cfg = parse_config(FREE)
    lines = []

    class Sink:
        def write(self, s):
            lines.append(s)

    assert run("kernels", cfg, csv_path=tmp_path / "k.csv", out=Sink()) == 0
    assert "".join(lines).startswith("kernels:")


def test_outputs_identical_across_workers(tmp_path):
    text = FREE + "[bath]\nalpha = 0.2\n[engine]\nn_max = 4\nmc_samples = 3000\nseed = 99\nchunk_size = 500\n"
    text = text.replace("mc_samples = 20000\n", "")
    paths = []
    for workers in (1, 2, 4):
        out = tmp_path / f"p{workers}.csv"
        assert main(["transition", _write(tmp_path, text), "--set", f"engine.workers={workers}", "--out", str(out)]) == 0
        paths.append(out)
    blobs = [p.read_bytes() for p in paths]
    assert blobs[0] == blobs[1] == blobs[2]


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path, FREE)
    proc = subprocess.run([sys.executable, "-m", "blipsum.cli", "kernels", cfg, "--out", str(tmp_path / "k.csv")],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("kernels:")
