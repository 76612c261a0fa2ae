import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from rcdemand.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, RunConfig, run
from rcdemand.errors import ConfigError
from rcdemand.io import read_density_grid

FIXTURES = Path(__file__).parent / "fixtures"

PANEL_INI = """\
[model]
menu = {menu}
n_goods = 2
d_x = 1

[density]
kind = normal
mean = {mean}
cov = {cov}

[panel]
n_markets = 20
share_draws = 1000
seed = 3

[paths]
panel = panel.csv
output = deltas.csv
"""

FBP_INI = f"""\
[output_grid]
lower = -4 -4
upper = 4 4
shape = 41 41

[paths]
sinogram = {FIXTURES / "gaussian_sinogram.csv"}
density = recovered.csv
table = recovered_table.csv
"""


def write_config(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def call(capsys, *argv):
    code = run(list(argv))
    out, err = capsys.readouterr()
    return code, json.loads(out) if out else None, json.loads(err) if err else None


@pytest.mark.parametrize("menu, mean, cov", [
    ("bundles", "-1.0 0.5", "0.09 0 0 0.04"),
    ("multinomial", "-1.0", "0.25"),
    ("multiunit", "-1.0 0.2 -0.5 0.1", "0.1 0 0 0  0 0.1 0 0  0 0 0.1 0  0 0 0 0.05"),
])
def test_simulate_then_invert(tmp_path, capsys, menu, mean, cov):
    ini = write_config(tmp_path, PANEL_INI.format(menu=menu, mean=mean, cov=cov))
    code, summary, _ = call(capsys, "simulate", ini)
    assert code == EXIT_OK and summary["markets"] == 20
    extra = ["--set", "invert.pair=2 0 2 1"] if menu == "multiunit" else []
    code, summary, _ = call(capsys, "invert", ini, *extra)
    assert code == EXIT_OK
    assert summary["max_delta_error"] <= 1e-6
    table = np.loadtxt(tmp_path / "deltas.csv", delimiter=",", skiprows=1)
    assert table.shape == (40, 4)


def test_unknown_key_exits_with_config_error(tmp_path, capsys):
    ini = write_config(tmp_path, "[model]\nmenu = bundles\nn_gods = 2\n")
    code, _, err = call(capsys, "simulate", ini)
    assert code == EXIT_CONFIG
    assert err["key"] == "model.n_gods"
    assert "n_gods" in err["message"]


@pytest.mark.parametrize("text, key", [
    ("[modle]\nmenu = bundles\n", "modle"),
    ("[panel]\nn_markets = many\n", "panel.n_markets"),
    ("[model]\nmenu = bundles\nn_goods = 2\n", "paths.panel"),
])
def test_config_errors_name_the_key(tmp_path, capsys, text, key):
    code, _, err = call(capsys, "simulate", write_config(tmp_path, text))
    assert code == EXIT_CONFIG
    assert err["error"] == "ConfigError" and err["key"] == key


def test_bad_override(tmp_path, capsys):
    ini = write_config(tmp_path, FBP_INI)
    code, _, err = call(capsys, "fbp", ini, "--set", "noperiod=1")
    assert code == EXIT_CONFIG and err["key"] == "noperiod=1"


def test_unknown_command(tmp_path, capsys):
    code, _, err = call(capsys, "launch", write_config(tmp_path, FBP_INI))
    assert code == EXIT_CONFIG and err["key"] == "arguments"


def test_numerical_failure_exit_code(tmp_path, capsys):
    ini = write_config(tmp_path, PANEL_INI.format(menu="bundles", mean="-1.0 0.5",
                                                  cov="0.09 0 0 0.04"))
    assert call(capsys, "simulate", ini)[0] == EXIT_OK
    lines = (tmp_path / "panel.csv").read_text().splitlines()
    header = next(i for i, line in enumerate(lines) if line.startswith("t,"))
    cells = lines[header + 1].split(",")
    cells[-4:] = ["0.6", "0.0", "0.5", "0.0"]
    lines[header + 1] = lines[header + 2] = ",".join(cells)
    (tmp_path / "panel.csv").write_text("\n".join(lines) + "\n")
    code, _, err = call(capsys, "invert", ini)
    assert code == EXIT_NUMERICAL
    assert err["error"] == "ConvergenceError"


def test_fbp_on_gaussian_fixture(tmp_path, capsys):
    code, summary, _ = call(capsys, "fbp", write_config(tmp_path, FBP_INI))
    assert code == EXIT_OK
    rec = read_density_grid(tmp_path / "recovered.csv")
    assert 0.95 <= rec.mass <= 1.05
    assert summary["mass"] == pytest.approx(rec.mass, rel=1e-12)
    # the fixture is a standard normal: peak 1 / (2 pi) at the origin
    assert rec.values[20, 20] == pytest.approx(1 / (2 * np.pi), rel=0.05)
    assert (tmp_path / "recovered_table.csv").exists()


def test_reruns_are_byte_identical(tmp_path, capsys):
    ini = write_config(tmp_path, PANEL_INI.format(menu="bundles", mean="-1.0 0.5",
                                                  cov="0.09 0 0 0.04"))
    fbp = write_config(tmp_path, FBP_INI, "fbp.ini")
    outputs = []
    for _ in range(2):
        for argv in (("simulate", ini), ("invert", ini), ("fbp", fbp)):
            assert call(capsys, *argv)[0] == EXIT_OK
        outputs.append([(tmp_path / name).read_bytes()
                        for name in ("panel.csv", "deltas.csv", "recovered.csv")])
    assert outputs[0] == outputs[1]


def test_bundle_pipeline_phi_fbp_deconv(tmp_path, capsys):
    base = """\
[model]
menu = bundles
n_goods = 2
d_x = 1

[density]
kind = normal
mean = -1.0 0.5
cov = 0.09 0 0 0.64

[oracle]
draws = 300

[phi]
strategy = bundle
label = {label}

[grid]
n_directions = 32
u_min = -7
u_max = 7
n_offsets = 48

[output_grid]
lower = -2.5 -6
upper = 0.5 7
shape = 16 40

[deconv]
lower = -3
upper = 4
n = 71

[paths]
sinogram = {name}_sino.csv
density = {name}.csv
noise = r00.csv
output = effect.csv
"""
    for label, name in (("0 0", "r00"), ("1 1", "r11")):
        ini = write_config(tmp_path, base.format(label=label, name=name), f"{name}.ini")
        assert call(capsys, "phi", ini)[0] == EXIT_OK
        assert call(capsys, "fbp", ini)[0] == EXIT_OK
    code, summary, _ = call(capsys, "deconv", str(tmp_path / "r11.ini"))
    assert code == EXIT_OK
    assert summary["mass"] == pytest.approx(1.0, abs=1e-9)
    effect = read_density_grid(tmp_path / "effect.csv")
    x = effect.axes[0]
    # coarse settings: only the location of the bundle effect is checked
    assert abs(np.trapezoid(x * effect.values, x) - 0.5) <= 0.5


def test_estimate_writes_report(tmp_path, capsys):
    ini = write_config(tmp_path, PANEL_INI.format(menu="bundles", mean="-1.0 0.5",
                                                  cov="0.09 0 0 0.04")
                       + "\n[estimate]\nn_sim = 4\nn_starts = 1\nmaxfev = 20\n")
    assert call(capsys, "simulate", ini)[0] == EXIT_OK
    ini_out = ["--set", "paths.output=report.json"]
    code, summary, _ = call(capsys, "estimate", ini, *ini_out)
    assert code == EXIT_OK
    assert set(summary["gamma"]) == {"mean_alpha", "sd_alpha", "mean_delta", "sd_delta"}
    assert json.loads((tmp_path / "report.json").read_text()) == summary


def test_estimate_needs_a_start(tmp_path, capsys):
    ini = write_config(tmp_path, PANEL_INI.format(menu="bundles", mean="-1.0 0.5",
                                                  cov="0.09 0 0 0.04")
                       + "\n[estimate]\nn_starts = 0\n")
    assert call(capsys, "simulate", ini)[0] == EXIT_OK
    code, _, err = call(capsys, "estimate", ini)
    assert code == EXIT_CONFIG and err["key"] == "n_starts"


def test_config_defaults_and_relative_paths(tmp_path):
    cfg = RunConfig.from_file(write_config(tmp_path, "[paths]\npanel = sub/p.csv\n"))
    assert cfg["oracle"]["draws"] == 20_000
    assert cfg.path("panel") == tmp_path / "sub" / "p.csv"
    with pytest.raises(ConfigError):
        cfg.path("panel", must_exist=True)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rcdemand", "fbp", str(tmp_path / "none.ini")],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_CONFIG
    assert json.loads(proc.stderr)["key"] == "config"
