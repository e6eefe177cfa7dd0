import csv
import json
from pathlib import Path

import pytest

from kdvq.cli import ExperimentConfig, load_config, main, make_rng
from kdvq.errors import ConfigError

PRESETS = Path(__file__).resolve().parent.parent / "presets"

STEER = """\
mode = "steer"
seed = 3

[spectral]
n_max = 6
n_time_steps = 64

[problem]
T = 1.0
omega = [[0.5, 3.5]]

[problem.data]
u_in = [[1, 1.0, 0.0]]
coefficient_amplitude = 0.0
"""

CONTROL = """\
mode = "control"
seed = 1

[spectral]
n_max = 4
n_time_steps = 64

[problem]
nonlinearity = "{nl}"
omega = [[0.5, 3.5]]

[problem.data]
u_in = {u_in}
random_amplitude = {amp}

[solver]
max_iter = {iters}
"""


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def control_cfg(tmp_path, nl="airy", u_in="[[1, 0.1, 0.0]]", amp=0.0, iters=12, name="c.toml"):
    return write(tmp_path, CONTROL.format(nl=nl, u_in=u_in, amp=amp, iters=iters), name)


def test_steer_ok(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["steer", "--config", write(tmp_path, STEER), "--out", str(out)]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["status"] == "ok" and s["results"]["final_defect"] < 1e-6
    rows = list(csv.reader(open(out / "cg.csv")))
    assert rows[0] == ["iteration", "residual"] and len(rows) > 1
    assert (out / "phi.kdvq").exists() and (out / "h.kdvq").exists()
    assert "steer: ok" in capsys.readouterr().out


def test_reversed_arc_is_config_error(tmp_path, capsys):
    path = write(tmp_path, STEER.replace("[[0.5, 3.5]]", "[[3.5, 0.5]]"))
    assert main(["steer", "--config", path, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert f"{path}:10: problem.omega" in err and "reversed" in err


@pytest.mark.parametrize("edit, key", [
    (("seed = 3", "seed = 3\nbogus = 1"), "bogus"),
    (("n_max = 6", "n_max = 0"), "spectral.n_max"),
    (("T = 1.0", "T = -1.0"), "problem.T"),
    (("omega", "nonlinearity = \"nope\"\nomega"), "problem.nonlinearity"),
])
def test_config_errors(tmp_path, capsys, edit, key):
    path = write(tmp_path, STEER.replace(*edit))
    assert main(["steer", "--config", path]) == 2
    assert key in capsys.readouterr().err


def test_inadmissible_scale_is_config_error(tmp_path, capsys):
    path = control_cfg(tmp_path)
    Path(path).write_text(Path(path).read_text() + "sigma = 2.0\n")
    assert main(["control", "--config", path]) == 2
    assert "a0 <= mu <= a1" in capsys.readouterr().err


def test_mode_mismatch(tmp_path, capsys):
    assert main(["control", "--config", write(tmp_path, STEER)]) == 2


def test_missing_file(tmp_path, capsys):
    assert main(["steer", "--config", str(tmp_path / "none.toml")]) == 2


def test_numeric_failure_exit(tmp_path, capsys):
    out = tmp_path / "out"
    # a mode-3 term needs more than one Nash-Moser step
    path = control_cfg(tmp_path, u_in="[[1, 0.1, 0.0], [3, 0.05, 0.0]]", iters=1)
    assert main(["control", "--config", path, "--out", str(out)]) == 1
    s = json.loads((out / "summary.json").read_text())
    assert s["status"] == "failed" and "nash-moser-defect" in s["failed_invariants"]


def test_zero_data_control(tmp_path):
    out = tmp_path / "out"
    assert main(["control", "--config", control_cfg(tmp_path, nl="kdv", u_in="[]"), "--out", str(out)]) == 0
    rows = list(csv.reader(open(out / "nash_moser.csv")))
    assert rows == [["j", "theta", "h_norm_a0", "h_norm_a2", "defect", "cg_iterations", "wall_time"]]
    s = json.loads((out / "summary.json").read_text())
    assert s["results"]["iterations"] == 0 and s["results"]["u_norm"] == 0


def test_deterministic(tmp_path):
    path = control_cfg(tmp_path, amp=0.01)
    for d in ("a", "b"):
        assert main(["control", "--config", path, "--out", str(tmp_path / d)]) == 0
    a, b = ((tmp_path / d / "summary.json").read_bytes() for d in ("a", "b"))
    assert a == b
    assert main(["control", "--config", path, "--seed", "7", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "summary.json").read_bytes() != a


def test_rng_is_philox():
    assert make_rng(5).bit_generator.__class__.__name__ == "Philox"
    assert make_rng(5).standard_normal() == make_rng(5).standard_normal()


def test_config_round_trip(tmp_path):
    cfg = load_config(control_cfg(tmp_path))
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert load_config(p) == cfg


def test_from_dict_rejects_bad_types():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"spectral": {"n_max": 2.5}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"solver": {"geometric": 1}})


@pytest.mark.parametrize("name", sorted(p.name for p in PRESETS.iterdir()))
def test_presets_load(name):
    cfg = load_config(PRESETS / name)
    assert cfg.mode in ("reduce", "observability", "steer", "control", "ivp")


def test_batch(tmp_path, capsys):
    good = write(tmp_path, STEER, "good.toml")
    bad = write(tmp_path, STEER.replace("n_max = 6", "n_max = -1"), "bad.toml")
    out = tmp_path / "out"
    assert main(["batch", "--config", good, "--config", good, "--out", str(out)]) == 0
    assert (out / "good" / "summary.json").exists()
    assert main(["batch", "--config", good, "--config", bad, "--out", str(out)]) == 2
