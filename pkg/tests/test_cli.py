import csv
import json

import numpy as np
import pytest

from zrp.cli import format_value, main, write_outputs
from zrp.config import ConfigError, ExperimentConfig, parse_config
from zrp.experiments import run_experiment, worker_count

E1_INI = """
[experiment]
name = fluct-neq
seed = 17
replicas = 12

[rate]
family = e1_piecewise
theta = 1
K0 = 2
head = 1.5

[system]
N = 32
M = 64
rho = 1.0
profile = sinusoid
amplitude = 0.2

[observe]
times = 0.01, 0.02
modes = 1, -1
"""


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_parse_example():
    cfg = parse_config(E1_INI)
    assert cfg.experiment == "fluct-neq" and cfg.N == 32 and cfg.grid == 64
    assert cfg.rate()(1) == 1.5 and cfg.rate()(5) == 5
    assert cfg.times == [0.01, 0.02] and cfg.modes == [1, -1]
    assert cfg.density_profile(4)[1] == pytest.approx(1.2)


def test_overrides_win():
    cfg = parse_config(E1_INI, "fluct-eq", replicas=3, seed=None)
    assert cfg.experiment == "fluct-eq" and cfg.replicas == 3 and cfg.seed == 17


@pytest.mark.parametrize("edit,field", [
    (("replicas = 12", "replicas = 0"), "replicas"),
    (("times = 0.01, 0.02", "times = 0.02, 0.01"), "times"),
    (("amplitude = 0.2", "amplitude = 1.5"), "amplitude"),
    (("seed = 17", "seed = -1"), "seed"),
    (("M = 64", "M = 48"), "M"),
    (("N = 32", "N = 32\nbogus = 1"), "bogus"),
    (("head = 1.5", "head = 1.5, 2"), "rate"),
    (("name = fluct-neq", "name = nope"), "experiment"),
])
def test_validation_names_field(edit, field):
    with pytest.raises(ConfigError, match=field):
        parse_config(E1_INI.replace(*edit))


def test_float_format_round_trips():
    for v in (0.1, 1 / 3, 2.0**-40, 1e300, -7.0):
        s = format_value(v)
        assert float(s) == v
    assert format_value(np.int64(3)) == "3" and format_value(True) == "1"


def test_thermo_cli_linear(tmp_path):
    out = tmp_path / "t"
    assert main(["thermo", "--out", str(out), "--assert"]) == 0
    rows = read_csv(out / "thermo.csv")
    assert rows[0] == ["rho", "phi", "D", "S", "chi", "sigma2"]
    for r in rows[1:]:
        assert float(r[2]) == pytest.approx(1.0, abs=1e-12)
        assert float(r[3]) == pytest.approx(1.0, abs=1e-12)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["experiment"] == "thermo" and "wall_time_s" in manifest
    assert manifest["checks"][0]["passed"]


def test_cli_rejects_zero_replicas(tmp_path, capsys):
    assert main(["fluct-eq", "--replicas", "0", "--out", str(tmp_path)]) == 2
    assert "replicas" in capsys.readouterr().err


def test_assert_flag_sets_exit_code(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[rate]\nfamily = e1_piecewise\nK0 = 2\nhead = 1.5\n[system]\nrho = 1.0\n"
                   "[observe]\nsizes = 16, 64\n[tolerance]\ntol = 1e-9\n")
    assert main(["clt-check", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["clt-check", "--config", str(cfg), "--out", str(tmp_path / "b"), "--assert"]) == 1


def test_sample_cli_colours(tmp_path):
    cfg = tmp_path / "s.ini"
    cfg.write_text("[system]\nN = 20\nrho = 2.0\ncolours = 0.25, 0.75\n")
    assert main(["sample", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "s")]) == 0
    rows = read_csv(tmp_path / "s" / "sample.csv")
    assert rows[0] == ["site", "count", "count_0", "count_1"]
    assert all(int(r[1]) == int(r[2]) + int(r[3]) for r in rows[1:])
    assert len(rows) == 21


def test_simulate_event_log(tmp_path):
    cfg = tmp_path / "s.ini"
    cfg.write_text("[system]\nN = 8\nrho = 1.0\ncolours = 0.5, 0.5\n[observe]\ntimes = 0.05\nlog_events = yes\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o"), "--assert"]) == 0
    ev = read_csv(tmp_path / "o" / "events.csv")
    assert ev[0] == ["t_micro", "site_from", "site_to", "colour", "particle_id"]
    assert all(r[3] in ("0", "1") for r in ev[1:])


def test_worker_cap(monkeypatch):
    monkeypatch.setenv("ZRP_THREADS", "1")
    assert worker_count(100) == 1
    monkeypatch.setenv("ZRP_THREADS", "x")
    with pytest.raises(ValueError):
        worker_count(4)


@pytest.mark.parametrize("experiment,extra", [
    ("fluct-neq", ""),
    ("colour-fluct", "colours = 0.5, 0.5\n"),
    ("tagged", ""),
    ("hydro", "bin = 8\n"),
    ("sample", ""),
    ("simulate", ""),
])
def test_outputs_byte_identical(tmp_path, experiment, extra):
    text = E1_INI.replace("[system]\n", "[system]\n" + extra)
    if experiment in ("colour-fluct", "tagged", "sample", "simulate"):
        text = text.replace("profile = sinusoid", "profile = constant")
    cfg = parse_config(text, experiment, replicas=6)
    dirs = []
    for i, workers in enumerate((1, 1, 3)):
        res = run_experiment(cfg, workers)
        d = tmp_path / str(i)
        write_outputs(res, cfg, d, 0.0, workers)
        dirs.append(d)
    for name in sorted(p.name for p in dirs[0].glob("*.csv")):
        ref = (dirs[0] / name).read_bytes()
        assert (dirs[1] / name).read_bytes() == ref
        assert (dirs[2] / name).read_bytes() == ref


def test_seed_changes_output(tmp_path):
    a = run_experiment(parse_config(E1_INI, seed=1), 1).tables["fields.csv"].rows
    b = run_experiment(parse_config(E1_INI, seed=2), 1).tables["fields.csv"].rows
    assert a != b


def test_dataclass_defaults():
    cfg = ExperimentConfig("hydro", replicas=0)
    assert cfg.k == 1 and cfg.grid == cfg.N
