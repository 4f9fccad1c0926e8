import csv
import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from metabranch.cli import main
from metabranch.config import ConfigError, parse_config, parse_law
from metabranch.model import FullConfiguration, SimplifiedState

DBBM_INI = """\
[params]
mu_S = 1
delta_S = inf
q = 2:1

[movement]
kind = brownian
sigma = 1

[initial]
moving = 0.0

[run]
horizon = 1
replicas = 1000
seed = 42
"""


@pytest.fixture
def dbbm_ini(tmp_path):
    p = tmp_path / "dbbm.ini"
    p.write_text(DBBM_INI)
    return p


def _totals(path):
    with open(path) as fh:
        rows = list(csv.DictReader(l for l in fh if not l.startswith("#")))
    return np.array([int(r["total"]) for r in rows])


# configuration ----------------------------------------------------------------

def test_parse_full_config():
    text = """\
[params]
mu_S = 0.5
mu_B = 1
nu = 1:0.25, 2:0.75
q = 0:0.5 2:0.5
delta_M = 0.1
delta_S = 0.2
L = 4

[movement]
kind = brownian_chain
dimension = 2
sigma = 0.5
rates = 0 1; 2 0

[initial]
moving = 0.1, 0.2, 1; 0 0 0
settled = 1 1 1

[run]
horizon = 2.5
replicas = 7
seed = 18446744073709551615
mode = simplified
events = all
"""
    cfg = parse_config(text)
    p = cfg.params
    assert (p.mu_S, p.mu_B, p.delta_M, p.delta_S, p.L) == (0.5, 1.0, 0.1, 0.2, 4)
    assert p.nu == {1: 0.25, 2: 0.75} and p.q == {0: 0.5, 2: 0.5}
    assert p.movement.kind == "brownian_chain" and p.movement.n_states == 2
    assert isinstance(cfg.initial, SimplifiedState)
    assert (cfg.initial.n_m, cfg.initial.n_s) == (2, 1)
    assert cfg.horizon == 2.5 and cfg.replicas == 7 and cfg.seed == 2**64 - 1 and cfg.events == "all"


def test_labeled_initial_and_defaults():
    cfg = parse_config("[params]\nmu_S = 1\nmu_B=1\nnu = 1:1\n[initial]\nsettled = 0.5\nlabels = root\noffspring = 2\n")
    assert isinstance(cfg.initial, FullConfiguration) and cfg.mode == "labeled"
    assert cfg.initial.living[0].offspring_count == 2
    assert math.isinf(parse_config("[params]\nmu_S=1\ndelta_S=inf\n").params.delta_S)
    # mu_B defaults to the total mass of nu
    assert parse_config("[params]\nmu_S=1\nnu=2:0.4\n").params.mu_B == 0.4


@pytest.mark.parametrize(
    "text,line",
    [
        ("[params]\nmu_S = 1\nq = 2:x\n", 3),
        ("[params]\nmu_S = 1\nfoo = 2\n", 3),
        ("[bogus]\n", 1),
        ("[params]\nmu_S = 1\n\n[run]\nreplicas = 0\n", 5),
        ("[params]\nmu_S = -1\n", 2),
        ("[params]\nmu_S = 1\nL = 1.5\n", 3),
        ("[params]\nmu_S=1\n[movement]\nkind = warp\n", 4),
        ("[params]\nmu_S=1\n[initial]\nmoving = 0 0\n", 4),
        ("[params]\nmu_S=1\n[run]\nseed = -3\n", 4),
    ],
)
def test_line_numbered_errors(text, line):
    with pytest.raises(ConfigError) as ei:
        parse_config(text, "x.ini")
    assert ei.value.line == line
    assert str(ei.value).startswith(f"x.ini:{line}:")


def test_overrides_win_and_are_attributed():
    cfg = parse_config(DBBM_INI, None, {"run.replicas": "5", "run.seed": "9"})
    assert cfg.replicas == 5 and cfg.seed == 9
    with pytest.raises(ConfigError, match="command line"):
        parse_config(DBBM_INI, None, {"run.replicas": "0"})


def test_parse_law():
    assert parse_law("", "nu") == {}
    assert parse_law("1:0.5, 3:0.5", "q") == {1: 0.5, 3: 0.5}
    with pytest.raises(ValueError):
        parse_law("1:0.5 1:0.5", "q")
    with pytest.raises(ValueError):
        parse_law("2", "q")


def test_effective_echo_excludes_threads_and_out():
    cfg = parse_config(DBBM_INI, None, {"run.threads": "4", "run.out": "elsewhere"})
    eff = cfg.effective()
    assert "run.threads" not in eff and "run.out" not in eff
    assert eff["run.seed"] == "42" and eff["params.digest"] == cfg.params.digest()
    assert list(eff) == sorted(eff)


# simulate -------------------------------------------------------------------------

def test_simulate_dbbm_mean(dbbm_ini, tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(dbbm_ini), "--out", str(out)]) == 0
    tot = _totals(out / "snapshots.csv")
    assert tot.size == 1000
    assert abs(tot.mean() - math.e) <= 0.1 * math.e
    header = json.loads((out / "events.jsonl").read_text().splitlines()[0])["header"]
    assert header["seed"] == 42 and header["config"]["run.horizon"] == "1.0"


def test_simulate_byte_identical(dbbm_ini, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(dbbm_ini), "--out", str(a), "--threads", "1", "--events", "all"]) == 0
    assert main(["simulate", "--config", str(dbbm_ini), "--out", str(b), "--threads", "3", "--events", "all"]) == 0
    for name in ("events.jsonl", "snapshots.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_simulate_labeled_outputs(dbbm_ini, tmp_path):
    out = tmp_path / "l"
    assert main(["simulate", "--config", str(dbbm_ini), "--out", str(out), "--mode", "labeled",
                 "--replicas", "5", "--t", "1.5", "--seed", "3"]) == 0
    gen = [json.loads(l) for l in (out / "genealogy.jsonl").read_text().splitlines()[1:]]
    assert gen and all("label" in r for r in gen)
    events = [json.loads(l) for l in (out / "events.jsonl").read_text().splitlines()[1:]]
    for e in events:
        assert set(e) >= {"t", "kind", "label", "k", "n_m", "n_s"}
        assert float.fromhex(e["checksum"]) == float.fromhex(e["checksum"])
    assert "# run.horizon=1.5" in (out / "snapshots.csv").read_text()


def test_full_precision_times(dbbm_ini, tmp_path):
    out = tmp_path / "p"
    assert main(["simulate", "--config", str(dbbm_ini), "--out", str(out), "--t", "0.1"]) == 0
    ev = [json.loads(l) for l in (out / "events.jsonl").read_text().splitlines()[1:]]
    for e in ev:
        assert repr(e["t"]) == repr(float(repr(e["t"])))


def test_simulate_exit_codes(dbbm_ini, tmp_path, capsys):
    assert main(["simulate", "--config", str(dbbm_ini), "--replicas", "0", "--out", str(tmp_path / "z")]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.ini")]) == 3
    assert main(["simulate"]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[params]\nmu_S = 1\nq = 2:x\n")
    assert main(["simulate", "--config", str(bad)]) == 2
    assert f"{bad}:3:" in capsys.readouterr().err
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", "--config", str(dbbm_ini), "--out", str(blocker / "sub")]) == 3


# verify and report ----------------------------------------------------------------

def test_verify_metric_pass(tmp_path):
    out = tmp_path / "v"
    assert main(["verify", "metric", "--out", str(out)]) == 0
    v = json.loads((out / "verdict_metric.json").read_text())
    assert v["pass"] is True and v["suite"] == "metric"
    assert (out / "summary_metric.txt").read_text().startswith("suite metric: PASS")


def test_verify_unknown_suite():
    assert main(["verify", "bogus"]) == 2


def test_report(tmp_path):
    d = tmp_path / "r"
    assert main(["verify", "metric", "--out", str(d)]) == 0
    assert main(["report", str(d)]) == 0
    rows = list(csv.reader((d / "report.csv").read_text().splitlines()))
    assert rows[0] == ["suite", "result", "validates"] and len(rows) == 2
    v = json.loads((d / "verdict_metric.json").read_text())
    v["suite"], v["pass"] = "fake", False
    (d / "verdict_fake.json").write_text(json.dumps(v))
    assert main(["report", str(d)]) == 1
    assert main(["report", str(tmp_path / "nowhere")]) == 2
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["report", str(empty)]) == 2
    (empty / "verdict_x.json").write_text("{not json")
    assert main(["report", str(empty)]) == 2


def test_help_lists_suites(capsys):
    assert main(["--help"]) == 0
    text = capsys.readouterr().out
    for name in ("bound", "coupling", "generator", "restart", "tensor", "bbm", "nonfeller", "metric", "all"):
        assert f"  {name} " in text


def test_console_script(dbbm_ini, tmp_path):
    r = subprocess.run([sys.executable, "-m", "metabranch.cli", "report", str(tmp_path / "none")],
                       capture_output=True, text=True)
    assert r.returncode == 2 and "no such directory" in r.stderr
