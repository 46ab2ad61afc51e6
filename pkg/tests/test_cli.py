import json

import pytest

from starstab.cli import main
from starstab.experiments import SWEEP_COLUMNS

FAST_CFG = """\
probes = 80
group_probes = 5
mc_width = 96
unitarize_width = 32
max_levels = 1
"""


@pytest.fixture()
def fast_cfg(tmp_path):
    p = tmp_path / "fast.cfg"
    p.write_text(FAST_CFG, encoding="utf-8")
    return str(p)


def test_budget_command_json(capsys):
    code = main(["budget", "--eps", "1e-6", "--json"])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["eps1"] == 4e-6
    assert "final_bound" in out


def test_budget_command_refuses(capsys):
    code = main(["budget", "--eps", "0.01"])
    assert code == 2


def test_unknown_config_key(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("probse = 12\n", encoding="utf-8")
    code = main(["budget", "--eps", "1e-6", "--config", str(p)])
    assert code == 2
    assert "unknown key" in capsys.readouterr().err


def test_recover_command(fast_cfg, tmp_path, capsys):
    out_csv = tmp_path / "row.csv"
    code = main(["recover", "--shape", "2", "--mult", "2", "--eta", "1e-3",
                 "--config", fast_cfg, "--seed", "5", "--out", str(out_csv),
                 "--json"])
    assert code == 0
    rep = json.loads(capsys.readouterr().out)
    assert all(a["ok"] for a in rep["assertions"])
    lines = out_csv.read_text(encoding="utf-8").split("\n")
    assert lines[0] == ",".join(SWEEP_COLUMNS)
    assert len(lines) == 3  # header + row + trailing newline


def test_recover_abort_exit_code(fast_cfg, tmp_path, capsys):
    cfg = tmp_path / "strict.cfg"
    cfg.write_text(FAST_CFG + "admissible_eps = 1e-6\n", encoding="utf-8")
    code = main(["recover", "--shape", "2", "--mult", "2", "--eta", "1e-3",
                 "--config", str(cfg)])
    assert code == 2
    err = capsys.readouterr().err
    assert "abort in stage 'admissibility'" in err


def test_sweep_command(fast_cfg, tmp_path, capsys):
    out_csv = tmp_path / "sweep.csv"
    code = main(["sweep", "--etas", "1e-3", "--repeats", "1",
                 "--config", fast_cfg, "--seed", "3", "--out", str(out_csv)])
    assert code == 0
    text = out_csv.read_text(encoding="utf-8")
    lines = [l for l in text.split("\n") if l]
    assert lines[0] == ",".join(SWEEP_COLUMNS)
    assert len(lines) == 1 + 4  # default grid has four shapes


def test_kk_command(fast_cfg, capsys):
    code = main(["kk", "--shape", "2", "--mult", "2", "--eta", "1e-3",
                 "--config", fast_cfg, "--json"])
    assert code == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["estimate"]["upper"] <= 2e-3 + 1e-6


def test_tower_command(fast_cfg, capsys):
    code = main(["tower", "--start", "2", "--steps", "2",
                 "--eta", "1e-3", "--config", fast_cfg])
    assert code == 0
    assert "floor 0" in capsys.readouterr().out
