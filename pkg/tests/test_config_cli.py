import json
import os

import pytest

from rps_spde.cli import main
from rps_spde.config import REQUIRED, load_config, parse_config, to_text
from rps_spde.errors import ParseError, ValidationError
from rps_spde.io import read_csv, write_csv

HERE = os.path.dirname(__file__)
CONFIGS = os.path.join(HERE, "..", "configs")

SMALL = """
experiment = "ihrie-solve"
seed = 7
n_samples = 4
domain.c = 15.0
domain.n_x = 32
basis.K_m = 4
noise.sigma_rule = "0.25/k"
ihrie.n_t = 32
ihrie.T_win = 6.5
ihrie.fp_tol = 1e-6
"""


def test_empty_config_lists_required():
    with pytest.raises(ValidationError) as e:
        parse_config("")
    for key in REQUIRED:
        assert any(key in v for v in e.value.violations)


def test_grid_alignment_named():
    with pytest.raises(ValidationError) as e:
        parse_config(SMALL.replace("ihrie.n_t = 32", "ihrie.n_t = 7"))
    assert any("dt | tau" in v for v in e.value.violations)


def test_parse_error_location():
    with pytest.raises(ParseError) as e:
        parse_config('experiment = "basis-check"\nseed = = 3\n')
    assert e.value.line == 2 and e.value.column is not None


def test_unknown_key_and_type():
    with pytest.raises(ValidationError) as e:
        parse_config(SMALL + 'ihrie.nt = 3\n')
    assert any("ihrie.nt" in v for v in e.value.violations)
    with pytest.raises(ValidationError):
        parse_config(SMALL.replace("seed = 7", 'seed = "seven"'))


def test_flagship_round_trip():
    cfg = load_config(os.path.join(CONFIGS, "flagship.cfg"))
    again = parse_config(to_text(cfg))
    assert again.values == cfg.values
    assert cfg.ihrie().W > 0 and cfg.n_samples == 500


def test_all_shipped_configs_valid():
    for name in sorted(os.listdir(CONFIGS)):
        if name.endswith(".cfg"):
            load_config(os.path.join(CONFIGS, name))


def test_csv_roundtrip(tmp_path):
    f = tmp_path / "a.csv"
    write_csv(f, ["a", "b", "c"], [[1, 0.1, True], [2, 1e-300, False]])
    text = f.read_text()
    assert text.splitlines()[1] == "1,0.1,1"
    hdr, rows = read_csv(f)
    assert hdr == ["a", "b", "c"] and float(rows[1][1]) == 1e-300


def test_basis_check_cli(tmp_path):
    out = tmp_path / "basis"
    code = main(["basis-check", "--config", os.path.join(CONFIGS, "basis.cfg"), "--out", str(out)])
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["exit_code"] == 0 and man["summary"]["orthonormality_residual"] < 1e-12
    _, rows = read_csv(out / "eigenvalues.csv")
    assert len(rows) == 16


def _write_small(tmp_path, extra=""):
    f = tmp_path / "small.cfg"
    f.write_text(SMALL + extra)
    return str(f)


def test_cli_rerun_byte_identical(tmp_path):
    cfg = _write_small(tmp_path)
    for d in ("r1", "r2"):
        assert main(["ihrie-solve", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    for name in ("solution.csv", "residual_history.csv"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()
    a = json.loads((tmp_path / "r1" / "manifest.json").read_text())
    assert a["seed"] == 7 and a["summary"]["residual"] < 1e-6


def test_cli_overrides(tmp_path):
    cfg = _write_small(tmp_path)
    out = tmp_path / "o"
    assert main(["ihrie-solve", "--config", cfg, "--out", str(out), "--seed", "9", "--samples", "2"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 9 and man["config"]["n_samples"] == 2
    _, rows = read_csv(out / "solution.csv")
    assert sorted({int(r[0]) for r in rows}) == [0, 1]


def test_cli_no_convergence_exit_2(tmp_path):
    cfg = _write_small(tmp_path, "ihrie.max_iters = 1\n")
    out = tmp_path / "nc"
    assert main(["ihrie-solve", "--config", cfg, "--out", str(out)]) == 2
    _, rows = read_csv(out / "residual_history.csv")
    assert len(rows) == 1
    assert json.loads((out / "manifest.json").read_text())["exit_code"] == 2


def test_cli_bad_config_exit_1(tmp_path, capsys):
    f = tmp_path / "bad.cfg"
    f.write_text("seed = \n")
    assert main(["basis-check", "--config", str(f)]) == 1
    assert "line 1" in capsys.readouterr().err
