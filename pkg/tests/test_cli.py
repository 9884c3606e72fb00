import csv
import json
import math
import subprocess
import sys

import pytest

from levyfield import cli

SMALL = """
seed = 1
samples = 8
workers = 1

[domain]
mesh_cells = [16]

[kernel]
alpha = 1.0
m = 1.0

[noise]
sigma2 = 1.0
jumps = { kind = "dirac", location = 1.0, mass = 1.0 }

[moments]
beta = 3.0
tau = 0.9
bootstrap = 50

[tails]
thresholds = [1.0, 2.0, 3.0]

[cutoff]
paddings = [1.0, 2.0, 3.0, 4.0]
reference_padding = 10.0

[truncation]
n_terms = [4, 8, 16]
padding = 2.0

[mercer]
nodes = [200]
window = [5, 30]
"""


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return str(path)


def run(argv, capsys=None):
    code = cli.main(argv)
    err = capsys.readouterr().err if capsys else ""
    return code, err


def test_validate_passes(tmp_path, capsys):
    code, err = run(["validate", "--out", str(tmp_path)], capsys)
    assert code == 0, err
    rows = read_csv(tmp_path / "validate.csv")
    assert len(rows) >= 10 and all(r["passed"] == "true" for r in rows)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "ok" and "validate.csv" in manifest["files"]


def test_unknown_subcommand(capsys):
    code, err = run(["frobnicate"], capsys)
    assert code == 2 and "usage:" in err


def test_entry_point_usage():
    proc = subprocess.run([sys.executable, "-m", "levyfield.cli", "nonsense"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "usage: levyfield" in proc.stderr


def test_config_error_names_key(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(SMALL.replace("m = 1.0", "m = 0.0"))
    code, err = run(["solve", str(bad), "--out", str(tmp_path / "o")], capsys)
    assert code == 2 and "kernel.m" in err


def test_config_syntax_error(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = 1\n[kernel\n")
    code, err = run(["solve", str(bad)], capsys)
    assert code == 2 and "line 2" in err


def test_cli_override_validated(small_config, capsys):
    code, err = run(["solve", small_config, "--samples", "1"], capsys)
    assert code == 2 and "samples" in err


def test_sample_covariances(tmp_path):
    assert cli.main(["sample", "--samples", "2000", "--workers", "2", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "lag_covariance.csv")
    assert {r["noise"] for r in rows} == {"gaussian", "poisson", "bigamma"}
    for r in rows:
        assert abs(float(r["covariance"]) - float(r["theory"])) <= 3 * float(r["std_error"])
    by_lag = {}
    for r in rows:
        by_lag.setdefault(r["lag"], []).append((float(r["covariance"]), float(r["std_error"])))
    for vals in by_lag.values():
        for c1, s1 in vals:
            for c2, s2 in vals:
                assert abs(c1 - c2) <= 3 * math.hypot(s1, s2)
    svgs = sorted(p.name for p in tmp_path.glob("*.svg"))
    assert svgs == ["field_bigamma.svg", "field_gaussian.svg", "field_poisson.svg"]


@pytest.mark.parametrize("sub,files", [
    ("solve", ["solution.csv", "diagnostics.csv", "solution.svg"]),
    ("moments", ["moments.csv", "h1_norms.csv"]),
    ("tails", ["tails.csv", "tails_summary.csv", "tails.svg"]),
    ("mercer", ["spectrum.csv", "decay.csv", "spectrum.svg"]),
    ("cutoff-rate", ["cutoff.csv", "cutoff_per_seed.csv", "cutoff_fit.csv", "cutoff_field.svg"]),
    ("kl-rate", ["truncation.csv", "truncation_fit.csv", "truncation_summary.csv"]),
])
def test_subcommands_reproducible(tmp_path, small_config, sub, files):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main([sub, small_config, "--out", str(a)]) == 0
    assert cli.main([sub, small_config, "--out", str(b), "--workers", "2"]) == 0
    for name in files:
        assert (a / name).exists()
    for path in a.glob("*.csv"):
        assert path.read_bytes() == (b / path.name).read_bytes(), path.name
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["config_hash"] == mb["config_hash"]
    assert (ma["workers"], mb["workers"]) == (1, 2)
    for key in ("tool", "version", "subcommand", "seed", "samples", "started", "finished",
                "files", "status"):
        assert key in ma
    assert set(files) <= set(ma["files"])


def test_output_precedence(tmp_path, small_config, monkeypatch):
    env_dir = tmp_path / "env"
    monkeypatch.setenv(cli.OUTPUT_ENV, str(env_dir))
    monkeypatch.chdir(tmp_path)
    assert cli.main(["solve", small_config]) == 0
    assert (env_dir / "manifest.json").exists()
    flag_dir = tmp_path / "flag"
    assert cli.main(["solve", small_config, "--out", str(flag_dir)]) == 0
    assert (flag_dir / "manifest.json").exists()
    monkeypatch.delenv(cli.OUTPUT_ENV)
    assert cli.main(["solve", small_config]) == 0
    assert (tmp_path / "levyfield-out" / "manifest.json").exists()


def test_seed_override_changes_output(tmp_path, small_config):
    cli.main(["solve", small_config, "--out", str(tmp_path / "a")])
    cli.main(["solve", small_config, "--out", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "solution.csv").read_bytes() != (tmp_path / "b" / "solution.csv").read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["config_hash"] != mb["config_hash"] and mb["seed"] == 2


def test_study_failure_exit_code(tmp_path, capsys):
    cfg = tmp_path / "fail.toml"
    cfg.write_text(SMALL.replace("n_terms = [4, 8, 16]", "n_terms = [40, 80, 160]")
                   .replace("padding = 2.0", "padding = 0.5"))
    code, err = run(["kl-rate", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == 1 and "failed at stage" in err
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["status"] == "failed"
    assert manifest["failed_stage"] and "rank" in manifest["error"]
