import json
import math
from dataclasses import replace

import pytest

from scalarlab.cli import main
from scalarlab.config import parse_config
from scalarlab.runner import MANIFEST, run_experiment, verify_manifest, write_outputs

HEAT = """
experiment = "sweep_dissipation"
master_seed = 1
workers = 1
[field]
kind = "zero"
resolution = 32
[initial]
kind = "single_mode"
mode = [1, 0]
[sweep]
epsilons = [0.015625, 0.0078125, 0.00390625, 0.001953125]
"""

FULL = """
experiment = "full_report"
master_seed = 7
workers = 1
[field]
resolution = 64
max_wavenumber = 10
velocity_rms = 0.1
[solver]
cfl_safety = 0.2
[sweep]
epsilons = [0.015625, 0.0078125, 0.00390625, 0.001953125]
[lagrangian]
realizations = 16
n_particles = 2000
"""


def _rows(path):
    lines = path.read_text().splitlines()
    return lines[0], [[float(x) for x in ln.split(",")] for ln in lines[1:]]


def test_heat_sweep_pipeline(tmp_path):
    man = run_experiment(parse_config(HEAT), tmp_path)
    assert man.exit_code == 0 and not man.errors
    assert [f["path"] for f in man.files] == ["sweep.csv", "convergence.csv"]
    header, rows = _rows(tmp_path / "sweep.csv")
    assert header == "epsilon,dissipation,variance_deficit"
    for eps, diss, deficit in rows:
        assert diss == pytest.approx((1 - math.exp(-8 * math.pi**2 * eps)) / 4, rel=1e-10)
        assert deficit == pytest.approx(2 * diss, rel=1e-10)
    assert verify_manifest(tmp_path)


def test_manifest_echo_reparses(tmp_path):
    cfg = parse_config(HEAT)
    run_experiment(cfg, tmp_path)
    doc = json.loads((tmp_path / MANIFEST).read_text())
    assert parse_config(doc["config"]) == cfg
    assert set(doc) >= {"config", "seeds", "version", "wall_times", "files", "results", "errors"}


def test_repeated_runs_have_identical_digests(tmp_path):
    cfg = parse_config(FULL.replace("full_report", "sample_field"))
    a = run_experiment(cfg, tmp_path / "a")
    b = run_experiment(cfg, tmp_path / "b")
    assert a.files == b.files
    c = run_experiment(replace(cfg, master_seed=8), tmp_path / "c")
    assert a.files != c.files


def test_worker_count_does_not_change_outputs(tmp_path):
    cfg = parse_config(HEAT)
    one = run_experiment(cfg, tmp_path / "one")
    two = run_experiment(replace(cfg, workers=2), tmp_path / "two")
    assert one.files == two.files


def test_full_report_writes_every_table(tmp_path):
    man = run_experiment(parse_config(FULL), tmp_path)
    assert man.exit_code == 0, man.errors
    expected = {
        "field.csv", "ledger.csv", "sweep.csv", "convergence.csv", "yaglom.csv", "yaglom_ratio.csv",
        "structure.csv", "structure_exponents.csv", "dispersion.csv", "dispersion_cells.csv", "dispersion_t.csv", "fk.csv",
        "boxcount.csv", "image_boxcount.csv", "critical_values.csv", "weak_sard.csv",
    }
    assert expected <= {f["path"] for f in man.files}
    assert verify_manifest(tmp_path)


def test_failing_stage_is_isolated(tmp_path):
    cfg = parse_config(HEAT.replace("sweep_dissipation", "yaglom") + "max_resolution = 32\n")
    man = run_experiment(cfg, tmp_path)
    assert man.exit_code == 3
    stages = [e["stage"] for e in man.errors]
    assert stages == ["sweep", "yaglom"]
    assert (tmp_path / MANIFEST).exists()


def test_realizations_get_their_own_directories(tmp_path):
    cfg = parse_config(FULL.replace("full_report", "sample_field") + "")
    cfg = replace(cfg, field=replace(cfg.field, realizations=2))
    man = run_experiment(cfg, tmp_path)
    paths = {f["path"] for f in man.files}
    assert {"r0/field.csv", "r1/field.csv"} <= paths
    assert (tmp_path / "r0/velocity.bin").read_bytes() != (tmp_path / "r1/velocity.bin").read_bytes()


def test_write_outputs_empty(tmp_path):
    assert write_outputs([], tmp_path) == []
    assert list(tmp_path.iterdir()) == []


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    good = tmp_path / "heat.toml"
    good.write_text(HEAT)
    assert main(["sweep_dissipation", "--config", str(good), "--out", str(tmp_path / "o")]) == 0
    bad = tmp_path / "bad.toml"
    bad.write_text("[field]\nresolutoin = 32\n")
    assert main(["solve", "--config", str(bad)]) == 2
    assert "resolutoin" in capsys.readouterr().err
    args = ["sweep_dissipation", "--config", str(good), "--out", str(tmp_path / "u"),
            "--override", "sweep.max_resolution=32", "--override", "sweep.epsilons=[1e-3, 1e-4, 1e-5, 1e-6]"]
    assert main(args) == 3
    assert main(["solve", "--config", str(good), "--out", str(tmp_path / "s"), "--override", "solver.dt=0.9",
                 "--override", "field.kind=\"shear\""]) == 4
    monkeypatch.setenv("SCALARLAB_OUT", str(tmp_path / "env"))
    assert main(["sample_field", "--seed", "5", "--workers", "1"]) == 0
    doc = json.loads((tmp_path / "env" / MANIFEST).read_text())
    assert "master_seed = 5" in doc["config"]
