import json

import numpy as np
import pytest

from classroom_aerosol import cli
from classroom_aerosol.config import default_config
from classroom_aerosol.simulation import (
    CheckpointError, CheckpointVersionError, CorruptCheckpointError, Simulation, convergence_harness,
    convergence_table, load_checkpoint, read_checkpoint_header, run, save_checkpoint,
)

SHORT = default_config(duration=4.0)


@pytest.fixture(scope="module")
def short_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return run(SHORT, out), out


def test_zero_duration_reports_nothing():
    res = run(default_config(duration=0.0))
    a = res.report["audit"]
    assert a["injected"] == 0 and a["balanced"]
    assert res.state.ledger.mu.sum() == 0.0


def test_audit_balances_and_salt_is_untouched(short_run):
    res, _ = short_run
    a = res.report["audit"]
    assert a["injected"] > 0
    assert a["balanced"] and a["salt_mass_conserved"]
    assert a["injected"] == a["suspended"] + a["captured"] + a["escaped"] + a["settled"]


def test_outputs_written(short_run):
    _, out = short_run
    for name in ("risk_matrix.csv", "deposition.csv", "fomite.csv", "max_risk.csv", "report.json"):
        assert (out / name).exists(), name
    rep = json.loads((out / "report.json").read_text())
    assert rep["intervention"] == "none" and rep["simulated_time"] == pytest.approx(4.0)


def test_repeated_runs_are_byte_identical(short_run, tmp_path):
    _, out = short_run
    run(SHORT, tmp_path)
    for name in ("risk_matrix.csv", "deposition.csv", "fomite.csv", "max_risk.csv"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes(), name


def test_checkpoint_round_trip_matches_uninterrupted(short_run, tmp_path):
    res, _ = short_run
    ck = tmp_path / "mid.ckpt"
    sim = Simulation(SHORT)
    sim.run(checkpoint_at=2.0, checkpoint_path=ck)
    assert read_checkpoint_header(ck)["t"] == pytest.approx(2.0)
    resumed = Simulation(SHORT).run(load_checkpoint(ck))
    assert np.array_equal(resumed.ledger.mu, res.state.ledger.mu)
    assert np.array_equal(resumed.droplets.pos, res.state.droplets.pos)
    assert np.array_equal(resumed.surfaces.virions, res.state.surfaces.virions)


def _checkpoint(tmp_path):
    sim = Simulation(default_config(duration=0.5))
    path = tmp_path / "c.ckpt"
    save_checkpoint(path, sim.run())
    return path


def test_corrupt_checkpoint_rejected(tmp_path):
    path = _checkpoint(tmp_path)
    data = bytearray(path.read_bytes())
    data[-40] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_truncated_checkpoint_rejected(tmp_path):
    path = _checkpoint(tmp_path)
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)
    (tmp_path / "junk").write_bytes(b"hello")
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(tmp_path / "junk")


def test_checkpoint_version_mismatch(tmp_path):
    path = _checkpoint(tmp_path)
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path, expected_version=99)


def test_checkpoint_from_other_configuration(tmp_path):
    path = _checkpoint(tmp_path)
    with pytest.raises(CheckpointError):
        Simulation(default_config(duration=0.5, seed=7)).run(load_checkpoint(path))


def test_convergence_identical_cases_change_nothing():
    cfg = default_config(duration=1.0)
    rows = convergence_harness(cfg, [(50, 50, 30), (50, 50, 30)], [0.1, 0.1])
    assert len(rows) == 4
    assert all(r["relative_change"] in (None, 0.0) for r in rows)
    assert "relative_change_percent" in convergence_table(rows)


def test_convergence_needs_two_cases():
    with pytest.raises(ValueError):
        convergence_harness(default_config(duration=1.0), [(50, 50, 30)], [0.1, 0.05])


def test_cli_run_and_report(tmp_path, capsys):
    out = tmp_path / "cli"
    assert cli.main(["run", "--duration", "2", "--seed", "3", "--intervention", "screens", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "intervention=screens" in text and "balanced=True" in text
    assert cli.main(["report", "--in", str(out), "--deposition", "--fomite"]) == 0
    assert "max receptor risk" in capsys.readouterr().out
    assert cli.main(["report", "--in", str(tmp_path / "missing")]) == 2


def test_cli_rejects_bad_grid():
    with pytest.raises(SystemExit):
        cli.main(["converge", "--grids", "50x50", "--dts", "0.1", "0.05"])
