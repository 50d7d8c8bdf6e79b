import csv
import json

import pytest

from agespectra.cli import main
from agespectra.verification import scenario_path

REF = str(scenario_path("homogeneous"))


def _small(tmp_path, name="x2_gap", n=41):
    text = scenario_path(name).read_text().replace("n_x = 200", f"n_x = {n}")
    path = tmp_path / f"{name}.toml"
    path.write_text(text)
    return str(path)


def test_solve_reference(tmp_path):
    out = tmp_path / "solve.json"
    assert main(["solve", REF, "-o", str(out)]) == 0
    report = json.loads(out.read_text())
    assert abs(report["s_A"] - 0.96034519744) <= 20 * 1e-8
    with open(tmp_path / "solve_eigenfunction.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["a", "x", "phi"] and len(rows) == 1 + 200 * 200


def test_quick_verify_names_failed_assumption(capsys):
    code = main(["verify", "--suite", "quick", str(scenario_path("broken_mu"))])
    assert code != 0
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert "mu.lower_bound" in err["message"] and err["exit_code"] == 1


def test_quick_verify_passes_reference(tmp_path):
    assert main(["verify", "--suite", "quick", _small(tmp_path, "homogeneous")]) == 0


def test_sweep_writes_four_rows_with_verdict(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", _small(tmp_path), "--param", "D", "--values", "0.01,0.1,1,10", "--jobs", "1", "-o", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and all(r["verdict"] in ("ok", "no-existence") for r in rows)
    assert json.loads((tmp_path / "sweep.json").read_text())["parameter"] == "D"


def test_gamma_sweep(tmp_path):
    out = tmp_path / "g.json"
    assert main(["sweep", _small(tmp_path, "scaling_wide"), "--param", "gamma", "--values", "1,4", "--m", "1", "--jobs", "1", "-o", str(out)]) == 0
    assert json.loads(out.read_text())["m"] == 1.0


def test_outputs_are_byte_identical(tmp_path):
    cfg = _small(tmp_path)
    for tag in ("a", "b"):
        assert main(["simulate", cfg, "--t-final", "3", "--seed", "4", "-o", str(tmp_path / f"{tag}.json")]) == 0
        assert main(["solve", cfg, "--seed", "4", "-o", str(tmp_path / f"s{tag}.json")]) == 0
    assert (tmp_path / "a_trajectory.csv").read_bytes() == (tmp_path / "b_trajectory.csv").read_bytes()
    assert (tmp_path / "sa_eigenfunction.csv").read_bytes() == (tmp_path / "sb_eigenfunction.csv").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_simulate_trajectory_header(tmp_path):
    out = tmp_path / "traj.csv"
    assert main(["simulate", _small(tmp_path), "--t-final", "2", "-o", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "t,log_mass"
    est = json.loads((tmp_path / "traj.json").read_text())
    assert est["r2"] > 0.99


def test_criteria_command(tmp_path, capsys):
    assert main(["criteria", _small(tmp_path)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["criterion_II"]["verdict"] == "diverges"
    assert report["nonexistence"]["applicable"] is False


@pytest.mark.parametrize(
    "argv",
    [
        ["solve", "/does/not/exist.toml"],
        ["solve", REF, "--set", "rates.diffusion_rate=-1"],
        ["solve", REF, "--set", "kernel.profile=triangle"],
        ["sweep", REF, "--param", "D", "--values", "a,b"],
    ],
)
def test_config_errors_exit_two(argv, capsys):
    assert main(argv) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == 2 and err["message"]


def test_strict_mode_aborts_on_assumption(capsys):
    assert main(["solve", str(scenario_path("broken_mu")), "--strict"]) == 2
    assert "mu.lower_bound" in capsys.readouterr().err


def test_numerical_failure_exits_three(tmp_path, capsys):
    # no principal root: fertility too low for the characteristic equation on an unbounded horizon
    cfg = tmp_path / "dead.toml"
    cfg.write_text('[domain]\nn_x = 21\n[age]\nn_a = 41\n[kernel]\nprofile = "constant"\nradius = 2.0\n'
                   '[rates]\nbeta = "0.1"\nmu = "0.5"\n')
    assert main(["solve", str(cfg)]) == 3
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["exit_code"] == 3


def test_env_seed_override(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SPECTRA_SEED", "17")
    out = tmp_path / "q.json"
    main(["verify", "--suite", "quick", _small(tmp_path, "homogeneous"), "-o", str(out)])
    assert json.loads(out.read_text())["seed"] == 17
