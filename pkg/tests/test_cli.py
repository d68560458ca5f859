import json
from pathlib import Path

import pytest

from exciton_nmqj.cli import EXIT_CONFIG, EXIT_OK, EXIT_POSITIVITY, main


def _scenario(tmp_path: Path, name: str = "scenario.json", **fields) -> Path:
    data = {"name": "cli-test", "t_final": 0.05, "dt": 0.001, "markovian": True}
    data.update(fields)
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def _run(capsys, *argv: str) -> tuple:
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def _manifest(output: Path) -> dict:
    return json.loads((output / "manifest.json").read_text(encoding="utf-8"))


def test_rates_writes_csv_and_manifest(tmp_path: Path, capsys) -> None:
    output = tmp_path / "out"
    config = _scenario(tmp_path, markovian=False, extra_frequencies=[200.0])
    code, out, _ = _run(capsys, "rates", "--config", str(config), "--output", str(output), "--format", "json")

    assert code == EXIT_OK
    summary = json.loads(out)
    assert {row["omega_cm"] for row in summary["rows"]} >= {0.0, 200.0}
    header = (output / "rates.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header.startswith("t_ps,gamma_dephasing,gamma_-")
    manifest = _manifest(output)
    assert manifest["command"] == "rates"
    assert manifest["config"]["name"] == "cli-test"
    assert all(Path(name).exists() for name in manifest["outputs"])
    assert (output / "metrics.prom").exists()


def test_json_log_format_runs(tmp_path: Path, capsys) -> None:
    output = tmp_path / "out"
    code, _, err = _run(
        capsys,
        "rates",
        "--t-final",
        "0.01",
        "--log-format",
        "json",
        "--log-level",
        "INFO",
        "--output",
        str(output),
        "--format",
        "json",
    )
    assert code == EXIT_OK
    assert (output / "rates.csv").exists()
    for line in filter(None, err.splitlines()):
        assert "level" in json.loads(line)


def test_rates_per_temperature_series(tmp_path: Path, capsys) -> None:
    output = tmp_path / "out"
    config = _scenario(tmp_path, temperatures=[77.0, 300.0])
    code, _, _ = _run(capsys, "rates", "--config", str(config), "--output", str(output), "--format", "yaml")
    assert code == EXIT_OK
    assert (output / "rates_77K.csv").exists()
    assert (output / "rates_300K.csv").exists()


def test_evolve_tcl_outputs(tmp_path: Path, capsys) -> None:
    output = tmp_path / "out"
    config = _scenario(tmp_path, measure={"target": 1, "tau": 0.05})
    code, out, _ = _run(capsys, "evolve-tcl", "--config", str(config), "--output", str(output), "--format", "json")

    assert code == EXIT_OK
    row = json.loads(out)["rows"][0]
    assert 0.0 < row["pbar"] < 1.0
    lines = (output / "trajectory_tcl.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0].endswith("min_eig")
    assert len(lines) == 52
    assert (output / "populations_tcl.csv").exists()
    assert _manifest(output)["engine"] == "tcl"


def test_evolve_tcl_positivity_violation_exits_three(tmp_path: Path, capsys) -> None:
    output = tmp_path / "out"
    config = _scenario(tmp_path, t_final=1.0, markovian=False, bath={"reorganization": 120.0, "cutoff": 30.0})
    code, _, err = _run(capsys, "evolve-tcl", "--config", str(config), "--output", str(output), "--format", "json")

    assert code == EXIT_POSITIVITY
    assert "Positivity violation in tcl engine" in err
    manifest = _manifest(output)
    assert manifest["violations"][0]["engine"] == "tcl"
    assert manifest["violations"][0]["min_eigenvalue"] < 0
    assert (output / "trajectory_tcl.csv").exists()


def test_evolve_nmqj_with_jump_log(tmp_path: Path, capsys) -> None:
    output = tmp_path / "out"
    config = _scenario(tmp_path)
    code, out, _ = _run(
        capsys,
        "evolve-nmqj", "--config", str(config), "--output", str(output),
        "--trajectories", "500", "--seed", "0x2a", "--jump-log", "--format", "json",
    )

    assert code == EXIT_OK
    summary = json.loads(out)
    assert set(summary["jumps"]) == {"positive", "negative"}
    header = (output / "trajectory_nmqj.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header.endswith("n_groups,jumps_pos,jumps_neg")
    assert (output / "jumps.jsonl").exists()
    manifest = _manifest(output)
    assert manifest["seed"] == 42
    assert manifest["engine"] == "nmqj"


def test_evolve_nmqj_output_independent_of_threads(tmp_path: Path, capsys) -> None:
    config = _scenario(
        tmp_path,
        hamiltonian={"kind": "dimer", "coupling": 87.0, "epsilon2": 120.0},
        bath={"reorganization": 5.0, "cutoff": 50.0},
        temperature=77.0,
        initial={"kind": "site", "index": 1},
    )
    outputs = []
    for threads in ("1", "4", "16"):
        output = tmp_path / f"threads-{threads}"
        code, _, _ = _run(
            capsys,
            "evolve-nmqj", "--config", str(config), "--output", str(output),
            "--trajectories", "2000", "--seed", "7", "--threads", threads, "--format", "json",
        )
        assert code == EXIT_OK
        outputs.append((output / "trajectory_nmqj.csv").read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]


def test_scan_requires_scan_section(tmp_path: Path, capsys) -> None:
    config = _scenario(tmp_path)
    code, _, err = _run(capsys, "scan", "--config", str(config), "--output", str(tmp_path / "out"))
    assert code == EXIT_CONFIG
    assert "scan" in err


def test_scan_writes_table(tmp_path: Path, capsys) -> None:
    output = tmp_path / "out"
    config = _scenario(
        tmp_path,
        t_final=0.1,
        measure={"target": 1, "tau": 0.1},
        scan={"axis": "cutoff", "values": [20.0, 30.0]},
    )
    code, out, _ = _run(capsys, "scan", "--config", str(config), "--output", str(output), "--format", "json")
    assert code == EXIT_OK
    rows = json.loads(out)["rows"]
    assert [row["value"] for row in rows] == [20.0, 30.0]
    lines = (output / "scan.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "value,pbar_markov,pbar_nm,violation_flag"
    assert len(lines) == 3


def test_fmo_requires_fmo_hamiltonian(tmp_path: Path, capsys) -> None:
    config = _scenario(tmp_path)
    code, _, err = _run(capsys, "fmo", "--config", str(config), "--output", str(tmp_path / "out"))
    assert code == EXIT_CONFIG
    assert "fmo" in err


def test_fmo_writes_both_rate_models(tmp_path: Path, capsys) -> None:
    output = tmp_path / "out"
    config = _scenario(
        tmp_path,
        hamiltonian={"kind": "fmo"},
        bath={"reorganization": 35.0, "cutoff": 150.0},
        initial={"kind": "site", "index": 6},
        t_final=0.02,
    )
    code, out, _ = _run(capsys, "fmo", "--config", str(config), "--output", str(output), "--format", "json")
    assert code == EXIT_OK
    summary = json.loads(out)
    assert summary["relaxation_frequencies"] == 42
    assert summary["dephasing_channels"] == 7
    assert summary["initial_site"] == 6
    assert 1 <= summary["max_difference_site"] <= 7
    assert 0.0 <= summary["max_difference_time_ps"] <= 0.02
    for name in ("fmo_populations_nm.csv", "fmo_populations_markov.csv", "fmo_exciton_populations_nm.csv"):
        assert (output / name).exists()


@pytest.mark.parametrize(
    "argv",
    [
        ["evolve-tcl", "--seed", "-1"],
        ["evolve-tcl", "--dt", "0"],
        ["evolve-tcl", "--config", "does-not-exist.json"],
        ["evolve-tcl", "--log-format", "xml"],
        ["unknown-command"],
    ],
)
def test_configuration_errors_exit_two(argv, tmp_path: Path, capsys) -> None:
    code, _, _ = _run(capsys, *argv, "--output", str(tmp_path / "out"))
    assert code == EXIT_CONFIG


def test_invalid_scenario_field_exits_two(tmp_path: Path, capsys) -> None:
    config = _scenario(tmp_path, dt=0.003)
    code, _, err = _run(capsys, "evolve-tcl", "--config", str(config), "--output", str(tmp_path / "out"))
    assert code == EXIT_CONFIG
    assert "whole number" in err


def test_settings_file_disables_metrics(tmp_path: Path, capsys) -> None:
    output = tmp_path / "out"
    settings = tmp_path / "settings.toml"
    settings.write_text("write_metrics = false\nsummary_format = \"json\"\n", encoding="utf-8")
    config = _scenario(tmp_path)
    code, out, _ = _run(capsys, "evolve-tcl", "--config", str(config), "--output", str(output), "--settings", str(settings))
    assert code == EXIT_OK
    assert json.loads(out)["command"] == "evolve-tcl"
    assert not (output / "metrics.prom").exists()


def test_version_flag(capsys) -> None:
    code, out, _ = _run(capsys, "--version")
    assert code == EXIT_OK
    assert "0.1.0" in out
