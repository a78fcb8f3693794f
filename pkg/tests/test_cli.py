import json
from pathlib import Path

import pytest

from fedsim.cli import EXIT_CONFIG, EXIT_DNC, EXIT_OK, main
from fedsim.simulator import parse_run_csv

CONFIG = """
[data]
kind = blobs
n = 120
features = 4
classes = 3
aux_size = 6

[protocol]
n_devices = 6
per_round = 3
rounds = 4
seed = 42

[defense]
kind = mean
clip = fixed
clip_l = 5.0
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "exp.ini"
    p.write_text(CONFIG)
    return p


def run_dir(root: Path) -> Path:
    dirs = [p for p in root.iterdir() if p.is_dir()]
    assert len(dirs) == 1
    return dirs[0]


class TestRun:
    def test_minimal_config_writes_artifacts(self, cfg_path, tmp_path):
        out = tmp_path / "out"
        assert main(["run", str(cfg_path), "--out", str(out)]) == EXIT_OK
        d = run_dir(out)
        rows = parse_run_csv((d / "rounds.csv").read_text())
        assert len(rows) == 4
        summary = json.loads((d / "summary.json").read_text())
        assert summary["status"] == "ok"

    def test_unknown_key_names_it(self, tmp_path, capsys):
        p = tmp_path / "bad.ini"
        p.write_text(CONFIG + "\n[attack]\nbogus = 1\n")
        assert main(["run", str(p)]) == EXIT_CONFIG
        assert "attack.bogus" in capsys.readouterr().err

    def test_set_override_shortens_run(self, cfg_path, tmp_path):
        out = tmp_path / "out"
        assert main(["run", str(cfg_path), "--set", "protocol.rounds=2",
                     "--out", str(out)]) == EXIT_OK
        rows = parse_run_csv((run_dir(out) / "rounds.csv").read_text())
        assert len(rows) == 2

    def test_missing_config_is_config_error(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.ini")]) == EXIT_CONFIG

    def test_dnc_exit_code(self, cfg_path, tmp_path):
        rc = main(["run", str(cfg_path), "--out", str(tmp_path / "o"),
                   "--set", "defense.kind=bulyan", "--set", "defense.f=1"])
        assert rc == EXIT_DNC  # per_round=3 < 4f+3

    def test_byte_identical_reruns_and_worker_invariance(self, cfg_path, tmp_path):
        texts = []
        for i, workers in enumerate(("1", "1", "4")):
            out = tmp_path / f"out{i}"
            assert main(["run", str(cfg_path), "--out", str(out),
                         "--set", f"protocol.n_workers={workers}"]) == EXIT_OK
            texts.append((run_dir(out) / "rounds.csv").read_bytes())
        assert texts[0] == texts[1] == texts[2]


class TestPairedCmd:
    def test_paired_writes_drift(self, cfg_path, tmp_path):
        out = tmp_path / "out"
        rc = main(["paired", str(cfg_path), "--out", str(out),
                   "--set", "protocol.p_compromised=0.34",
                   "--set", "attack.kind=targeted_pgd",
                   "--set", "attack.l_known=2.0"])
        assert rc == EXIT_OK
        d = run_dir(out)
        assert (d / "benign-rounds.csv").exists()
        assert (d / "poisoned-rounds.csv").exists()
        drift = json.loads((d / "drift.json").read_text())
        assert len(drift["per_round_l1_drift"]) == 5  # T + 1 states

    def test_paired_without_attack_rejected(self, cfg_path, tmp_path):
        rc = main(["paired", str(cfg_path), "--out", str(tmp_path / "o")])
        assert rc == EXIT_CONFIG


class TestCertifyCmd:
    def test_one_step_fixture_values(self, capsys):
        rc = main(["certify", "--rho", "0.1", "--c", "0.25", "--k", "1",
                   "--d", "2", "--T", "1", "--schedule", "constant:1.0"])
        assert rc == EXIT_OK
        out = capsys.readouterr().out
        assert "recurrence=0.1" in out
        assert "closed_form=0.15" in out

    def test_zero_budget_zero_radii(self, capsys):
        main(["certify", "--rho", "0", "--c", "0.25", "--gamma", "0",
              "--k", "2", "--d", "8", "--T", "5"])
        out = capsys.readouterr().out
        assert "recurrence=0 " in out and "closed_form=0" in out

    def test_grid_csv_monotone_in_k(self, tmp_path, capsys):
        csv = tmp_path / "grid.csv"
        main(["certify", "--rho", "0.1", "--c", "0.25", "--k", "1",
              "--d", "100", "--T", "3", "--grid-k", "1,10,100",
              "--csv", str(csv)])
        lines = csv.read_text().strip().split("\n")
        assert lines[0] == "# format: radius-v1"
        closed = [float(line.split(",")[-1]) for line in lines[2:]]
        assert closed == sorted(closed)


class TestTuneKCmd:
    def test_near_one_omega_accepts_first_value(self, cfg_path, capsys):
        rc = main(["tune-k", str(cfg_path), "--omega", "0.999",
                   "--iters-per-epoch", "6"])
        assert rc == EXIT_OK
        assert "k=2" in capsys.readouterr().out  # ceil(12/6)


class TestSweepCmd:
    def test_sweep_over_k_writes_summary(self, cfg_path, tmp_path):
        out = tmp_path / "sw"
        rc = main(["sweep", str(cfg_path), "--out", str(out),
                   "--set", "defense.kind=sparsefed",
                   "--param", "defense.k=2,4,8", "--jobs", "2"])
        assert rc == EXIT_OK
        lines = (out / "sweep" / "summary.csv").read_text().strip().split("\n")
        assert lines[0] == "# format: sweep-v1"
        assert lines[1].startswith("defense.k,")
        assert len(lines) == 5  # tag + header + 3 points

    def test_point_failure_recorded_and_sweep_continues(self, cfg_path, tmp_path):
        out = tmp_path / "sw"
        rc = main(["sweep", str(cfg_path), "--out", str(out),
                   "--param", "protocol.per_round=2,99"])
        assert rc == EXIT_OK
        lines = (out / "sweep" / "summary.csv").read_text().strip().split("\n")
        statuses = [line.split(",")[1] for line in lines[2:]]
        assert statuses[0] == "ok"
        assert statuses[1].startswith("error")

    def test_empty_sweep_is_usage_error(self, cfg_path):
        assert main(["sweep", str(cfg_path)]) == EXIT_CONFIG


def test_unknown_subcommand_is_config_error():
    assert main(["frobnicate"]) == EXIT_CONFIG
