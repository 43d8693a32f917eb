from __future__ import annotations

import json

import pytest
import yaml

from conftest import DATA, make_config
from fivegsim.cli import main


@pytest.fixture
def attack_scenario(tmp_path):
    config = make_config(suci_scheme="null", ca_mode=False).with_attacks(
        ["supi_catch_passive", "preauth_dos_reject", "bidding_down"])
    path = tmp_path / "attack.yaml"
    path.write_text(config.to_yaml())
    return path


class TestRun:
    def test_writes_report(self, attack_scenario, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", str(attack_scenario), "--out", str(out)]) == 0
        text = (out / "report.txt").read_text()
        assert capsys.readouterr().out == text
        assert "T3R1 supi_catch_passive: SUCCESS evidence transcript-supi_catch_passive.jsonl:" in text
        assert "T1-bidding bidding_down: FAIL evidence transcript-bidding_down.jsonl:-" in text
        report = json.loads((out / "report.json").read_text())
        for outcome in report["outcomes"]:
            lines = (out / outcome["transcript"]).read_text().splitlines()
            for item in outcome["evidence"]:
                assert json.loads(lines[item["line"]])["event"] == item["event"]

    def test_byte_identical_outputs(self, attack_scenario, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["run", str(attack_scenario), "--out", str(a)])
        main(["run", str(attack_scenario), "--out", str(b)])
        for f in sorted(p.name for p in a.iterdir()):
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_seed_override_noted(self, attack_scenario, tmp_path, capsys):
        assert main(["run", str(attack_scenario), "--seed", "41", "--out", str(tmp_path / "o")]) == 0
        assert "effective seed: 41 (override)" in capsys.readouterr().out

    def test_missing_knob_exit_2(self, tmp_path, capsys):
        data = yaml.safe_load((DATA / "benign.yaml").read_text())
        del data["knobs"]["capability_echo"]
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump(data))
        assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 2
        assert "knobs.capability_echo: missing required knob" in capsys.readouterr().err

    def test_missing_file_exit_2(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "nope.yaml")]) == 2
        assert "not found" in capsys.readouterr().err

    def test_yaml_error_exit_2(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("version: [unclosed\n")
        assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 2


class TestMatrix:
    def test_golden_grid_matches(self, capsys):
        code = main(["matrix", str(DATA / "golden_grid.yaml"), "--expect", str(DATA / "golden_expectations.json")])
        out = capsys.readouterr().out
        assert code == 0 and "80/80 cells match expectations" in out

    def test_flipped_cell_exit_1(self, tmp_path, capsys):
        data = json.loads((DATA / "golden_expectations.json").read_text())
        cell = data["rows"][0]["verdicts"]
        cell["bidding_down"] = "FAIL" if cell["bidding_down"] == "SUCCESS" else "SUCCESS"
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(data))
        assert main(["matrix", str(DATA / "golden_grid.yaml"), "--expect", str(path)]) == 1
        out = capsys.readouterr().out
        assert out.count("MISMATCH") == 1 and "bidding_down" in out

    def test_without_expectations(self, tmp_path, capsys):
        assert main(["matrix", str(DATA / "golden_grid.yaml"), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "matrix.csv").read_text() == capsys.readouterr().out
        assert json.loads((tmp_path / "matrix.json").read_text())["attacks"]

    def test_bad_workers(self):
        assert main(["matrix", str(DATA / "golden_grid.yaml"), "--workers", "0"]) == 2


class TestValidate:
    def test_scenario_and_grid(self, capsys):
        assert main(["validate", str(DATA / "benign.yaml")]) == 0
        assert main(["validate", str(DATA / "golden_grid.yaml")]) == 0
        out = capsys.readouterr().out
        assert "valid scenario" in out and "16 configurations x 5 attacks" in out

    def test_unknown_command(self):
        assert main(["explode"]) == 2
