from __future__ import annotations

import copy
import random
from pathlib import Path

import pytest

from fivegsim.simcore.runner import load_grid
from fivegsim.simcore.scenario import load_scenario, parse_scenario

DATA = Path(__file__).resolve().parents[1] / "src" / "fivegsim" / "data"
TEST_DATA = Path(__file__).resolve().parent / "data"


@pytest.fixture
def benign_config():
    return load_scenario(DATA / "benign.yaml")


@pytest.fixture
def golden_grid():
    return load_grid(DATA / "golden_grid.yaml")


@pytest.fixture
def rng():
    return random.Random(1234)


def make_config(**overrides):
    """Benign scenario with knob overrides; attacker gets every capability."""
    raw = copy.deepcopy(load_scenario(DATA / "benign.yaml").raw)
    raw["knobs"].update(overrides)
    raw["attacker"] = {
        "can_sniff": True,
        "can_inject_preauth": True,
        "can_broadcast": True,
        "can_mutate_in_transit": True,
        "rogue_priority": 100,
    }
    return parse_scenario(raw)


def two_network_config(*, same_plmn: bool, **knobs):
    raw = copy.deepcopy(make_config(**knobs).raw)
    second = "001-01" if same_plmn else "002-02"
    raw["networks"].append({"name": "second", "plmn": second, "priority": 5})
    raw["subscribers"][0]["allowed_networks"] = sorted({"001-01", second})
    return parse_scenario(raw)


# -- acceptance summary ------------------------------------------------------

_acceptance: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_ac" not in report.nodeid:
        return
    name = report.nodeid.rsplit("::", 1)[1]
    if report.failed or (report.when == "call" and name not in _acceptance):
        _acceptance[name] = "FAIL" if report.failed else "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        label, _, words = name.removeprefix("test_").partition("_")
        terminalreporter.write_line(f"{label.upper()} {words.replace('_', ' ')}: {_acceptance[name]}")
