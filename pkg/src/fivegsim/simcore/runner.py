"""Scenario runs and configuration-grid sweeps."""

from __future__ import annotations

import copy
import csv
import io
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..adversary import AttackKind, AttackOutcome, AttackRun, Verdict, outcome_of, stage_attack, stage_benign
from ..errors import InvalidConfig
from .scenario import KNOBS, VERSION, ScenarioConfig, parse_scenario


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    benign: AttackRun
    attack_runs: dict[str, AttackRun] = field(default_factory=dict)
    outcomes: list[AttackOutcome] = field(default_factory=list)

    @property
    def transcript(self) -> str:
        return self.benign.world.channel.transcript.text()

    def transcripts(self) -> dict[str, str]:
        out = {"benign": self.transcript}
        for name, run in self.attack_runs.items():
            out[name] = run.world.channel.transcript.text()
        return out

    def final_states(self) -> dict[str, dict[str, str]]:
        return {"benign": self.benign.world.digests(),
                **{name: run.world.digests() for name, run in self.attack_runs.items()}}


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    """A benign baseline run plus one independent run per listed attack.

    When the attacker can sniff, the baseline carries a passive sniffer.
    """
    result = ScenarioResult(config, stage_benign(config, sniff=config.attacker["can_sniff"]))
    for name in config.attacks:
        run = stage_attack(name, config)
        result.attack_runs[name] = run
        result.outcomes.append(outcome_of(run))
    return result


# -- grid ------------------------------------------------------------------


@dataclass
class GridSpec:
    base: dict
    axes: dict[str, list[Any]]
    attacks: list[str]

    def configs(self) -> list[ScenarioConfig]:
        out = []
        names = list(self.axes)
        for values in itertools.product(*(self.axes[n] for n in names)):
            raw = copy.deepcopy(self.base)
            raw["knobs"].update(dict(zip(names, values)))
            raw["attacks"] = list(self.attacks)
            out.append(parse_scenario(raw))
        return out


def parse_grid(data: Any) -> GridSpec:
    problems: list[tuple[str, str]] = []
    if not isinstance(data, dict):
        raise InvalidConfig([("<root>", "grid must be a mapping")])
    if data.get("version") != VERSION:
        problems.append(("version", f"expected {VERSION!r}, got {data.get('version')!r}"))
    for key in ("base", "axes", "attacks"):
        if key not in data:
            problems.append((key, "missing required field"))
    axes = data.get("axes") or {}
    if not isinstance(axes, dict):
        problems.append(("axes", "must be a mapping of knob -> list of values"))
        axes = {}
    for knob, values in axes.items():
        if knob not in KNOBS:
            problems.append((f"axes.{knob}", "unknown knob"))
        elif not isinstance(values, list) or not values:
            problems.append((f"axes.{knob}", "must be a non-empty list"))
    attacks = data.get("attacks")
    if attacks is not None and not isinstance(attacks, list):
        problems.append(("attacks", "must be a list"))
    if problems:
        raise InvalidConfig(problems)
    base = copy.deepcopy(data["base"])
    if isinstance(base, dict):
        base.setdefault("version", VERSION)
        base.setdefault("attacks", [])
    try:
        parse_scenario(base)
    except InvalidConfig as exc:
        raise InvalidConfig([(f"base.{p}", m) for p, m in exc.problems]) from exc
    values = {k: [("null" if v is None and k == "suci_scheme" else v) for v in vs] for k, vs in axes.items()}
    spec = GridSpec(base, values, list(attacks))
    spec.configs()  # validate every combination up front
    return spec


def load_grid(path: str | Path) -> GridSpec:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise InvalidConfig([("<file>", f"YAML parse error: {exc}")]) from exc
    return parse_grid(data)


# -- outcome matrix --------------------------------------------------------


@dataclass
class MatrixRow:
    fingerprint: str
    settings: dict[str, Any]
    verdicts: dict[str, str]
    evidence_lines: dict[str, list[int]] = field(default_factory=dict)


@dataclass
class OutcomeMatrix:
    axes: list[str]
    attacks: list[str]
    rows: list[MatrixRow]

    def cell(self, fingerprint: str, attack: str) -> str:
        for row in self.rows:
            if row.fingerprint == fingerprint:
                return row.verdicts[attack]
        raise KeyError(fingerprint)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["fingerprint", *self.axes, *self.attacks])
        for row in self.rows:
            writer.writerow([row.fingerprint, *(_render(row.settings[a]) for a in self.axes),
                             *(row.verdicts[a] for a in self.attacks)])
        return buf.getvalue()

    def to_fields(self) -> dict:
        return {
            "version": VERSION,
            "axes": self.axes,
            "attacks": self.attacks,
            "rows": [
                {"fingerprint": r.fingerprint, "settings": r.settings, "verdicts": r.verdicts,
                 "evidence_lines": r.evidence_lines}
                for r in self.rows
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_fields(), indent=2, sort_keys=True) + "\n"


def _render(value: Any) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, dict):
        return json.dumps(value, sort_keys=True)
    return str(value)


def _run_cell(raw: dict, attack: str) -> tuple[str, list[int]]:
    outcome = outcome_of(stage_attack(attack, parse_scenario(raw)))
    return outcome.verdict.value, sorted({e["line"] for e in outcome.evidence})


def enumerate_outcomes(configs: GridSpec | list[ScenarioConfig], attacks: list[str | AttackKind] | None = None,
                       *, workers: int = 1) -> OutcomeMatrix:
    """Run every (config, attack) pair and collect verdicts.

    Runs share nothing, so ``workers > 1`` fans them out over processes;
    the matrix is assembled in grid order either way.
    """
    if isinstance(configs, GridSpec):
        axes = list(configs.axes)
        attacks = configs.attacks if attacks is None else attacks
        configs = configs.configs()
    else:
        axes = list(KNOBS)
    names = [AttackKind(a).value for a in (attacks or [])]
    jobs = [(c.raw, a) for c in configs for a in names]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, *zip(*jobs)))
    else:
        results = [_run_cell(raw, a) for raw, a in jobs]
    rows = []
    it = iter(results)
    for c in configs:
        row = MatrixRow(c.fingerprint, {a: c.knobs[a] for a in axes}, {})
        for a in names:
            verdict, lines = next(it)
            row.verdicts[a] = verdict
            row.evidence_lines[a] = lines
        rows.append(row)
    return OutcomeMatrix(axes, names, rows)


# -- expectations ----------------------------------------------------------


@dataclass(frozen=True)
class Mismatch:
    fingerprint: str
    settings: dict
    attack: str
    expected: str | None
    actual: str | None

    def render(self) -> str:
        where = ", ".join(f"{k}={_render(v)}" for k, v in self.settings.items())
        return f"{self.fingerprint} [{where}] {self.attack}: expected {self.expected}, got {self.actual}"


def load_expectations(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfig([("<file>", f"JSON parse error: {exc}")]) from exc
    if not isinstance(data, dict) or not isinstance(data.get("rows"), list):
        raise InvalidConfig([("rows", "expectations need a list of rows")])
    for i, row in enumerate(data["rows"]):
        if not isinstance(row, dict) or "fingerprint" not in row or not isinstance(row.get("verdicts"), dict):
            raise InvalidConfig([(f"rows[{i}]", "needs fingerprint and verdicts")])
        for attack, v in row["verdicts"].items():
            if v not in {x.value for x in Verdict}:
                raise InvalidConfig([(f"rows[{i}].verdicts.{attack}", f"unknown verdict {v!r}")])
    return data


def diff_expectations(matrix: OutcomeMatrix, expectations: dict) -> list[Mismatch]:
    expected = {r["fingerprint"]: r for r in expectations["rows"]}
    out: list[Mismatch] = []
    seen = set()
    for row in matrix.rows:
        seen.add(row.fingerprint)
        exp = expected.get(row.fingerprint)
        for attack in matrix.attacks:
            want = exp["verdicts"].get(attack) if exp else None
            got = row.verdicts[attack]
            if want != got:
                out.append(Mismatch(row.fingerprint, row.settings, attack, want, got))
    for fp, exp in expected.items():
        if fp not in seen:
            for attack, want in sorted(exp["verdicts"].items()):
                out.append(Mismatch(fp, exp.get("settings", {}), attack, want, None))
    return out
