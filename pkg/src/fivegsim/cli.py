"""Command-line entry point: ``fivegsim run|matrix|validate``.

Exit codes: 0 ok, 1 expectation mismatch, 2 invalid input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Sequence

import yaml

from .errors import InvalidConfig, UnsupportedAttackForConfig
from .simcore.runner import (
    ScenarioResult,
    diff_expectations,
    enumerate_outcomes,
    load_expectations,
    load_grid,
    parse_grid,
    run_scenario,
)
from .simcore.scenario import KNOBS, load_scenario, parse_scenario

EXIT_OK, EXIT_MISMATCH, EXIT_INVALID = 0, 1, 2


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_INVALID


def _describe(exc: InvalidConfig) -> str:
    return "\n".join(f"{path}: {msg}" for path, msg in exc.problems)


def _knob_text(value: object) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, dict):
        return ", ".join(f"{k}={v}" for k, v in value.items())
    return str(value)


def render_report(result: ScenarioResult, *, source: str, seed_overridden: bool) -> tuple[str, dict]:
    cfg = result.config
    transcripts = result.transcripts()
    files = {name: f"transcript-{name}.jsonl" for name in transcripts}
    benign = result.benign.world
    ue_phases = {ep: ue.phase.value for ep, ue in benign.ues.items()}

    lines = [
        "fiveg-sim report",
        f"scenario: {source}",
        f"fingerprint: {cfg.fingerprint}",
        f"effective seed: {cfg.seed}" + (" (override)" if seed_overridden else ""),
        "defense knobs:",
        *(f"  {k} = {_knob_text(cfg.knobs[k])}" for k in KNOBS),
        f"benign run: {', '.join(f'{ep} {p}' for ep, p in ue_phases.items())}; "
        f"last tick {benign.channel.tick}; {files['benign']}",
        "attacks:" if result.outcomes else "attacks: none",
    ]
    outcomes = []
    for outcome in result.outcomes:
        name = outcome.attack.value
        where = ",".join(str(e["line"] + 1) for e in outcome.evidence) or "-"
        lines.append(f"  {outcome.row} {name}: {outcome.verdict.value} evidence {files[name]}:{where}")
        outcomes.append({**outcome.to_fields(), "transcript": files[name]})
    report = {
        "scenario": source,
        "fingerprint": cfg.fingerprint,
        "seed": cfg.seed,
        "seed_overridden": seed_overridden,
        "knobs": cfg.knobs,
        "benign": {"ue_phases": ue_phases, "last_tick": benign.channel.tick, "transcript": files["benign"]},
        "outcomes": outcomes,
        "transcripts": {
            files[name]: hashlib.sha256(text.encode()).hexdigest() for name, text in transcripts.items()
        },
        "evidence_lines": "1-based line numbers in the named transcript file",
    }
    return "\n".join(lines) + "\n", report


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = load_scenario(args.scenario)
        if args.seed is not None:
            config = config.with_seed(args.seed)
        result = run_scenario(config)
    except FileNotFoundError:
        return _fail(f"scenario file not found: {args.scenario}")
    except InvalidConfig as exc:
        return _fail(f"invalid scenario {args.scenario}\n{_describe(exc)}")
    except UnsupportedAttackForConfig as exc:
        return _fail(f"unsupported attack for this configuration: {exc}")

    text, report = render_report(result, source=Path(args.scenario).name, seed_overridden=args.seed is not None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, transcript in result.transcripts().items():
        (out / f"transcript-{name}.jsonl").write_text(transcript)
    (out / "report.txt").write_text(text)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_matrix(args: argparse.Namespace) -> int:
    try:
        grid = load_grid(args.grid)
        expectations = load_expectations(args.expect) if args.expect else None
        matrix = enumerate_outcomes(grid, workers=args.workers)
    except FileNotFoundError as exc:
        return _fail(f"file not found: {exc.filename}")
    except InvalidConfig as exc:
        return _fail(f"invalid input\n{_describe(exc)}")
    except UnsupportedAttackForConfig as exc:
        return _fail(f"unsupported attack for this configuration: {exc}")

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "matrix.csv").write_text(matrix.to_csv())
        (out / "matrix.json").write_text(matrix.to_json())
    sys.stdout.write(matrix.to_csv())
    if expectations is None:
        return EXIT_OK
    mismatches = diff_expectations(matrix, expectations)
    for m in mismatches:
        print(f"MISMATCH {m.render()}")
    cells = len(matrix.rows) * len(matrix.attacks)
    print(f"{max(cells - len(mismatches), 0)}/{cells} cells match expectations")
    return EXIT_MISMATCH if mismatches else EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        data = yaml.safe_load(Path(args.file).read_text())
        if isinstance(data, dict) and "axes" in data:
            grid = parse_grid(data)
            print(f"valid grid: {len(grid.configs())} configurations x {len(grid.attacks)} attacks")
        else:
            config = parse_scenario(data)
            print(f"valid scenario: fingerprint {config.fingerprint}")
    except FileNotFoundError:
        return _fail(f"file not found: {args.file}")
    except yaml.YAMLError as exc:
        return _fail(f"YAML parse error in {args.file}: {exc}")
    except InvalidConfig as exc:
        return _fail(f"invalid {args.file}\n{_describe(exc)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fivegsim", description="5G registration security-plane simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario and write its report")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--out", default="fivegsim-out", help="report directory (default: %(default)s)")
    run.set_defaults(func=cmd_run)

    matrix = sub.add_parser("matrix", help="sweep a configuration grid")
    matrix.add_argument("grid")
    matrix.add_argument("--expect", default=None, help="expected outcomes (JSON) to diff against")
    matrix.add_argument("--workers", type=int, default=1)
    matrix.add_argument("--out", default=None, help="also write matrix.csv and matrix.json here")
    matrix.set_defaults(func=cmd_matrix)

    validate = sub.add_parser("validate", help="check a scenario or grid file")
    validate.add_argument("file")
    validate.set_defaults(func=cmd_validate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    if getattr(args, "workers", 1) < 1:
        return _fail("--workers must be at least 1")
    return args.func(args)
