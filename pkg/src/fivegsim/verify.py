"""Independent checks over persisted transcripts.

``check_evidence`` re-validates attack evidence from raw JSONL lines with
its own parsing, without the extraction code in ``adversary``.
``replay_transcript`` rebuilds a world from its scenario and re-steps every
recorded delivery and trigger, comparing each node's verdict, phase and
emitted messages with what the transcript says happened.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .adversary import ROGUE_MODES, AttackKind, RogueMode, add_rogue
from .protocol.messages import ProtocolMessage
from .protocol.ue import Trigger
from .simcore.scenario import ScenarioConfig, build_world

NULL_ALGS = ("NEA0", "NIA0")
BOUNDARY_EVENTS = ("deliver", "trigger", "observe", "undeliverable")


def _parse(lines: list[str]) -> list[dict]:
    return [json.loads(line) for line in lines if line.strip()]


def _check_item(kind: str, item: dict, rec: dict, msin: str, ue: str) -> str | None:
    ev = rec["event"]
    if kind in ("supi_catch_passive", "emergency_supi_catch"):
        if ev != "observe" or rec["protection"] != "CLEAR":
            return "not a clear observation"
        if kind == "emergency_supi_catch" and rec["kind"] != "EmergencyRequest":
            return "observation is not an EmergencyRequest"
        return None if msin in rec["visible"] else "msin not visible"
    if kind == "supi_catch_active":
        ok = ev == "deliver" and rec["kind"] == "IdentityResponse" and rec["to"].startswith("rogue:") and msin in rec["wire"]
        return None if ok else "no identity response carrying the msin at a rogue cell"
    if kind == "preauth_dos_reject":
        ok = ev == "deliver" and rec["kind"] == "RegistrationReject" and rec["to"] == ue and rec["phase"] == "denied"
        return None if ok else "reject did not leave the UE denied"
    if kind == "silent_downgrade":
        if ev == "deliver":
            ok = rec["kind"] == "DowngradeCommand" and rec["to"] == ue and rec["phase"] == "legacy"
            return None if ok else "downgrade command did not move the UE to legacy"
        ok = ev == "send" and rec["src"] == ue and rec["dst"].startswith("legacy:")
        return None if ok else "no UE transmission to a legacy network"
    if kind == "bidding_down":
        if ev == "mutate":
            original = json.loads(rec["original"])["body"]["caps"]
            ok = any(a not in NULL_ALGS for a in original["ciphering"] + original["integrity"])
            return None if ok else "original capabilities were already null-only"
        if ev == "deliver":
            env = json.loads(rec["wire"])["envelope"] or {}
            ok = (rec["kind"] == "SecurityModeCommand" and rec["verdict"] == "accepted"
                  and (env.get("cipher_alg") in NULL_ALGS or env.get("integrity_alg") in NULL_ALGS))
            return None if ok else "UE did not accept a null-algorithm security mode command"
        return "unexpected evidence event"
    return f"unknown attack {kind}"


def check_evidence(outcome: dict, lines: list[str], msin: str, ue: str) -> list[str]:
    """Problems found with a reported outcome; empty means it re-validates."""
    records = _parse(lines)
    problems = []
    evidence = outcome.get("evidence") or []
    if outcome["verdict"] == "SUCCESS" and not evidence:
        problems.append("SUCCESS without evidence")
    for item in evidence:
        line = item.get("line")
        if not isinstance(line, int) or not 0 <= line < len(records):
            problems.append(f"evidence line {line} out of range")
            continue
        rec = records[line]
        if rec["event"] != item.get("event") or rec.get("kind") != item.get("kind"):
            problems.append(f"line {line}: evidence names {item.get('event')}/{item.get('kind')}, "
                            f"transcript has {rec['event']}/{rec.get('kind')}")
            continue
        err = _check_item(outcome["attack"], item, rec, msin, ue)
        if err:
            problems.append(f"line {line}: {err}")
    if outcome["attack"] == "bidding_down" and outcome["verdict"] == "SUCCESS":
        events = sorted(records[i["line"]]["event"] for i in evidence if isinstance(i.get("line"), int))
        if events[:2] != ["deliver", "mutate"]:
            problems.append("bidding-down evidence needs both the rewrite and the accepted command")
    return problems


@dataclass
class ReplayReport:
    steps: int = 0
    mismatches: list[str] = field(default_factory=list)
    digests: dict[str, str] = field(default_factory=dict)

    @property
    def faithful(self) -> bool:
        return not self.mismatches


def replay_transcript(config: ScenarioConfig, lines: list[str], attack: AttackKind | str | None = None,
                      *, rogue_mode: RogueMode | None = None) -> ReplayReport:
    world = build_world(config)
    if attack is not None:
        kind = AttackKind(attack)
        needs_rogue = kind in ROGUE_MODES or rogue_mode is not None
        if needs_rogue:
            add_rogue(world, rogue_mode or ROGUE_MODES[kind], int(config.attacker["rogue_priority"]))
    nodes = world.channel.nodes
    records = _parse(lines)
    report = ReplayReport()
    for i, rec in enumerate(records):
        ev = rec["event"]
        if ev not in ("deliver", "trigger"):
            continue
        target = rec["to"] if ev == "deliver" else rec["dst"]
        node = nodes.get(target)
        if node is None:
            report.mismatches.append(f"line {i}: unknown node {target}")
            continue
        if ev == "deliver":
            item = ProtocolMessage.from_wire(rec["wire"].encode("latin-1"))
        else:
            item = Trigger.from_fields(rec["trigger"])
        _, out = node.step(node.state, item)
        report.steps += 1
        verdict = getattr(node.state, "last_verdict", "accepted")
        if verdict != rec["verdict"] or node.phase != rec["phase"]:
            report.mismatches.append(f"line {i}: replay gave {verdict}/{node.phase}, "
                                     f"transcript says {rec['verdict']}/{rec['phase']}")
        sent = []
        for later in records[i + 1:]:
            if later["event"] in BOUNDARY_EVENTS:
                break
            if later["event"] == "send":
                sent.append(later["wire"])
        produced = [m.to_wire().decode("latin-1") for m in out]
        if produced != sent:
            report.mismatches.append(f"line {i}: replay emitted {len(produced)} message(s), "
                                     f"transcript shows {len(sent)} or different bytes")
    report.digests = world.digests()
    return report
