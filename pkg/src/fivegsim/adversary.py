"""Attacker models and the scripted attack catalog.

The attacker is Dolev-Yao without key compromise: it can observe the air
interface, run its own base station, inject unauthenticated messages and
rewrite clear messages in flight, but never holds a subscriber root key,
the home network private key or a CA-issued certificate.

Verdicts are never taken from the attacker's own bookkeeping. After a run,
``extract_evidence`` reads the transcript and decides.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

from .crypto_suite import AlgorithmId, SecurityCapabilities, SecurityContext
from .errors import UnsupportedAttackForConfig
from .protocol.messages import BROADCAST, MessageKind, Plmn, ProtocolMessage, encode, seal
from .protocol.ue import Trigger, rng_digest
from .simcore.channel import Channel, Node, observation
from .simcore.scenario import ScenarioConfig, World, build_world, entity_rng

ROGUE_ENDPOINT = "rogue:0"


class AttackKind(str, Enum):
    SUPI_CATCH_PASSIVE = "supi_catch_passive"
    SUPI_CATCH_ACTIVE = "supi_catch_active"
    PREAUTH_DOS_REJECT = "preauth_dos_reject"
    SILENT_DOWNGRADE = "silent_downgrade"
    BIDDING_DOWN = "bidding_down"
    EMERGENCY_SUPI_CATCH = "emergency_supi_catch"


ROW_REFS = {
    AttackKind.SUPI_CATCH_PASSIVE: "T3R1",
    AttackKind.SUPI_CATCH_ACTIVE: "T3R1",
    AttackKind.EMERGENCY_SUPI_CATCH: "T3R1",
    AttackKind.PREAUTH_DOS_REJECT: "T3R2",
    AttackKind.SILENT_DOWNGRADE: "T3R3",
    AttackKind.BIDDING_DOWN: "T1-bidding",
}


class Verdict(str, Enum):
    SUCCESS = "SUCCESS"
    FAIL = "FAIL"


@dataclass(frozen=True)
class AttackerCapabilities:
    can_sniff: bool = False
    can_inject_preauth: bool = False
    can_broadcast: bool = False
    can_mutate_in_transit: bool = False
    rogue_priority: int = 0

    @property
    def knows_root_keys(self) -> bool:
        return False

    @classmethod
    def from_config(cls, config: ScenarioConfig) -> AttackerCapabilities:
        a = config.attacker
        return cls(a["can_sniff"], a["can_inject_preauth"], a["can_broadcast"],
                   a["can_mutate_in_transit"], int(a["rogue_priority"]))


REQUIRED_CAPABILITIES: dict[AttackKind, tuple[str, ...]] = {
    AttackKind.SUPI_CATCH_PASSIVE: ("can_sniff",),
    AttackKind.SUPI_CATCH_ACTIVE: ("can_broadcast", "can_inject_preauth"),
    AttackKind.PREAUTH_DOS_REJECT: ("can_broadcast", "can_inject_preauth"),
    AttackKind.SILENT_DOWNGRADE: ("can_broadcast", "can_inject_preauth"),
    AttackKind.BIDDING_DOWN: ("can_mutate_in_transit",),
    AttackKind.EMERGENCY_SUPI_CATCH: ("can_sniff",),
}


def check_capabilities(kind: AttackKind, caps: AttackerCapabilities) -> None:
    missing = [c for c in REQUIRED_CAPABILITIES[kind] if not getattr(caps, c)]
    if missing:
        raise UnsupportedAttackForConfig(f"{kind.value} needs {', '.join(missing)}")


@dataclass
class AttackOutcome:
    attack: AttackKind
    config_fingerprint: str
    verdict: Verdict
    evidence: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.verdict is Verdict.SUCCESS and not self.evidence:
            raise ValueError("a SUCCESS verdict needs evidence")

    @property
    def row(self) -> str:
        return ROW_REFS[self.attack]

    def to_fields(self) -> dict:
        return {
            "attack": self.attack.value,
            "row": self.row,
            "config_fingerprint": self.config_fingerprint,
            "verdict": self.verdict.value,
            "evidence": self.evidence,
        }


# -- rogue base station ----------------------------------------------------


class RogueMode(str, Enum):
    REJECT = "reject"
    DOWNGRADE = "downgrade"
    IDENTITY = "identity"
    FORGED_AKA = "forged-aka"


@dataclass
class RogueBaseStation:
    """Attacker-operated cell claiming a real PLMN. It has no certificate and no keys."""

    endpoint: str
    plmn: Plmn
    priority: int
    mode: RogueMode
    rng: random.Random = field(repr=False)
    captured: list[dict] = field(default_factory=list)
    last_verdict: str = ""
    phase: str = "rogue"

    def active_contexts(self) -> list[SecurityContext]:
        # Nothing a rogue learns lets it derive keys; this stays empty by construction.
        return []

    def digest(self) -> str:
        return hashlib.sha256(encode({"captured": self.captured, "rng": rng_digest(self.rng)})).hexdigest()

    def clear(self, kind: MessageKind, dst: str, body: dict) -> ProtocolMessage:
        return ProtocolMessage(kind, self.endpoint, dst, self.plmn, body)


def _forged_smc(rogue: RogueBaseStation, dst: str) -> ProtocolMessage:
    ctx = SecurityContext("nas", "3gpp", rogue.rng.randbytes(16), rogue.rng.randbytes(16),
                          AlgorithmId.NEA2, AlgorithmId.NIA2, 1)
    body = {"cipher": "NEA2", "integrity": "NIA2", "replayed_caps": None}
    return seal(MessageKind.SECURITY_MODE_COMMAND, body, ctx, rogue.endpoint, dst, rogue.plmn)


def rogue_step(rogue: RogueBaseStation, item: ProtocolMessage | Trigger) -> tuple[RogueBaseStation, list[ProtocolMessage]]:
    rogue.last_verdict = "accepted"
    if isinstance(item, Trigger):
        if item.name == "broadcast":
            return rogue, [rogue.clear(MessageKind.BROADCAST, BROADCAST,
                                       {"priority": rogue.priority, "unauth_emergency": False})]
        if item.name == "inject":
            msg = ProtocolMessage.from_wire(item.args["wire"])
            return rogue, [msg]
        rogue.last_verdict = f"dropped:unknown trigger {item.name}"
        return rogue, []
    if item.dst != rogue.endpoint:
        rogue.last_verdict = "dropped:not addressed to us"
        return rogue, []
    rogue.captured.append({"kind": item.kind.value, "src": item.src, "clear": item.clear})
    ue = item.src
    if item.kind is MessageKind.REGISTRATION_REQUEST:
        if rogue.mode is RogueMode.REJECT:
            return rogue, [rogue.clear(MessageKind.REGISTRATION_REJECT, ue, {"cause": "permanent"})]
        if rogue.mode is RogueMode.DOWNGRADE:
            return rogue, [rogue.clear(MessageKind.DOWNGRADE_COMMAND, ue, {"rat": "legacy"})]
        if rogue.mode is RogueMode.IDENTITY:
            # Pretend the GUTI is unknown so the UE has to identify itself again.
            return rogue, [rogue.clear(MessageKind.IDENTITY_REQUEST, ue, {"type": "suci"})]
        return rogue, [rogue.clear(MessageKind.AUTH_CHALLENGE, ue, {
            "nonce": rogue.rng.randbytes(16), "run_counter": 1 << 20, "autn": rogue.rng.randbytes(16)})]
    if item.kind is MessageKind.AUTH_RESPONSE and rogue.mode is RogueMode.FORGED_AKA:
        # Keep pushing: a protected SMC under guessed keys.
        return rogue, [_forged_smc(rogue, ue)]
    return rogue, []


# -- channel hooks ---------------------------------------------------------


class Sniffer:
    """Passive observer: logs what an eavesdropper reads off every delivery."""

    def __init__(self) -> None:
        self.observations: list[dict] = []

    def on_transmit(self, channel: Channel, msg: ProtocolMessage) -> list[ProtocolMessage] | None:
        return None

    def on_deliver(self, channel: Channel, msg: ProtocolMessage) -> None:
        obs = {"kind": msg.kind.value, "protection": "CLEAR" if msg.clear else "protected", **observation(msg)}
        self.observations.append(obs)
        channel.log({"event": "observe", **obs})


def strip_to_null(_caps: SecurityCapabilities) -> SecurityCapabilities:
    return SecurityCapabilities((AlgorithmId.NEA0,), (AlgorithmId.NIA0,))


class Mutator:
    """In-transit rewriting of clear uplink messages.

    Only clear messages can be rewritten meaningfully; protected ones pass
    untouched unless ``flip_protected`` is set, in which case one payload
    bit is flipped and the receiver's integrity check decides.
    """

    def __init__(self, rewrite: Callable[[SecurityCapabilities], SecurityCapabilities] = strip_to_null,
                 *, flip_protected: bool = False) -> None:
        self.rewrite = rewrite
        self.flip_protected = flip_protected
        self.mutated = 0

    def on_transmit(self, channel: Channel, msg: ProtocolMessage) -> list[ProtocolMessage] | None:
        if msg.clear and msg.kind is MessageKind.REGISTRATION_REQUEST and "caps" in msg.body:
            caps = SecurityCapabilities.from_fields(msg.body["caps"])
            weakened = self.rewrite(caps)
            if weakened == caps:
                return None
            self.mutated += 1
            return [msg.copy(body={**msg.body, "caps": weakened.to_fields()})]
        if self.flip_protected and not msg.clear and msg.envelope is not None and msg.envelope.payload:
            env = msg.envelope
            payload = bytearray(env.payload)
            payload[0] ^= 0x01
            self.mutated += 1
            return [msg.copy(envelope=replace(env, payload=bytes(payload)))]
        return None

    def on_deliver(self, channel: Channel, msg: ProtocolMessage) -> None:
        return None


# -- staging ---------------------------------------------------------------


@dataclass
class AttackRun:
    kind: AttackKind | None
    world: World
    rogue: RogueBaseStation | None = None
    sniffer: Sniffer | None = None
    mutator: Mutator | None = None


ROGUE_MODES = {
    AttackKind.PREAUTH_DOS_REJECT: RogueMode.REJECT,
    AttackKind.SILENT_DOWNGRADE: RogueMode.DOWNGRADE,
    AttackKind.SUPI_CATCH_ACTIVE: RogueMode.IDENTITY,
}

# Script timing, in ticks. Broadcasts go out first; the UE powers on after.
T_BROADCAST = 1
T_POWER_ON = 3


def _target_plmn(world: World) -> Plmn:
    return world.ue.supi.plmn


def add_rogue(world: World, mode: RogueMode, priority: int) -> RogueBaseStation:
    config = world.config
    rogue = RogueBaseStation(ROGUE_ENDPOINT, _target_plmn(world), priority, mode,
                             entity_rng(config.seed, ROGUE_ENDPOINT))
    world.channel.add(Node(rogue, rogue_step, "rogue"))
    return rogue


def _broadcast_all(world: World, tick: int, rogue: RogueBaseStation | None = None) -> None:
    for net in world.networks.values():
        world.channel.schedule_trigger(net.endpoint, Trigger("broadcast"), tick)
    if rogue is not None:
        world.channel.schedule_trigger(rogue.endpoint, Trigger("broadcast"), tick)


def stage_benign(config: ScenarioConfig, channel: Channel | None = None, *, sniff: bool = False) -> AttackRun:
    """Every UE powers on and registers; registered UEs then open a PDU session."""
    world = build_world(config, channel)
    run = AttackRun(None, world)
    if sniff:
        run.sniffer = Sniffer()
        world.channel.add_hook(run.sniffer)
    _broadcast_all(world, T_BROADCAST)
    for ep in world.ues:
        world.channel.schedule_trigger(ep, Trigger("power_on"), T_POWER_ON)
    world.channel.run()
    for ep in world.ues:
        world.channel.schedule_trigger(ep, Trigger("pdu_session"))
    world.channel.run()
    return run


def stage_attack(kind: AttackKind | str, config: ScenarioConfig, channel: Channel | None = None,
                 *, rogue_mode: RogueMode | None = None) -> AttackRun:
    """Build a world, wire in the attacker for ``kind`` and run the script to quiescence."""
    kind = AttackKind(kind)
    caps = AttackerCapabilities.from_config(config)
    check_capabilities(kind, caps)
    world = build_world(config, channel)
    ch = world.channel
    ue = world.ue.endpoint
    run = AttackRun(kind, world)

    if kind in (AttackKind.SUPI_CATCH_PASSIVE, AttackKind.EMERGENCY_SUPI_CATCH):
        run.sniffer = Sniffer()
        ch.add_hook(run.sniffer)
        _broadcast_all(world, T_BROADCAST)
        trigger = "power_on" if kind is AttackKind.SUPI_CATCH_PASSIVE else "emergency_call"
        ch.schedule_trigger(ue, Trigger(trigger), T_POWER_ON)
        ch.run()
    elif kind is AttackKind.BIDDING_DOWN:
        run.mutator = Mutator()
        ch.add_hook(run.mutator)
        _broadcast_all(world, T_BROADCAST)
        ch.schedule_trigger(ue, Trigger("power_on"), T_POWER_ON)
        ch.run()
    elif kind is AttackKind.SUPI_CATCH_ACTIVE:
        # Legitimate registration first so the UE holds a GUTI, then the lure.
        _broadcast_all(world, T_BROADCAST)
        ch.schedule_trigger(ue, Trigger("power_on"), T_POWER_ON)
        ch.run()
        ch.schedule_trigger(ue, Trigger("power_off"))
        ch.run()
        run.rogue = add_rogue(world, rogue_mode or RogueMode.IDENTITY, caps.rogue_priority)
        _broadcast_all(world, ch.tick + 1, run.rogue)
        ch.schedule_trigger(ue, Trigger("power_on"), ch.tick + 3)
        ch.run()
    else:
        run.rogue = add_rogue(world, rogue_mode or ROGUE_MODES.get(kind, RogueMode.FORGED_AKA), caps.rogue_priority)
        _broadcast_all(world, T_BROADCAST, run.rogue)
        ch.schedule_trigger(ue, Trigger("power_on"), T_POWER_ON)
        ch.run()
    return run


# -- evidence --------------------------------------------------------------


def _records(source: Channel | list[dict]) -> list[dict]:
    return source.transcript.records if isinstance(source, Channel) else source


def _evidence(line: int, record: dict, **extra: object) -> dict:
    item = {"line": line, "event": record["event"], "kind": record.get("kind"), "src": record.get("src"),
            "dst": record.get("dst")}
    item.update(extra)
    return item


def _caps_in(wire: str) -> SecurityCapabilities | None:
    body = ProtocolMessage.from_wire(wire.encode("latin-1")).body
    return SecurityCapabilities.from_fields(body["caps"]) if "caps" in body else None


def extract_evidence(kind: AttackKind | str, records: Channel | list[dict], msin: str,
                     ue: str, rogue: str = ROGUE_ENDPOINT) -> list[dict]:
    """Find transcript lines that prove ``kind`` succeeded; empty means it did not."""
    kind = AttackKind(kind)
    recs = _records(records)
    found: list[dict] = []
    for i, r in enumerate(recs):
        ev = r["event"]
        if kind is AttackKind.SUPI_CATCH_PASSIVE:
            if ev == "observe" and r["protection"] == "CLEAR" and msin in r["visible"]:
                found.append(_evidence(i, r, msin=msin))
        elif kind is AttackKind.EMERGENCY_SUPI_CATCH:
            if (ev == "observe" and r["kind"] == MessageKind.EMERGENCY_REQUEST.value
                    and r["protection"] == "CLEAR" and msin in r["visible"]):
                found.append(_evidence(i, r, msin=msin))
        elif kind is AttackKind.SUPI_CATCH_ACTIVE:
            if (ev == "deliver" and r["to"] == rogue and r["kind"] == MessageKind.IDENTITY_RESPONSE.value
                    and msin in r["wire"]):
                found.append(_evidence(i, r, msin=msin))
        elif kind is AttackKind.PREAUTH_DOS_REJECT:
            if (ev == "deliver" and r["to"] == ue and r["src"] == rogue
                    and r["kind"] == MessageKind.REGISTRATION_REJECT.value and r["phase"] == "denied"):
                found.append(_evidence(i, r, phase="denied"))
        elif kind is AttackKind.SILENT_DOWNGRADE:
            if (ev == "deliver" and r["to"] == ue and r["src"] == rogue
                    and r["kind"] == MessageKind.DOWNGRADE_COMMAND.value and r["phase"] == "legacy"):
                found.append(_evidence(i, r, phase="legacy"))
            elif ev == "send" and r["src"] == ue and str(r["dst"]).startswith("legacy:"):
                found.append(_evidence(i, r))
        elif kind is AttackKind.BIDDING_DOWN:
            found.extend(_bidding_down_evidence(recs, i, r, ue))
    if kind is AttackKind.SILENT_DOWNGRADE and not any(e["event"] == "deliver" for e in found):
        return []
    return found


def _bidding_down_evidence(recs: list[dict], i: int, r: dict, ue: str) -> list[dict]:
    if r["event"] != "mutate" or r["kind"] != MessageKind.REGISTRATION_REQUEST.value or r["src"] != ue:
        return []
    original = _caps_in(r["original"])
    if original is None or all(a.is_null for a in original.ciphering + original.integrity):
        return []
    for j in range(i + 1, len(recs)):
        d = recs[j]
        if (d["event"] == "deliver" and d.get("to") == ue and d["kind"] == MessageKind.SECURITY_MODE_COMMAND.value
                and d["verdict"] == "accepted"):
            env = ProtocolMessage.from_wire(d["wire"].encode("latin-1")).envelope
            if env is not None and (env.cipher_alg.is_null or env.integrity_alg.is_null):
                return [_evidence(i, r, original=original.to_fields()),
                        _evidence(j, d, cipher=env.cipher_alg.value, integrity=env.integrity_alg.value)]
    return []


def outcome_of(run: AttackRun) -> AttackOutcome:
    assert run.kind is not None
    world = run.world
    evidence = extract_evidence(run.kind, world.channel, world.ue.supi.msin, world.ue.endpoint)
    verdict = Verdict.SUCCESS if evidence else Verdict.FAIL
    return AttackOutcome(run.kind, world.config.fingerprint, verdict, evidence)


def execute_attack(kind: AttackKind | str, config: ScenarioConfig, channel: Channel | None = None) -> AttackOutcome:
    return outcome_of(stage_attack(kind, config, channel))


def sniff(channel: Channel) -> list[dict]:
    """Everything a passive eavesdropper could read from the messages delivered so far."""
    out = []
    for i, r in enumerate(channel.transcript.records):
        if r["event"] == "deliver":
            msg = ProtocolMessage.from_wire(r["wire"].encode("latin-1"))
            out.append({"line": i, "kind": msg.kind.value,
                        "protection": "CLEAR" if msg.clear else "protected", **observation(msg)})
    return out


def attacker_reached_context(run: AttackRun) -> bool:
    """True if any attacker-controlled cell holds, or any UE accepted, a security context with it."""
    if run.rogue is None:
        return False
    if run.rogue.active_contexts():
        return True
    for ue in run.world.ues.values():
        session = ue.sessions.get(run.rogue.endpoint)
        if session is not None and (session.contexts or session.phase.value in ("secured", "registered")):
            return True
    return False


def supported_attacks(config: ScenarioConfig) -> list[AttackKind]:
    caps = AttackerCapabilities.from_config(config)
    out = []
    for kind in AttackKind:
        try:
            check_capabilities(kind, caps)
        except UnsupportedAttackForConfig:
            continue
        out.append(kind)
    return out


__all__ = [
    "AttackKind",
    "AttackOutcome",
    "AttackRun",
    "AttackerCapabilities",
    "Mutator",
    "ROW_REFS",
    "RogueBaseStation",
    "RogueMode",
    "Sniffer",
    "Verdict",
    "attacker_reached_context",
    "execute_attack",
    "extract_evidence",
    "outcome_of",
    "rogue_step",
    "sniff",
    "stage_attack",
    "stage_benign",
]
