"""UE state machine.

The UE keeps one registration session per network endpoint it talks to.
Its externally visible phase is the phase of the session on the cell it
is camped on, unless it has been barred (``DENIED``) or pushed onto the
legacy pseudo-network (``LEGACY``).

Clear downlink messages are trusted implicitly unless CA mode is on, in
which case the signature gate runs before any handler.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

from ..crypto_suite import (
    AlgorithmId,
    SecurityCapabilities,
    SecurityContext,
    bidding_down_detected,
)
from ..errors import IntegrityFailure, ReplayDetected
from ..identity import Guti, HnKeyMaterial, Supi, conceal_supi
from ..keys import (
    DEFAULT_PRF,
    DerivationContext,
    KeyHierarchy,
    RootKey,
    compute_autn,
    compute_res,
    derive_as_keys,
    derive_hierarchy,
    handover_k_gnb,
    kdf,
    serving_network_name,
)
from .messages import (
    BROADCAST,
    PREAUTH_DOWNLINK,
    MessageKind,
    from_jsonable,
    to_jsonable,
    Plmn,
    ProtocolMessage,
    encode,
    open_sealed,
    seal,
)
from .pki import TrustStore, Verdict, verify_preauth_signature

UPLINK = 0
DOWNLINK = 1


class Phase(str, Enum):
    IDLE = "idle"
    REGISTERING = "registering"
    AUTHENTICATING = "authenticating"
    SECURED = "secured"
    REGISTERED = "registered"
    EMERGENCY = "emergency"
    ABORTED = "aborted"
    DENIED = "denied"
    LEGACY = "legacy"


PRE_CONTEXT = (Phase.REGISTERING, Phase.AUTHENTICATING)


@dataclass(frozen=True)
class Trigger:
    """A local stimulus for a state machine (power-on, a user action, a timer)."""

    name: str
    args: dict = field(default_factory=dict)

    def to_fields(self) -> dict:
        return {"name": self.name, "args": to_jsonable(self.args)}

    @classmethod
    def from_fields(cls, data: dict) -> Trigger:
        return cls(data["name"], from_jsonable(data["args"]))


def guti_fields(g: Guti) -> dict:
    return {"mcc": g.plmn[0], "mnc": g.plmn[1], "temp_id": g.temp_id, "epoch": g.epoch}


def guti_from_fields(d: dict) -> Guti:
    return Guti((d["mcc"], d["mnc"]), int(d["temp_id"]), int(d["epoch"]))


def context_fields(ctx: SecurityContext) -> dict:
    return {
        "scope": ctx.scope,
        "connection_id": ctx.connection_id,
        "enc_key": ctx.enc_key,
        "int_key": ctx.int_key,
        "cipher_alg": ctx.cipher_alg.value,
        "integrity_alg": ctx.integrity_alg.value,
        "direction": ctx.direction,
        "peer": ctx.peer,
        "serving_network": ctx.serving_network,
        "tx_count": ctx.tx_count,
        "rx_highest": ctx.rx_highest,
        "state": ctx.state,
    }


def rng_digest(rng: random.Random) -> str:
    return hashlib.sha256(repr(rng.getstate()).encode()).hexdigest()


def auts_mac(root: RootKey, counter: int) -> bytes:
    return kdf(DEFAULT_PRF, root.k, "AUTS", counter)[:16]


@dataclass
class UeSession:
    network: str
    plmn: Plmn
    phase: Phase = Phase.REGISTERING
    sent_caps: SecurityCapabilities | None = None
    pending: dict | None = None
    contexts: dict[str, SecurityContext] = field(default_factory=dict)
    hierarchy: KeyHierarchy | None = None
    k_gnb: bytes | None = None
    drb: dict | None = None
    reg_type: str = "initial"
    emergency: bool = False
    tau_pending: bool = False

    def snapshot(self) -> dict:
        return {
            "network": self.network,
            "plmn": list(self.plmn),
            "phase": self.phase.value,
            "sent_caps": self.sent_caps.to_fields() if self.sent_caps else None,
            "pending": self.pending,
            "contexts": {k: context_fields(v) for k, v in sorted(self.contexts.items())},
            "hierarchy": self.hierarchy.key_fields() if self.hierarchy else None,
            "k_gnb": self.k_gnb,
            "drb": self.drb,
            "reg_type": self.reg_type,
            "emergency": self.emergency,
            "tau_pending": self.tau_pending,
        }


@dataclass
class UeState:
    supi: Supi
    root: RootKey
    usim_keys: HnKeyMaterial
    caps: SecurityCapabilities
    rng: random.Random = field(repr=False)
    allowed_plmns: frozenset[Plmn] = frozenset()
    ca_mode: bool = False
    trust_store: TrustStore = field(default_factory=TrustStore)
    hn_null_scheme: bool = False
    endpoint: str = ""
    blocked: Phase | None = None
    cells: dict[str, dict] = field(default_factory=dict)
    camped: str | None = None
    barred_plmns: set[Plmn] = field(default_factory=set)
    gutis: dict[Plmn, Guti] = field(default_factory=dict)
    last_run_counter: int = 0
    sessions: dict[str, UeSession] = field(default_factory=dict)
    legacy_network: str | None = None
    received: list[bytes] = field(default_factory=list)
    anomalies: list[str] = field(default_factory=list)
    last_verdict: str = ""

    def __post_init__(self) -> None:
        if not self.endpoint:
            # Endpoint names travel in clear headers, so they must not embed the SUPI.
            self.endpoint = "ue:0"
        if not self.allowed_plmns:
            self.allowed_plmns = frozenset({self.supi.plmn})

    @property
    def phase(self) -> Phase:
        if self.blocked is not None:
            return self.blocked
        session = self.sessions.get(self.camped or "")
        return session.phase if session else Phase.IDLE

    @property
    def session(self) -> UeSession | None:
        return self.sessions.get(self.camped or "")

    def active_contexts(self) -> list[SecurityContext]:
        return [c for s in self.sessions.values() for c in s.contexts.values() if c.state == "active"]

    def snapshot(self) -> dict:
        return {
            "endpoint": self.endpoint,
            "blocked": self.blocked.value if self.blocked else None,
            "cells": self.cells,
            "camped": self.camped,
            "barred": sorted(list(p) for p in self.barred_plmns),
            "gutis": {f"{p[0]}-{p[1]}": guti_fields(g) for p, g in sorted(self.gutis.items())},
            "last_run_counter": self.last_run_counter,
            "sessions": {k: s.snapshot() for k, s in sorted(self.sessions.items())},
            "legacy_network": self.legacy_network,
            "received": self.received,
            "rng": rng_digest(self.rng),
        }

    def digest(self) -> str:
        """Hash of everything that affects future behaviour (not the anomaly log)."""
        return hashlib.sha256(encode(self.snapshot())).hexdigest()


# -- helpers ---------------------------------------------------------------


def _drop(ue: UeState, reason: str) -> list[ProtocolMessage]:
    ue.last_verdict = f"dropped:{reason}"
    ue.anomalies.append(reason)
    return []


def _clear(ue: UeState, kind: MessageKind, dst: str, plmn: Plmn, body: dict) -> ProtocolMessage:
    return ProtocolMessage(kind, ue.endpoint, dst, plmn, body)


def _suci_bytes(ue: UeState, *, force_null: bool = False) -> bytes:
    keys = ue.usim_keys
    if ue.supi.plmn not in keys.provisioned_networks:
        keys = keys.without_public_key()
    return conceal_supi(ue.supi, keys, ue.rng, force_null=force_null or ue.hn_null_scheme).to_bytes()


def _key_provisioned(ue: UeState, plmn: Plmn) -> bool:
    return ue.usim_keys.public_key is not None and plmn in ue.usim_keys.provisioned_networks


def select_cell(ue: UeState, *, emergency: bool = False) -> str | None:
    """Highest broadcast priority among acceptable cells; ties go to the lower id."""
    best: tuple[int, str] | None = None
    for cell, info in ue.cells.items():
        plmn = (info["plmn"][0], info["plmn"][1])
        if not emergency and (plmn not in ue.allowed_plmns or plmn in ue.barred_plmns):
            continue
        key = (-int(info["priority"]), cell)
        if best is None or key < best:
            best = key
    return best[1] if best else None


def _register(ue: UeState, cell: str, reg_type: str = "initial") -> list[ProtocolMessage]:
    info = ue.cells[cell]
    plmn = (info["plmn"][0], info["plmn"][1])
    session = UeSession(cell, plmn, Phase.REGISTERING, sent_caps=ue.caps, reg_type=reg_type)
    ue.sessions[cell] = session
    ue.camped = cell
    body: dict[str, Any] = {"reg_type": reg_type, "caps": ue.caps.to_fields()}
    guti = ue.gutis.get(plmn)
    if guti is not None and reg_type != "emergency":
        body["guti"] = guti_fields(guti)
    else:
        body["suci"] = _suci_bytes(ue)
    return [_clear(ue, MessageKind.REGISTRATION_REQUEST, cell, plmn, body)]


# -- triggers --------------------------------------------------------------


def _t_power_on(ue: UeState, t: Trigger) -> list[ProtocolMessage]:
    if ue.blocked is not None:
        return _drop(ue, f"power-on while {ue.blocked.value}")
    cell = t.args.get("cell") or select_cell(ue)
    if cell is None or cell not in ue.cells:
        return _drop(ue, "no suitable cell")
    return _register(ue, cell)


def _t_power_off(ue: UeState, t: Trigger) -> list[ProtocolMessage]:
    ue.sessions.clear()
    ue.camped = None
    ue.cells.clear()
    return []


def _t_emergency(ue: UeState, t: Trigger) -> list[ProtocolMessage]:
    session = ue.session
    if session is not None and session.phase is Phase.REGISTERED:
        ctx = session.contexts["3gpp"]
        return [seal(MessageKind.EMERGENCY_REQUEST, {"authenticated": True}, ctx,
                     ue.endpoint, session.network, session.plmn)]
    cell = select_cell(ue, emergency=True)
    if cell is None:
        return _drop(ue, "no cell for emergency")
    info = ue.cells[cell]
    if not info.get("unauth_emergency"):
        return _register(ue, cell, reg_type="emergency")
    plmn = (info["plmn"][0], info["plmn"][1])
    ue.sessions[cell] = UeSession(cell, plmn, Phase.REGISTERING, sent_caps=ue.caps,
                                  reg_type="emergency", emergency=True)
    ue.camped = cell
    body = {"suci": _suci_bytes(ue, force_null=True), "caps": ue.caps.to_fields()}
    return [_clear(ue, MessageKind.EMERGENCY_REQUEST, cell, plmn, body)]


def _t_register(ue: UeState, t: Trigger) -> list[ProtocolMessage]:
    cell = t.args["cell"]
    if cell not in ue.cells:
        return _drop(ue, f"unknown cell {cell}")
    return _register(ue, cell, t.args.get("reg_type", "initial"))


def _t_tau(ue: UeState, t: Trigger) -> list[ProtocolMessage]:
    session = ue.session
    guti = ue.gutis.get(session.plmn) if session else None
    if session is None or session.phase is not Phase.REGISTERED or guti is None:
        return _drop(ue, "tau without registration")
    session.tau_pending = True
    return [_clear(ue, MessageKind.TAU_REQUEST, session.network, session.plmn, {"guti": guti_fields(guti)})]


def _t_pdu_session(ue: UeState, t: Trigger) -> list[ProtocolMessage]:
    session = ue.session
    if session is None or session.phase is not Phase.REGISTERED:
        return _drop(ue, "pdu session without registration")
    return [seal(MessageKind.PDU_SESSION_REQUEST, {}, session.contexts["3gpp"],
                 ue.endpoint, session.network, session.plmn)]


def _t_send_data(ue: UeState, t: Trigger) -> list[ProtocolMessage]:
    session = ue.session
    if session is None or "drb" not in session.contexts:
        return _drop(ue, "no data bearer")
    payload = t.args["payload"]
    return [seal(MessageKind.USER_DATA, {"data": payload}, session.contexts["drb"],
                 ue.endpoint, session.network, session.plmn)]


_TRIGGERS: dict[str, Callable[[UeState, Trigger], list[ProtocolMessage]]] = {
    "power_on": _t_power_on,
    "power_off": _t_power_off,
    "emergency_call": _t_emergency,
    "register": _t_register,
    "tau": _t_tau,
    "pdu_session": _t_pdu_session,
    "send_data": _t_send_data,
}


# -- clear downlink --------------------------------------------------------


def _on_broadcast(ue: UeState, msg: ProtocolMessage) -> list[ProtocolMessage]:
    ue.cells[msg.src] = {
        "plmn": list(msg.plmn),
        "priority": int(msg.body.get("priority", 0)),
        "unauth_emergency": bool(msg.body.get("unauth_emergency", False)),
    }
    return []


def _on_challenge(ue: UeState, session: UeSession, body: dict, reauth: bool) -> list[ProtocolMessage]:
    nonce, rc, autn = body["nonce"], int(body["run_counter"]), body["autn"]
    ctx = session.contexts.get("3gpp") if reauth else None

    def reply(b: dict) -> list[ProtocolMessage]:
        if ctx is not None:
            return [seal(MessageKind.AUTH_RESPONSE, b, ctx, ue.endpoint, session.network, session.plmn)]
        return [_clear(ue, MessageKind.AUTH_RESPONSE, session.network, session.plmn, b)]

    if compute_autn(ue.root, nonce, rc) != autn:
        if not reauth:
            session.phase = Phase.ABORTED
        ue.last_verdict = "rejected:network-authentication-failed"
        ue.anomalies.append("network failed authentication")
        return reply({"result": "mac_failure"})
    if rc <= ue.last_run_counter:
        ue.last_verdict = "rejected:sync-failure"
        return reply({"result": "sync_failure", "auts": ue.last_run_counter,
                      "auts_mac": auts_mac(ue.root, ue.last_run_counter)})
    ue.last_run_counter = rc
    session.pending = {
        "nonce": nonce,
        "run_counter": rc,
        "serving_network": serving_network_name(*session.plmn),
        "reauth": reauth,
    }
    session.phase = Phase.AUTHENTICATING
    return reply({"result": "ok", "res": compute_res(ue.root, nonce, rc)})


def _on_reject(ue: UeState, session: UeSession, msg: ProtocolMessage, body: dict) -> list[ProtocolMessage]:
    cause = body.get("cause", "temporary")
    if cause == "permanent":
        ue.blocked = Phase.DENIED
        ue.barred_plmns.add(msg.plmn)
        for s in ue.sessions.values():
            s.contexts.clear()
        return []
    if cause == "emergency-not-allowed" and session.emergency:
        return _register(ue, session.network, reg_type="emergency")
    del ue.sessions[session.network]
    if ue.camped == session.network:
        ue.camped = None
    return []


def _on_clear(ue: UeState, msg: ProtocolMessage) -> list[ProtocolMessage]:
    if msg.kind not in PREAUTH_DOWNLINK:
        return _drop(ue, f"unexpected clear {msg.kind.value}")
    if verify_preauth_signature(msg, ue.trust_store, ca_mode=ue.ca_mode) is Verdict.INVALID:
        return _drop(ue, f"signature invalid on {msg.kind.value}")
    if msg.kind is MessageKind.BROADCAST:
        return _on_broadcast(ue, msg)
    if ue.blocked is not None:
        return _drop(ue, f"{msg.kind.value} while {ue.blocked.value}")
    session = ue.sessions.get(msg.src)
    if session is None:
        return _drop(ue, f"{msg.kind.value} from {msg.src} without session")
    kind, body = msg.kind, msg.body

    if kind is MessageKind.IDENTITY_REQUEST and session.phase is Phase.REGISTERING:
        return [_clear(ue, MessageKind.IDENTITY_RESPONSE, session.network, session.plmn,
                       {"suci": _suci_bytes(ue)})]
    if kind is MessageKind.AUTH_CHALLENGE and session.phase is Phase.REGISTERING:
        return _on_challenge(ue, session, body, reauth=False)
    if kind is MessageKind.AUTH_RESULT and session.phase in PRE_CONTEXT:
        if body.get("result") != "success":
            session.phase = Phase.ABORTED
        return []
    if kind is MessageKind.REGISTRATION_ACCEPT and session.emergency and session.phase is Phase.REGISTERING:
        if not body.get("emergency"):
            return _drop(ue, "clear accept outside emergency")
        session.phase = Phase.EMERGENCY
        return []
    if kind is MessageKind.REGISTRATION_REJECT and session.phase in PRE_CONTEXT:
        return _on_reject(ue, session, msg, body)
    if kind is MessageKind.TAU_REJECT and session.tau_pending:
        session.tau_pending = False
        return _on_reject(ue, session, msg, body)
    if kind is MessageKind.DOWNGRADE_COMMAND and session.phase is Phase.REGISTERING:
        if _key_provisioned(ue, msg.plmn):
            return _drop(ue, "downgrade refused: home key provisioned for claimed PLMN")
        ue.blocked = Phase.LEGACY
        ue.legacy_network = f"legacy:{msg.plmn[0]}-{msg.plmn[1]}"
        return [_clear(ue, MessageKind.REGISTRATION_REQUEST, ue.legacy_network, msg.plmn,
                       {"rat": "legacy", "suci": _suci_bytes(ue)})]
    return _drop(ue, f"{kind.value} unexpected in {session.phase.value}")


# -- protected downlink ----------------------------------------------------


def _on_smc(ue: UeState, session: UeSession, msg: ProtocolMessage) -> list[ProtocolMessage]:
    assert msg.envelope is not None and session.pending is not None
    cipher, integrity = msg.envelope.cipher_alg, msg.envelope.integrity_alg
    if cipher not in ue.caps.ciphering or integrity not in ue.caps.integrity:
        return _drop(ue, "SMC selects algorithms we do not support")
    p = session.pending
    h = derive_hierarchy(ue.root, DerivationContext(p["serving_network"], p["run_counter"], cipher.value, integrity.value))
    ctx = SecurityContext("nas", "3gpp", h.nas_enc, h.nas_int, cipher, integrity, UPLINK,
                          peer=session.network, serving_network=p["serving_network"])
    try:
        kind, body = open_sealed(msg, ctx)
    except (IntegrityFailure, ReplayDetected) as exc:
        return _drop(ue, f"SMC discarded: {exc}")
    if kind is not MessageKind.SECURITY_MODE_COMMAND:
        return _drop(ue, "expected SecurityModeCommand")
    replayed = body.get("replayed_caps")
    replayed_caps = SecurityCapabilities.from_fields(replayed) if replayed else None
    if bidding_down_detected(session.sent_caps or ue.caps, replayed_caps):
        session.phase = Phase.ABORTED
        session.pending = None
        ue.last_verdict = "rejected:bidding-down-detected"
        ue.anomalies.append("replayed capabilities differ from sent capabilities")
        return []
    session.hierarchy = h
    session.k_gnb = h.k_gnb
    session.contexts["3gpp"] = ctx
    session.contexts["as"] = SecurityContext("as", "rrc", h.rrc_enc, h.rrc_int, cipher, integrity, UPLINK,
                                             peer=session.network, serving_network=p["serving_network"])
    session.contexts.pop("drb", None)
    reauth = p["reauth"]
    session.pending = None
    session.phase = Phase.REGISTERED if reauth else Phase.SECURED
    return [seal(MessageKind.SECURITY_MODE_COMPLETE, {}, ctx, ue.endpoint, session.network, session.plmn)]


def _drb_context(session: UeSession, drb: dict, direction: int) -> SecurityContext:
    nas = session.contexts["3gpp"]
    up = derive_as_keys(session.k_gnb or b"", nas.cipher_alg, nas.integrity_alg)
    return SecurityContext(
        "as", "drb", up["up_enc"], up["up_int"],
        nas.cipher_alg if drb["ciphering"] else AlgorithmId.NEA0,
        nas.integrity_alg if drb["integrity"] else AlgorithmId.NIA0,
        direction, peer=session.network, serving_network=nas.serving_network,
    )


def _on_handover(ue: UeState, session: UeSession, body: dict) -> list[ProtocolMessage]:
    target, secure = body["target"], bool(body["secure"])
    nas = session.contexts["3gpp"]
    k_gnb = handover_k_gnb(session.k_gnb or b"", target) if secure else session.k_gnb
    session.k_gnb = k_gnb
    as_keys = derive_as_keys(k_gnb or b"", nas.cipher_alg, nas.integrity_alg)
    session.contexts["as"] = SecurityContext("as", "rrc", as_keys["rrc_enc"], as_keys["rrc_int"],
                                             nas.cipher_alg, nas.integrity_alg, UPLINK,
                                             peer=target, serving_network=nas.serving_network)
    if session.drb is not None:
        session.contexts["drb"] = _drb_context(session, session.drb, UPLINK)
    for ctx in session.contexts.values():
        ctx.peer = target
    del ue.sessions[session.network]
    session.network = target
    ue.sessions[target] = session
    ue.camped = target
    info = ue.cells.get(target)
    if info is None:
        ue.cells[target] = {"plmn": list(session.plmn), "priority": 0, "unauth_emergency": False}
    return []


def _on_sealed(ue: UeState, msg: ProtocolMessage) -> list[ProtocolMessage]:
    if ue.blocked is not None:
        return _drop(ue, f"protected message while {ue.blocked.value}")
    session = ue.sessions.get(msg.src)
    if session is None:
        return _drop(ue, f"protected message from {msg.src} without session")
    if msg.kind is MessageKind.SECURITY_MODE_COMMAND and session.phase is Phase.AUTHENTICATING:
        return _on_smc(ue, session, msg)
    conn = "drb" if msg.kind is MessageKind.USER_DATA else (
        "as" if msg.kind is MessageKind.HANDOVER_COMMAND else "3gpp")
    ctx = session.contexts.get(conn)
    if ctx is None:
        return _drop(ue, f"no {conn} context for protected {msg.kind.value}")
    try:
        kind, body = open_sealed(msg, ctx)
    except (IntegrityFailure, ReplayDetected) as exc:
        return _drop(ue, f"discarded: {type(exc).__name__}: {exc}")

    if kind is MessageKind.REGISTRATION_ACCEPT:
        if "guti" in body:
            ue.gutis[session.plmn] = guti_from_fields(body["guti"])
        if session.tau_pending:
            session.tau_pending = False
        elif session.phase is Phase.SECURED:
            session.phase = Phase.REGISTERED
        return []
    if kind is MessageKind.AUTH_CHALLENGE and session.phase is Phase.REGISTERED:
        return _on_challenge(ue, session, body, reauth=True)
    if kind is MessageKind.PDU_SESSION_ACCEPT:
        session.drb = {"integrity": bool(body["integrity"]), "ciphering": bool(body["ciphering"])}
        session.contexts["drb"] = _drb_context(session, session.drb, UPLINK)
        return []
    if kind is MessageKind.USER_DATA:
        ue.received.append(body["data"])
        return []
    if kind is MessageKind.HANDOVER_COMMAND:
        return _on_handover(ue, session, body)
    if kind in (MessageKind.REGISTRATION_REJECT, MessageKind.TAU_REJECT):
        return _on_reject(ue, session, msg, body)
    return _drop(ue, f"protected {kind.value} unexpected in {session.phase.value}")


def ue_step(ue: UeState, item: ProtocolMessage | Trigger) -> tuple[UeState, list[ProtocolMessage]]:
    """Advance the UE by one input; ``ue.last_verdict`` records what happened."""
    ue.last_verdict = "accepted"
    if isinstance(item, Trigger):
        handler = _TRIGGERS.get(item.name)
        out = handler(ue, item) if handler else _drop(ue, f"unknown trigger {item.name}")
        return ue, out
    if item.dst not in (ue.endpoint, BROADCAST):
        return ue, _drop(ue, f"not addressed to us ({item.dst})")
    if item.clear:
        return ue, _on_clear(ue, item)
    return ue, _on_sealed(ue, item)
