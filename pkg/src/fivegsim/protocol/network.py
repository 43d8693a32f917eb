"""Network-side state machine: one cell with its core functions collapsed.

Role-tagged sub-records stand in for the separate functions. ``HomeRecord``
is the home network's ARPF/UDM/AUSF (subscriber keys, concealment private
key, the home-control ledger) and may be shared by several serving
networks. ``NetworkState`` is the serving side (gNB, AMF/SEAF, SMF).
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

from ..crypto_suite import (
    AlgorithmId,
    NoCommonAlgorithm,
    OperatorPolicy,
    SecurityCapabilities,
    SecurityContext,
    negotiate,
)
from ..errors import IntegrityFailure, MalformedCiphertext, MissingPrivateKey, ReplayDetected
from ..identity import Guti, GutiPolicy, HnKeyMaterial, Suci, Supi, deconceal_supi, new_guti, reassign_guti
from ..keys import (
    DerivationContext,
    KeyHierarchy,
    RootKey,
    compute_autn,
    compute_res,
    derive_as_keys,
    derive_hierarchy,
    handover_k_gnb,
    serving_network_name,
)
from .messages import BROADCAST, MessageKind, Plmn, ProtocolMessage, encode, open_sealed, seal
from .pki import MessageSigner
from .ue import DOWNLINK, Trigger, auts_mac, context_fields, guti_fields, guti_from_fields, rng_digest
from .user_plane import DrbConfig, UpSecurityPolicy, apply_up_policy

MAX_RESYNC = 2


class NetPhase(str, Enum):
    IDENTIFYING = "identifying"
    CHALLENGED = "challenged"
    SMC_SENT = "smc-sent"
    REGISTERED = "registered"
    EMERGENCY = "emergency"
    FAILED = "failed"


@dataclass
class SubscriberRecord:
    supi: Supi
    root: RootKey
    run_counter: int = 0


@dataclass(frozen=True)
class HomeControlEntry:
    supi: str
    serving_network: str
    visited_endpoint: str
    run_counter: int


@dataclass
class HomeRecord:
    plmn: Plmn
    hn_keys: HnKeyMaterial
    subscribers: dict[str, SubscriberRecord] = field(default_factory=dict)
    ledger: list[HomeControlEntry] = field(default_factory=list)
    enforcement_hook: Callable[[HomeControlEntry], Any] | None = field(default=None, repr=False)
    hook_calls: list[dict] = field(default_factory=list)

    def confirm(self, entry: HomeControlEntry) -> None:
        """Record a successful authentication seen from a serving network.

        Any linkage to later procedures is operator policy, so the hook's
        return value is only recorded.
        """
        self.ledger.append(entry)
        if self.enforcement_hook is not None:
            self.hook_calls.append({"entry": entry.__dict__, "decision": repr(self.enforcement_hook(entry))})

    def snapshot(self) -> dict:
        return {
            "plmn": list(self.plmn),
            "counters": {k: v.run_counter for k, v in sorted(self.subscribers.items())},
            "ledger": [e.__dict__ for e in self.ledger],
        }


@dataclass
class NetSession:
    ue: str
    phase: NetPhase
    supi: Supi | None = None
    caps: SecurityCapabilities | None = None
    nonce: bytes | None = None
    run_counter: int = 0
    resyncs: int = 0
    hierarchy: KeyHierarchy | None = None
    k_gnb: bytes | None = None
    contexts: dict[str, SecurityContext] = field(default_factory=dict)
    drb: DrbConfig | None = None
    reauth: bool = False
    failure: str = ""
    received: list[Any] = field(default_factory=list)

    def snapshot(self) -> dict:
        return {
            "ue": self.ue,
            "phase": self.phase.value,
            "supi": str(self.supi) if self.supi else None,
            "caps": self.caps.to_fields() if self.caps else None,
            "nonce": self.nonce,
            "run_counter": self.run_counter,
            "resyncs": self.resyncs,
            "hierarchy": self.hierarchy.key_fields() if self.hierarchy else None,
            "k_gnb": self.k_gnb,
            "contexts": {k: context_fields(v) for k, v in sorted(self.contexts.items())},
            "drb": self.drb.__dict__ if self.drb else None,
            "reauth": self.reauth,
            "failure": self.failure,
            "received": self.received,
        }


@dataclass
class NetworkState:
    endpoint: str
    plmn: Plmn
    homes: dict[Plmn, HomeRecord]
    rng: random.Random = field(repr=False)
    policy: OperatorPolicy = field(default_factory=OperatorPolicy)
    guti_policy: GutiPolicy = field(default_factory=GutiPolicy)
    unauth_emergency_allowed: bool = False
    capability_echo: bool = True
    priority: int = 0
    ca_mode: bool = False
    signer: MessageSigner | None = field(default=None, repr=False)
    up_policy: UpSecurityPolicy = field(default_factory=UpSecurityPolicy)
    local_smf_override: str | None = None
    handover_secure: bool = True
    max_resync: int = MAX_RESYNC
    backhaul_key: bytes = b"\x00" * 32
    sessions: dict[str, NetSession] = field(default_factory=dict)
    gutis: dict[int, str] = field(default_factory=dict)
    guti_by_supi: dict[str, Guti] = field(default_factory=dict)
    guti_events: dict[str, int] = field(default_factory=dict)
    backhaul: dict[str, SecurityContext] = field(default_factory=dict)
    audit: list[dict] = field(default_factory=list)
    anomalies: list[str] = field(default_factory=list)
    last_verdict: str = ""

    @property
    def serving_network(self) -> str:
        return serving_network_name(*self.plmn)

    @property
    def home(self) -> HomeRecord:
        return self.homes[self.plmn]

    def active_contexts(self) -> list[SecurityContext]:
        return [c for s in self.sessions.values() for c in s.contexts.values() if c.state == "active"]

    def snapshot(self) -> dict:
        return {
            "endpoint": self.endpoint,
            "sessions": {k: s.snapshot() for k, s in sorted(self.sessions.items())},
            "gutis": {str(k): v for k, v in sorted(self.gutis.items())},
            "guti_by_supi": {k: guti_fields(v) for k, v in sorted(self.guti_by_supi.items())},
            "guti_events": dict(sorted(self.guti_events.items())),
            "backhaul": {k: context_fields(v) for k, v in sorted(self.backhaul.items())},
            "audit": self.audit,
            "homes": {f"{p[0]}-{p[1]}": h.snapshot() for p, h in sorted(self.homes.items())},
            "rng": rng_digest(self.rng),
        }

    def digest(self) -> str:
        return hashlib.sha256(encode(self.snapshot())).hexdigest()


# -- helpers ---------------------------------------------------------------


def _drop(net: NetworkState, reason: str) -> list[ProtocolMessage]:
    net.last_verdict = f"dropped:{reason}"
    net.anomalies.append(reason)
    return []


def _clear(net: NetworkState, kind: MessageKind, dst: str, body: dict) -> ProtocolMessage:
    msg = ProtocolMessage(kind, net.endpoint, dst, net.plmn, body)
    if net.ca_mode and net.signer is not None:
        msg = net.signer.sign(msg)
    return msg


def _sealed(net: NetworkState, session: NetSession, kind: MessageKind, body: dict, conn: str = "3gpp") -> ProtocolMessage:
    return seal(kind, body, session.contexts[conn], net.endpoint, session.ue, net.plmn)


def _subscriber(net: NetworkState, supi: Supi) -> SubscriberRecord | None:
    home = net.homes.get(supi.plmn)
    return home.subscribers.get(str(supi)) if home else None


def _challenge(net: NetworkState, session: NetSession, sealed: bool = False) -> list[ProtocolMessage]:
    assert session.supi is not None
    sub = _subscriber(net, session.supi)
    assert sub is not None
    sub.run_counter += 1
    session.run_counter = sub.run_counter
    session.nonce = net.rng.randbytes(16)
    session.phase = NetPhase.CHALLENGED
    body = {
        "nonce": session.nonce,
        "run_counter": session.run_counter,
        "autn": compute_autn(sub.root, session.nonce, session.run_counter),
    }
    if sealed:
        return [_sealed(net, session, MessageKind.AUTH_CHALLENGE, body)]
    return [_clear(net, MessageKind.AUTH_CHALLENGE, session.ue, body)]


def _identified(net: NetworkState, session: NetSession, suci_raw: bytes) -> list[ProtocolMessage]:
    try:
        suci = Suci.from_bytes(suci_raw)
        home = net.homes.get(suci.plmn)
        if home is None:
            raise MissingPrivateKey(f"no home record for {suci.plmn}")
        supi = deconceal_supi(suci, home.hn_keys)
    except (MalformedCiphertext, MissingPrivateKey) as exc:
        session.phase = NetPhase.FAILED
        net.last_verdict = f"rejected:{exc}"
        return [_clear(net, MessageKind.REGISTRATION_REJECT, session.ue, {"cause": "temporary"})]
    if _subscriber(net, supi) is None:
        session.phase = NetPhase.FAILED
        net.last_verdict = "rejected:unknown-subscriber"
        return [_clear(net, MessageKind.REGISTRATION_REJECT, session.ue, {"cause": "permanent"})]
    session.supi = supi
    return _challenge(net, session)


def _assign_guti(net: NetworkState, supi: Supi) -> Guti:
    key = str(supi)
    prev = net.guti_by_supi.get(key)
    if prev is None:
        guti = new_guti(net.plmn, net.rng)
        net.guti_events[key] = 0
    else:
        events = net.guti_events.get(key, 0) + 1
        guti = reassign_guti(prev, net.guti_policy, net.rng, events)
        net.guti_events[key] = 0 if guti is not prev else events
        if guti is not prev:
            net.gutis.pop(prev.temp_id, None)
    net.guti_by_supi[key] = guti
    net.gutis[guti.temp_id] = key
    return guti


# -- clear uplink ----------------------------------------------------------


def _on_registration(net: NetworkState, msg: ProtocolMessage) -> list[ProtocolMessage]:
    body = msg.body
    try:
        caps = SecurityCapabilities.from_fields(body["caps"])
    except (KeyError, ValueError, TypeError):
        return _drop(net, "registration without usable capabilities")
    session = NetSession(msg.src, NetPhase.IDENTIFYING, caps=caps)
    net.sessions[msg.src] = session
    if "guti" in body:
        g = guti_from_fields(body["guti"])
        supi_text = net.gutis.get(g.temp_id) if g.plmn == net.plmn else None
        if supi_text is None:
            net.last_verdict = "identity-requested:unknown-guti"
            return [_clear(net, MessageKind.IDENTITY_REQUEST, msg.src, {"type": "suci"})]
        session.supi = Supi.parse(supi_text)
        return _challenge(net, session)
    if "suci" in body:
        return _identified(net, session, body["suci"])
    return [_clear(net, MessageKind.IDENTITY_REQUEST, msg.src, {"type": "suci"})]


def _on_auth_response(net: NetworkState, session: NetSession, body: dict) -> list[ProtocolMessage]:
    assert session.supi is not None
    sub = _subscriber(net, session.supi)
    assert sub is not None
    sealed = session.reauth
    result = body.get("result")
    if result == "sync_failure":
        auts = int(body.get("auts", -1))
        if body.get("auts_mac") != auts_mac(sub.root, auts) or session.resyncs >= net.max_resync:
            session.phase = NetPhase.FAILED
            session.failure = "sync"
            net.last_verdict = "rejected:resync-failed"
            return []
        session.resyncs += 1
        sub.run_counter = auts
        net.last_verdict = "resynchronised"
        return _challenge(net, session, sealed=sealed)
    if result != "ok" or body.get("res") != compute_res(sub.root, session.nonce or b"", session.run_counter):
        session.phase = NetPhase.FAILED
        session.failure = "auth"
        net.last_verdict = f"rejected:auth-{result}"
        if sealed:
            return []
        return [_clear(net, MessageKind.AUTH_RESULT, session.ue, {"result": "failure"})]

    try:
        cipher, integrity, replayed = negotiate(session.caps or SecurityCapabilities.default(False), net.policy)
    except NoCommonAlgorithm:
        session.phase = NetPhase.FAILED
        session.failure = "algorithm"
        net.last_verdict = "rejected:no-common-algorithm"
        return [_clear(net, MessageKind.REGISTRATION_REJECT, session.ue, {"cause": "temporary"})]

    net.homes[session.supi.plmn].confirm(
        HomeControlEntry(str(session.supi), net.serving_network, net.endpoint, session.run_counter)
    )
    h = derive_hierarchy(sub.root, DerivationContext(net.serving_network, session.run_counter, cipher.value, integrity.value))
    session.hierarchy = h
    session.k_gnb = h.k_gnb
    session.contexts["3gpp"] = SecurityContext("nas", "3gpp", h.nas_enc, h.nas_int, cipher, integrity, DOWNLINK,
                                               peer=session.ue, serving_network=net.serving_network)
    session.contexts["as"] = SecurityContext("as", "rrc", h.rrc_enc, h.rrc_int, cipher, integrity, DOWNLINK,
                                             peer=session.ue, serving_network=net.serving_network)
    session.contexts.pop("drb", None)
    session.phase = NetPhase.SMC_SENT
    smc = {
        "cipher": cipher.value,
        "integrity": integrity.value,
        "replayed_caps": replayed.to_fields() if net.capability_echo else None,
    }
    return [_sealed(net, session, MessageKind.SECURITY_MODE_COMMAND, smc)]


def _on_emergency(net: NetworkState, msg: ProtocolMessage) -> list[ProtocolMessage]:
    if not net.unauth_emergency_allowed:
        net.last_verdict = "rejected:emergency-not-allowed"
        return [_clear(net, MessageKind.REGISTRATION_REJECT, msg.src, {"cause": "emergency-not-allowed"})]
    session = NetSession(msg.src, NetPhase.EMERGENCY)
    try:
        suci = Suci.from_bytes(msg.body["suci"])
        home = net.homes.get(suci.plmn)
        if home is not None:
            session.supi = deconceal_supi(suci, home.hn_keys)
    except (KeyError, ValueError, MalformedCiphertext, MissingPrivateKey):
        pass
    net.sessions[msg.src] = session
    return [_clear(net, MessageKind.REGISTRATION_ACCEPT, msg.src, {"emergency": True, "protection": "null"})]


def _on_tau(net: NetworkState, msg: ProtocolMessage) -> list[ProtocolMessage]:
    session = net.sessions.get(msg.src)
    try:
        g = guti_from_fields(msg.body["guti"])
    except (KeyError, TypeError, ValueError):
        return _drop(net, "tau without guti")
    supi_text = net.gutis.get(g.temp_id)
    if session is None or session.phase is not NetPhase.REGISTERED or supi_text != str(session.supi):
        net.last_verdict = "rejected:tau-unknown"
        return [_clear(net, MessageKind.TAU_REJECT, msg.src, {"cause": "temporary"})]
    assert session.supi is not None
    guti = _assign_guti(net, session.supi)
    return [_sealed(net, session, MessageKind.REGISTRATION_ACCEPT, {"guti": guti_fields(guti), "tau": True})]


def _on_clear(net: NetworkState, msg: ProtocolMessage) -> list[ProtocolMessage]:
    kind = msg.kind
    if kind is MessageKind.REGISTRATION_REQUEST:
        return _on_registration(net, msg)
    if kind is MessageKind.EMERGENCY_REQUEST:
        return _on_emergency(net, msg)
    if kind is MessageKind.TAU_REQUEST:
        return _on_tau(net, msg)
    if kind is MessageKind.HANDOVER_TRANSFER:
        if tuple(msg.plmn) != net.plmn:
            return _drop(net, "handover transfer from another PLMN")
        return _on_transfer(net, msg.body)
    session = net.sessions.get(msg.src)
    if session is None:
        return _drop(net, f"clear {kind.value} from {msg.src} without session")
    if kind is MessageKind.IDENTITY_RESPONSE and session.phase is NetPhase.IDENTIFYING:
        return _identified(net, session, msg.body.get("suci", b""))
    if kind is MessageKind.AUTH_RESPONSE and session.phase is NetPhase.CHALLENGED and not session.reauth:
        return _on_auth_response(net, session, msg.body)
    return _drop(net, f"clear {kind.value} unexpected in {session.phase.value}")


# -- protected uplink ------------------------------------------------------


def _on_pdu_session(net: NetworkState, session: NetSession) -> list[ProtocolMessage]:
    drb = apply_up_policy(net.up_policy, net.local_smf_override, net.audit, session=session.ue)
    session.drb = drb
    session.contexts["drb"] = _drb_context(session, drb, DOWNLINK)
    return [_sealed(net, session, MessageKind.PDU_SESSION_ACCEPT,
                    {"integrity": drb.integrity, "ciphering": drb.ciphering})]


def _drb_context(session: NetSession, drb: DrbConfig, direction: int) -> SecurityContext:
    nas = session.contexts["3gpp"]
    up = derive_as_keys(session.k_gnb or b"", nas.cipher_alg, nas.integrity_alg)
    return SecurityContext(
        "as", "drb", up["up_enc"], up["up_int"],
        nas.cipher_alg if drb.ciphering else AlgorithmId.NEA0,
        nas.integrity_alg if drb.integrity else AlgorithmId.NIA0,
        direction, peer=session.ue, serving_network=nas.serving_network,
    )


def _on_sealed(net: NetworkState, msg: ProtocolMessage) -> list[ProtocolMessage]:
    if msg.kind is MessageKind.HANDOVER_TRANSFER:
        ctx = _backhaul_ctx(net, msg.src)
        try:
            _, body = open_sealed(msg, ctx)
        except (IntegrityFailure, ReplayDetected) as exc:
            return _drop(net, f"backhaul discarded: {exc}")
        return _on_transfer(net, body)
    session = net.sessions.get(msg.src)
    if session is None:
        return _drop(net, f"protected message from {msg.src} without session")
    ctx = session.contexts.get("drb" if msg.kind is MessageKind.USER_DATA else "3gpp")
    if ctx is None:
        return _drop(net, f"no context for protected {msg.kind.value}")
    try:
        kind, body = open_sealed(msg, ctx)
    except (IntegrityFailure, ReplayDetected) as exc:
        return _drop(net, f"discarded: {type(exc).__name__}: {exc}")

    if kind is MessageKind.SECURITY_MODE_COMPLETE and session.phase is NetPhase.SMC_SENT:
        assert session.supi is not None
        if session.reauth:
            session.reauth = False
            session.phase = NetPhase.REGISTERED
            return []
        guti = _assign_guti(net, session.supi)
        session.phase = NetPhase.REGISTERED
        return [_sealed(net, session, MessageKind.REGISTRATION_ACCEPT, {"guti": guti_fields(guti)})]
    if kind is MessageKind.AUTH_RESPONSE and session.reauth and session.phase is NetPhase.CHALLENGED:
        return _on_auth_response(net, session, body)
    if kind is MessageKind.PDU_SESSION_REQUEST and session.phase is NetPhase.REGISTERED:
        return _on_pdu_session(net, session)
    if kind is MessageKind.USER_DATA:
        session.received.append(body.get("data"))
        return []
    if kind is MessageKind.EMERGENCY_REQUEST and session.phase is NetPhase.REGISTERED:
        return [_sealed(net, session, MessageKind.REGISTRATION_ACCEPT, {"emergency": True})]
    return _drop(net, f"protected {kind.value} unexpected in {session.phase.value}")


# -- handover --------------------------------------------------------------


def _backhaul_ctx(net: NetworkState, peer: str) -> SecurityContext:
    ctx = net.backhaul.get(peer)
    if ctx is None:
        a, b = sorted((net.endpoint, peer))
        key = derive_as_keys(net.backhaul_key + f"{a}|{b}".encode(), AlgorithmId.NEA2, AlgorithmId.NIA2)
        ctx = SecurityContext("backhaul", f"{a}|{b}", key["rrc_enc"], key["rrc_int"],
                              AlgorithmId.NEA2, AlgorithmId.NIA2, 0 if net.endpoint == a else 1, peer=peer)
        net.backhaul[peer] = ctx
    return ctx


def _start_handover(net: NetworkState, ue: str, target: str) -> list[ProtocolMessage]:
    session = net.sessions.get(ue)
    if session is None or session.phase is not NetPhase.REGISTERED or "as" not in session.contexts:
        return _drop(net, f"handover of {ue} without active context")
    nas = session.contexts["3gpp"]
    secure = net.handover_secure
    k_gnb = handover_k_gnb(session.k_gnb or b"", target) if secure else session.k_gnb
    transfer = {
        "ue": ue,
        "supi": str(session.supi),
        "secure": secure,
        "k_gnb": k_gnb,
        "nas": context_fields(nas),
        "drb": session.drb.__dict__ if session.drb else None,
    }
    command = _sealed(net, session, MessageKind.HANDOVER_COMMAND, {"target": target, "secure": secure}, conn="as")
    del net.sessions[ue]
    if secure:
        out = seal(MessageKind.HANDOVER_TRANSFER, transfer, _backhaul_ctx(net, target), net.endpoint, target, net.plmn)
    else:
        out = ProtocolMessage(MessageKind.HANDOVER_TRANSFER, net.endpoint, target, net.plmn, transfer)
    return [out, command]


def _on_transfer(net: NetworkState, body: dict) -> list[ProtocolMessage]:
    n = body["nas"]
    nas = SecurityContext(n["scope"], n["connection_id"], n["enc_key"], n["int_key"],
                          AlgorithmId(n["cipher_alg"]), AlgorithmId(n["integrity_alg"]), n["direction"],
                          peer=n["peer"], serving_network=n["serving_network"],
                          tx_count=n["tx_count"], rx_highest=n["rx_highest"])
    session = NetSession(body["ue"], NetPhase.REGISTERED, supi=Supi.parse(body["supi"]), k_gnb=body["k_gnb"])
    session.contexts["3gpp"] = nas
    as_keys = derive_as_keys(body["k_gnb"], nas.cipher_alg, nas.integrity_alg)
    session.contexts["as"] = SecurityContext("as", "rrc", as_keys["rrc_enc"], as_keys["rrc_int"],
                                             nas.cipher_alg, nas.integrity_alg, DOWNLINK,
                                             peer=body["ue"], serving_network=nas.serving_network)
    if body.get("drb"):
        session.drb = DrbConfig(**body["drb"])
        session.contexts["drb"] = _drb_context(session, session.drb, DOWNLINK)
    net.sessions[body["ue"]] = session
    return []


# -- triggers --------------------------------------------------------------


def _t_broadcast(net: NetworkState, t: Trigger) -> list[ProtocolMessage]:
    return [_clear(net, MessageKind.BROADCAST, BROADCAST,
                   {"priority": net.priority, "unauth_emergency": net.unauth_emergency_allowed})]


def _t_reauthenticate(net: NetworkState, t: Trigger) -> list[ProtocolMessage]:
    session = net.sessions.get(t.args["ue"])
    if session is None or session.phase is not NetPhase.REGISTERED:
        return _drop(net, "re-authentication without an active NAS connection")
    session.reauth = True
    session.resyncs = 0
    return _challenge(net, session, sealed=True)


def _t_handover(net: NetworkState, t: Trigger) -> list[ProtocolMessage]:
    return _start_handover(net, t.args["ue"], t.args["target"])


def _t_send_data(net: NetworkState, t: Trigger) -> list[ProtocolMessage]:
    session = net.sessions.get(t.args["ue"])
    if session is None or "drb" not in session.contexts:
        return _drop(net, "no data bearer")
    return [_sealed(net, session, MessageKind.USER_DATA, {"data": t.args["payload"]}, conn="drb")]


_TRIGGERS = {
    "broadcast": _t_broadcast,
    "reauthenticate": _t_reauthenticate,
    "handover": _t_handover,
    "send_data": _t_send_data,
}


def network_step(net: NetworkState, item: ProtocolMessage | Trigger) -> tuple[NetworkState, list[ProtocolMessage]]:
    net.last_verdict = "accepted"
    if isinstance(item, Trigger):
        handler = _TRIGGERS.get(item.name)
        return net, (handler(net, item) if handler else _drop(net, f"unknown trigger {item.name}"))
    if item.dst != net.endpoint:
        return net, _drop(net, f"not addressed to us ({item.dst})")
    if item.clear:
        return net, _on_clear(net, item)
    return net, _on_sealed(net, item)
