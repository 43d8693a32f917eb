"""Protocol messages and their wire encoding.

Bodies are small trees of str/int/bool/None/bytes/list/dict. The wire
form is canonical JSON in which byte strings are written as latin-1 text
under a ``$b`` tag, so ASCII content carried inside bytes (a null-scheme
MSIN, a key marker) stays byte-searchable in the encoded message.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

from ..crypto_suite import ProtectionEnvelope, SecurityContext, protect, unprotect
from ..errors import IntegrityFailure

Plmn = tuple[str, str]
BROADCAST = "*"


class MessageKind(str, Enum):
    REGISTRATION_REQUEST = "RegistrationRequest"
    IDENTITY_REQUEST = "IdentityRequest"
    IDENTITY_RESPONSE = "IdentityResponse"
    AUTH_CHALLENGE = "AuthChallenge"
    AUTH_RESPONSE = "AuthResponse"
    AUTH_RESULT = "AuthResult"
    SECURITY_MODE_COMMAND = "SecurityModeCommand"
    SECURITY_MODE_COMPLETE = "SecurityModeComplete"
    REGISTRATION_ACCEPT = "RegistrationAccept"
    REGISTRATION_REJECT = "RegistrationReject"
    TAU_REQUEST = "TauRequest"
    TAU_REJECT = "TauReject"
    EMERGENCY_REQUEST = "EmergencyRequest"
    DOWNGRADE_COMMAND = "DowngradeCommand"
    BROADCAST = "Broadcast"
    # session and mobility traffic
    PDU_SESSION_REQUEST = "PduSessionRequest"
    PDU_SESSION_ACCEPT = "PduSessionAccept"
    USER_DATA = "UserData"
    HANDOVER_COMMAND = "HandoverCommand"
    HANDOVER_TRANSFER = "HandoverTransfer"


# Network-originated messages that can arrive before any security context.
PREAUTH_DOWNLINK = frozenset({
    MessageKind.IDENTITY_REQUEST,
    MessageKind.AUTH_CHALLENGE,
    MessageKind.AUTH_RESULT,
    MessageKind.REGISTRATION_ACCEPT,
    MessageKind.REGISTRATION_REJECT,
    MessageKind.TAU_REJECT,
    MessageKind.DOWNGRADE_COMMAND,
    MessageKind.BROADCAST,
})


def to_jsonable(value: Any) -> Any:
    if isinstance(value, (bytes, bytearray)):
        return {"$b": bytes(value).decode("latin-1")}
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, Enum):
        return value.value
    return value


def from_jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        if set(value) == {"$b"}:
            return value["$b"].encode("latin-1")
        return {k: from_jsonable(v) for k, v in value.items()}
    if isinstance(value, list):
        return [from_jsonable(v) for v in value]
    return value


def encode(value: Any) -> bytes:
    return json.dumps(to_jsonable(value), sort_keys=True, separators=(",", ":")).encode("latin-1")


def decode(raw: bytes) -> Any:
    return from_jsonable(json.loads(raw.decode("latin-1")))


@dataclass
class ProtocolMessage:
    kind: MessageKind
    src: str
    dst: str
    plmn: Plmn
    body: dict = field(default_factory=dict)
    envelope: ProtectionEnvelope | None = None
    signature: bytes | None = None
    certificate: dict | None = None

    @property
    def clear(self) -> bool:
        return self.envelope is None

    def signed_portion(self) -> bytes:
        return encode({
            "kind": self.kind.value,
            "src": self.src,
            "dst": self.dst,
            "plmn": list(self.plmn),
            "body": self.body,
        })

    def to_fields(self) -> dict:
        return {
            "kind": self.kind.value,
            "src": self.src,
            "dst": self.dst,
            "plmn": list(self.plmn),
            "body": self.body,
            "envelope": self.envelope.to_fields() if self.envelope else None,
            "signature": self.signature,
            "certificate": self.certificate,
        }

    def to_wire(self) -> bytes:
        return encode(self.to_fields())

    @classmethod
    def from_wire(cls, raw: bytes) -> ProtocolMessage:
        d = decode(raw)
        return cls(
            kind=MessageKind(d["kind"]),
            src=d["src"],
            dst=d["dst"],
            plmn=(d["plmn"][0], d["plmn"][1]),
            body=d["body"],
            envelope=ProtectionEnvelope.from_fields(d["envelope"]) if d["envelope"] else None,
            signature=d["signature"],
            certificate=d["certificate"],
        )

    def copy(self, **changes: Any) -> ProtocolMessage:
        return replace(self, **changes)


def seal(kind: MessageKind, body: dict, ctx: SecurityContext, src: str, dst: str, plmn: Plmn) -> ProtocolMessage:
    """Build a protected message: kind and body travel inside the envelope."""
    env = protect(encode({"kind": kind.value, "body": body}), ctx)
    return ProtocolMessage(kind, src, dst, plmn, {}, env)


def open_sealed(msg: ProtocolMessage, ctx: SecurityContext) -> tuple[MessageKind, dict]:
    """Unprotect ``msg``; raises IntegrityFailure/ReplayDetected from the suite.

    A payload that does not decode (possible only under NIA0) is reported
    as an IntegrityFailure so the caller discards it.
    """
    assert msg.envelope is not None
    plain = unprotect(msg.envelope, ctx)
    try:
        inner = decode(plain)
        return MessageKind(inner["kind"]), inner["body"]
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise IntegrityFailure(f"undecodable protected payload: {exc}") from exc


def observable_bytes(msg: ProtocolMessage) -> bytes:
    """What a radio eavesdropper can read from ``msg``.

    Clear messages are fully readable. For protected messages only the
    envelope metadata is visible, plus the payload when ciphering is NEA0.
    """
    if msg.envelope is None:
        return msg.to_wire()
    env = msg.envelope
    visible: dict[str, Any] = {"src": msg.src, "dst": msg.dst, "envelope": env.metadata()}
    if env.cipher_alg.is_null:
        visible["payload"] = env.payload
    return encode(visible)
