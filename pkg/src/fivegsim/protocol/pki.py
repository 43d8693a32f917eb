"""Certificate-verified pre-authentication messages (CA mode).

A single global CA issues one certificate per legitimate network cell.
In CA mode the network signs every message it sends in the clear and the
UE verifies the chain before acting on it. Ed25519 from ``cryptography``
provides the signatures; keys are drawn from the scenario's seeded RNG so
runs stay reproducible.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .messages import ProtocolMessage, encode


class Verdict(str, Enum):
    VERIFIED = "verified"
    UNVERIFIABLE = "unverifiable"
    INVALID = "invalid"


def _public_bytes(key: Ed25519PrivateKey) -> bytes:
    return key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def _tbs(subject: str, plmn: tuple[str, str], public_key: bytes, issuer: str) -> bytes:
    return encode({"subject": subject, "plmn": list(plmn), "public_key": public_key, "issuer": issuer})


@dataclass
class CertificateAuthority:
    name: str
    _key: Ed25519PrivateKey = field(repr=False)

    @classmethod
    def generate(cls, name: str, rng: random.Random) -> CertificateAuthority:
        return cls(name, Ed25519PrivateKey.from_private_bytes(rng.randbytes(32)))

    @property
    def root(self) -> tuple[str, bytes]:
        return self.name, _public_bytes(self._key)

    def issue(self, subject: str, plmn: tuple[str, str], public_key: bytes) -> dict:
        sig = self._key.sign(_tbs(subject, plmn, public_key, self.name))
        return {
            "subject": subject,
            "plmn": list(plmn),
            "public_key": public_key,
            "issuer": self.name,
            "signature": sig,
        }


@dataclass
class TrustStore:
    """CA roots provisioned on the UE, by CA name."""

    roots: dict[str, bytes] = field(default_factory=dict)

    def add(self, root: tuple[str, bytes]) -> None:
        self.roots[root[0]] = root[1]


@dataclass
class MessageSigner:
    certificate: dict
    _key: Ed25519PrivateKey = field(repr=False)

    @classmethod
    def enroll(cls, ca: CertificateAuthority, subject: str, plmn: tuple[str, str],
               rng: random.Random) -> MessageSigner:
        key = Ed25519PrivateKey.from_private_bytes(rng.randbytes(32))
        return cls(ca.issue(subject, plmn, _public_bytes(key)), key)

    def sign(self, msg: ProtocolMessage) -> ProtocolMessage:
        return msg.copy(signature=self._key.sign(msg.signed_portion()), certificate=self.certificate)


def verify_preauth_signature(msg: ProtocolMessage, trust_store: TrustStore, *, ca_mode: bool = True) -> Verdict:
    """Gate a clear network message before the UE acts on it.

    With CA mode off nothing can be checked and the UE falls back to
    implicit trust. With CA mode on, the certificate must chain to a
    trusted root, name the sender cell and its claimed PLMN, and sign the
    message.
    """
    if not ca_mode:
        return Verdict.UNVERIFIABLE
    cert, sig = msg.certificate, msg.signature
    if not cert or not sig:
        return Verdict.INVALID
    try:
        root = trust_store.roots.get(cert["issuer"])
        if root is None:
            return Verdict.INVALID
        plmn = (cert["plmn"][0], cert["plmn"][1])
        Ed25519PublicKey.from_public_bytes(root).verify(
            cert["signature"], _tbs(cert["subject"], plmn, cert["public_key"], cert["issuer"])
        )
        if cert["subject"] != msg.src or plmn != tuple(msg.plmn):
            return Verdict.INVALID
        Ed25519PublicKey.from_public_bytes(cert["public_key"]).verify(sig, msg.signed_portion())
    except (InvalidSignature, KeyError, TypeError, ValueError, IndexError):
        return Verdict.INVALID
    return Verdict.VERIFIED
