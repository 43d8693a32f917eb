"""Subscriber identifiers and SUPI concealment.

A SUPI is concealed into a SUCI either with the null scheme (the MSIN is
carried as plain ASCII digits) or with a probabilistic public-key scheme
bound to the home network key pair. The public-key scheme here is a
model: X25519 key agreement for the asymmetric part, and the simulator's
keyed PRF for masking and the tamper tag. It is not a 3GPP ECIES profile.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from enum import Enum

from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

from .errors import MalformedCiphertext, MissingPrivateKey
from .keys import Prf, hmac_sha256

TAG_LEN = 16
MSIN_LEN = 10

Plmn = tuple[str, str]


class SuciScheme(str, Enum):
    NULL = "null"
    PROBABILISTIC_PK = "probabilistic-pk"


@dataclass(frozen=True, order=True)
class Supi:
    mcc: str
    mnc: str
    msin: str

    def __post_init__(self) -> None:
        for name, value, lengths in (
            ("mcc", self.mcc, (3,)),
            ("mnc", self.mnc, (2, 3)),
            ("msin", self.msin, (MSIN_LEN,)),
        ):
            if not (isinstance(value, str) and value.isdigit() and value.isascii()):
                raise ValueError(f"SUPI {name} must be ASCII digits, got {value!r}")
            if len(value) not in lengths:
                raise ValueError(f"SUPI {name} has length {len(value)}, expected {lengths}")

    @classmethod
    def parse(cls, text: str) -> Supi:
        """Parse the ``MCC-MNC-MSIN`` report rendering."""
        parts = text.strip().split("-")
        if len(parts) != 3:
            raise ValueError(f"expected MCC-MNC-MSIN, got {text!r}")
        return cls(*parts)

    @property
    def plmn(self) -> Plmn:
        return (self.mcc, self.mnc)

    def __str__(self) -> str:
        return f"{self.mcc}-{self.mnc}-{self.msin}"


@dataclass(frozen=True)
class Suci:
    mcc: str
    mnc: str
    scheme: SuciScheme
    ciphertext: bytes
    ephemeral_tag: bytes | None = None

    @property
    def plmn(self) -> Plmn:
        return (self.mcc, self.mnc)

    def to_bytes(self) -> bytes:
        """Over-the-air rendering: scheme, routing digits, ciphertext, ephemeral key."""
        scheme = b"\x00" if self.scheme is SuciScheme.NULL else b"\x01"
        eph = self.ephemeral_tag or b""
        return b"".join([
            scheme,
            self.mcc.encode(),
            bytes([len(self.mnc)]),
            self.mnc.encode(),
            bytes([len(self.ciphertext)]),
            self.ciphertext,
            eph,
        ])

    @classmethod
    def from_bytes(cls, raw: bytes) -> Suci:
        try:
            scheme = SuciScheme.NULL if raw[0] == 0 else SuciScheme.PROBABILISTIC_PK
            mcc = raw[1:4].decode()
            mnc_len = raw[4]
            mnc = raw[5:5 + mnc_len].decode()
            pos = 5 + mnc_len
            ct_len = raw[pos]
            ct = raw[pos + 1:pos + 1 + ct_len]
            eph = raw[pos + 1 + ct_len:]
        except (IndexError, UnicodeDecodeError) as exc:
            raise MalformedCiphertext(f"cannot parse SUCI bytes: {exc}") from exc
        if len(ct) != ct_len:
            raise MalformedCiphertext("truncated SUCI ciphertext")
        return cls(mcc, mnc, scheme, ct, eph if scheme is SuciScheme.PROBABILISTIC_PK else None)


@dataclass(frozen=True)
class Guti:
    plmn: Plmn
    temp_id: int
    epoch: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.temp_id < 2**32:
            raise ValueError("temp_id must fit in 32 bits")

    def __str__(self) -> str:
        return f"{self.plmn[0]}-{self.plmn[1]}-{self.temp_id:08x}/{self.epoch}"


@dataclass(frozen=True)
class HnKeyMaterial:
    """Home network concealment keys as seen from one side.

    The USIM copy carries ``public_key`` (or None when the operator did
    not provision one); the home network copy also carries ``private_key``.
    """

    public_key: bytes | None = None
    private_key: bytes | None = None
    provisioned_networks: frozenset[Plmn] = field(default_factory=frozenset)

    def usim_view(self, networks: frozenset[Plmn] | set[Plmn]) -> HnKeyMaterial:
        return HnKeyMaterial(public_key=self.public_key, provisioned_networks=frozenset(networks))

    def without_public_key(self) -> HnKeyMaterial:
        return replace(self, public_key=None, provisioned_networks=frozenset())


def generate_hn_keys(rng: random.Random) -> HnKeyMaterial:
    private = X25519PrivateKey.from_private_bytes(rng.randbytes(32))
    public = private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    secret = private.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())
    return HnKeyMaterial(public_key=public, private_key=secret)


def _stream(prf: Prf, key: bytes, n: int) -> bytes:
    out = b""
    block = 0
    while len(out) < n:
        out += prf(key, b"suci-mask" + block.to_bytes(4, "big"))
        block += 1
    return out[:n]


def _session_keys(prf: Prf, shared: bytes, eph_pub: bytes) -> tuple[bytes, bytes]:
    return prf(shared, b"suci-enc" + eph_pub), prf(shared, b"suci-mac" + eph_pub)


def _tag(prf: Prf, mac_key: bytes, mcc: str, mnc: str, eph_pub: bytes, masked: bytes) -> bytes:
    return prf(mac_key, mcc.encode() + mnc.encode() + eph_pub + masked)[:TAG_LEN]


def conceal_supi(
    supi: Supi,
    keys: HnKeyMaterial,
    rng: random.Random,
    *,
    force_null: bool = False,
    prf: Prf = hmac_sha256,
) -> Suci:
    """Conceal ``supi`` into a SUCI.

    Falls back to the null scheme when no public key is held or when
    ``force_null`` is set (unauthenticated emergency, or the home network
    configured the null scheme). The fallback is never an error.
    """
    if force_null or keys.public_key is None:
        return Suci(supi.mcc, supi.mnc, SuciScheme.NULL, supi.msin.encode("ascii"))

    eph = X25519PrivateKey.from_private_bytes(rng.randbytes(32))
    eph_pub = eph.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    shared = eph.exchange(X25519PublicKey.from_public_bytes(keys.public_key))
    enc_key, mac_key = _session_keys(prf, shared, eph_pub)
    masked = bytes(a ^ b for a, b in zip(supi.msin.encode("ascii"), _stream(prf, enc_key, MSIN_LEN)))
    tag = _tag(prf, mac_key, supi.mcc, supi.mnc, eph_pub, masked)
    return Suci(supi.mcc, supi.mnc, SuciScheme.PROBABILISTIC_PK, masked + tag, eph_pub)


def deconceal_supi(suci: Suci, keys: HnKeyMaterial, *, prf: Prf = hmac_sha256) -> Supi:
    if suci.scheme is SuciScheme.NULL:
        try:
            return Supi(suci.mcc, suci.mnc, suci.ciphertext.decode("ascii"))
        except (UnicodeDecodeError, ValueError) as exc:
            raise MalformedCiphertext(f"null-scheme SUCI does not carry an MSIN: {exc}") from exc

    if keys.private_key is None:
        raise MissingPrivateKey("probabilistic SUCI requires the home network private key")
    eph_pub = suci.ephemeral_tag or b""
    if len(eph_pub) != 32 or len(suci.ciphertext) != MSIN_LEN + TAG_LEN:
        raise MalformedCiphertext("probabilistic SUCI has wrong field lengths")
    private = X25519PrivateKey.from_private_bytes(keys.private_key)
    try:
        shared = private.exchange(X25519PublicKey.from_public_bytes(eph_pub))
    except ValueError as exc:
        raise MalformedCiphertext(f"invalid ephemeral key: {exc}") from exc
    enc_key, mac_key = _session_keys(prf, shared, eph_pub)
    masked, tag = suci.ciphertext[:MSIN_LEN], suci.ciphertext[MSIN_LEN:]
    if _tag(prf, mac_key, suci.mcc, suci.mnc, eph_pub, masked) != tag:
        raise MalformedCiphertext("SUCI tag check failed")
    msin = bytes(a ^ b for a, b in zip(masked, _stream(prf, enc_key, MSIN_LEN)))
    try:
        return Supi(suci.mcc, suci.mnc, msin.decode("ascii"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise MalformedCiphertext("decrypted MSIN is not numeric") from exc


def observe_msin(raw: bytes) -> str | None:
    """What an eavesdropper learns from SUCI bytes alone: the MSIN, or nothing."""
    try:
        suci = Suci.from_bytes(raw)
    except MalformedCiphertext:
        return None
    if suci.scheme is not SuciScheme.NULL:
        return None
    text = suci.ciphertext.decode("ascii", errors="replace")
    return text if len(text) == MSIN_LEN and text.isdigit() else None


class GutiPolicyKind(str, Enum):
    NEVER = "never"
    EVERY_REGISTRATION = "every-registration"
    EVERY_N_EVENTS = "every-n-events"


@dataclass(frozen=True)
class GutiPolicy:
    kind: GutiPolicyKind = GutiPolicyKind.EVERY_REGISTRATION
    n: int = 1

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("GUTI reassignment period must be >= 1")

    def due(self, events: int) -> bool:
        if self.kind is GutiPolicyKind.NEVER:
            return False
        if self.kind is GutiPolicyKind.EVERY_REGISTRATION:
            return events >= 1
        return events >= self.n

    def render(self) -> str:
        if self.kind is GutiPolicyKind.EVERY_N_EVENTS:
            return f"every-{self.n}-events"
        return self.kind.value

    @classmethod
    def parse(cls, text: str) -> GutiPolicy:
        if text in (GutiPolicyKind.NEVER.value, GutiPolicyKind.EVERY_REGISTRATION.value):
            return cls(GutiPolicyKind(text))
        parts = text.split("-")
        if len(parts) == 3 and parts[0] == "every" and parts[2] == "events" and parts[1].isdigit():
            return cls(GutiPolicyKind.EVERY_N_EVENTS, int(parts[1]))
        raise ValueError(f"unknown GUTI policy {text!r}")


def new_guti(plmn: Plmn, rng: random.Random) -> Guti:
    return Guti(plmn, rng.getrandbits(32), 0)


def reassign_guti(current: Guti, policy: GutiPolicy, rng: random.Random, events: int = 1) -> Guti:
    """Return the GUTI to use after ``events`` trigger events.

    When the policy says a reassignment is due, the temporary id is drawn
    fresh (never equal to the current one) and the epoch advances.
    """
    if not policy.due(events):
        return current
    temp_id = current.temp_id
    while temp_id == current.temp_id:
        temp_id = rng.getrandbits(32)
    return Guti(current.plmn, temp_id, current.epoch + 1)
