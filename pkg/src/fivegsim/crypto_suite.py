"""Algorithm registry, message protection and capability negotiation.

NEA1/NEA2 are modeled as a keyed stream mask and NIA1/NIA2 as a keyed
32-bit tag, both built on the same PRF as the key hierarchy. NEA0 and
NIA0 are the null algorithms: NEA0 leaves the payload readable and NIA0
produces no tag, which also switches replay protection off.

Replay protection is a strict greater-than check on one monotone counter
per direction; there is no out-of-order window.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .errors import IntegrityFailure, NoCommonAlgorithm, ReplayDetected
from .keys import DEFAULT_PRF, Prf, kdf

MAC_LEN = 4
COUNTER_MAX = 2**32 - 1


class AlgorithmId(str, Enum):
    NEA0 = "NEA0"
    NEA1 = "NEA1"
    NEA2 = "NEA2"
    NIA0 = "NIA0"
    NIA1 = "NIA1"
    NIA2 = "NIA2"

    @property
    def kind(self) -> str:
        return "ciphering" if self.value.startswith("NEA") else "integrity"

    @property
    def is_null(self) -> bool:
        return self.value.endswith("0")


CIPHERING = (AlgorithmId.NEA0, AlgorithmId.NEA1, AlgorithmId.NEA2)
INTEGRITY = (AlgorithmId.NIA0, AlgorithmId.NIA1, AlgorithmId.NIA2)


@dataclass(frozen=True)
class SecurityCapabilities:
    ciphering: tuple[AlgorithmId, ...]
    integrity: tuple[AlgorithmId, ...]

    def __post_init__(self) -> None:
        if not self.ciphering or not self.integrity:
            raise ValueError("capability sets must be non-empty")
        if any(a.kind != "ciphering" for a in self.ciphering):
            raise ValueError("ciphering capability set holds a non-NEA algorithm")
        if any(a.kind != "integrity" for a in self.integrity):
            raise ValueError("integrity capability set holds a non-NIA algorithm")

    @classmethod
    def default(cls, null_allowed: bool) -> SecurityCapabilities:
        """The full algorithm set, strongest first; null modes only if permitted."""
        c = [AlgorithmId.NEA2, AlgorithmId.NEA1]
        i = [AlgorithmId.NIA2, AlgorithmId.NIA1]
        if null_allowed:
            c.append(AlgorithmId.NEA0)
            i.append(AlgorithmId.NIA0)
        return cls(tuple(c), tuple(i))

    def to_fields(self) -> dict[str, list[str]]:
        return {"ciphering": [a.value for a in self.ciphering], "integrity": [a.value for a in self.integrity]}

    @classmethod
    def from_fields(cls, data: dict) -> SecurityCapabilities:
        return cls(
            tuple(AlgorithmId(a) for a in data["ciphering"]),
            tuple(AlgorithmId(a) for a in data["integrity"]),
        )


@dataclass(frozen=True)
class OperatorPolicy:
    """Serving network algorithm preferences, most preferred first."""

    ciphering_preference: tuple[AlgorithmId, ...] = (AlgorithmId.NEA2, AlgorithmId.NEA1, AlgorithmId.NEA0)
    integrity_preference: tuple[AlgorithmId, ...] = (AlgorithmId.NIA2, AlgorithmId.NIA1, AlgorithmId.NIA0)
    null_allowed: bool = True

    def allowed_ciphering(self) -> tuple[AlgorithmId, ...]:
        return tuple(a for a in self.ciphering_preference if self.null_allowed or not a.is_null)

    def allowed_integrity(self) -> tuple[AlgorithmId, ...]:
        return tuple(a for a in self.integrity_preference if self.null_allowed or not a.is_null)


def negotiate(
    ue_caps: SecurityCapabilities, policy: OperatorPolicy
) -> tuple[AlgorithmId, AlgorithmId, SecurityCapabilities]:
    """Pick the network's most preferred algorithms that the UE advertised.

    ``ue_caps`` is what reached the network, possibly modified in transit;
    it is returned unchanged as the replayed capabilities for the echo in
    the Security Mode Command.
    """
    cipher = next((a for a in policy.allowed_ciphering() if a in ue_caps.ciphering), None)
    integrity = next((a for a in policy.allowed_integrity() if a in ue_caps.integrity), None)
    if cipher is None or integrity is None:
        raise NoCommonAlgorithm(
            f"no common algorithm: ue={ue_caps.to_fields()} "
            f"network={[a.value for a in policy.allowed_ciphering()]}/"
            f"{[a.value for a in policy.allowed_integrity()]}"
        )
    return cipher, integrity, ue_caps


def bidding_down_detected(sent: SecurityCapabilities, replayed: SecurityCapabilities | None) -> bool:
    """UE-side check of the echoed capabilities. No echo means nothing to compare."""
    return replayed is not None and replayed != sent


@dataclass
class SecurityContext:
    """One side's view of a NAS or AS security association.

    ``tx_count`` is the next counter this side will send; ``rx_highest`` is
    the largest counter accepted from the peer (-1 before any).
    """

    scope: str
    connection_id: str
    enc_key: bytes
    int_key: bytes
    cipher_alg: AlgorithmId
    integrity_alg: AlgorithmId
    direction: int
    peer: str = ""
    serving_network: str = ""
    tx_count: int = 0
    rx_highest: int = -1
    state: str = "active"
    prf: Prf = field(default=DEFAULT_PRF, repr=False, compare=False)

    @property
    def replay_protected(self) -> bool:
        return self.integrity_alg is not AlgorithmId.NIA0

    def keys(self) -> tuple[bytes, bytes]:
        return self.enc_key, self.int_key


@dataclass(frozen=True)
class ProtectionEnvelope:
    cipher_alg: AlgorithmId
    integrity_alg: AlgorithmId
    replay_counter: int
    direction: int
    mac: bytes | None
    payload: bytes

    def metadata(self) -> dict:
        return {
            "cipher_alg": self.cipher_alg.value,
            "integrity_alg": self.integrity_alg.value,
            "replay_counter": self.replay_counter,
            "direction": self.direction,
            "length": len(self.payload),
        }

    def to_fields(self) -> dict:
        return {
            **self.metadata(),
            "mac": self.mac,
            "payload": self.payload,
        }

    @classmethod
    def from_fields(cls, data: dict) -> ProtectionEnvelope:
        return cls(
            AlgorithmId(data["cipher_alg"]),
            AlgorithmId(data["integrity_alg"]),
            int(data["replay_counter"]),
            int(data["direction"]),
            data.get("mac"),
            data["payload"],
        )


def _keystream(prf: Prf, key: bytes, alg: AlgorithmId, count: int, direction: int, n: int) -> bytes:
    out = bytearray()
    block = 0
    while len(out) < n:
        out += kdf(prf, key, "KEYSTREAM", alg.value, count, direction, block)
        block += 1
    return bytes(out[:n])


def _mac(prf: Prf, key: bytes, env_alg: AlgorithmId, cipher_alg: AlgorithmId,
         count: int, direction: int, body: bytes) -> bytes:
    return kdf(prf, key, "MAC", env_alg.value, cipher_alg.value, count, direction, body)[:MAC_LEN]


def mask(prf: Prf, key: bytes, alg: AlgorithmId, count: int, direction: int, data: bytes) -> bytes:
    if alg is AlgorithmId.NEA0:
        return data
    ks = _keystream(prf, key, alg, count, direction, len(data))
    return bytes(a ^ b for a, b in zip(data, ks))


def protect(payload: bytes, ctx: SecurityContext) -> ProtectionEnvelope:
    """Cipher then tag ``payload`` under ``ctx`` and advance its send counter."""
    count = ctx.tx_count
    if count > COUNTER_MAX:
        raise OverflowError("replay counter exhausted; re-authentication required")
    body = mask(ctx.prf, ctx.enc_key, ctx.cipher_alg, count, ctx.direction, payload)
    mac = None
    if ctx.integrity_alg is not AlgorithmId.NIA0:
        mac = _mac(ctx.prf, ctx.int_key, ctx.integrity_alg, ctx.cipher_alg, count, ctx.direction, body)
    ctx.tx_count = count + 1
    return ProtectionEnvelope(ctx.cipher_alg, ctx.integrity_alg, count, ctx.direction, mac, body)


def unprotect(env: ProtectionEnvelope, ctx: SecurityContext) -> bytes:
    """Verify and decipher an envelope sent by the peer of ``ctx``.

    Raises IntegrityFailure or ReplayDetected without touching ``ctx``.
    Under NIA0 neither check runs: tampered or replayed payloads come back
    as if genuine.
    """
    if env.direction == ctx.direction:
        raise IntegrityFailure("envelope direction matches our own sending direction")
    if ctx.integrity_alg is not AlgorithmId.NIA0:
        if env.integrity_alg is not ctx.integrity_alg or env.cipher_alg is not ctx.cipher_alg:
            raise IntegrityFailure("envelope algorithms differ from the context")
        expected = _mac(ctx.prf, ctx.int_key, ctx.integrity_alg, ctx.cipher_alg,
                        env.replay_counter, env.direction, env.payload)
        if env.mac != expected:
            raise IntegrityFailure("MAC check failed")
        if env.replay_counter <= ctx.rx_highest:
            raise ReplayDetected(f"counter {env.replay_counter} <= last seen {ctx.rx_highest}")
    plain = mask(ctx.prf, ctx.enc_key, ctx.cipher_alg, env.replay_counter, env.direction, env.payload)
    ctx.rx_highest = max(ctx.rx_highest, env.replay_counter)
    return plain
