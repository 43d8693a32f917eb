"""Key hierarchy derivation from the long-term subscriber key.

The chain is a model of the 5G hierarchy, not a bit-exact TS 33.501
reproduction::

    K -> K_AUSF -> K_SEAF -> K_AMF -> {NAS enc/int, K_gNB}
                                       K_gNB -> {RRC enc/int, UP enc/int}

Every edge is one call of a keyed PRF with a distinct label. Intermediate
keys are 256 bits, leaf keys are truncated to 128 bits. Every leaf mixes
in the complete derivation context so two distinct contexts never share
a leaf.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, fields, replace
from typing import Callable

from .errors import NoActiveNasConnection

Prf = Callable[[bytes, bytes], bytes]

ROOT_KEY_LEN = 32
LEAF_KEY_LEN = 16

LEAF_FIELDS = ("nas_enc", "nas_int", "rrc_enc", "rrc_int", "up_enc", "up_int")
INTERNAL_FIELDS = ("k_ausf", "k_seaf", "k_amf", "k_gnb")


def hmac_sha256(key: bytes, data: bytes) -> bytes:
    return hmac.new(key, data, hashlib.sha256).digest()


DEFAULT_PRF: Prf = hmac_sha256


def kdf(prf: Prf, key: bytes, label: str, *params: bytes | str | int) -> bytes:
    """One edge of the hierarchy: ``prf(key, label || len-prefixed params)``."""
    parts = [label.encode()]
    for p in params:
        if isinstance(p, int):
            p = p.to_bytes(8, "big")
        elif isinstance(p, str):
            p = p.encode()
        parts.append(len(p).to_bytes(2, "big") + p)
    return prf(key, b"\x00".join(parts))


@dataclass(frozen=True)
class RootKey:
    k: bytes

    def __post_init__(self) -> None:
        if len(self.k) != ROOT_KEY_LEN:
            raise ValueError(f"root key must be {ROOT_KEY_LEN} bytes, got {len(self.k)}")

    @classmethod
    def from_hex(cls, text: str) -> RootKey:
        return cls(bytes.fromhex(text))

    def __repr__(self) -> str:
        return "RootKey(<redacted>)"


@dataclass(frozen=True)
class DerivationContext:
    serving_network: str
    run_counter: int
    cipher_alg: str
    integrity_alg: str

    def next_run(self) -> DerivationContext:
        return replace(self, run_counter=self.run_counter + 1)


def serving_network_name(mcc: str, mnc: str) -> str:
    return f"5G:mnc{mnc.zfill(3)}.mcc{mcc}.3gppnetwork.org"


@dataclass(frozen=True)
class KeyHierarchy:
    k_ausf: bytes
    k_seaf: bytes
    k_amf: bytes
    k_gnb: bytes
    nas_enc: bytes
    nas_int: bytes
    rrc_enc: bytes
    rrc_int: bytes
    up_enc: bytes
    up_int: bytes
    context: DerivationContext

    def key_fields(self) -> dict[str, bytes]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "context"}

    def leaves(self) -> dict[str, bytes]:
        return {name: getattr(self, name) for name in LEAF_FIELDS}


def _alg(a: object) -> str:
    return getattr(a, "value", a)  # type: ignore[return-value]


def derive_as_keys(
    k_gnb: bytes, cipher_alg: str, integrity_alg: str, *, prf: Prf = DEFAULT_PRF
) -> dict[str, bytes]:
    c, i = _alg(cipher_alg), _alg(integrity_alg)
    return {
        name: kdf(prf, k_gnb, name.upper(), c, i)[:LEAF_KEY_LEN]
        for name in ("rrc_enc", "rrc_int", "up_enc", "up_int")
    }


def derive_hierarchy(root: RootKey, context: DerivationContext, *, prf: Prf = DEFAULT_PRF) -> KeyHierarchy:
    c, i = _alg(context.cipher_alg), _alg(context.integrity_alg)
    sn, run = context.serving_network, context.run_counter
    k_ausf = kdf(prf, root.k, "KAUSF", sn, run)
    k_seaf = kdf(prf, k_ausf, "KSEAF", sn)
    k_amf = kdf(prf, k_seaf, "KAMF", sn, run)
    nas_enc = kdf(prf, k_amf, "NAS_ENC", c, i)[:LEAF_KEY_LEN]
    nas_int = kdf(prf, k_amf, "NAS_INT", c, i)[:LEAF_KEY_LEN]
    k_gnb = kdf(prf, k_amf, "KGNB", run)
    return KeyHierarchy(
        k_ausf=k_ausf,
        k_seaf=k_seaf,
        k_amf=k_amf,
        k_gnb=k_gnb,
        nas_enc=nas_enc,
        nas_int=nas_int,
        context=context,
        **derive_as_keys(k_gnb, c, i, prf=prf),
    )


def handover_k_gnb(k_gnb: bytes, target_cell: str, *, prf: Prf = DEFAULT_PRF) -> bytes:
    return kdf(prf, k_gnb, "KGNB_STAR", target_cell)


def rederive_on_demand(
    root: RootKey,
    hierarchy: KeyHierarchy,
    *,
    nas_connection_active: bool,
    prf: Prf = DEFAULT_PRF,
) -> KeyHierarchy:
    """Network-initiated re-authentication: same root, next run counter."""
    if not nas_connection_active:
        raise NoActiveNasConnection("re-authentication requires an active NAS connection")
    return derive_hierarchy(root, hierarchy.context.next_run(), prf=prf)


# AKA challenge material. Both directions use the root key so that a
# network without K can neither produce a valid AUTN nor check a RES.

def compute_autn(root: RootKey, nonce: bytes, run_counter: int, *, prf: Prf = DEFAULT_PRF) -> bytes:
    return kdf(prf, root.k, "AUTN", nonce, run_counter)[:16]


def compute_res(root: RootKey, nonce: bytes, run_counter: int, *, prf: Prf = DEFAULT_PRF) -> bytes:
    return kdf(prf, root.k, "RES", nonce, run_counter)[:16]


def format_hierarchy(h: KeyHierarchy) -> str:
    """Flat ``name = hex`` text used for golden fixtures."""
    ctx = h.context
    lines = [
        f"serving_network = {ctx.serving_network}",
        f"run_counter = {ctx.run_counter}",
        f"cipher_alg = {_alg(ctx.cipher_alg)}",
        f"integrity_alg = {_alg(ctx.integrity_alg)}",
    ]
    lines += [f"{name} = {value.hex()}" for name, value in h.key_fields().items()]
    return "\n".join(lines) + "\n"


def parse_hierarchy_fixture(text: str) -> tuple[DerivationContext, dict[str, bytes]]:
    values: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        name, _, value = line.partition("=")
        values[name.strip()] = value.strip()
    ctx = DerivationContext(
        serving_network=values.pop("serving_network"),
        run_counter=int(values.pop("run_counter")),
        cipher_alg=values.pop("cipher_alg"),
        integrity_alg=values.pop("integrity_alg"),
    )
    return ctx, {name: bytes.fromhex(v) for name, v in values.items()}
