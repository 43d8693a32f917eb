"""Scenario files, validation and world construction.

A scenario file is YAML with an explicit ``version: fiveg-sim/1`` field.
Every knob must be present; nothing is defaulted when reading a file.
"""

from __future__ import annotations

import copy
import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..crypto_suite import OperatorPolicy, SecurityCapabilities
from ..errors import InvalidConfig
from ..identity import GutiPolicy, HnKeyMaterial, Supi, SuciScheme, generate_hn_keys
from ..keys import RootKey
from ..protocol.network import HomeRecord, NetworkState, SubscriberRecord, network_step
from ..protocol.pki import CertificateAuthority, MessageSigner, TrustStore
from ..protocol.ue import UeState, ue_step
from ..protocol.user_plane import Requirement, UpSecurityPolicy
from .channel import Channel, Node

VERSION = "fiveg-sim/1"

KNOBS = (
    "suci_scheme",
    "hn_null_scheme_configured",
    "null_algorithms_allowed",
    "unauthenticated_emergency_allowed",
    "handover_security",
    "up_policy",
    "local_smf_override",
    "ca_mode",
    "guti_policy",
    "capability_echo",
)
ATTACKER_FIELDS = ("can_sniff", "can_inject_preauth", "can_broadcast", "can_mutate_in_transit", "rogue_priority")
BOOL_KNOBS = ("hn_null_scheme_configured", "null_algorithms_allowed", "unauthenticated_emergency_allowed",
              "ca_mode", "capability_echo")


def parse_plmn(text: str) -> tuple[str, str]:
    mcc, _, mnc = str(text).partition("-")
    if not (mcc.isdigit() and len(mcc) == 3 and mnc.isdigit() and len(mnc) in (2, 3)):
        raise ValueError(f"PLMN must look like MCC-MNC, got {text!r}")
    return mcc, mnc


@dataclass
class ScenarioConfig:
    """Validated scenario. ``raw`` keeps the normalised tree for re-serialisation."""

    seed: int
    subscribers: list[dict]
    networks: list[dict]
    knobs: dict[str, Any]
    attacker: dict[str, Any]
    attacks: list[str]
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def fingerprint(self) -> str:
        """Stable hash of the knob settings."""
        text = json.dumps(self.knobs, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> ScenarioConfig:
        raw = copy.deepcopy(self.raw)
        raw["seed"] = seed
        return parse_scenario(raw)

    def with_knobs(self, **knobs: Any) -> ScenarioConfig:
        raw = copy.deepcopy(self.raw)
        raw["knobs"].update(knobs)
        return parse_scenario(raw)

    def with_attacks(self, attacks: list[str]) -> ScenarioConfig:
        raw = copy.deepcopy(self.raw)
        raw["attacks"] = list(attacks)
        return parse_scenario(raw)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=False)


def _normalise_scheme(value: Any) -> Any:
    return "null" if value is None else value


def parse_scenario(data: Any) -> ScenarioConfig:
    """Validate a scenario tree, collecting one diagnostic per bad field."""
    problems: list[tuple[str, str]] = []
    if not isinstance(data, dict):
        raise InvalidConfig([("<root>", "scenario must be a mapping")])

    def need(tree: dict, key: str, path: str) -> Any:
        if key not in tree:
            problems.append((f"{path}{key}", "missing required field"))
            return None
        return tree[key]

    if data.get("version") != VERSION:
        problems.append(("version", f"expected {VERSION!r}, got {data.get('version')!r}"))
    seed = need(data, "seed", "")
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool)):
        problems.append(("seed", "must be an integer"))

    subs = need(data, "subscribers", "")
    if subs is not None and (not isinstance(subs, list) or not subs):
        problems.append(("subscribers", "must be a non-empty list"))
        subs = None
    for i, sub in enumerate(subs or []):
        path = f"subscribers[{i}]."
        if not isinstance(sub, dict):
            problems.append((path[:-1], "must be a mapping"))
            continue
        supi = need(sub, "supi", path)
        if supi is not None:
            try:
                Supi.parse(str(supi))
            except ValueError as exc:
                problems.append((path + "supi", str(exc)))
        key = need(sub, "root_key", path)
        if key is not None:
            try:
                RootKey.from_hex(str(key))
            except ValueError as exc:
                problems.append((path + "root_key", str(exc)))
        for list_field in ("provisioned_networks", "allowed_networks"):
            value = need(sub, list_field, path)
            if value is None:
                continue
            if not isinstance(value, list):
                problems.append((path + list_field, "must be a list of MCC-MNC strings"))
                continue
            for j, p in enumerate(value):
                try:
                    parse_plmn(p)
                except ValueError as exc:
                    problems.append((f"{path}{list_field}[{j}]", str(exc)))

    nets = need(data, "networks", "")
    if nets is not None and (not isinstance(nets, list) or not nets):
        problems.append(("networks", "must be a non-empty list"))
        nets = None
    names = set()
    for i, net in enumerate(nets or []):
        path = f"networks[{i}]."
        if not isinstance(net, dict):
            problems.append((path[:-1], "must be a mapping"))
            continue
        name = need(net, "name", path)
        if name is not None:
            if name in names:
                problems.append((path + "name", f"duplicate network name {name!r}"))
            names.add(name)
        plmn = need(net, "plmn", path)
        if plmn is not None:
            try:
                parse_plmn(plmn)
            except ValueError as exc:
                problems.append((path + "plmn", str(exc)))
        prio = need(net, "priority", path)
        if prio is not None and (not isinstance(prio, int) or isinstance(prio, bool)):
            problems.append((path + "priority", "must be an integer"))

    knobs = need(data, "knobs", "")
    if knobs is not None and not isinstance(knobs, dict):
        problems.append(("knobs", "must be a mapping"))
        knobs = None
    norm_knobs: dict[str, Any] = {}
    if knobs is not None:
        for k in KNOBS:
            if k not in knobs:
                problems.append((f"knobs.{k}", "missing required knob"))
        for k in knobs:
            if k not in KNOBS:
                problems.append((f"knobs.{k}", "unknown knob"))
        norm_knobs = {k: knobs[k] for k in KNOBS if k in knobs}
        if "suci_scheme" in norm_knobs:
            norm_knobs["suci_scheme"] = _normalise_scheme(norm_knobs["suci_scheme"])
            if norm_knobs["suci_scheme"] not in {s.value for s in SuciScheme}:
                problems.append(("knobs.suci_scheme", "must be 'null' or 'probabilistic-pk'"))
        for k in BOOL_KNOBS:
            if k in norm_knobs and not isinstance(norm_knobs[k], bool):
                problems.append((f"knobs.{k}", "must be true or false"))
        if "handover_security" in norm_knobs and norm_knobs["handover_security"] not in ("secure", "insecure"):
            problems.append(("knobs.handover_security", "must be 'secure' or 'insecure'"))
        if "up_policy" in norm_knobs:
            up = norm_knobs["up_policy"]
            try:
                UpSecurityPolicy.parse(up)
            except (KeyError, TypeError, ValueError):
                problems.append(("knobs.up_policy", "needs integrity and confidentiality in {required, preferred, not-needed}"))
        if "local_smf_override" in norm_knobs:
            v = norm_knobs["local_smf_override"]
            if v is None:
                norm_knobs["local_smf_override"] = v = "none"
            if v != "none" and v not in {r.value for r in Requirement}:
                problems.append(("knobs.local_smf_override", "must be 'none' or a confidentiality requirement"))
        if "guti_policy" in norm_knobs:
            try:
                GutiPolicy.parse(str(norm_knobs["guti_policy"]))
            except ValueError as exc:
                problems.append(("knobs.guti_policy", str(exc)))

    attacker = need(data, "attacker", "")
    if attacker is not None and not isinstance(attacker, dict):
        problems.append(("attacker", "must be a mapping"))
        attacker = None
    if attacker is not None:
        for k in ATTACKER_FIELDS:
            if k not in attacker:
                problems.append((f"attacker.{k}", "missing required field"))
            elif k == "rogue_priority":
                if not isinstance(attacker[k], int) or isinstance(attacker[k], bool):
                    problems.append((f"attacker.{k}", "must be an integer"))
            elif not isinstance(attacker[k], bool):
                problems.append((f"attacker.{k}", "must be true or false"))
        if attacker.get("knows_root_keys"):
            problems.append(("attacker.knows_root_keys", "key-compromise attackers are not modelled"))

    attacks = need(data, "attacks", "")
    if attacks is not None:
        from ..adversary import AttackKind

        if not isinstance(attacks, list):
            problems.append(("attacks", "must be a list"))
            attacks = None
        else:
            valid = {a.value for a in AttackKind}
            for i, a in enumerate(attacks):
                if a not in valid:
                    problems.append((f"attacks[{i}]", f"unknown attack {a!r}"))

    if problems:
        raise InvalidConfig(problems)

    raw = copy.deepcopy(data)
    raw["knobs"] = dict(norm_knobs)
    return ScenarioConfig(
        seed=seed,
        subscribers=copy.deepcopy(subs),
        networks=copy.deepcopy(nets),
        knobs=norm_knobs,
        attacker=dict(attacker),
        attacks=list(attacks),
        raw=raw,
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InvalidConfig([("<file>", f"YAML parse error: {exc}")]) from exc
    return parse_scenario(data)


# -- world -----------------------------------------------------------------


def entity_rng(seed: int, name: str) -> random.Random:
    # String seeding goes through SHA-512 in CPython, independent of PYTHONHASHSEED.
    return random.Random(f"{seed}/{name}")


@dataclass
class World:
    config: ScenarioConfig
    channel: Channel
    ues: dict[str, UeState]
    networks: dict[str, NetworkState]
    homes: dict[tuple[str, str], HomeRecord]
    ca: CertificateAuthority | None = None

    @property
    def ue(self) -> UeState:
        return next(iter(self.ues.values()))

    def network_by_name(self, name: str) -> NetworkState:
        return self.networks[f"gnb:{name}"]

    def legit_networks(self) -> list[NetworkState]:
        return list(self.networks.values())

    def digests(self) -> dict[str, str]:
        out = {ep: ue.digest() for ep, ue in self.ues.items()}
        out.update({ep: n.digest() for ep, n in self.networks.items()})
        return out


def build_world(config: ScenarioConfig, channel: Channel | None = None) -> World:
    seed, knobs = config.seed, config.knobs
    channel = channel or Channel()
    null_ok = knobs["null_algorithms_allowed"]
    ca_mode = knobs["ca_mode"]

    homes: dict[tuple[str, str], HomeRecord] = {}
    for sub in config.subscribers:
        supi = Supi.parse(str(sub["supi"]))
        home = homes.get(supi.plmn)
        if home is None:
            home = HomeRecord(supi.plmn, generate_hn_keys(entity_rng(seed, f"hn:{supi.mcc}-{supi.mnc}")))
            homes[supi.plmn] = home
        home.subscribers[str(supi)] = SubscriberRecord(supi, RootKey.from_hex(str(sub["root_key"])))

    ca = CertificateAuthority.generate("global-5g-ca", entity_rng(seed, "ca")) if ca_mode else None
    trust = TrustStore()
    if ca is not None:
        trust.add(ca.root)

    backhaul: dict[tuple[str, str], bytes] = {}
    networks: dict[str, NetworkState] = {}
    override = knobs["local_smf_override"]
    for spec in config.networks:
        plmn = parse_plmn(spec["plmn"])
        endpoint = f"gnb:{spec['name']}"
        signer = MessageSigner.enroll(ca, endpoint, plmn, entity_rng(seed, f"signer:{endpoint}")) if ca else None
        if plmn not in backhaul:
            backhaul[plmn] = entity_rng(seed, f"backhaul:{plmn[0]}-{plmn[1]}").randbytes(32)
        net = NetworkState(
            endpoint=endpoint,
            plmn=plmn,
            homes=homes,
            rng=entity_rng(seed, endpoint),
            policy=OperatorPolicy(null_allowed=null_ok),
            guti_policy=GutiPolicy.parse(str(knobs["guti_policy"])),
            unauth_emergency_allowed=knobs["unauthenticated_emergency_allowed"],
            capability_echo=knobs["capability_echo"],
            priority=int(spec["priority"]),
            ca_mode=ca_mode,
            signer=signer,
            up_policy=UpSecurityPolicy.parse(knobs["up_policy"]),
            local_smf_override=None if override == "none" else override,
            handover_secure=knobs["handover_security"] == "secure",
            backhaul_key=backhaul[plmn],
        )
        networks[endpoint] = net
        channel.add(Node(net, network_step, "network"))

    ues: dict[str, UeState] = {}
    for index, sub in enumerate(config.subscribers):
        supi = Supi.parse(str(sub["supi"]))
        home = homes[supi.plmn]
        if knobs["suci_scheme"] == SuciScheme.PROBABILISTIC_PK.value:
            usim = HnKeyMaterial(public_key=home.hn_keys.public_key,
                                 provisioned_networks=frozenset(parse_plmn(p) for p in sub["provisioned_networks"]))
        else:
            usim = HnKeyMaterial()
        ue = UeState(
            supi=supi,
            root=RootKey.from_hex(str(sub["root_key"])),
            usim_keys=usim,
            caps=SecurityCapabilities.default(null_ok),
            rng=entity_rng(seed, f"ue:{supi}"),
            allowed_plmns=frozenset(parse_plmn(p) for p in sub["allowed_networks"]) | {supi.plmn},
            ca_mode=ca_mode,
            trust_store=trust,
            hn_null_scheme=knobs["hn_null_scheme_configured"],
            endpoint=f"ue:{index}",
        )
        ues[ue.endpoint] = ue
        channel.add(Node(ue, ue_step, "ue"))

    return World(config, channel, ues, networks, homes, ca)
