"""Multi-step procedures driven over a channel.

These wrap the per-message state machines: they schedule the triggers
that start a procedure, run the channel until it goes quiet, and read the
outcome back from both sides.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import TYPE_CHECKING

from ..crypto_suite import SecurityContext
from ..errors import AuthFailure, NoActiveContext, SyncFailure
from ..keys import KeyHierarchy
from .network import HomeControlEntry, NetPhase, NetworkState
from .ue import Phase, Trigger, UeState

if TYPE_CHECKING:
    from ..simcore.channel import Channel

NON_3GPP = "non-3gpp"


@dataclass(frozen=True)
class AkaResult:
    ue_hierarchy: KeyHierarchy
    network_hierarchy: KeyHierarchy
    run_counter: int
    resyncs: int
    confirmation: HomeControlEntry

    @property
    def mirrored(self) -> bool:
        return self.ue_hierarchy == self.network_hierarchy


def run_aka(ue: UeState, network: NetworkState, channel: Channel) -> AkaResult:
    """Run the channel until the registration in flight settles, then read the AKA outcome.

    A run-counter mismatch is recovered by re-synchronisation inside the
    state machines; ``SyncFailure`` is raised only when that recovery is
    exhausted or its AUTS proof does not check out.
    """
    home_plmn = ue.supi.plmn
    home = network.homes.get(home_plmn)
    ledger_before = len(home.ledger) if home else 0
    channel.run()

    net_session = network.sessions.get(ue.endpoint)
    ue_session = ue.sessions.get(network.endpoint)
    if net_session is None or ue_session is None:
        raise AuthFailure(f"no authentication run between {ue.endpoint} and {network.endpoint}")
    if net_session.failure == "sync":
        raise SyncFailure(f"re-synchronisation failed after {net_session.resyncs} attempt(s)")
    if net_session.failure or ue_session.phase is Phase.ABORTED:
        raise AuthFailure(f"authentication failed ({net_session.failure or ue.last_verdict})")
    if net_session.hierarchy is None or ue_session.hierarchy is None:
        raise AuthFailure(f"authentication incomplete (network {net_session.phase.value}, ue {ue_session.phase.value})")
    assert home is not None
    new_entries = home.ledger[ledger_before:]
    if len(new_entries) != 1:
        raise AuthFailure(f"expected one home-control confirmation, found {len(new_entries)}")
    return AkaResult(ue_session.hierarchy, net_session.hierarchy, net_session.run_counter,
                     net_session.resyncs, new_entries[0])


class ContextMode(str, Enum):
    DISTINCT_SN = "distinct-sn"
    SAME_PLMN_DUAL = "same-plmn-dual"


@dataclass(frozen=True)
class ConnectionContexts:
    """The UE-side and network-side context for one connection."""

    network: str
    connection_id: str
    ue: SecurityContext
    network_side: SecurityContext


@dataclass(frozen=True)
class ContextLayout:
    mode: ContextMode | None
    connections: tuple[ConnectionContexts, ...]

    def key_sets(self) -> list[tuple[bytes, bytes]]:
        return [c.ue.keys() for c in self.connections]


def _connection(ue: UeState, net: NetworkState, conn: str) -> ConnectionContexts:
    return ConnectionContexts(net.endpoint, conn, ue.sessions[net.endpoint].contexts[conn],
                              net.sessions[ue.endpoint].contexts[conn])


def _register(ue: UeState, net: NetworkState, channel: Channel) -> None:
    channel.schedule_trigger(ue.endpoint, Trigger("register", {"cell": net.endpoint}))
    run_aka(ue, net, channel)
    if ue.sessions[net.endpoint].phase is not Phase.REGISTERED:
        raise AuthFailure(f"registration with {net.endpoint} did not complete")


def _add_non_3gpp(ue: UeState, net: NetworkState) -> None:
    # Second access over the same PLMN: the NAS key set is reused as is and
    # only the per-connection counters start afresh.
    for side in (ue.sessions[net.endpoint], net.sessions[ue.endpoint]):
        base = side.contexts["3gpp"]
        side.contexts[NON_3GPP] = replace(base, connection_id=NON_3GPP, tx_count=0, rx_highest=-1)


def establish_contexts(ue: UeState, networks: list[NetworkState], mode: ContextMode | str | None,
                       channel: Channel) -> ContextLayout:
    """Register ``ue`` as ``mode`` requires and report the resulting context layout.

    The UE must already know the cells (their broadcasts delivered).
    """
    mode = ContextMode(mode) if mode is not None else None
    if mode is ContextMode.DISTINCT_SN:
        if len(networks) != 2 or networks[0].plmn == networks[1].plmn:
            raise ValueError("distinct-sn needs two networks with different PLMNs")
        for net in networks:
            _register(ue, net, channel)
        return ContextLayout(mode, tuple(_connection(ue, n, "3gpp") for n in networks))
    if len(networks) != 1:
        raise ValueError(f"{mode.value if mode else 'single'} layout uses exactly one network")
    net = networks[0]
    _register(ue, net, channel)
    if mode is ContextMode.SAME_PLMN_DUAL:
        _add_non_3gpp(ue, net)
        return ContextLayout(mode, (_connection(ue, net, "3gpp"), _connection(ue, net, NON_3GPP)))
    return ContextLayout(None, (_connection(ue, net, "3gpp"),))


@dataclass(frozen=True)
class HandoverOutcome:
    secure: bool
    source_as_keys: tuple[bytes, bytes]
    target_as_keys: tuple[bytes, bytes]
    exposed_on_channel: bool

    @property
    def keys_refreshed(self) -> bool:
        return self.source_as_keys != self.target_as_keys


def handover(ue: UeState, source: NetworkState, target: NetworkState, policy: str,
             channel: Channel) -> HandoverOutcome:
    session = source.sessions.get(ue.endpoint)
    if session is None or session.phase is not NetPhase.REGISTERED or "as" not in session.contexts:
        raise NoActiveContext(f"{ue.endpoint} has no active context at {source.endpoint}")
    if policy not in ("secure", "insecure"):
        raise ValueError(f"handover policy must be 'secure' or 'insecure', got {policy!r}")
    source.handover_secure = policy == "secure"
    before = session.contexts["as"].keys()
    mark = len(channel.transcript)
    channel.schedule_trigger(source.endpoint, Trigger("handover", {"ue": ue.endpoint, "target": target.endpoint}))
    channel.run()
    moved = target.sessions.get(ue.endpoint)
    if moved is None or ue.camped != target.endpoint:
        raise NoActiveContext(f"handover of {ue.endpoint} to {target.endpoint} did not complete")
    exposed = any(
        r["event"] == "send" and r["kind"] == "HandoverTransfer" and r["protection"] == "CLEAR"
        for r in channel.transcript.records[mark:]
    )
    return HandoverOutcome(policy == "secure", before, moved.contexts["as"].keys(), exposed)
