from __future__ import annotations

import pytest

from conftest import make_config, two_network_config
from fivegsim.adversary import Sniffer
from fivegsim.errors import AuthFailure, NoActiveContext, SyncFailure
from fivegsim.keys import RootKey
from fivegsim.protocol.procedures import ContextMode, establish_contexts, handover, run_aka
from fivegsim.protocol.ue import Phase, Trigger
from helpers import announced, registered


def start(world):
    world.channel.schedule_trigger(world.ue.endpoint, Trigger("power_on"))


class TestRunAka:
    def test_success_mirrors_keys_and_confirms_home(self, benign_config):
        world = announced(benign_config)
        net = world.network_by_name("home")
        start(world)
        result = run_aka(world.ue, net, world.channel)
        assert result.mirrored
        assert result.confirmation.serving_network == net.serving_network
        assert result.confirmation.visited_endpoint == net.endpoint

    def test_network_without_root_key_fails(self, benign_config):
        world = announced(benign_config)
        world.homes[("001", "01")].subscribers[str(world.ue.supi)].root = RootKey(b"\x42" * 32)
        start(world)
        with pytest.raises(AuthFailure):
            run_aka(world.ue, world.network_by_name("home"), world.channel)
        assert world.homes[("001", "01")].ledger == []

    def test_counter_skew_recovers_by_resync(self, benign_config):
        world = announced(benign_config)
        world.ue.last_run_counter = 5
        start(world)
        result = run_aka(world.ue, world.network_by_name("home"), world.channel)
        assert result.resyncs == 1 and result.run_counter == 6 and result.mirrored

    def test_counter_skew_without_resync_budget(self, benign_config):
        world = announced(benign_config)
        world.ue.last_run_counter = 5
        world.network_by_name("home").max_resync = 0
        start(world)
        with pytest.raises(SyncFailure):
            run_aka(world.ue, world.network_by_name("home"), world.channel)

    def test_reauthentication_rekeys(self, benign_config):
        world = registered(benign_config)
        net = world.network_by_name("home")
        old = world.ue.session.hierarchy
        world.channel.schedule_trigger(net.endpoint, Trigger("reauthenticate", {"ue": world.ue.endpoint}))
        result = run_aka(world.ue, net, world.channel)
        assert result.mirrored and result.ue_hierarchy != old
        assert world.ue.phase is Phase.REGISTERED
        assert len(world.homes[("001", "01")].ledger) == 2


class TestContexts:
    def test_distinct_serving_networks_share_no_keys(self):
        world = announced(two_network_config(same_plmn=False))
        nets = [world.network_by_name("home"), world.network_by_name("second")]
        layout = establish_contexts(world.ue, nets, ContextMode.DISTINCT_SN, world.channel)
        a, b = (world.ue.sessions[n.endpoint].hierarchy for n in nets)
        assert not set(a.key_fields().values()) & set(b.key_fields().values())
        k1, k2 = layout.key_sets()
        assert not set(k1) & set(k2)
        for conn in layout.connections:
            assert conn.ue.keys() == conn.network_side.keys()

    def test_same_plmn_dual_shares_nas_keys_not_counters(self):
        world = announced(make_config())
        net = world.network_by_name("home")
        layout = establish_contexts(world.ue, [net], "same-plmn-dual", world.channel)
        three, non3 = layout.connections
        assert three.ue.keys() == non3.ue.keys()
        assert three.ue is not non3.ue
        from fivegsim.crypto_suite import protect

        before = (three.ue.tx_count, three.ue.rx_highest)
        protect(b"x", non3.ue)
        assert (three.ue.tx_count, three.ue.rx_highest) == before
        assert non3.ue.tx_count == 1

    def test_single_network_one_context(self, benign_config):
        world = announced(benign_config)
        layout = establish_contexts(world.ue, [world.network_by_name("home")], None, world.channel)
        assert len(layout.connections) == 1

    def test_distinct_sn_needs_different_plmns(self):
        world = announced(two_network_config(same_plmn=True))
        with pytest.raises(ValueError):
            establish_contexts(world.ue, list(world.networks.values()), ContextMode.DISTINCT_SN, world.channel)


class TestHandover:
    def _world(self, sniff=False):
        world = registered(two_network_config(same_plmn=True))
        sniffer = None
        if sniff:
            sniffer = Sniffer()
            world.channel.add_hook(sniffer)
        return world, sniffer

    def test_secure_handover_refreshes_as_keys(self):
        world, _ = self._world()
        src, dst = world.network_by_name("home"), world.network_by_name("second")
        out = handover(world.ue, src, dst, "secure", world.channel)
        assert out.keys_refreshed and not out.exposed_on_channel
        assert world.ue.session.contexts["as"].keys() == out.target_as_keys

    def test_insecure_handover_exposes_key_material(self):
        world, sniffer = self._world(sniff=True)
        src, dst = world.network_by_name("home"), world.network_by_name("second")
        out = handover(world.ue, src, dst, "insecure", world.channel)
        assert out.exposed_on_channel and not out.keys_refreshed
        leaked = [o for o in sniffer.observations if o["kind"] == "HandoverTransfer"]
        assert leaked and '"k_gnb"' in leaked[0]["visible"] and '"enc_key"' in leaked[0]["visible"]

    def test_signalling_continues_after_handover(self):
        world, _ = self._world()
        src, dst = world.network_by_name("home"), world.network_by_name("second")
        handover(world.ue, src, dst, "secure", world.channel)
        world.channel.schedule_trigger(world.ue.endpoint, Trigger("pdu_session"))
        world.channel.run()
        assert world.ue.session.drb is not None

    def test_without_context(self):
        world = announced(two_network_config(same_plmn=True))
        with pytest.raises(NoActiveContext):
            handover(world.ue, world.network_by_name("home"), world.network_by_name("second"), "secure",
                     world.channel)
