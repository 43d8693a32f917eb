from __future__ import annotations

import pytest

from conftest import make_config
from fivegsim.crypto_suite import AlgorithmId, SecurityContext
from fivegsim.keys import RootKey
from fivegsim.protocol.messages import MessageKind, ProtocolMessage, seal
from fivegsim.protocol.network import NetPhase, network_step
from fivegsim.protocol.pki import Verdict, verify_preauth_signature
from fivegsim.protocol.ue import Phase, Trigger, ue_step
from fivegsim.protocol.user_plane import Requirement, UpSecurityPolicy, apply_up_policy
from helpers import announced, registered

PRE_CONTEXT_KINDS = {"RegistrationRequest", "IdentityRequest", "IdentityResponse", "AuthChallenge",
                     "AuthResponse", "AuthResult", "RegistrationReject", "Broadcast"}
POST_CONTEXT_KINDS = {"SecurityModeCommand", "SecurityModeComplete", "RegistrationAccept",
                      "PduSessionRequest", "PduSessionAccept", "UserData"}


class TestUeStep:
    def test_power_on_sends_clear_registration_with_suci(self, benign_config):
        world = announced(benign_config)
        ue = world.ue
        _, out = ue_step(ue, Trigger("power_on"))
        assert len(out) == 1
        msg = out[0]
        assert msg.kind is MessageKind.REGISTRATION_REQUEST and msg.clear
        assert "suci" in msg.body and "caps" in msg.body
        assert ue.phase is Phase.REGISTERING

    def test_unauthenticated_reject_denies_in_baseline(self):
        world = announced(make_config(ca_mode=False))
        ue = world.ue
        ue_step(ue, Trigger("power_on"))
        reject = ProtocolMessage(MessageKind.REGISTRATION_REJECT, "gnb:home", ue.endpoint, ("001", "01"),
                                 {"cause": "permanent"})
        ue_step(ue, reject)
        assert ue.phase is Phase.DENIED
        assert ("001", "01") in ue.barred_plmns

    def test_unsigned_reject_dropped_in_ca_mode(self):
        world = announced(make_config(ca_mode=True))
        ue = world.ue
        ue_step(ue, Trigger("power_on"))
        before = ue.digest()
        reject = ProtocolMessage(MessageKind.REGISTRATION_REJECT, "gnb:home", ue.endpoint, ("001", "01"),
                                 {"cause": "permanent"})
        ue_step(ue, reject)
        assert ue.phase is Phase.REGISTERING
        assert ue.digest() == before
        assert ue.last_verdict.startswith("dropped:signature invalid")

    def test_challenge_answered_from_root_key(self, benign_config):
        world = registered(benign_config)
        records = world.channel.transcript.records
        kinds = [r["kind"] for r in records if r["event"] == "deliver"]
        assert kinds.index("AuthChallenge") < kinds.index("AuthResponse")
        assert world.ue.phase is Phase.REGISTERED


class TestNetworkStep:
    def test_probabilistic_suci_gets_challenge(self, benign_config):
        world = announced(benign_config)
        net = world.network_by_name("home")
        _, out = ue_step(world.ue, Trigger("power_on"))
        _, reply = network_step(net, out[0])
        assert [m.kind for m in reply] == [MessageKind.AUTH_CHALLENGE]
        assert net.sessions[world.ue.endpoint].supi == world.ue.supi

    def test_unknown_guti_triggers_identity_request(self, benign_config):
        world = registered(benign_config)
        net = world.network_by_name("home")
        net.gutis.clear()
        ch = world.channel
        ch.schedule_trigger(world.ue.endpoint, Trigger("power_off"))
        ch.run()
        for n in world.networks.values():
            ch.schedule_trigger(n.endpoint, Trigger("broadcast"))
        ch.schedule_trigger(world.ue.endpoint, Trigger("power_on"), ch.tick + 3)
        mark = len(ch.transcript)
        ch.run()
        kinds = [r["kind"] for r in ch.transcript.records[mark:] if r["event"] == "deliver"]
        assert "IdentityRequest" in kinds and "IdentityResponse" in kinds
        assert world.ue.phase is Phase.REGISTERED

    def test_guti_registration_skips_identity(self, benign_config):
        world = registered(benign_config)
        ch = world.channel
        ch.schedule_trigger(world.ue.endpoint, Trigger("power_off"))
        ch.run()
        for n in world.networks.values():
            ch.schedule_trigger(n.endpoint, Trigger("broadcast"))
        old = world.ue.gutis[("001", "01")]
        ch.schedule_trigger(world.ue.endpoint, Trigger("power_on"), ch.tick + 3)
        mark = len(ch.transcript)
        ch.run()
        kinds = [r["kind"] for r in ch.transcript.records[mark:] if r["event"] == "deliver"]
        assert "IdentityRequest" not in kinds
        new = world.ue.gutis[("001", "01")]
        assert new.epoch > old.epoch and new.temp_id != old.temp_id

    def test_unauthenticated_emergency_session(self):
        world = announced(make_config(unauthenticated_emergency_allowed=True))
        world.channel.schedule_trigger(world.ue.endpoint, Trigger("emergency_call"))
        world.channel.run()
        net = world.network_by_name("home")
        assert world.ue.phase is Phase.EMERGENCY
        assert net.sessions[world.ue.endpoint].phase is NetPhase.EMERGENCY
        assert not world.ue.active_contexts()

    def test_emergency_not_allowed_falls_back_to_registration(self):
        world = announced(make_config(unauthenticated_emergency_allowed=False))
        world.channel.schedule_trigger(world.ue.endpoint, Trigger("emergency_call"))
        world.channel.run()
        assert world.ue.phase is Phase.REGISTERED
        sent = [r["kind"] for r in world.channel.transcript.records if r["event"] == "send"]
        assert "EmergencyRequest" not in sent

    def test_tau_after_registration(self, benign_config):
        world = registered(benign_config)
        world.channel.schedule_trigger(world.ue.endpoint, Trigger("tau"))
        world.channel.run()
        assert world.ue.phase is Phase.REGISTERED
        assert world.ue.gutis[("001", "01")].epoch == 1


class TestTranscriptInvariants:
    @pytest.mark.parametrize("knobs", [
        {},
        {"suci_scheme": "null", "ca_mode": False},
        {"null_algorithms_allowed": True, "capability_echo": False},
    ])
    def test_pre_context_clear_post_context_protected(self, knobs):
        world = registered(make_config(**knobs))
        world.channel.schedule_trigger(world.ue.endpoint, Trigger("pdu_session"))
        world.channel.run()
        for r in world.channel.transcript.records:
            if r["event"] != "send":
                continue
            if r["kind"] in PRE_CONTEXT_KINDS:
                assert r["protection"] == "CLEAR", r
            if r["kind"] in POST_CONTEXT_KINDS:
                assert r["protection"] == "protected", r

    def test_home_ledger_one_entry_per_success(self, benign_config):
        world = registered(benign_config)
        home = world.homes[("001", "01")]
        assert len(home.ledger) == 1
        entry = home.ledger[0]
        assert entry.serving_network == world.network_by_name("home").serving_network
        assert entry.supi == str(world.ue.supi)

    def test_enforcement_hook_recorded_not_enforced(self, benign_config):
        world = announced(benign_config)
        home = world.homes[("001", "01")]
        home.enforcement_hook = lambda entry: "deny"
        world.channel.schedule_trigger(world.ue.endpoint, Trigger("power_on"))
        world.channel.run()
        assert home.hook_calls and home.hook_calls[0]["decision"] == "'deny'"
        assert world.ue.phase is Phase.REGISTERED

    def test_failed_integrity_leaves_state_unchanged(self, benign_config):
        world = registered(benign_config)
        ue, net = world.ue, world.network_by_name("home")
        forged_ctx = SecurityContext("nas", "3gpp", bytes(16), bytes(16), AlgorithmId.NEA2, AlgorithmId.NIA2, 1)
        msg = seal(MessageKind.REGISTRATION_ACCEPT, {"guti": {}}, forged_ctx, net.endpoint, ue.endpoint, net.plmn)
        before = ue.digest()
        ue_step(ue, msg)
        assert ue.digest() == before and ue.last_verdict.startswith("dropped:")

        forged_ctx.direction = 0
        up = seal(MessageKind.PDU_SESSION_REQUEST, {}, forged_ctx, ue.endpoint, net.endpoint, net.plmn)
        before = net.digest()
        network_step(net, up)
        assert net.digest() == before and net.last_verdict.startswith("dropped:")

    def test_network_without_root_key_never_activates(self, benign_config):
        world = announced(benign_config)
        home = world.homes[("001", "01")]
        home.subscribers[str(world.ue.supi)].root = RootKey(bytes(32))
        world.channel.schedule_trigger(world.ue.endpoint, Trigger("power_on"))
        world.channel.run()
        assert world.ue.phase is Phase.ABORTED
        assert not world.ue.active_contexts()
        assert not world.network_by_name("home").active_contexts()
        assert home.ledger == []


class TestPki:
    def test_legitimate_message_verifies(self, benign_config):
        world = announced(benign_config)
        net = world.network_by_name("home")
        msg = net.signer.sign(ProtocolMessage(MessageKind.BROADCAST, net.endpoint, "*", net.plmn, {"priority": 1}))
        assert verify_preauth_signature(msg, world.ue.trust_store) is Verdict.VERIFIED

    def test_tampered_or_relabelled_message_invalid(self, benign_config):
        world = announced(benign_config)
        net = world.network_by_name("home")
        msg = net.signer.sign(ProtocolMessage(MessageKind.REGISTRATION_REJECT, net.endpoint, "ue:0", net.plmn,
                                              {"cause": "temporary"}))
        assert verify_preauth_signature(msg.copy(body={"cause": "permanent"}), world.ue.trust_store) is Verdict.INVALID
        assert verify_preauth_signature(msg.copy(src="rogue:0"), world.ue.trust_store) is Verdict.INVALID
        assert verify_preauth_signature(msg.copy(plmn=("002", "02")), world.ue.trust_store) is Verdict.INVALID

    def test_rogue_reject_invalid(self, benign_config):
        world = announced(benign_config)
        rogue = ProtocolMessage(MessageKind.REGISTRATION_REJECT, "rogue:0", "ue:0", ("001", "01"), {"cause": "permanent"})
        assert verify_preauth_signature(rogue, world.ue.trust_store) is Verdict.INVALID

    def test_ca_mode_off_unverifiable(self, benign_config):
        msg = ProtocolMessage(MessageKind.BROADCAST, "gnb:x", "*", ("001", "01"), {})
        assert verify_preauth_signature(msg, None, ca_mode=False) is Verdict.UNVERIFIABLE


class TestUserPlane:
    def test_home_policy_protects(self):
        drb = apply_up_policy(UpSecurityPolicy(), None, audit := [])
        assert drb.integrity and drb.ciphering and audit == []

    def test_local_override_recorded(self):
        audit: list[dict] = []
        drb = apply_up_policy(UpSecurityPolicy(), "not-needed", audit, session="ue:0")
        assert drb.integrity and not drb.ciphering
        assert drb.origin == "local-smf-override"
        assert audit == [{"event": "local-smf-override", "session": "ue:0", "field": "confidentiality",
                          "home": "required", "local": "not-needed"}]

    def test_integrity_not_needed_accepts_tampered_data(self):
        config = make_config(up_policy={"integrity": "not-needed", "confidentiality": "required"})
        world = registered(config)
        ue, net = world.ue, world.network_by_name("home")
        world.channel.schedule_trigger(ue.endpoint, Trigger("pdu_session"))
        world.channel.run()
        from fivegsim.crypto_suite import protect, unprotect

        tx = net.sessions[ue.endpoint].contexts["drb"]
        rx = ue.session.contexts["drb"]
        assert tx.integrity_alg is AlgorithmId.NIA0
        env = protect(b"transfer 10 EUR", tx)
        tampered = type(env)(env.cipher_alg, env.integrity_alg, env.replay_counter, env.direction, env.mac,
                             bytes([env.payload[0] ^ 0x01]) + env.payload[1:])
        out = unprotect(tampered, rx)
        assert out != b"transfer 10 EUR" and len(out) == len(b"transfer 10 EUR")

    def test_user_data_flows_end_to_end(self, benign_config):
        world = registered(benign_config)
        ue, net = world.ue, world.network_by_name("home")
        ch = world.channel
        ch.schedule_trigger(ue.endpoint, Trigger("pdu_session"))
        ch.run()
        ch.schedule_trigger(ue.endpoint, Trigger("send_data", {"payload": b"up"}))
        ch.schedule_trigger(net.endpoint, Trigger("send_data", {"ue": ue.endpoint, "payload": b"down"}))
        ch.run()
        assert net.sessions[ue.endpoint].received == [b"up"]
        assert ue.received == [b"down"]

    def test_override_knob_reaches_audit(self):
        world = registered(make_config(local_smf_override="not-needed"))
        world.channel.schedule_trigger(world.ue.endpoint, Trigger("pdu_session"))
        world.channel.run()
        net = world.network_by_name("home")
        assert net.audit and net.audit[0]["local"] == "not-needed"
        assert world.ue.session.drb == {"integrity": True, "ciphering": False}
        assert Requirement("not-needed") is Requirement.NOT_NEEDED
