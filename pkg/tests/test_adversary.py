from __future__ import annotations

import copy

import pytest

from conftest import make_config
from fivegsim.adversary import (
    AttackerCapabilities,
    AttackKind,
    AttackOutcome,
    Mutator,
    RogueMode,
    Verdict,
    attacker_reached_context,
    execute_attack,
    sniff,
    stage_attack,
)
from fivegsim.errors import UnsupportedAttackForConfig
from fivegsim.protocol.ue import Phase
from fivegsim.simcore.scenario import parse_scenario
from helpers import registered


def verdict(kind, **knobs):
    return execute_attack(kind, make_config(**knobs)).verdict


class TestCatalog:
    @pytest.mark.parametrize("scheme,expected", [("null", Verdict.SUCCESS), ("probabilistic-pk", Verdict.FAIL)])
    def test_passive_catch(self, scheme, expected):
        out = execute_attack("supi_catch_passive", make_config(suci_scheme=scheme))
        assert out.verdict is expected
        if expected is Verdict.SUCCESS:
            assert out.evidence[0]["kind"] == "RegistrationRequest"

    def test_hn_configured_null_scheme_leaks_even_with_key(self):
        assert verdict("supi_catch_passive", hn_null_scheme_configured=True) is Verdict.SUCCESS

    @pytest.mark.parametrize("ca,expected", [(False, Verdict.SUCCESS), (True, Verdict.FAIL)])
    def test_dos_reject(self, ca, expected):
        run = stage_attack("preauth_dos_reject", make_config(ca_mode=ca))
        from fivegsim.adversary import outcome_of

        assert outcome_of(run).verdict is expected
        assert (run.world.ue.phase is Phase.DENIED) == (expected is Verdict.SUCCESS)

    @pytest.mark.parametrize("scheme,ca,expected", [
        ("null", False, Verdict.SUCCESS),
        ("probabilistic-pk", False, Verdict.FAIL),
        ("null", True, Verdict.FAIL),
    ])
    def test_silent_downgrade(self, scheme, ca, expected):
        run = stage_attack("silent_downgrade", make_config(suci_scheme=scheme, ca_mode=ca))
        from fivegsim.adversary import outcome_of

        assert outcome_of(run).verdict is expected
        if expected is Verdict.SUCCESS:
            assert run.world.ue.phase is Phase.LEGACY
            assert run.world.ue.legacy_network == "legacy:001-01"

    @pytest.mark.parametrize("allowed", [False, True])
    @pytest.mark.parametrize("scheme", ["null", "probabilistic-pk"])
    def test_emergency_catch(self, allowed, scheme):
        expected = Verdict.SUCCESS if allowed else Verdict.FAIL
        assert verdict("emergency_supi_catch", unauthenticated_emergency_allowed=allowed,
                       suci_scheme=scheme) is expected

    @pytest.mark.parametrize("echo,expected", [(False, Verdict.SUCCESS), (True, Verdict.FAIL)])
    def test_bidding_down(self, echo, expected):
        out = execute_attack("bidding_down", make_config(capability_echo=echo, null_algorithms_allowed=True))
        assert out.verdict is expected

    def test_bidding_down_fails_when_null_forbidden(self):
        assert verdict("bidding_down", capability_echo=False, null_algorithms_allowed=False) is Verdict.FAIL

    @pytest.mark.parametrize("scheme,ca,expected", [
        ("null", False, Verdict.SUCCESS),
        ("probabilistic-pk", False, Verdict.FAIL),
        ("null", True, Verdict.FAIL),
    ])
    def test_active_catch_via_identity_request(self, scheme, ca, expected):
        assert verdict("supi_catch_active", suci_scheme=scheme, ca_mode=ca) is expected

    def test_missing_capability(self):
        raw = copy.deepcopy(make_config().raw)
        raw["attacker"]["can_mutate_in_transit"] = False
        with pytest.raises(UnsupportedAttackForConfig):
            execute_attack("bidding_down", parse_scenario(raw))

    def test_success_requires_evidence(self):
        with pytest.raises(ValueError):
            AttackOutcome(AttackKind.BIDDING_DOWN, "x", Verdict.SUCCESS, [])

    def test_capabilities_never_include_keys(self):
        assert AttackerCapabilities(True, True, True, True, 9).knows_root_keys is False

    def test_row_refs(self):
        out = execute_attack("silent_downgrade", make_config(suci_scheme="null", ca_mode=False))
        assert out.row == "T3R3" and out.to_fields()["row"] == "T3R3"


class TestRogueAka:
    @pytest.mark.parametrize("ca", [False, True])
    def test_forged_aka_never_reaches_context(self, ca):
        run = stage_attack("preauth_dos_reject", make_config(ca_mode=ca), rogue_mode=RogueMode.FORGED_AKA)
        assert not attacker_reached_context(run)
        assert run.world.ue.phase is (Phase.REGISTERED if ca else Phase.ABORTED)


class TestSniff:
    def test_clear_and_protected_visibility(self):
        world = registered(make_config(suci_scheme="null", ca_mode=False))
        seen = sniff(world.channel)
        rr = next(o for o in seen if o["kind"] == "RegistrationRequest")
        assert rr["clear"] and "0000000001" in rr["visible"] and "NEA2" in rr["visible"]
        smc = next(o for o in seen if o["kind"] == "SecurityModeCommand")
        assert not smc["clear"]
        assert "cipher_alg" in smc["visible"] and "payload" not in smc["visible"]

    def test_nea0_body_readable(self):
        config = make_config(null_algorithms_allowed=True, capability_echo=False)
        run = stage_attack("bidding_down", config)
        seen = sniff(run.world.channel)
        accept = next(o for o in seen if o["kind"] == "RegistrationAccept")
        assert '"payload"' in accept["visible"] and "guti" in accept["visible"]


class TestMutator:
    def test_protected_bit_flip_discarded(self, benign_config):
        from fivegsim.adversary import stage_benign

        from fivegsim.simcore.channel import Channel

        ch = Channel()
        ch.add_hook(Mutator(lambda caps: caps, flip_protected=True))
        run = stage_benign(benign_config, ch)
        ue = run.world.ue
        assert ue.phase is not Phase.REGISTERED
        verdicts = [r["verdict"] for r in run.world.channel.transcript.records
                    if r["event"] == "deliver" and r["kind"] == "SecurityModeCommand"]
        assert verdicts and all(v != "accepted" for v in verdicts)
