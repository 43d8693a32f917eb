from __future__ import annotations

import json

import pytest

from conftest import make_config
from fivegsim.adversary import AttackKind, outcome_of, stage_attack, stage_benign
from fivegsim.verify import check_evidence, replay_transcript

SUCCESS_CONFIGS = {
    "supi_catch_passive": {"suci_scheme": "null"},
    "supi_catch_active": {"suci_scheme": "null", "ca_mode": False},
    "preauth_dos_reject": {"ca_mode": False},
    "silent_downgrade": {"suci_scheme": "null", "ca_mode": False},
    "emergency_supi_catch": {"unauthenticated_emergency_allowed": True},
    "bidding_down": {"capability_echo": False, "null_algorithms_allowed": True},
}


@pytest.mark.parametrize("attack", [k.value for k in AttackKind])
class TestEvidence:
    def test_success_evidence_revalidates(self, attack):
        run = stage_attack(attack, make_config(**SUCCESS_CONFIGS[attack]))
        outcome = outcome_of(run)
        assert outcome.verdict.value == "SUCCESS"
        lines = run.world.channel.transcript.lines()
        assert check_evidence(outcome.to_fields(), lines, run.world.ue.supi.msin, run.world.ue.endpoint) == []

    def test_forged_evidence_rejected(self, attack):
        run = stage_attack(attack, make_config(**SUCCESS_CONFIGS[attack]))
        fields = outcome_of(run).to_fields()
        lines = run.world.channel.transcript.lines()
        # Point every evidence item at the first transcript line instead.
        fields["evidence"] = [{**e, "line": 0} for e in fields["evidence"]]
        assert check_evidence(fields, lines, run.world.ue.supi.msin, run.world.ue.endpoint)

    def test_replay_is_faithful(self, attack):
        config = make_config(**SUCCESS_CONFIGS[attack])
        run = stage_attack(attack, config)
        report = replay_transcript(config, run.world.channel.transcript.lines(), attack)
        assert report.faithful, report.mismatches[:3]
        assert report.digests == run.world.digests()


class TestReplay:
    def test_benign_replay(self, benign_config):
        run = stage_benign(benign_config)
        report = replay_transcript(benign_config, run.world.channel.transcript.lines())
        assert report.faithful and report.steps > 10
        assert report.digests == run.world.digests()

    def test_edited_transcript_detected(self, benign_config):
        run = stage_benign(benign_config)
        lines = run.world.channel.transcript.lines()
        idx = next(i for i, line in enumerate(lines) if '"event":"deliver"' in line and "AuthChallenge" in line)
        rec = json.loads(lines[idx])
        rec["phase"] = "registered"
        lines[idx] = json.dumps(rec)
        assert not replay_transcript(benign_config, lines).faithful

    def test_success_without_evidence_flagged(self):
        assert check_evidence({"attack": "bidding_down", "verdict": "SUCCESS", "evidence": []}, [], "0", "ue:0")
