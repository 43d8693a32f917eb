from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fivegsim.crypto_suite import (
    AlgorithmId,
    OperatorPolicy,
    SecurityCapabilities,
    SecurityContext,
    bidding_down_detected,
    negotiate,
    protect,
    unprotect,
)
from fivegsim.errors import IntegrityFailure, NoCommonAlgorithm, ReplayDetected

A = AlgorithmId


def pair(c: AlgorithmId, i: AlgorithmId):
    enc, integ = bytes(range(16)), bytes(range(16, 32))
    return (SecurityContext("nas", "3gpp", enc, integ, c, i, 0),
            SecurityContext("nas", "3gpp", enc, integ, c, i, 1))


class TestNegotiation:
    def test_prefers_strongest_common(self):
        caps = SecurityCapabilities((A.NEA1, A.NEA0), (A.NIA2, A.NIA0))
        c, i, replayed = negotiate(caps, OperatorPolicy())
        assert (c, i) == (A.NEA1, A.NIA2) and replayed == caps

    def test_null_only_with_policy_forbidding_null(self):
        caps = SecurityCapabilities((A.NEA0,), (A.NIA0,))
        with pytest.raises(NoCommonAlgorithm):
            negotiate(caps, OperatorPolicy(null_allowed=False))

    def test_default_caps_respect_null_knob(self):
        assert A.NEA0 not in SecurityCapabilities.default(False).ciphering
        assert A.NIA0 in SecurityCapabilities.default(True).integrity

    def test_mixed_capability_sets_rejected(self):
        with pytest.raises(ValueError):
            SecurityCapabilities((A.NIA1,), (A.NIA1,))

    def test_bidding_down_detection(self):
        sent = SecurityCapabilities.default(True)
        stripped = SecurityCapabilities((A.NEA0,), (A.NIA0,))
        assert bidding_down_detected(sent, stripped)
        assert not bidding_down_detected(sent, sent)
        assert not bidding_down_detected(sent, None)


class TestProtection:
    @settings(max_examples=60, deadline=None)
    @given(payload=st.binary(max_size=200), c=st.sampled_from([A.NEA0, A.NEA1, A.NEA2]),
           i=st.sampled_from([A.NIA1, A.NIA2]))
    def test_roundtrip(self, payload, c, i):
        tx, rx = pair(c, i)
        assert unprotect(protect(payload, tx), rx) == payload

    def test_ciphering_hides_payload(self):
        tx, _ = pair(A.NEA2, A.NIA2)
        assert protect(b"secret payload", tx).payload != b"secret payload"
        tx0, _ = pair(A.NEA0, A.NIA2)
        assert protect(b"secret payload", tx0).payload == b"secret payload"

    def test_replay_detected_with_integrity(self):
        tx, rx = pair(A.NEA2, A.NIA2)
        env = protect(b"x", tx)
        unprotect(env, rx)
        with pytest.raises(ReplayDetected):
            unprotect(env, rx)

    def test_replay_accepted_under_nia0(self):
        tx, rx = pair(A.NEA2, A.NIA0)
        env = protect(b"x", tx)
        assert unprotect(env, rx) == unprotect(env, rx) == b"x"

    def test_tamper_detected_and_state_untouched(self):
        tx, rx = pair(A.NEA2, A.NIA2)
        env = protect(b"hello", tx)
        bad = type(env)(env.cipher_alg, env.integrity_alg, env.replay_counter, env.direction,
                        env.mac, bytes([env.payload[0] ^ 1]) + env.payload[1:])
        before = rx.rx_highest
        with pytest.raises(IntegrityFailure):
            unprotect(bad, rx)
        assert rx.rx_highest == before

    def test_own_direction_rejected(self):
        tx, _ = pair(A.NEA2, A.NIA2)
        with pytest.raises(IntegrityFailure):
            unprotect(protect(b"x", tx), tx)

    def test_algorithm_mismatch_rejected(self):
        tx, _ = pair(A.NEA1, A.NIA1)
        _, rx = pair(A.NEA2, A.NIA2)
        with pytest.raises(IntegrityFailure):
            unprotect(protect(b"x", tx), rx)
