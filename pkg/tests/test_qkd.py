from __future__ import annotations

import pytest

from qkdpqc import qkd, qsim, wire
from qkdpqc.channel import inproc_pair, run_parties
from qkdpqc.qkd import Adversary, Bb84Control, E91Control, Protocol, QkdSessionConfig


def session(protocol=Protocol.BB84, n=64, seed=1, **kw):
    return qkd.run_session(QkdSessionConfig(protocol, n, seed), **kw)


@pytest.mark.parametrize("protocol", list(Protocol))
def test_sifted_keys_agree(protocol):
    for seed in range(5):
        a, b, transcript = session(protocol, seed=seed)
        assert a.bits == b.bits
        assert a.rounds_kept == sum(r.kept for r in transcript)


@pytest.mark.parametrize("protocol", list(Protocol))
def test_seeded_sessions_are_deterministic(protocol):
    first = session(protocol, seed=7)
    second = session(protocol, seed=7)
    assert first[0] == second[0]
    assert qkd.export_transcript(first[2]) == qkd.export_transcript(second[2])
    assert session(protocol, seed=8)[0].bits != first[0].bits


def test_round_counts():
    assert QkdSessionConfig(Protocol.BB84, 384).rounds == 768
    assert QkdSessionConfig(Protocol.E91, 384).rounds == 1152


def test_invalid_target_rejected():
    with pytest.raises(ValueError):
        qkd.run_session(QkdSessionConfig(Protocol.BB84, 0, 1))


def test_bb84_matching_bases_keep_everything():
    rounds = 2 * 16
    controls = [Bb84Control.HADAMARD] * rounds
    a, b, transcript = session(Protocol.BB84, n=16, alice_controls=controls, bob_controls=controls)
    assert a.rounds_kept == rounds and a.bits == b.bits
    assert all(r.alice_bit == r.bob_bit for r in transcript)


def test_bb84_mismatched_bases_keep_nothing():
    rounds = 2 * 16
    a, b, _ = session(Protocol.BB84, n=16, alice_controls=[Bb84Control.REST] * rounds,
                      bob_controls=[Bb84Control.HADAMARD] * rounds)
    assert a.rounds_kept == 0 and b.bits == ""


@pytest.mark.parametrize("setting", list(E91Control))
def test_e91_matching_settings_agree(setting):
    rounds = 3 * 20
    a, b, transcript = session(Protocol.E91, n=20, alice_controls=[setting] * rounds,
                               bob_controls=[setting] * rounds)
    assert a.rounds_kept == rounds and a.bits == b.bits


def test_e91_s3_pairs_are_anticorrelated_before_flip():
    rounds = 3 * 20
    controls = [E91Control.S3] * rounds
    alice, bob = qkd.make_parties(QkdSessionConfig(Protocol.E91, 20, 3), qkd.party_rng(3, "alice"),
                                  qkd.party_rng(3, "bob"), controls, controls)
    a_end, b_end = inproc_pair()
    run_parties(lambda: alice.run(a_end), lambda: bob.run(b_end))
    assert all(x != y for x, y in zip(alice.log.bits, bob.raw_bits))


@pytest.mark.parametrize("protocol,expected", [(Protocol.BB84, 1 / 2), (Protocol.E91, 1 / 3)])
def test_yield_fraction(protocol, expected):
    kept = total = 0
    for seed in range(20):
        a, _, _ = session(protocol, n=128, seed=seed)
        kept += a.rounds_kept
        total += a.rounds_total
    assert abs(kept / total - expected) < 0.03


def test_tcp_transport():
    a, b, _ = session(Protocol.E91, n=32, seed=4, transport="tcp")
    assert a.bits == b.bits


def test_intercept_resend_raises_error_rate():
    cfg = QkdSessionConfig(Protocol.BB84, 4000, 11, Adversary.INTERCEPT_RESEND)
    a, b, _ = qkd.run_session(cfg)
    assert abs(qkd.disagreement_rate(a.bits, b.bits) - 0.25) < 0.03


def test_bits_packing():
    assert qkd.bits_to_bytes("1") == b"\x80"
    assert qkd.bits_to_bytes("0000000111") == b"\x01\xc0"
    assert qkd.bytes_to_bits(b"\x01\xc0") == "0000000111000000"


def test_conditioning():
    assert qkd.condition_fixed_length("101", 6) == "000101"
    assert qkd.condition_fixed_length("1" * 10, 4) == "1111"
    r3 = qkd.derive_r3("1" * 400)
    assert r3 == b"\xff" * 32


def test_derive_r3_short_key_left_padded():
    # 100 ones, padded to 384 with 284 leading zeros; first 256 bits are all zero
    assert qkd.derive_r3("1" * 100) == bytes(32)
    # 200 ones: 184 zeros then 72 ones in the first 256 bits
    assert qkd.derive_r3("1" * 200) == bytes(23) + b"\xff" * 9


def test_derive_r3_needs_enough_bits():
    with pytest.raises(ValueError):
        qkd.derive_r3("1" * 300, n=128)


def test_control_codec_roundtrip_and_rejections():
    msg = qkd.encode_controls([1, 2, 3, 1])
    assert qkd.decode_controls(msg, (1, 2, 3), 4) == [1, 2, 3, 1]
    with pytest.raises(wire.DecodeError):
        qkd.decode_controls(msg, (1, 2, 3), 5)
    with pytest.raises(wire.DecodeError):
        qkd.decode_controls(msg, (1, 2), 4)
    with pytest.raises(wire.DecodeError):
        qkd.decode_comparison(msg, 4)
    with pytest.raises(wire.DecodeError):
        qkd.decode_controls(msg + b"\x00", (1, 2, 3), 4)


def test_qubit_codec_roundtrip():
    state = qsim.apply(qsim.gate_hs(), qsim.ket("1"))
    assert qkd.decode_qubit(qkd.encode_qubit(state)).isclose(state, 0.0)
    with pytest.raises(wire.DecodeError):
        qkd.decode_qubit(qkd.encode_qubit(state)[:-1])


def test_protocol_specific_runners():
    with pytest.raises(qkd.QkdError):
        qkd.bb84_run(QkdSessionConfig(Protocol.E91, 8, 1))
    a, b, _ = qkd.e91_run(QkdSessionConfig(Protocol.E91, 8, 1))
    assert a.bits == b.bits


def test_transcript_csv_lines():
    _, _, transcript = session(Protocol.BB84, n=10, seed=2)
    lines = qkd.export_transcript(transcript).splitlines()
    assert len(lines) == 20
    assert all(len(line.split(",")) == 6 for line in lines)


def test_left_padding_absorbs_a_leading_zero():
    # A short sifted key with one extra leading 0 conditions to the same string,
    # so a comparison tamper that only prepends a 0-bit cannot change r3.
    key = "1" + "01" * 150
    assert qkd.condition_fixed_length("0" + key, 384) == qkd.condition_fixed_length(key, 384)
    assert qkd.condition_fixed_length("1" + key, 384) != qkd.condition_fixed_length(key, 384)
