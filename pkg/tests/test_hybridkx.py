from __future__ import annotations

import random

import pytest

from keccak_oracle import kmac256
from qkdpqc import hybridkx, qkd, wire
from qkdpqc.hybridkx import (ClientHello, KxConfig, Method, ServerHello, decode_hello, encode_hello,
                             kdf_combine, run_handshake)
from qkdpqc.pqcprov import EcdhError, SharedSecret, ecdh_keygen
from qkdpqc.qkd import Protocol, QkdSessionConfig

NIST_KEY = bytes(range(0x40, 0x60))


def cfg(method=Method.METHOD1, seed=1, n=256, protocol=Protocol.BB84, curve="NIST-P-256"):
    return KxConfig(method, QkdSessionConfig(protocol, n, seed), curve)


def test_kdf_matches_nist_kmac256_sample():
    expected = bytes.fromhex(
        "20C570C31346F703C9AC36C61C03CB64C3970D0CFC787E9B79599D273A68D2F7"
        "F69D4CC3DE9D104A351689F27CF6F5951F0103F33F4F24871024D9C27773A8DD")
    from Crypto.Hash import KMAC256
    mac = KMAC256.new(key=NIST_KEY, mac_len=64, custom=b"My Tagged Application")
    mac.update(b"\x00\x01\x02\x03")
    assert mac.digest() == expected
    assert kmac256(NIST_KEY, b"\x00\x01\x02\x03", 64, b"My Tagged Application") == expected


def test_kdf_combine_matches_oracle():
    rng = random.Random(0)
    for _ in range(5):
        key, msg = rng.randbytes(32), rng.randbytes(64)
        assert kdf_combine(key, msg) == kmac256(key, msg, 32, b"HYBRID-KX-KDF")


def test_kdf_avalanche():
    rng = random.Random(1)
    key, msg = rng.randbytes(32), rng.randbytes(32)
    base = int.from_bytes(kdf_combine(key, msg), "big")
    flips = []
    for bit in range(256):
        changed = bytearray(msg)
        changed[bit // 8] ^= 0x80 >> (bit % 8)
        flips.append(bin(base ^ int.from_bytes(kdf_combine(key, bytes(changed)), "big")).count("1"))
    mean = sum(flips) / len(flips)
    assert abs(mean - 128) < 4
    assert min(flips) > 80


@pytest.mark.parametrize("method", list(Method))
@pytest.mark.parametrize("transport", ["inproc", "tcp"])
def test_handshake_keys_agree(method, transport):
    client, server = run_handshake(cfg(method, seed=3), transport=transport)
    assert client.session_key == server.session_key
    assert len(client.session_key) == 32
    assert client.r2 == server.r2 and client.r3 == server.r3
    expected = kmac256(client.r3.value, client.kdf_message, 32, b"HYBRID-KX-KDF")
    assert client.session_key == expected


def test_kdf_message_layout():
    m1, _ = run_handshake(cfg(Method.METHOD1, seed=4))
    m2, _ = run_handshake(cfg(Method.METHOD2, seed=4))
    assert m1.kdf_message == m1.r2.value and len(m1.kdf_message) == 32
    assert m2.kdf_message == m2.r1.value + m2.r2.value and len(m2.kdf_message) == 64


def test_handshake_seeded_determinism():
    a, _ = run_handshake(cfg(Method.METHOD2, seed=5))
    b, _ = run_handshake(cfg(Method.METHOD2, seed=5))
    c, _ = run_handshake(cfg(Method.METHOD2, seed=6))
    assert a == b and a.session_key != c.session_key


def test_e91_and_brainpool_variant():
    client, server = run_handshake(cfg(Method.METHOD2, seed=2, protocol=Protocol.E91,
                                       curve="Brainpool-P-256"))
    assert client.session_key == server.session_key


def _rewrite_hello(kind, change):
    def tap(msg: bytes) -> bytes:
        if msg[0] != kind:
            return msg
        return encode_hello(change(decode_hello(msg)))
    return tap


def _flip(data: bytes) -> bytes:
    return bytes([data[0] ^ 1]) + data[1:]


def test_tampered_kem_ciphertext_breaks_agreement():
    tap = _rewrite_hello(wire.SERVER_HELLO,
                         lambda h: ServerHello(h.method, _flip(h.kem_ciphertext), h.ecdh_public))
    client, server = run_handshake(cfg(Method.METHOD1, seed=7), to_client=tap)
    assert client.session_key != server.session_key
    assert client.r2 != server.r2


def test_substituted_ecdh_public_breaks_agreement():
    mallory = ecdh_keygen("NIST-P-256", random.Random(99)).public_point
    tap = _rewrite_hello(wire.SERVER_HELLO,
                         lambda h: ServerHello(h.method, h.kem_ciphertext, mallory))
    client, server = run_handshake(cfg(Method.METHOD2, seed=7), to_client=tap)
    assert client.r1 != server.r1
    assert client.session_key != server.session_key


def test_corrupted_ecdh_point_aborts():
    tap = _rewrite_hello(wire.CLIENT_HELLO,
                         lambda h: ClientHello(h.method, h.kem_public, h.ecdh_public[:-1] + b"\x00"))
    with pytest.raises(EcdhError):
        run_handshake(cfg(Method.METHOD2, seed=7), to_server=tap)


def test_tampered_comparison_breaks_agreement():
    def tap(msg: bytes) -> bytes:
        if msg[0] != wire.COMPARISON_BATCH:
            return msg
        values = qkd.decode_comparison(msg, len(msg) - 5)
        return qkd.encode_comparison([v ^ 1 for v in values])
    client, server = run_handshake(cfg(Method.METHOD1, seed=8), to_server=tap)
    assert client.r3 != server.r3
    assert client.session_key != server.session_key


def test_method_mismatch_rejected():
    tap = _rewrite_hello(wire.CLIENT_HELLO, lambda h: ClientHello(Method.METHOD1, h.kem_public))
    with pytest.raises(hybridkx.HandshakeError):
        run_handshake(cfg(Method.METHOD2, seed=1), to_server=tap)


def test_hello_field_invariants():
    with pytest.raises(ValueError):
        ClientHello(Method.METHOD2, b"pk")
    with pytest.raises(ValueError):
        ServerHello(Method.METHOD1, b"ct", b"point")


def test_hello_decode_errors():
    good = encode_hello(ClientHello(Method.METHOD2, b"pk", b"pt"))
    assert decode_hello(good) == ClientHello(Method.METHOD2, b"pk", b"pt")
    with pytest.raises(wire.DecodeError, match="unknown message type"):
        decode_hello(b"\x07" + good[1:])
    with pytest.raises(wire.DecodeError, match="unknown method"):
        decode_hello(good[:1] + b"\x09" + good[2:])
    with pytest.raises(wire.DecodeError):
        decode_hello(good + b"\x00")
    for cut in range(len(good)):
        with pytest.raises(wire.DecodeError):
            decode_hello(good[:cut])


def test_transcript_invariants():
    r = SharedSecret(bytes(32))
    with pytest.raises(ValueError):
        hybridkx.HandshakeTranscript(Method.METHOD2, None, r, r, bytes(32))
    with pytest.raises(ValueError):
        hybridkx.HandshakeTranscript(Method.METHOD1, None, r, r, bytes(31))


def test_kdf_rejects_empty_key():
    with pytest.raises(ValueError):
        kdf_combine(b"", b"x")
