"""Hybrid QKD + PQC key exchange.

Method 1 runs an ML-KEM exchange (r2) followed by a QKD session (r3) and
derives ``KMAC256(key=r3, msg=r2)``.  Method 2 adds ephemeral ECDH (r1) to the
hellos and derives ``KMAC256(key=r3, msg=r1 || r2)``.  Phases run strictly in
order over one channel: hellos, then the QKD messages, then the local KDF.
"""
from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Optional, Union

from Crypto.Hash import KMAC256

from . import qkd, wire
from .channel import Channel, Tap, TappedChannel, channel_pair, run_parties
from .pqcprov import (ML_KEM_512, EcdhKeyPair, Provider, SharedSecret, ecdh_keygen,
                      ecdh_shared_x, get_provider)

KDF_CUSTOMIZATION = b"HYBRID-KX-KDF"
SESSION_KEY_LEN = 32


class Method(enum.IntEnum):
    METHOD1 = 1
    METHOD2 = 2


class HandshakeError(Exception):
    pass


@dataclass(frozen=True)
class ClientHello:
    method: Method
    kem_public: bytes
    ecdh_public: Optional[bytes] = None

    def __post_init__(self) -> None:
        _check_ecdh_field(self.method, self.ecdh_public)


@dataclass(frozen=True)
class ServerHello:
    method: Method
    kem_ciphertext: bytes
    ecdh_public: Optional[bytes] = None

    def __post_init__(self) -> None:
        _check_ecdh_field(self.method, self.ecdh_public)


Hello = Union[ClientHello, ServerHello]


def _check_ecdh_field(method: Method, ecdh_public: Optional[bytes]) -> None:
    if method is Method.METHOD2 and ecdh_public is None:
        raise ValueError("Method2 hellos must carry an ECDH public key")
    if method is Method.METHOD1 and ecdh_public is not None:
        raise ValueError("Method1 hellos carry no ECDH public key")


def encode_hello(msg: Hello) -> bytes:
    """``type | method | len32 kem-field | [len32 ecdh-field]``."""
    if isinstance(msg, ClientHello):
        head, kem = wire.CLIENT_HELLO, msg.kem_public
    elif isinstance(msg, ServerHello):
        head, kem = wire.SERVER_HELLO, msg.kem_ciphertext
    else:
        raise TypeError(f"not a hello message: {type(msg).__name__}")
    out = bytes([head, int(msg.method)]) + wire.pack_field(kem)
    if msg.ecdh_public is not None:
        out += wire.pack_field(msg.ecdh_public)
    return out


def decode_hello(buf: bytes) -> Hello:
    r = wire.Reader(buf)
    kind = r.byte()
    if kind not in (wire.CLIENT_HELLO, wire.SERVER_HELLO):
        raise wire.DecodeError("unknown message type")
    try:
        method = Method(r.byte())
    except ValueError:
        raise wire.DecodeError("unknown method") from None
    kem = r.field()
    ecdh = r.field() if method is Method.METHOD2 else None
    r.finish()
    cls = ClientHello if kind == wire.CLIENT_HELLO else ServerHello
    return cls(method, kem, ecdh)


def kdf_combine(key: Union[bytes, SharedSecret], message: bytes, out_len: int = SESSION_KEY_LEN) -> bytes:
    """KMAC256 with customization ``HYBRID-KX-KDF``; ``key`` must be at least 32 bytes."""
    if isinstance(key, SharedSecret):
        key = key.value
    if not key:
        raise ValueError("KDF key must not be empty")
    if out_len <= 0:
        raise ValueError("out_len must be positive")
    mac = KMAC256.new(key=bytes(key), mac_len=out_len, custom=KDF_CUSTOMIZATION)
    mac.update(bytes(message))
    return mac.digest()


@dataclass(frozen=True)
class HandshakeTranscript:
    method: Method
    r1: Optional[SharedSecret]
    r2: SharedSecret
    r3: SharedSecret
    session_key: bytes
    sifted: Optional[qkd.SiftedKey] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if (self.method is Method.METHOD2) != (self.r1 is not None):
            raise ValueError("r1 is present exactly for Method2")
        if len(self.session_key) != SESSION_KEY_LEN:
            raise ValueError("session key must be 32 bytes")

    @property
    def kdf_message(self) -> bytes:
        return kdf_message(self.r1, self.r2)


def kdf_message(r1: Optional[SharedSecret], r2: SharedSecret) -> bytes:
    return (r1.value if r1 is not None else b"") + r2.value


@dataclass
class KxConfig:
    method: Method = Method.METHOD1
    qkd: qkd.QkdSessionConfig = field(default_factory=qkd.QkdSessionConfig)
    curve: str = "NIST-P-256"
    kem_profile: str = ML_KEM_512


def _derive_session(cfg: KxConfig, r1, r2, sifted: qkd.SiftedKey) -> HandshakeTranscript:
    r3 = SharedSecret(qkd.derive_r3(sifted.bits, cfg.qkd.target_bits))
    key = kdf_combine(r3, kdf_message(r1, r2))
    return HandshakeTranscript(cfg.method, r1, r2, r3, key, sifted)


def _recv_hello(channel: Channel, cls: type, method: Method) -> Hello:
    msg = decode_hello(channel.recv())
    if not isinstance(msg, cls):
        raise HandshakeError(f"expected {cls.__name__}, got {type(msg).__name__}")
    if msg.method is not method:
        raise HandshakeError(f"peer switched to {msg.method.name}")
    return msg


class KxClient:
    """Alice: sends ClientHello, decapsulates, then acts as the QKD sender."""

    def __init__(self, cfg: KxConfig, provider: Provider, rng: random.Random,
                 qkd_rng: random.Random, qkd_controls=None) -> None:
        self.cfg, self.provider, self.rng, self.qkd_rng = cfg, provider, rng, qkd_rng
        self.qkd_controls = qkd_controls
        self.qkd_party = None

    def run(self, channel: Channel) -> HandshakeTranscript:
        cfg = self.cfg
        kem = self.provider.kem_keygen(cfg.kem_profile, rng=self.rng)
        ecdh: Optional[EcdhKeyPair] = None
        if cfg.method is Method.METHOD2:
            ecdh = ecdh_keygen(cfg.curve, self.rng)
        channel.send(encode_hello(ClientHello(cfg.method, kem.public_key,
                                              ecdh.public_point if ecdh else None)))
        server = _recv_hello(channel, ServerHello, cfg.method)
        r2 = self.provider.kem_decapsulate(server.kem_ciphertext, kem.private_key, cfg.kem_profile)
        r1 = ecdh_shared_x(ecdh, server.ecdh_public) if ecdh else None
        alice, _ = qkd.make_parties(cfg.qkd, self.qkd_rng, self.qkd_rng, alice_controls=self.qkd_controls)
        self.qkd_party = alice
        sifted = alice.run(qkd.attach_adversary(channel, cfg.qkd))
        return _derive_session(cfg, r1, r2, sifted)


class KxServer:
    """Bob: answers with the encapsulation (and ECDH share), then acts as QKD receiver."""

    def __init__(self, cfg: KxConfig, provider: Provider, rng: random.Random,
                 qkd_rng: random.Random, qkd_controls=None) -> None:
        self.cfg, self.provider, self.rng, self.qkd_rng = cfg, provider, rng, qkd_rng
        self.qkd_controls = qkd_controls
        self.qkd_party = None

    def run(self, channel: Channel) -> HandshakeTranscript:
        cfg = self.cfg
        client = _recv_hello(channel, ClientHello, cfg.method)
        ct, r2 = self.provider.kem_encapsulate(client.kem_public, rng=self.rng, profile=cfg.kem_profile)
        r1 = None
        ecdh_public = None
        if cfg.method is Method.METHOD2:
            ecdh = ecdh_keygen(cfg.curve, self.rng)
            r1 = ecdh_shared_x(ecdh, client.ecdh_public)
            ecdh_public = ecdh.public_point
        channel.send(encode_hello(ServerHello(cfg.method, ct, ecdh_public)))
        _, bob = qkd.make_parties(cfg.qkd, self.qkd_rng, self.qkd_rng, bob_controls=self.qkd_controls)
        self.qkd_party = bob
        sifted = bob.run(channel)
        return _derive_session(cfg, r1, r2, sifted)


def make_client(cfg: KxConfig, provider: Optional[Provider] = None) -> KxClient:
    seed = cfg.qkd.seed
    return KxClient(cfg, provider or get_provider(), qkd.party_rng(seed, "alice/kx"),
                    qkd.party_rng(seed, "alice"))


def make_server(cfg: KxConfig, provider: Optional[Provider] = None) -> KxServer:
    seed = cfg.qkd.seed
    return KxServer(cfg, provider or get_provider(), qkd.party_rng(seed, "bob/kx"),
                    qkd.party_rng(seed, "bob"))


def run_handshake(cfg: KxConfig, *, provider: Optional[Provider] = None, transport: str = "inproc",
                  to_server: Optional[Tap] = None, to_client: Optional[Tap] = None,
                  ) -> tuple[HandshakeTranscript, HandshakeTranscript]:
    """Both parties over a fresh channel; taps rewrite messages in flight."""
    client = make_client(cfg, provider)
    server = make_server(cfg, provider)
    a_end, b_end = channel_pair(transport)
    a_chan = TappedChannel(a_end, outbound=to_server) if to_server else a_end
    b_chan = TappedChannel(b_end, outbound=to_client) if to_client else b_end
    try:
        return run_parties(lambda: client.run(a_chan), lambda: server.run(b_chan), (a_end, b_end))
    finally:
        a_end.close()
        b_end.close()


def method1_run(qkd_config: qkd.QkdSessionConfig, **kwargs):
    return run_handshake(KxConfig(Method.METHOD1, qkd_config), **kwargs)


def method2_run(qkd_config: qkd.QkdSessionConfig, curve: str = "NIST-P-256", **kwargs):
    return run_handshake(KxConfig(Method.METHOD2, qkd_config, curve), **kwargs)
