"""256-bit shared-secret sources for building restart matrices.

Each source maps a row index to the shared secret of one fresh, independent
key exchange.  With a seed, the row's randomness comes from a generator keyed
on ``(seed, source, row)``, so a matrix is reproducible row by row; without a
seed every row draws from OS entropy.
"""
from __future__ import annotations

import hashlib
from typing import Callable, Optional

from . import qkd
from .hybridkx import KxConfig, Method, run_handshake
from .pqcprov import ML_KEM_512, Provider, ecdh_keygen, ecdh_shared_x, get_provider

Source = Callable[[int], bytes]

SOURCES = ("ecdh-nist", "ecdh-brainpool", "ml-kem", "qkd-bb84", "qkd-e91", "kx-method1", "kx-method2")


def row_seed(seed: Optional[int], source: str, row: int) -> Optional[int]:
    if seed is None:
        return None
    digest = hashlib.sha256(f"{seed}/{source}/{row}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _ecdh(curve: str, name: str, seed: Optional[int]) -> Source:
    def source(row: int) -> bytes:
        s = row_seed(seed, name, row)
        a = ecdh_keygen(curve, qkd.party_rng(s, "alice"))
        b = ecdh_keygen(curve, qkd.party_rng(s, "bob"))
        shared = ecdh_shared_x(a, b.public_point)
        if shared != ecdh_shared_x(b, a.public_point):
            raise RuntimeError("ECDH parties disagree")
        return shared.value
    return source


def _ml_kem(seed: Optional[int], provider: Provider) -> Source:
    def source(row: int) -> bytes:
        s = row_seed(seed, "ml-kem", row)
        kp = provider.kem_keygen(ML_KEM_512, qkd.party_rng(s, "alice"))
        ct, sent = provider.kem_encapsulate(kp.public_key, qkd.party_rng(s, "bob"), ML_KEM_512)
        received = provider.kem_decapsulate(ct, kp.private_key, ML_KEM_512)
        if sent != received:
            raise RuntimeError("ML-KEM parties disagree")
        return received.value
    return source


def _qkd(protocol: qkd.Protocol, name: str, seed: Optional[int], n: int) -> Source:
    def source(row: int) -> bytes:
        cfg = qkd.QkdSessionConfig(protocol, n, row_seed(seed, name, row))
        a_key, b_key, _ = qkd.run_session(cfg)
        if a_key.bits != b_key.bits:
            raise RuntimeError("sifted keys disagree")
        return qkd.derive_r3(a_key.bits, n)
    return source


def _kx(method: Method, name: str, seed: Optional[int], n: int, provider: Provider) -> Source:
    def source(row: int) -> bytes:
        cfg = KxConfig(method, qkd.QkdSessionConfig(qkd.Protocol.BB84, n, row_seed(seed, name, row)))
        client, server = run_handshake(cfg, provider=provider)
        if client.session_key != server.session_key:
            raise RuntimeError("session keys disagree")
        return client.session_key
    return source


def make_source(name: str, seed: Optional[int] = None, *, n: int = qkd.DEFAULT_N,
                provider: Optional[Provider] = None) -> Source:
    if name == "ecdh-nist":
        return _ecdh("NIST-P-256", name, seed)
    if name == "ecdh-brainpool":
        return _ecdh("Brainpool-P-256", name, seed)
    provider = provider or get_provider()
    if name == "ml-kem":
        return _ml_kem(seed, provider)
    if name == "qkd-bb84":
        return _qkd(qkd.Protocol.BB84, name, seed, n)
    if name == "qkd-e91":
        return _qkd(qkd.Protocol.E91, name, seed, n)
    if name == "kx-method1":
        return _kx(Method.METHOD1, name, seed, n, provider)
    if name == "kx-method2":
        return _kx(Method.METHOD2, name, seed, n, provider)
    raise ValueError(f"unknown source {name!r}; choose from {', '.join(SOURCES)}")
