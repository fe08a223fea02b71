"""Hybrid certificates carrying a 32-byte Request Code for Signature (RCS).

The CA signs the To-Be-Signed bytes with a post-quantum DSA but puts only a
fresh random ``r4`` in the certificate's signature field, keeping the real
signature ``V`` in its record store.  A verifier later runs QKD with the CA to
share ``r3``; the CA sends the signature reconstruction value

    z = V xor SHAKE256(r4) xor SHAKE256(r3)

(expansions truncated to ``len(V)``) and the verifier recovers ``V`` with the
same XOR before running the ordinary DSA verification.
"""
from __future__ import annotations

import enum
import hashlib
import random
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import qkd, wire
from .channel import Channel, Tap, TappedChannel, channel_pair, run_parties
from .pqcprov import DsaKeyPair, Provider, get_provider, signature_length

RCS_LEN = 32


class KeyUsage(enum.Flag):
    DIGITAL_SIGNATURE = 1
    NON_REPUDIATION = 2
    KEY_ENCIPHERMENT = 4
    KEY_AGREEMENT = 8
    KEY_CERT_SIGN = 16


class CertificateError(Exception):
    pass


class UnknownSerial(CertificateError):
    pass


@dataclass(frozen=True)
class QkInfo:
    quantum_endpoint: str
    classical_endpoint: str
    protocol: qkd.Protocol = qkd.Protocol.BB84

    def __post_init__(self) -> None:
        if not self.quantum_endpoint or not self.classical_endpoint:
            raise ValueError("QKInfo endpoints must be non-empty")


@dataclass(frozen=True)
class HybridCertificate:
    serial: int
    subject: str
    spki_alg: str
    spki_key: bytes
    key_usage: KeyUsage
    qk_info: QkInfo
    sig_alg: str
    rcs: bytes

    def __post_init__(self) -> None:
        if len(self.rcs) != RCS_LEN:
            raise ValueError(f"RCS must be {RCS_LEN} bytes, got {len(self.rcs)}")
        signature_length(self.spki_alg)
        signature_length(self.sig_alg)


# --- TBS encoding ----------------------------------------------------------

_T_SERIAL, _T_SUBJECT, _T_SPKI_ALG, _T_SPKI_KEY, _T_USAGE, _T_QKINFO, _T_SIG_ALG = range(1, 8)
_T_QK_PROTOCOL, _T_QK_QUANTUM, _T_QK_CLASSICAL = range(1, 4)


def _tlv(tag: int, value: bytes) -> bytes:
    return bytes([tag]) + wire.pack_field(value)


def _read_tlv(r: wire.Reader, tag: int) -> bytes:
    got = r.byte()
    if got != tag:
        raise wire.DecodeError(f"expected field tag {tag}, got {got}")
    return r.field()


def _encode_qk_info(info: QkInfo) -> bytes:
    return (_tlv(_T_QK_PROTOCOL, info.protocol.value.encode())
            + _tlv(_T_QK_QUANTUM, info.quantum_endpoint.encode())
            + _tlv(_T_QK_CLASSICAL, info.classical_endpoint.encode()))


def tbs_bytes(cert: HybridCertificate) -> bytes:
    """Deterministic field-ordered TLV encoding; the signature field is excluded."""
    return b"".join((
        _tlv(_T_SERIAL, struct.pack(">Q", cert.serial)),
        _tlv(_T_SUBJECT, cert.subject.encode()),
        _tlv(_T_SPKI_ALG, cert.spki_alg.encode()),
        _tlv(_T_SPKI_KEY, cert.spki_key),
        _tlv(_T_USAGE, struct.pack(">H", cert.key_usage.value)),
        _tlv(_T_QKINFO, _encode_qk_info(cert.qk_info)),
        _tlv(_T_SIG_ALG, cert.sig_alg.encode()),
    ))


def encode_certificate(cert: HybridCertificate) -> bytes:
    """TBS body followed by the raw 32-byte signature field."""
    return tbs_bytes(cert) + cert.rcs


def decode_certificate(buf: bytes) -> HybridCertificate:
    if len(buf) < RCS_LEN:
        raise wire.DecodeError("certificate shorter than its signature field")
    body, rcs = buf[:-RCS_LEN], buf[-RCS_LEN:]
    r = wire.Reader(body)
    try:
        (serial,) = struct.unpack(">Q", _read_tlv(r, _T_SERIAL))
        subject = _read_tlv(r, _T_SUBJECT).decode()
        spki_alg = _read_tlv(r, _T_SPKI_ALG).decode()
        spki_key = _read_tlv(r, _T_SPKI_KEY)
        (usage,) = struct.unpack(">H", _read_tlv(r, _T_USAGE))
        q = wire.Reader(_read_tlv(r, _T_QKINFO))
        protocol = qkd.Protocol(_read_tlv(q, _T_QK_PROTOCOL).decode())
        quantum = _read_tlv(q, _T_QK_QUANTUM).decode()
        classical = _read_tlv(q, _T_QK_CLASSICAL).decode()
        q.finish()
        sig_alg = _read_tlv(r, _T_SIG_ALG).decode()
        r.finish()
        return HybridCertificate(serial, subject, spki_alg, spki_key, KeyUsage(usage),
                                 QkInfo(quantum, classical, protocol), sig_alg, rcs)
    except wire.DecodeError:
        raise
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise wire.DecodeError(f"malformed certificate: {exc}") from exc


def certificate_text(cert: HybridCertificate) -> str:
    usage = ",".join(u.name for u in KeyUsage if u in cert.key_usage) or "-"
    return "\n".join([
        "Certificate:",
        f"  Serial: {cert.serial}",
        f"  Subject: {cert.subject}",
        f"  Subject Public Key Info: {cert.spki_alg} ({len(cert.spki_key)} bytes)",
        f"    {cert.spki_key.hex()}",
        f"  Key Usage: {usage}",
        f"  QKInfo: protocol={cert.qk_info.protocol.value} "
        f"quantum={cert.qk_info.quantum_endpoint} classical={cert.qk_info.classical_endpoint}",
        f"  Signature Algorithm: {cert.sig_alg}",
        f"  Sig (Request Code for Signature, {len(cert.rcs)} bytes): {cert.rcs.hex()}",
        "",
    ])


# --- CA record store -------------------------------------------------------

@dataclass(frozen=True)
class CaRecord:
    serial: int
    signature_v: bytes
    rcs: bytes
    tbs_digest: bytes = b""


class CaStore:
    """Append-only ``serial -> CaRecord`` map; reads are lock-free, writes serialized."""

    def __init__(self) -> None:
        self._records: dict[int, CaRecord] = {}
        self._rcs: set[bytes] = set()
        self._lock = threading.Lock()

    def add(self, record: CaRecord) -> None:
        with self._lock:
            if record.serial in self._records:
                raise CertificateError(f"serial {record.serial} already stored")
            if record.rcs in self._rcs:
                raise CertificateError("duplicate RCS")
            self._records[record.serial] = record
            self._rcs.add(record.rcs)

    def get(self, serial: int) -> CaRecord:
        try:
            return self._records[serial]
        except KeyError:
            raise UnknownSerial(f"no record for serial {serial}") from None

    def has_rcs(self, rcs: bytes) -> bool:
        return rcs in self._rcs

    def serials(self) -> list[int]:
        return sorted(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def export_lines(self) -> str:
        return "".join(f"{r.serial},{r.signature_v.hex()},{r.rcs.hex()}\n"
                       for r in (self._records[s] for s in self.serials()))

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.export_lines())

    @classmethod
    def load(cls, path: Path | str) -> CaStore:
        store = cls()
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                serial, v_hex, rcs_hex = line.split(",")
                store.add(CaRecord(int(serial), bytes.fromhex(v_hex), bytes.fromhex(rcs_hex)))
            except ValueError as exc:
                raise CertificateError(f"{path}:{lineno}: malformed record") from exc
        return store


# --- issuance --------------------------------------------------------------

@dataclass(frozen=True)
class SigningRequest:
    subject: str
    spki_alg: str
    spki_key: bytes
    key_usage: KeyUsage = KeyUsage.DIGITAL_SIGNATURE


@dataclass
class CertificateAuthority:
    keypair: DsaKeyPair
    qk_info: QkInfo
    provider: Provider = field(default_factory=get_provider)
    rng: random.Random = field(default_factory=random.SystemRandom)
    store: CaStore = field(default_factory=CaStore)
    rcs_resamples: int = 0

    @classmethod
    def create(cls, profile: str, qk_info: QkInfo, provider: Optional[Provider] = None,
               rng: Optional[random.Random] = None) -> CertificateAuthority:
        provider = provider or get_provider()
        rng = rng or random.SystemRandom()
        return cls(provider.dsa_keygen(profile, rng), qk_info, provider, rng)

    @property
    def profile(self) -> str:
        return self.keypair.profile

    @property
    def public_key(self) -> bytes:
        return self.keypair.public_key

    def _fresh_rcs(self) -> bytes:
        while True:
            rcs = self.rng.randbytes(RCS_LEN)
            if not self.store.has_rcs(rcs):
                return rcs
            self.rcs_resamples += 1

    def issue_certificate(self, csr: SigningRequest) -> tuple[HybridCertificate, CaRecord]:
        signature_length(csr.spki_alg)
        serial = max(self.store.serials(), default=0) + 1
        cert = HybridCertificate(serial, csr.subject, csr.spki_alg, csr.spki_key, csr.key_usage,
                                 self.qk_info, self.profile, self._fresh_rcs())
        tbs = tbs_bytes(cert)
        v = self.provider.dsa_sign(tbs, self.keypair)
        record = CaRecord(serial, v, cert.rcs, hashlib.sha3_256(tbs).digest())
        self.store.add(record)
        return cert, record


# --- signature reconstruction ---------------------------------------------

def expand(seed: bytes, out_len: int) -> bytes:
    """SHAKE256 output of ``seed`` truncated to ``out_len`` bytes."""
    if out_len <= 0:
        raise ValueError("out_len must be positive")
    return hashlib.shake_256(seed).digest(out_len)


def _xor(*chunks: bytes) -> bytes:
    n = len(chunks[0])
    acc = 0
    for c in chunks:
        if len(c) != n:
            raise ValueError("XOR operands differ in length")
        acc ^= int.from_bytes(c, "big")
    return acc.to_bytes(n, "big")


@dataclass(frozen=True)
class Srv:
    value: bytes

    @property
    def length(self) -> int:
        return len(self.value)


def compute_srv(v: bytes, r4: bytes, r3: bytes) -> Srv:
    n = len(v)
    return Srv(_xor(v, expand(r4, n), expand(r3, n)))


def reconstruct_signature(z: Srv, r4: bytes, r3: bytes) -> bytes:
    n = z.length
    return _xor(z.value, expand(r4, n), expand(r3, n))


# --- wire messages ---------------------------------------------------------

def encode_verify_request(serial: int) -> bytes:
    return bytes([wire.VERIFY_REQUEST]) + struct.pack(">Q", serial)


def decode_verify_request(buf: bytes) -> int:
    r = wire.Reader(buf)
    wire.expect_type(r, wire.VERIFY_REQUEST)
    (serial,) = struct.unpack(">Q", r.take(8))
    r.finish()
    return serial


def encode_srv(z: Srv) -> bytes:
    return bytes([wire.SRV_PAYLOAD]) + wire.pack_field(z.value)


def decode_srv(buf: bytes) -> Srv:
    r = wire.Reader(buf)
    wire.expect_type(r, wire.SRV_PAYLOAD)
    value = r.field()
    r.finish()
    if not value:
        raise wire.DecodeError("empty SRV payload")
    return Srv(value)


# --- verification flow -----------------------------------------------------

def _qkd_config(cert: HybridCertificate, n: int, seed: Optional[int]) -> qkd.QkdSessionConfig:
    return qkd.QkdSessionConfig(cert.qk_info.protocol, n, seed)


class CaService:
    """CA side of one verification: QKD receiver, then sends ``z``."""

    def __init__(self, ca: CertificateAuthority, n: int = qkd.DEFAULT_N, seed: Optional[int] = None):
        self.ca, self.n, self.seed = ca, n, seed

    def serve(self, channel: Channel) -> bytes:
        record = self.ca.store.get(decode_verify_request(channel.recv()))
        cfg = qkd.QkdSessionConfig(self.ca.qk_info.protocol, self.n, self.seed)
        rng = qkd.party_rng(self.seed, "ca")
        _, bob = qkd.make_parties(cfg, rng, rng)
        r3 = qkd.derive_r3(bob.run(channel).bits, self.n)
        channel.send(encode_srv(compute_srv(record.signature_v, record.rcs, r3)))
        return r3


class Verifier:
    """Relying party trusting one CA public key; QKD sender in the flow."""

    def __init__(self, ca_public: bytes, provider: Optional[Provider] = None,
                 n: int = qkd.DEFAULT_N, seed: Optional[int] = None):
        self.ca_public = ca_public
        self.provider = provider or get_provider()
        self.n, self.seed = n, seed
        self.reconstructed: Optional[bytes] = None

    def verify(self, cert: HybridCertificate, channel: Channel) -> bool:
        channel.send(encode_verify_request(cert.serial))
        cfg = _qkd_config(cert, self.n, self.seed)
        rng = qkd.party_rng(self.seed, "verifier")
        alice, _ = qkd.make_parties(cfg, rng, rng)
        r3 = qkd.derive_r3(alice.run(channel).bits, self.n)
        z = decode_srv(channel.recv())
        self.reconstructed = reconstruct_signature(z, cert.rcs, r3)
        return self.provider.dsa_verify(tbs_bytes(cert), self.reconstructed,
                                        self.ca_public, cert.sig_alg)


def verify_flow(cert: HybridCertificate, ca: CertificateAuthority, *, n: int = qkd.DEFAULT_N,
                seed: Optional[int] = None, transport: str = "inproc",
                to_ca: Optional[Tap] = None, to_verifier: Optional[Tap] = None) -> bool:
    """Run verifier and CA concurrently over a fresh channel; returns the verdict."""
    verifier = Verifier(ca.public_key, ca.provider, n, seed)
    service = CaService(ca, n, seed)
    v_end, c_end = channel_pair(transport)
    v_chan = TappedChannel(v_end, outbound=to_ca) if to_ca else v_end
    c_chan = TappedChannel(c_end, outbound=to_verifier) if to_verifier else c_end
    try:
        ok, _ = run_parties(lambda: verifier.verify(cert, v_chan), lambda: service.serve(c_chan),
                            (v_end, c_end))
    finally:
        v_end.close()
        c_end.close()
    return ok
