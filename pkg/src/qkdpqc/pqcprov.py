"""Primitive providers for the hybrid flows.

``RealProvider`` delegates to conformant external implementations:
ML-KEM-512 via kyber-py, ML-DSA via dilithium-py and SLH-DSA via slh-dsa.
Every operation can draw its randomness from a caller-supplied generator so
seeded runs are reproducible.  ``MockProvider`` is a fast deterministic
stand-in with the same sizes and contracts; it offers no security.

ECDH is classical and always uses ``cryptography``.

Set ``QKDPQC_PROVIDER=mock`` to make :func:`get_provider` return the mock.
"""
from __future__ import annotations

import hashlib
import hmac
import os
import random
import secrets
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ec

PROVIDER_ENV = "QKDPQC_PROVIDER"

ML_KEM_512 = "ML-KEM-512"
KEM_PROFILES = (ML_KEM_512,)
SHARED_SECRET_LEN = 32

# Signature lengths in bytes (FIPS 204 / FIPS 205 "f" parameter sets)
SIGNATURE_LENGTHS = {
    "ML-DSA-44": 2420,
    "ML-DSA-65": 3309,
    "ML-DSA-87": 4627,
    "SLH-DSA-SHA2-128f": 17088,
    "SLH-DSA-SHAKE-128f": 17088,
    "SLH-DSA-SHA2-192f": 35664,
    "SLH-DSA-SHAKE-192f": 35664,
    "SLH-DSA-SHA2-256f": 49856,
    "SLH-DSA-SHAKE-256f": 49856,
}
DSA_PROFILES = tuple(SIGNATURE_LENGTHS)

_KEM_SIZES = {ML_KEM_512: (800, 1632, 768)}  # public, private, ciphertext
_DSA_PUBLIC_LEN = {
    "ML-DSA-44": 1312, "ML-DSA-65": 1952, "ML-DSA-87": 2592,
    "SLH-DSA-SHA2-128f": 32, "SLH-DSA-SHAKE-128f": 32,
    "SLH-DSA-SHA2-192f": 48, "SLH-DSA-SHAKE-192f": 48,
    "SLH-DSA-SHA2-256f": 64, "SLH-DSA-SHAKE-256f": 64,
}


class ProviderError(Exception):
    pass


class UnsupportedProfile(ProviderError):
    pass


class DecapsulationError(ProviderError):
    pass


class EcdhError(ProviderError):
    pass


def signature_length(profile: str) -> int:
    try:
        return SIGNATURE_LENGTHS[profile]
    except KeyError:
        raise UnsupportedProfile(f"unknown signature profile {profile!r}") from None


def _check_dsa(profile: str) -> None:
    signature_length(profile)


def _check_kem(profile: str) -> None:
    if profile not in KEM_PROFILES:
        raise UnsupportedProfile(f"unsupported KEM profile {profile!r}")


def _randbytes(rng: Optional[random.Random], n: int) -> bytes:
    return rng.randbytes(n) if rng is not None else os.urandom(n)


@dataclass(frozen=True)
class SharedSecret:
    value: bytes

    def __post_init__(self) -> None:
        if len(self.value) != SHARED_SECRET_LEN:
            raise ValueError(f"shared secret must be {SHARED_SECRET_LEN} bytes")

    def hex(self) -> str:
        return self.value.hex()


@dataclass(frozen=True)
class KemKeyPair:
    public_key: bytes
    private_key: bytes
    profile: str = ML_KEM_512


@dataclass(frozen=True)
class DsaKeyPair:
    public_key: bytes
    private_key: bytes
    profile: str


class Provider:
    name = "abstract"

    def kem_keygen(self, profile: str = ML_KEM_512, rng: Optional[random.Random] = None) -> KemKeyPair:
        raise NotImplementedError

    def kem_encapsulate(self, public_key: bytes, rng: Optional[random.Random] = None,
                        profile: str = ML_KEM_512) -> tuple[bytes, SharedSecret]:
        raise NotImplementedError

    def kem_decapsulate(self, ciphertext: bytes, private_key: bytes,
                        profile: str = ML_KEM_512) -> SharedSecret:
        raise NotImplementedError

    def dsa_keygen(self, profile: str, rng: Optional[random.Random] = None) -> DsaKeyPair:
        raise NotImplementedError

    def dsa_sign(self, message: bytes, private: DsaKeyPair) -> bytes:
        raise NotImplementedError

    def dsa_verify(self, message: bytes, signature: bytes, public_key: bytes, profile: str) -> bool:
        raise NotImplementedError


def _check_kem_sizes(profile: str, *, public=None, private=None, ciphertext=None) -> None:
    pk_len, sk_len, ct_len = _KEM_SIZES[profile]
    for label, value, want in (("public key", public, pk_len), ("private key", private, sk_len),
                               ("ciphertext", ciphertext, ct_len)):
        if value is not None and len(value) != want:
            err = DecapsulationError if label == "ciphertext" else ProviderError
            raise err(f"malformed {label}: {len(value)} bytes, expected {want}")


class RealProvider(Provider):
    name = "real"

    def __init__(self) -> None:
        from kyber_py.ml_kem import ML_KEM_512 as kem
        from dilithium_py.ml_dsa import ML_DSA_44, ML_DSA_65, ML_DSA_87
        import slhdsa

        self._kem = kem
        self._mldsa = {"ML-DSA-44": ML_DSA_44, "ML-DSA-65": ML_DSA_65, "ML-DSA-87": ML_DSA_87}
        self._slhdsa = slhdsa
        self._slh_params = {
            "SLH-DSA-SHA2-128f": slhdsa.sha2_128f, "SLH-DSA-SHAKE-128f": slhdsa.shake_128f,
            "SLH-DSA-SHA2-192f": slhdsa.sha2_192f, "SLH-DSA-SHAKE-192f": slhdsa.shake_192f,
            "SLH-DSA-SHA2-256f": slhdsa.sha2_256f, "SLH-DSA-SHAKE-256f": slhdsa.shake_256f,
        }

    def kem_keygen(self, profile=ML_KEM_512, rng=None):
        _check_kem(profile)
        ek, dk = self._kem.key_derive(_randbytes(rng, 64))
        return KemKeyPair(ek, dk, profile)

    def kem_encapsulate(self, public_key, rng=None, profile=ML_KEM_512):
        _check_kem(profile)
        _check_kem_sizes(profile, public=public_key)
        try:
            secret, ct = self._kem._encaps_internal(public_key, _randbytes(rng, 32))
        except ValueError as exc:
            raise ProviderError(f"encapsulation failed: {exc}") from exc
        return ct, SharedSecret(secret)

    def kem_decapsulate(self, ciphertext, private_key, profile=ML_KEM_512):
        _check_kem(profile)
        _check_kem_sizes(profile, private=private_key, ciphertext=ciphertext)
        try:
            return SharedSecret(self._kem.decaps(private_key, ciphertext))
        except ValueError as exc:
            raise DecapsulationError(str(exc)) from exc

    def dsa_keygen(self, profile, rng=None):
        _check_dsa(profile)
        if profile in self._mldsa:
            pk, sk = self._mldsa[profile].key_derive(_randbytes(rng, 32))
            return DsaKeyPair(pk, sk, profile)
        par = self._slh_params[profile]
        sk_seed, sk_prf, pk_seed = (_randbytes(rng, par.n) for _ in range(3))
        from slhdsa.lowlevel.addresses import Address
        from slhdsa.lowlevel.xmss import XMSS

        pk_root = XMSS(par).node(sk_seed, 0, par.h_m, pk_seed, Address(par.d - 1, 0))
        return DsaKeyPair(pk_seed + pk_root, sk_seed + sk_prf + pk_seed + pk_root, profile)

    def dsa_sign(self, message, private):
        _check_dsa(private.profile)
        if private.profile in self._mldsa:
            return self._mldsa[private.profile].sign(private.private_key, message, deterministic=True)
        sk = self._slhdsa.SecretKey.from_digest(private.private_key, self._slh_params[private.profile])
        return sk.sign_pure(message)

    def dsa_verify(self, message, signature, public_key, profile):
        _check_dsa(profile)
        if len(signature) != SIGNATURE_LENGTHS[profile]:
            return False
        try:
            if profile in self._mldsa:
                return bool(self._mldsa[profile].verify(public_key, message, signature))
            pk = self._slhdsa.PublicKey.from_digest(public_key, self._slh_params[profile])
            return bool(pk.verify_pure(message, signature))
        except Exception:  # malformed keys or signatures verify as False
            return False


def _shake(data: bytes, n: int) -> bytes:
    return hashlib.shake_256(data).digest(n)


class MockProvider(Provider):
    """Deterministic, insecure stand-in with real-sized keys and outputs.

    KEM: the public key is a SHAKE expansion of the private seed and the
    ciphertext is the encapsulated message masked by a pad derived from the
    public key, so decapsulation with the right private key recovers it.
    DSA: the "public" key equals the secret seed and signatures are keyed
    SHAKE outputs.
    """

    name = "mock"

    def __init__(self, seed: int = 0) -> None:
        self._rng = random.Random(seed)

    def _rand(self, rng, n):
        return (rng or self._rng).randbytes(n)

    def kem_keygen(self, profile=ML_KEM_512, rng=None):
        _check_kem(profile)
        pk_len, sk_len, _ = _KEM_SIZES[profile]
        seed = self._rand(rng, 32)
        public = _shake(b"mock-kem-pk" + seed, pk_len)
        private = (seed + public)[:sk_len].ljust(sk_len, b"\0")
        return KemKeyPair(public, private, profile)

    def _pad(self, public: bytes, ct_len: int) -> bytes:
        return _shake(b"mock-kem-pad" + public, ct_len)

    def kem_encapsulate(self, public_key, rng=None, profile=ML_KEM_512):
        _check_kem(profile)
        _check_kem_sizes(profile, public=public_key)
        ct_len = _KEM_SIZES[profile][2]
        m = self._rand(rng, 32)
        body = m + _shake(b"mock-kem-fill" + m, ct_len - 32)
        ct = bytes(a ^ b for a, b in zip(body, self._pad(public_key, ct_len)))
        return ct, SharedSecret(hashlib.sha3_256(m + ct).digest())

    def kem_decapsulate(self, ciphertext, private_key, profile=ML_KEM_512):
        _check_kem(profile)
        _check_kem_sizes(profile, private=private_key, ciphertext=ciphertext)
        ct_len = len(ciphertext)
        public = private_key[32:32 + _KEM_SIZES[profile][0]]
        m = bytes(a ^ b for a, b in zip(ciphertext[:32], self._pad(public, ct_len)))
        return SharedSecret(hashlib.sha3_256(m + ciphertext).digest())

    def dsa_keygen(self, profile, rng=None):
        _check_dsa(profile)
        key = self._rand(rng, _DSA_PUBLIC_LEN[profile])
        return DsaKeyPair(key, key, profile)

    def _tag(self, message: bytes, key: bytes, profile: str) -> bytes:
        return _shake(b"mock-dsa" + len(key).to_bytes(2, "big") + key + message,
                      SIGNATURE_LENGTHS[profile])

    def dsa_sign(self, message, private):
        _check_dsa(private.profile)
        return self._tag(message, private.private_key, private.profile)

    def dsa_verify(self, message, signature, public_key, profile):
        _check_dsa(profile)
        return hmac.compare_digest(signature, self._tag(message, public_key, profile))


_default: Optional[Provider] = None


def get_provider(name: Optional[str] = None) -> Provider:
    """Provider chosen by ``name`` or the ``QKDPQC_PROVIDER`` variable (default real)."""
    global _default
    choice = (name or os.environ.get(PROVIDER_ENV) or "real").lower()
    if choice == "mock":
        return MockProvider()
    if choice != "real":
        raise ProviderError(f"unknown provider {choice!r}")
    if _default is None:
        _default = RealProvider()
    return _default


# --- ECDH ------------------------------------------------------------------

CURVES = {
    "NIST-P-256": ec.SECP256R1(),
    "Brainpool-P-256": ec.BrainpoolP256R1(),
}
_CURVE_ORDERS = {
    "NIST-P-256": 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551,
    "Brainpool-P-256": 0xA9FB57DBA1EEA9BC3E660A909D838D718C397AA3B561A6F7901E0E82974856A7,
}


@dataclass(frozen=True)
class EcdhKeyPair:
    private_scalar: bytes
    public_point: bytes
    curve: str


def _curve(name: str) -> ec.EllipticCurve:
    try:
        return CURVES[name]
    except KeyError:
        raise UnsupportedProfile(f"unsupported curve {name!r}") from None


def ecdh_keygen(curve: str, rng: Optional[random.Random] = None) -> EcdhKeyPair:
    """Private scalar uniform in [1, n-1]; public point in uncompressed SEC1 form."""
    _curve(curve)
    order = _CURVE_ORDERS[curve]
    scalar = 1 + (rng.randrange(order - 1) if rng is not None else secrets.randbelow(order - 1))
    key = ec.derive_private_key(scalar, _curve(curve))
    public = key.public_key().public_bytes(serialization.Encoding.X962,
                                           serialization.PublicFormat.UncompressedPoint)
    return EcdhKeyPair(scalar.to_bytes(32, "big"), public, curve)


def load_public_point(curve: str, point: bytes) -> ec.EllipticCurvePublicKey:
    if not point or point == b"\x00":
        raise EcdhError("point at infinity")
    try:
        return ec.EllipticCurvePublicKey.from_encoded_point(_curve(curve), point)
    except ValueError as exc:
        raise EcdhError(f"invalid public point: {exc}") from exc


def ecdh_shared_x(my_private: EcdhKeyPair, their_public: bytes) -> SharedSecret:
    """x-coordinate of ``p * Q`` as a 32-byte big-endian string."""
    peer = load_public_point(my_private.curve, their_public)
    key = ec.derive_private_key(int.from_bytes(my_private.private_scalar, "big"),
                                _curve(my_private.curve))
    return SharedSecret(key.exchange(ec.ECDH(), peer))


# --- KAT files -------------------------------------------------------------

def write_kat(path: Path | str, vectors: Iterable[Sequence[bytes]]) -> None:
    lines = [":".join(field.hex() for field in vec) for vec in vectors]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_kat(path: Path | str) -> list[tuple[bytes, ...]]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            out.append(tuple(bytes.fromhex(f) for f in line.split(":")))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad hex field") from exc
    return out


def kem_kat_vectors(provider: Provider, seeds: Iterable[int]) -> list[tuple[bytes, ...]]:
    """One ``(seed, public, private, ciphertext, secret)`` vector per seed."""
    vectors = []
    for seed in seeds:
        rng = random.Random(seed)
        kp = provider.kem_keygen(rng=rng)
        ct, ss = provider.kem_encapsulate(kp.public_key, rng=rng)
        vectors.append((seed.to_bytes(8, "big"), kp.public_key, kp.private_key, ct, ss.value))
    return vectors
