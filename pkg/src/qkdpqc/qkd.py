"""BB84 and E91 protocol engines over a classical message channel.

Each round uses one simulated qubit (or one Bell pair).  Alice and Bob are
separate objects that only exchange channel messages: qubits (0x12), Bob's
control-signal batch (0x10) and Alice's comparison batch (0x11).
"""
from __future__ import annotations

import enum
import random
import secrets
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from . import qsim, wire
from .channel import Channel, TappedChannel, channel_pair, run_parties

DEFAULT_N = 384
KEY_BITS = 256


class Protocol(enum.Enum):
    BB84 = "bb84"
    E91 = "e91"


class Adversary(enum.Enum):
    NONE = "none"
    INTERCEPT_RESEND = "intercept-resend"


class Bb84Control(enum.IntEnum):
    REST = 0
    HADAMARD = 1


class E91Control(enum.IntEnum):
    S1 = 1
    S2 = 2
    S3 = 3


_BB84_GATES = {
    Bb84Control.REST: qsim.gate_identity(),
    Bb84Control.HADAMARD: qsim.gate_h(),
}
_E91_GATES = {
    E91Control.S1: qsim.gate_identity(),
    E91Control.S2: qsim.gate_h(),
    E91Control.S3: qsim.gate_hs(),
}

# Bell pair after Alice's local setting on q_j; identical every round
_E91_PREPARED = {
    ctrl: qsim.apply(qsim.tensor(qsim.gate_identity(), gate), qsim.make_bell_pair())
    for ctrl, gate in _E91_GATES.items()
}


class QkdError(Exception):
    pass


@dataclass(frozen=True)
class RoundRecord:
    index: int
    alice_control: int
    bob_control: int
    alice_bit: int
    bob_bit: int
    kept: bool

    def to_line(self) -> str:
        return (f"{self.index},{int(self.alice_control)},{int(self.bob_control)},"
                f"{self.alice_bit},{self.bob_bit},{int(self.kept)}")


@dataclass(frozen=True)
class SiftedKey:
    bits: str
    rounds_total: int
    rounds_kept: int

    def __post_init__(self) -> None:
        if len(self.bits) != self.rounds_kept or self.rounds_kept > self.rounds_total:
            raise ValueError("inconsistent sifted key")

    def hex(self) -> str:
        return bits_to_bytes(self.bits).hex()


@dataclass(frozen=True)
class QkdSessionConfig:
    protocol: Protocol = Protocol.BB84
    target_bits: int = DEFAULT_N
    seed: Optional[int] = None
    adversary: Adversary = Adversary.NONE

    @property
    def rounds(self) -> int:
        return (2 if self.protocol is Protocol.BB84 else 3) * self.target_bits

    def validate(self) -> None:
        if self.target_bits <= 0:
            raise ValueError(f"target_bits must be positive, got {self.target_bits}")


def party_rng(seed: Optional[int], role: str) -> random.Random:
    """Per-party generator: seeded and reproducible, or OS entropy when unseeded."""
    if seed is None:
        return secrets.SystemRandom()
    return random.Random(f"{seed}/{role}")


# --- bit strings -----------------------------------------------------------

def bits_to_bytes(bits: str) -> bytes:
    """Pack MSB-first; a trailing partial byte is zero-filled on the right."""
    if not bits:
        return b""
    pad = (-len(bits)) % 8
    return int(bits + "0" * pad, 2).to_bytes((len(bits) + pad) // 8, "big")


def bytes_to_bits(data: bytes) -> str:
    return "".join(format(b, "08b") for b in data)


def condition_fixed_length(bits: str, n: int) -> str:
    """Left-pad with zeros when short, keep the first ``n`` bits when long."""
    if n <= 0:
        raise ValueError("n must be positive")
    if len(bits) < n:
        return "0" * (n - len(bits)) + bits
    return bits[:n]


def derive_r3(bits: str, n: int = DEFAULT_N, out_bits: int = KEY_BITS) -> bytes:
    """Condition a sifted key to ``n`` bits and keep the first ``out_bits`` as bytes."""
    if n < out_bits:
        raise ValueError(f"n={n} cannot supply a {out_bits}-bit key")
    return bits_to_bytes(condition_fixed_length(bits, n)[:out_bits])


def disagreement_rate(a: str, b: str) -> float:
    if len(a) != len(b):
        raise ValueError("keys differ in length")
    if not a:
        return 0.0
    return sum(x != y for x, y in zip(a, b)) / len(a)


# --- messages --------------------------------------------------------------

_AMPS = struct.Struct(">4d")


def encode_qubit(state: qsim.StateVector) -> bytes:
    if state.dim != 2:
        raise ValueError("only single qubits travel on the channel")
    a0, a1 = state.amplitudes
    return bytes([wire.QUBIT]) + _AMPS.pack(a0.real, a0.imag, a1.real, a1.imag)


def decode_qubit(msg: bytes) -> qsim.StateVector:
    r = wire.Reader(msg)
    wire.expect_type(r, wire.QUBIT)
    re0, im0, re1, im1 = _AMPS.unpack(r.take(_AMPS.size))
    r.finish()
    try:
        return qsim.StateVector([complex(re0, im0), complex(re1, im1)])
    except ValueError as exc:
        raise wire.DecodeError(str(exc)) from exc


def _encode_batch(kind: int, values: Sequence[int]) -> bytes:
    return bytes([kind]) + struct.pack(">I", len(values)) + bytes(int(v) for v in values)


def _decode_batch(kind: int, msg: bytes, allowed: Iterable[int], expected_len: int) -> list[int]:
    r = wire.Reader(msg)
    wire.expect_type(r, kind)
    count = r.u32()
    if count != expected_len:
        raise wire.DecodeError(f"batch has {count} entries, expected {expected_len}")
    values = list(r.take(count))
    r.finish()
    allowed = set(allowed)
    if any(v not in allowed for v in values):
        raise wire.DecodeError("batch contains an invalid value")
    return values


def encode_controls(values: Sequence[int]) -> bytes:
    return _encode_batch(wire.CONTROL_BATCH, values)


def decode_controls(msg: bytes, allowed: Iterable[int], expected_len: int) -> list[int]:
    return _decode_batch(wire.CONTROL_BATCH, msg, allowed, expected_len)


def encode_comparison(values: Sequence[int]) -> bytes:
    return _encode_batch(wire.COMPARISON_BATCH, values)


def decode_comparison(msg: bytes, expected_len: int) -> list[int]:
    return _decode_batch(wire.COMPARISON_BATCH, msg, (0, 1), expected_len)


# --- parties ---------------------------------------------------------------

@dataclass
class _PartyLog:
    controls: list = field(default_factory=list)
    bits: list = field(default_factory=list)
    comparison: list = field(default_factory=list)


class _Party:
    controls_type: type

    def __init__(self, rounds: int, rng: random.Random,
                 controls: Optional[Sequence[int]] = None) -> None:
        if rounds <= 0:
            raise ValueError("rounds must be positive")
        if controls is not None and len(controls) != rounds:
            raise ValueError("forced control sequence has the wrong length")
        self.rounds = rounds
        self.rng = rng
        self._forced = controls
        self.log = _PartyLog()

    def _control(self, i: int):
        if self._forced is not None:
            return self.controls_type(self._forced[i])
        members = list(self.controls_type)
        return members[self.rng.randrange(len(members))]

    def sifted(self) -> SiftedKey:
        kept = "".join(str(b) for b, c in zip(self.log.bits, self.log.comparison) if c)
        return SiftedKey(kept, self.rounds, len(kept))


class Bb84Alice(_Party):
    """Prepares and sends qubits, then compares Bob's controls with her own."""

    controls_type = Bb84Control

    def run(self, channel: Channel) -> SiftedKey:
        for i in range(self.rounds):
            bit = self.rng.randrange(2)
            ctrl = self._control(i)
            state = qsim.ket("0")
            if bit:
                state = qsim.apply(qsim.gate_x(), state)
            state = qsim.apply(_BB84_GATES[ctrl], state)
            self.log.bits.append(bit)
            self.log.controls.append(ctrl)
            channel.send(encode_qubit(state))
        theirs = decode_controls(channel.recv(), [int(c) for c in Bb84Control], self.rounds)
        self.log.comparison = [int(a == b) for a, b in zip(self.log.controls, theirs)]
        channel.send(encode_comparison(self.log.comparison))
        return self.sifted()


class Bb84Bob(_Party):
    controls_type = Bb84Control

    def run(self, channel: Channel) -> SiftedKey:
        for i in range(self.rounds):
            state = decode_qubit(channel.recv())
            ctrl = self._control(i)
            measured = qsim.measure(qsim.apply(_BB84_GATES[ctrl], state), self.rng)
            self.log.controls.append(ctrl)
            self.log.bits.append(int(measured.bits))
        channel.send(encode_controls(self.log.controls))
        self.log.comparison = decode_comparison(channel.recv(), self.rounds)
        return self.sifted()


class E91Alice(_Party):
    """Holds the pair source: prepares each Bell pair, keeps ``q_j``, ships ``q_i`` to Bob."""

    controls_type = E91Control

    def run(self, channel: Channel) -> SiftedKey:
        for i in range(self.rounds):
            ctrl = self._control(i)
            pair = _E91_PREPARED[ctrl]
            bit, collapsed = qsim.measure_qubit(pair, 1, self.rng)
            self.log.controls.append(ctrl)
            self.log.bits.append(bit)
            channel.send(encode_qubit(qsim.remaining_qubit(collapsed, 1, bit)))
        theirs = decode_controls(channel.recv(), [int(c) for c in E91Control], self.rounds)
        self.log.comparison = [int(a == b) for a, b in zip(self.log.controls, theirs)]
        channel.send(encode_comparison(self.log.comparison))
        return self.sifted()


class E91Bob(_Party):
    controls_type = E91Control

    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.raw_bits: list[int] = []

    def run(self, channel: Channel) -> SiftedKey:
        for i in range(self.rounds):
            half = decode_qubit(channel.recv())
            ctrl = self._control(i)
            measured = qsim.measure(qsim.apply(_E91_GATES[ctrl], half), self.rng)
            self.log.controls.append(ctrl)
            self.raw_bits.append(int(measured.bits))
        channel.send(encode_controls(self.log.controls))
        self.log.comparison = decode_comparison(channel.recv(), self.rounds)
        # S3 on both sides yields anti-correlated outcomes; c=1 and b=S3 implies a=S3
        self.log.bits = [
            bit ^ 1 if (c and ctrl is E91Control.S3) else bit
            for bit, ctrl, c in zip(self.raw_bits, self.log.controls, self.log.comparison)
        ]
        return self.sifted()


def make_parties(config: QkdSessionConfig, alice_rng: random.Random, bob_rng: random.Random,
                 alice_controls=None, bob_controls=None) -> tuple[_Party, _Party]:
    config.validate()
    if config.protocol is Protocol.BB84:
        return (Bb84Alice(config.rounds, alice_rng, alice_controls),
                Bb84Bob(config.rounds, bob_rng, bob_controls))
    return (E91Alice(config.rounds, alice_rng, alice_controls),
            E91Bob(config.rounds, bob_rng, bob_controls))


# --- adversary -------------------------------------------------------------

def intercept_resend(state: qsim.StateVector, basis: Bb84Control,
                     rng: qsim.RandomSource) -> qsim.StateVector:
    """Measure ``state`` in ``basis`` and return the re-prepared collapsed qubit."""
    gate = _BB84_GATES[Bb84Control(basis)]
    outcome = qsim.measure(qsim.apply(gate, state), rng)
    return qsim.apply(gate, outcome.collapsed)


class InterceptResend:
    """Outbound tap on Alice's endpoint that attacks every qubit in flight."""

    def __init__(self, rng: random.Random) -> None:
        self.rng = rng
        self.intercepted = 0

    def __call__(self, msg: bytes) -> bytes:
        if not msg or msg[0] != wire.QUBIT:
            return msg
        basis = Bb84Control(self.rng.randrange(2))
        self.intercepted += 1
        return encode_qubit(intercept_resend(decode_qubit(msg), basis, self.rng))


def attach_adversary(channel: Channel, config: QkdSessionConfig) -> Channel:
    if config.adversary is Adversary.INTERCEPT_RESEND:
        return TappedChannel(channel, outbound=InterceptResend(party_rng(config.seed, "eve")))
    return channel


# --- sessions --------------------------------------------------------------

def transcript_of(alice: _Party, bob: _Party) -> list[RoundRecord]:
    return [
        RoundRecord(i, int(alice.log.controls[i]), int(bob.log.controls[i]),
                    alice.log.bits[i], bob.log.bits[i], bool(alice.log.comparison[i]))
        for i in range(alice.rounds)
    ]


def sift(transcript: Sequence[RoundRecord]) -> SiftedKey:
    bits = "".join(str(r.alice_bit) for r in transcript if r.kept)
    return SiftedKey(bits, len(transcript), len(bits))


def run_session(config: QkdSessionConfig, *, alice_controls=None, bob_controls=None,
                transport: str = "inproc"):
    """Run both parties concurrently; returns ``(alice_key, bob_key, transcript)``."""
    alice, bob = make_parties(config, party_rng(config.seed, "alice"),
                              party_rng(config.seed, "bob"), alice_controls, bob_controls)
    a_end, b_end = channel_pair(transport)
    try:
        a_key, b_key = run_parties(lambda: alice.run(attach_adversary(a_end, config)),
                                   lambda: bob.run(b_end), (a_end, b_end))
    finally:
        a_end.close()
        b_end.close()
    return a_key, b_key, transcript_of(alice, bob)


def bb84_run(config: QkdSessionConfig, **kwargs):
    if config.protocol is not Protocol.BB84:
        raise QkdError("bb84_run needs a BB84 config")
    return run_session(config, **kwargs)


def e91_run(config: QkdSessionConfig, **kwargs):
    if config.protocol is not Protocol.E91:
        raise QkdError("e91_run needs an E91 config")
    return run_session(config, **kwargs)


def export_transcript(transcript: Sequence[RoundRecord]) -> str:
    return "".join(r.to_line() + "\n" for r in transcript)
