"""Message type bytes and length-prefixed field helpers shared by all codecs."""
from __future__ import annotations

import struct

CLIENT_HELLO = 0x01
SERVER_HELLO = 0x02
CONTROL_BATCH = 0x10
COMPARISON_BATCH = 0x11
QUBIT = 0x12
VERIFY_REQUEST = 0x20
SRV_PAYLOAD = 0x21

_LEN = struct.Struct(">I")
MAX_FIELD = (1 << 32) - 1


class DecodeError(ValueError):
    """Raised for any malformed wire message."""


def pack_field(value: bytes) -> bytes:
    if len(value) > MAX_FIELD:
        raise ValueError("field too long for a 4-byte length prefix")
    return _LEN.pack(len(value)) + value


class Reader:
    """Cursor over a received buffer; every read is bounds-checked."""

    def __init__(self, buf: bytes) -> None:
        self.buf = bytes(buf)
        self.pos = 0

    def remaining(self) -> int:
        return len(self.buf) - self.pos

    def take(self, n: int) -> bytes:
        if n > self.remaining():
            raise DecodeError(f"truncated buffer: need {n} bytes, have {self.remaining()}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def byte(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return _LEN.unpack(self.take(4))[0]

    def field(self) -> bytes:
        n = self.u32()
        if n > self.remaining():
            raise DecodeError(f"length overflow: field claims {n} bytes, {self.remaining()} left")
        return self.take(n)

    def finish(self) -> None:
        if self.remaining():
            raise DecodeError(f"{self.remaining()} trailing bytes")


def expect_type(reader: Reader, expected: int) -> None:
    t = reader.byte()
    if t != expected:
        raise DecodeError(f"unexpected message type 0x{t:02x}, wanted 0x{expected:02x}")
