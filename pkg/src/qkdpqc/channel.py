"""Ordered, reliable, bidirectional byte-message channels.

Two transports: an in-process pair backed by queues, and TCP with a 4-byte
big-endian length prefix per message.  ``TappedChannel`` wraps either one so
tests (and the intercept-resend adversary) can rewrite messages in flight.
"""
from __future__ import annotations

import queue
import socket
import struct
import threading
from typing import Callable, Optional

_FRAME = struct.Struct(">I")
MAX_FRAME = 64 * 1024 * 1024

Tap = Callable[[bytes], bytes]


class ChannelError(Exception):
    """Transport failure: peer gone, timeout, or oversize frame."""


class ChannelClosed(ChannelError):
    pass


class Channel:
    def send(self, msg: bytes) -> None:
        raise NotImplementedError

    def recv(self) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc) -> None:
        self.close()


_CLOSED = object()


class QueueChannel(Channel):
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, timeout: Optional[float] = 60.0):
        self._inbox = inbox
        self._outbox = outbox
        self._timeout = timeout
        self._closed = False

    def send(self, msg: bytes) -> None:
        if self._closed:
            raise ChannelClosed("send on closed channel")
        self._outbox.put(bytes(msg))

    def recv(self) -> bytes:
        try:
            item = self._inbox.get(timeout=self._timeout)
        except queue.Empty:
            raise ChannelError("receive timed out") from None
        if item is _CLOSED:
            self._inbox.put(_CLOSED)
            raise ChannelClosed("peer closed the channel")
        return item

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(_CLOSED)


def inproc_pair(timeout: Optional[float] = 60.0) -> tuple[QueueChannel, QueueChannel]:
    a_to_b: queue.Queue = queue.Queue()
    b_to_a: queue.Queue = queue.Queue()
    return QueueChannel(b_to_a, a_to_b, timeout), QueueChannel(a_to_b, b_to_a, timeout)


class TcpChannel(Channel):
    def __init__(self, sock: socket.socket) -> None:
        self._sock = sock
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._rfile = sock.makefile("rb")

    def send(self, msg: bytes) -> None:
        try:
            self._sock.sendall(_FRAME.pack(len(msg)) + msg)
        except OSError as exc:
            raise ChannelError(f"send failed: {exc}") from exc

    def _read_exact(self, n: int) -> bytes:
        try:
            data = self._rfile.read(n)
        except OSError as exc:
            raise ChannelError(f"receive failed: {exc}") from exc
        if len(data) < n:
            raise ChannelClosed("peer closed the connection")
        return data

    def recv(self) -> bytes:
        (n,) = _FRAME.unpack(self._read_exact(_FRAME.size))
        if n > MAX_FRAME:
            raise ChannelError(f"frame of {n} bytes exceeds limit")
        return self._read_exact(n)

    def close(self) -> None:
        # shutdown first so a reader blocked in another thread wakes up
        for step in (lambda: self._sock.shutdown(socket.SHUT_RDWR), self._rfile.close, self._sock.close):
            try:
                step()
            except OSError:
                pass


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


def tcp_connect(addr: str, timeout: float = 10.0) -> TcpChannel:
    try:
        sock = socket.create_connection(parse_address(addr), timeout=timeout)
    except OSError as exc:
        raise ChannelError(f"cannot connect to {addr}: {exc}") from exc
    sock.settimeout(None)
    return TcpChannel(sock)


class TcpListener:
    def __init__(self, addr: str = "127.0.0.1:0") -> None:
        self._sock = socket.create_server(parse_address(addr))

    @property
    def address(self) -> str:
        host, port = self._sock.getsockname()[:2]
        return f"{host}:{port}"

    def accept(self, timeout: Optional[float] = 60.0) -> TcpChannel:
        self._sock.settimeout(timeout)
        try:
            conn, _ = self._sock.accept()
        except OSError as exc:
            raise ChannelError(f"accept failed: {exc}") from exc
        conn.settimeout(None)
        return TcpChannel(conn)

    def close(self) -> None:
        self._sock.close()


def tcp_pair() -> tuple[TcpChannel, TcpChannel]:
    """Two connected TCP endpoints over loopback (client, server)."""
    listener = TcpListener()
    try:
        result: dict = {}
        t = threading.Thread(target=lambda: result.setdefault("server", listener.accept()))
        t.start()
        client = tcp_connect(listener.address)
        t.join()
    finally:
        listener.close()
    return client, result["server"]


class TappedChannel(Channel):
    """Applies ``outbound`` to every sent message and ``inbound`` to every received one."""

    def __init__(self, inner: Channel, outbound: Optional[Tap] = None, inbound: Optional[Tap] = None):
        self.inner = inner
        self.outbound = outbound
        self.inbound = inbound

    def send(self, msg: bytes) -> None:
        self.inner.send(self.outbound(msg) if self.outbound else msg)

    def recv(self) -> bytes:
        msg = self.inner.recv()
        return self.inbound(msg) if self.inbound else msg

    def close(self) -> None:
        self.inner.close()


def run_parties(first: Callable[[], object], second: Callable[[], object],
                channels: tuple[Channel, ...] = ()) -> tuple:
    """Run two party functions concurrently and return both results.

    If either party raises, its channel endpoints are closed so the other side
    unblocks; the most informative exception (not a ``ChannelClosed`` side
    effect) is re-raised.
    """
    results: list = [None, None]
    errors: list = [None, None]

    def runner(i: int, fn: Callable[[], object]) -> None:
        try:
            results[i] = fn()
        except BaseException as exc:  # noqa: BLE001 - re-raised in caller
            errors[i] = exc
            for ch in channels:
                ch.close()

    threads = [threading.Thread(target=runner, args=(i, fn), daemon=True)
               for i, fn in enumerate((first, second))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    real = [e for e in errors if e is not None and not isinstance(e, ChannelClosed)]
    if real:
        raise real[0]
    if any(errors):
        raise next(e for e in errors if e is not None)
    return results[0], results[1]


def channel_pair(transport: str = "inproc") -> tuple[Channel, Channel]:
    """Connected ``(initiator, responder)`` endpoints for ``inproc`` or ``tcp``."""
    if transport == "inproc":
        return inproc_pair()
    if transport == "tcp":
        return tcp_pair()
    raise ValueError(f"unknown transport {transport!r}")
