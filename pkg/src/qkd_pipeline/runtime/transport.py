"""Frame transports: an in-process pipe and a stream socket, behind one interface."""

from __future__ import annotations

import queue
import socket
import threading

from .wire import HEADER_SIZE, MsgType, ProtocolError, WireFrame, decode_frame, encode_frame, frame_size


class Authenticator:
    """Message authentication slot. The classical channel is assumed
    authenticated already, so this default does nothing."""

    tag_size = 0

    def tag(self, data: bytes) -> bytes:
        return b""

    def check(self, data: bytes, tag: bytes) -> bool:
        return True


class Transport:
    """Moves encoded frames; subclasses implement ``_send_bytes``/``_recv_bytes``."""

    def _send_bytes(self, data: bytes) -> None:
        raise NotImplementedError

    def _recv_bytes(self) -> bytes | None:
        raise NotImplementedError

    def close(self) -> None:
        pass


class Endpoint:
    """Sequenced frame I/O over a transport.

    Outgoing frames get strictly increasing ``frame_seq`` values under one
    lock; incoming ones are checked for the same property.
    """

    def __init__(self, transport: Transport, auth: Authenticator | None = None):
        self.transport = transport
        self.auth = auth or Authenticator()
        self._lock = threading.Lock()
        self._next_seq = 0
        self._last_rx = -1
        self.bytes_sent = 0

    def send(self, msg_type: MsgType, payload: bytes = b"") -> None:
        with self._lock:
            data = encode_frame(WireFrame(msg_type, self._next_seq, payload + self.auth.tag(payload)))
            self._next_seq += 1
            self.transport._send_bytes(data)
            self.bytes_sent += len(data)

    def recv(self) -> WireFrame | None:
        data = self.transport._recv_bytes()
        if data is None:
            return None
        frame, used = decode_frame(data)
        if used != len(data):
            raise ProtocolError("trailing bytes after frame")
        if frame.frame_seq <= self._last_rx:
            raise ProtocolError("frame_seq not increasing")
        self._last_rx = frame.frame_seq
        n = self.auth.tag_size
        payload, tag = (frame.payload[:-n], frame.payload[-n:]) if n else (frame.payload, b"")
        if not self.auth.check(payload, tag):
            raise ProtocolError("authentication failed")
        return WireFrame(frame.msg_type, frame.frame_seq, payload)

    def close(self) -> None:
        self.transport.close()


class InProcessTransport(Transport):
    _CLOSED = object()

    def __init__(self, tx: queue.Queue, rx: queue.Queue):
        self._tx, self._rx = tx, rx

    @classmethod
    def pair(cls) -> tuple["InProcessTransport", "InProcessTransport"]:
        a, b = queue.Queue(), queue.Queue()
        return cls(a, b), cls(b, a)

    def _send_bytes(self, data: bytes) -> None:
        self._tx.put(data)

    def _recv_bytes(self) -> bytes | None:
        item = self._rx.get()
        if item is self._CLOSED:
            self._rx.put(item)
            return None
        return item

    def close(self) -> None:
        self._tx.put(self._CLOSED)


class SocketTransport(Transport):
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._buf = bytearray()

    @classmethod
    def connect(cls, addr: str, timeout: float = 30.0) -> "SocketTransport":
        host, port = parse_addr(addr)
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return cls(sock)

    @classmethod
    def listen(cls, addr: str, timeout: float | None = 60.0) -> "SocketTransport":
        host, port = parse_addr(addr)
        with socket.create_server((host, port)) as srv:
            srv.settimeout(timeout)
            sock, _ = srv.accept()
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return cls(sock)

    def _send_bytes(self, data: bytes) -> None:
        self.sock.sendall(data)

    def _recv_bytes(self) -> bytes | None:
        while True:
            size = frame_size(self._buf) if len(self._buf) >= HEADER_SIZE else None
            if size is not None and len(self._buf) >= size:
                data = bytes(self._buf[:size])
                del self._buf[:size]
                return data
            try:
                chunk = self.sock.recv(1 << 20)
            except OSError:
                chunk = b""
            if not chunk:
                if self._buf:
                    raise ProtocolError("connection closed mid-frame")
                return None
            self._buf += chunk

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass


def parse_addr(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep:
        raise ValueError(f"address {addr!r} must be host:port")
    return host or "127.0.0.1", int(port)
