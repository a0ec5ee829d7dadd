"""Topic-based publish/subscribe message bus over TCP.

Wire protocol: each frame is a 4-byte big-endian unsigned length N
followed by N bytes of UTF-8 JSON:

    {"op": "sub"|"unsub"|"pub"|"msg"|"ping"|"pong",
     "topic": str, "ts": float, "body": object}

Frames above 1 MiB and unknown ops are protocol errors. Topics are
dot-separated [a-z0-9_-]+ segments; subscription patterns may use "*"
for exactly one segment and a trailing "#" for zero or more segments
(AMQP-style routing keys).

Delivery is at-most-once and in-memory: a published message goes to every
connection with at least one matching pattern, once per connection, and
per-topic order from any single publisher is preserved per subscriber.
There is no persistence; durability is the recorder's job.
"""

from __future__ import annotations

import json
import logging
import math
import os
import queue
import re
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

MAX_FRAME = 1 << 20          # 1 MiB
DEFAULT_PORT = 7878
RECONNECT_BACKOFF = 1.0      # seconds between client reconnect attempts
ADDR_ENV = "INCUBATOR_BUS_ADDR"

_SEGMENT = re.compile(r"^[a-z0-9_-]+$")
_OPS = {"sub", "unsub", "pub", "msg", "ping", "pong"}


class BusError(Exception):
    pass


class ProtocolError(BusError):
    pass


class BusConnectionError(BusError):
    pass


def default_address() -> tuple[str, int]:
    raw = os.environ.get(ADDR_ENV, f"127.0.0.1:{DEFAULT_PORT}")
    host, _, port = raw.rpartition(":")
    return host or "127.0.0.1", int(port)


def validate_topic(topic: str) -> None:
    parts = topic.split(".")
    if not parts or not all(_SEGMENT.match(p) for p in parts):
        raise ValueError(f"invalid topic {topic!r}")


def validate_pattern(pattern: str) -> None:
    parts = pattern.split(".")
    if not parts:
        raise ValueError("empty pattern")
    for i, p in enumerate(parts):
        if p == "#":
            if i != len(parts) - 1:
                raise ValueError(f"'#' only allowed as the last segment: {pattern!r}")
        elif p != "*" and not _SEGMENT.match(p):
            raise ValueError(f"invalid pattern segment {p!r} in {pattern!r}")


def topic_matches(pattern: str, topic: str) -> bool:
    """Match a topic against a pattern ('*' one segment, trailing '#' rest)."""
    pp = pattern.split(".")
    tp = topic.split(".")
    if pp and pp[-1] == "#":
        head = pp[:-1]
        if len(tp) < len(head):
            return False
        return all(p == "*" or p == t for p, t in zip(head, tp[:len(head)]))
    if len(pp) != len(tp):
        return False
    return all(p == "*" or p == t for p, t in zip(pp, tp))


@dataclass(frozen=True)
class Message:
    topic: str
    ts: float
    body: dict

    def to_record(self) -> dict:
        return {"topic": self.topic, "ts": self.ts, "body": self.body}


def encode_frame(op: str, topic: str = "", ts: float = 0.0,
                 body: dict | None = None) -> bytes:
    payload = json.dumps(
        {"op": op, "topic": topic, "ts": ts, "body": body if body is not None else {}},
        separators=(",", ":"),
    ).encode("utf-8")
    if len(payload) > MAX_FRAME:
        raise ProtocolError(f"frame of {len(payload)} bytes exceeds 1 MiB limit")
    return struct.pack(">I", len(payload)) + payload


def read_frame(sock: socket.socket) -> dict | None:
    """Read one frame; None on clean EOF; ProtocolError on a bad frame."""
    header = _read_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME:
        raise ProtocolError(f"frame length {length} exceeds 1 MiB limit")
    payload = _read_exact(sock, length)
    if payload is None:
        return None
    try:
        frame = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"undecodable frame: {exc}") from exc
    if not isinstance(frame, dict) or frame.get("op") not in _OPS:
        raise ProtocolError(f"unknown op in frame: {frame!r}")
    if not isinstance(frame.get("body", {}), dict):
        raise ProtocolError("frame body must be a JSON object")
    return frame


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except OSError:
            return None
        if not chunk:
            return None
        buf += chunk
    return buf


# ---------------------------------------------------------------------------
# Broker
# ---------------------------------------------------------------------------

class _Connection:
    """One client connection: reader thread plus an outbound writer queue.

    The writer queue keeps slow subscribers from blocking publishers; a
    full queue (stuck consumer) drops the connection.
    """

    OUTBOX_LIMIT = 10000

    def __init__(self, sock: socket.socket, broker: "Broker"):
        self.sock = sock
        self.broker = broker
        self.patterns: set[str] = set()
        self.outbox: queue.Queue[bytes | None] = queue.Queue(self.OUTBOX_LIMIT)
        self.alive = True

    def start(self) -> None:
        threading.Thread(target=self._read_loop, daemon=True).start()
        threading.Thread(target=self._write_loop, daemon=True).start()

    def send(self, data: bytes) -> None:
        try:
            self.outbox.put_nowait(data)
        except queue.Full:
            logger.warning("dropping slow subscriber")
            self.close()

    def close(self) -> None:
        if not self.alive:
            return
        self.alive = False
        try:
            self.outbox.put_nowait(None)
        except queue.Full:
            pass
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass
        self.broker._forget(self)

    def _write_loop(self) -> None:
        while True:
            data = self.outbox.get()
            if data is None or not self.alive:
                return
            try:
                self.sock.sendall(data)
            except OSError:
                self.close()
                return

    def _read_loop(self) -> None:
        while self.alive:
            try:
                frame = read_frame(self.sock)
            except ProtocolError as exc:
                logger.warning("closing connection on protocol error: %s", exc)
                break
            if frame is None:
                break
            try:
                self._handle(frame)
            except (ProtocolError, ValueError) as exc:
                logger.warning("closing connection on bad frame: %s", exc)
                break
        self.close()

    def _handle(self, frame: dict) -> None:
        op = frame["op"]
        if op == "pub":
            topic = frame.get("topic", "")
            validate_topic(topic)
            ts = frame.get("ts", 0.0)
            if not isinstance(ts, (int, float)) or not math.isfinite(ts):
                raise ProtocolError(f"bad ts {ts!r}")
            self.broker._route(Message(topic, float(ts), frame.get("body", {})))
        elif op == "sub":
            pattern = frame.get("topic", "")
            validate_pattern(pattern)
            with self.broker._lock:
                self.patterns.add(pattern)
        elif op == "unsub":
            with self.broker._lock:
                self.patterns.discard(frame.get("topic", ""))
        elif op == "ping":
            self.send(encode_frame("pong"))
        else:
            raise ProtocolError(f"client may not send op {op!r}")


class Broker:
    """In-memory pub/sub broker. Start with serve(); stop with close()."""

    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_PORT):
        self.host = host
        self.port = port
        self._server: socket.socket | None = None
        self._lock = threading.Lock()
        self._connections: set[_Connection] = set()
        self._closed = False

    @property
    def address(self) -> tuple[str, int]:
        return self.host, self.port

    def serve(self) -> "Broker":
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            server.bind((self.host, self.port))
        except OSError as exc:
            server.close()
            raise BusConnectionError(f"cannot bind {self.host}:{self.port}: {exc}") from exc
        server.listen(64)
        self._server = server
        self.port = server.getsockname()[1]
        threading.Thread(target=self._accept_loop, daemon=True).start()
        logger.info("broker listening on %s:%d", self.host, self.port)
        return self

    def close(self) -> None:
        self._closed = True
        if self._server is not None:
            # shutdown before close: close() alone does not wake a blocked
            # accept(), which would keep the port bound and ghost-accept
            # later connections
            try:
                self._server.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                self._server.close()
            except OSError:
                pass
        with self._lock:
            conns = list(self._connections)
        for conn in conns:
            conn.close()

    def _accept_loop(self) -> None:
        assert self._server is not None
        while not self._closed:
            try:
                sock, _ = self._server.accept()
            except OSError:
                return
            if self._closed:
                sock.close()
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn = _Connection(sock, self)
            with self._lock:
                self._connections.add(conn)
            conn.start()

    def _forget(self, conn: _Connection) -> None:
        with self._lock:
            self._connections.discard(conn)

    def _route(self, msg: Message) -> None:
        data = encode_frame("msg", msg.topic, msg.ts, msg.body)
        with self._lock:
            targets = [c for c in self._connections
                       if any(topic_matches(p, msg.topic) for p in c.patterns)]
        for conn in targets:
            conn.send(data)


# ---------------------------------------------------------------------------
# Client
# ---------------------------------------------------------------------------

class Subscription:
    """Stream of messages for one or more patterns; a message matching
    several of them is still delivered once. Consume with get() or iterate."""

    def __init__(self, patterns: tuple[str, ...], client: "BusClient"):
        self.patterns = patterns
        self._client = client
        self._queue: queue.Queue[Message | None] = queue.Queue()
        self._closed = False

    def matches(self, topic: str) -> bool:
        return any(topic_matches(p, topic) for p in self.patterns)

    def get(self, timeout: float | None = None) -> Message | None:
        """Next message, or None on timeout / closed subscription."""
        if self._closed and self._queue.empty():
            return None
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            return None

    def __iter__(self):
        while True:
            msg = self._queue.get()
            if msg is None:
                return
            yield msg

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._client._unsubscribe(self)
        self._queue.put(None)

    def _deliver(self, msg: Message) -> None:
        if not self._closed:
            self._queue.put(msg)


class BusClient:
    """Bus client handle; safe to share across threads.

    Publishing is fire-and-forget. A broken connection triggers automatic
    reconnection (1 s backoff) with resubscription of all patterns;
    publishes attempted while disconnected raise BusConnectionError.
    """

    def __init__(self, host: str | None = None, port: int | None = None,
                 reconnect: bool = True):
        env_host, env_port = default_address()
        self.host = host if host is not None else env_host
        self.port = port if port is not None else env_port
        self.reconnect = reconnect
        self._sock: socket.socket | None = None
        self._send_lock = threading.Lock()
        self._subs_lock = threading.Lock()
        self._subs: list[Subscription] = []
        self._pong = threading.Event()
        self._closed = False
        self._connect()
        threading.Thread(target=self._read_loop, daemon=True).start()

    def sync(self, timeout: float = 5.0) -> bool:
        """Round-trip a ping. The broker handles each connection's frames
        in order, so the pong confirms every prior subscribe is active."""
        self._pong.clear()
        self._send(encode_frame("ping"))
        return self._pong.wait(timeout)

    def _connect(self) -> None:
        try:
            sock = socket.create_connection((self.host, self.port), timeout=5.0)
        except OSError as exc:
            raise BusConnectionError(
                f"cannot reach broker at {self.host}:{self.port}: {exc}") from exc
        if sock.getsockname() == sock.getpeername():
            # reconnecting to a dead broker on an ephemeral port can make the
            # kernel pick source == destination: a TCP self-connection
            sock.close()
            raise BusConnectionError("self-connection detected, broker is down")
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        with self._subs_lock:
            patterns = {p for s in self._subs for p in s.patterns}
        for pattern in patterns:
            self._send(encode_frame("sub", pattern))

    def publish(self, topic: str, body: dict, ts: float | None = None) -> None:
        """Publish a JSON-object body. ts defaults to the wall clock;
        services on the simulated timeline pass their own timestamps."""
        validate_topic(topic)
        if not isinstance(body, dict):
            raise ValueError("message body must be a JSON object")
        self._send(encode_frame("pub", topic, time.time() if ts is None else ts, body))

    def subscribe(self, *patterns: str) -> Subscription:
        if not patterns:
            raise ValueError("subscribe needs at least one pattern")
        for pattern in patterns:
            validate_pattern(pattern)
        sub = Subscription(tuple(patterns), self)
        with self._subs_lock:
            self._subs.append(sub)
        for pattern in patterns:
            self._send(encode_frame("sub", pattern))
        return sub

    def _unsubscribe(self, sub: Subscription) -> None:
        with self._subs_lock:
            if sub in self._subs:
                self._subs.remove(sub)
            dropped = [p for p in sub.patterns
                       if not any(p in s.patterns for s in self._subs)]
        for pattern in dropped:
            try:
                self._send(encode_frame("unsub", pattern))
            except BusConnectionError:
                pass

    def close(self) -> None:
        self._closed = True
        with self._subs_lock:
            subs = list(self._subs)
        for sub in subs:
            sub._closed = True
            sub._queue.put(None)
        if self._sock is not None:
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                self._sock.close()
            except OSError:
                pass

    def _send(self, data: bytes) -> None:
        with self._send_lock:
            if self._sock is None:
                raise BusConnectionError("not connected")
            try:
                self._sock.sendall(data)
            except OSError as exc:
                raise BusConnectionError(f"broker connection lost: {exc}") from exc

    def _read_loop(self) -> None:
        while not self._closed:
            sock = self._sock
            if sock is None:
                if not self._try_reconnect():
                    return
                continue
            try:
                frame = read_frame(sock)
            except ProtocolError:
                frame = None
            if frame is None:
                if self._closed:
                    return
                with self._send_lock:
                    self._sock = None
                try:
                    sock.close()
                except OSError:
                    pass
                if not self.reconnect or not self._try_reconnect():
                    self.close()
                    return
                continue
            if frame["op"] == "msg":
                msg = Message(frame["topic"], float(frame["ts"]), frame["body"])
                with self._subs_lock:
                    subs = list(self._subs)
                for sub in subs:
                    if sub.matches(msg.topic):
                        sub._deliver(msg)
            elif frame["op"] == "pong":
                self._pong.set()

    def _try_reconnect(self) -> bool:
        while not self._closed:
            time.sleep(RECONNECT_BACKOFF)
            try:
                self._connect()
                logger.info("reconnected to broker at %s:%d", self.host, self.port)
                return True
            except BusConnectionError:
                continue
        return False
