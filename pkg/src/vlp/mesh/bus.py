"""Topic and service transports: an in-process bus and a TCP hub with clients."""

from __future__ import annotations

import collections
import itertools
import logging
import os
import socket
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from typing import Callable

from vlp.errors import ServiceTimeoutError, TransportError, UnknownServiceError, WireFormatError
from vlp.mesh.wire import (KIND_REQUEST, KIND_RESPONSE, Body, ControlBody, ErrorBody, ServiceCall,
                           TopicMessage, decode, encode, read_frame)

log = logging.getLogger(__name__)

Handler = Callable[[Body], Body]
SUBSCRIBE_SERVICE = "_sys/subscribe"
ADVERTISE_SERVICE = "_sys/advertise"
DEFAULT_BIND = "127.0.0.1:0"


def now_ns() -> int:
    return time.monotonic_ns()


class Subscription:
    """Bounded FIFO of received messages; overflow drops the oldest entry."""

    def __init__(self, topic: str, depth: int = 1):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.topic = topic
        self.depth = depth
        self.dropped = 0
        self.received = 0
        self._q: collections.deque = collections.deque()
        self._cv = threading.Condition()
        self._closed = False

    def put(self, msg: TopicMessage) -> None:
        with self._cv:
            if len(self._q) >= self.depth:
                self._q.popleft()
                self.dropped += 1
            self._q.append(msg)
            self.received += 1
            self._cv.notify_all()

    def get(self, timeout: float | None = None) -> TopicMessage | None:
        """Next message, or ``None`` on timeout or close."""
        with self._cv:
            if not self._cv.wait_for(lambda: self._q or self._closed, timeout):
                return None
            return self._q.popleft() if self._q else None

    def __len__(self) -> int:
        with self._cv:
            return len(self._q)

    def drain(self) -> list[TopicMessage]:
        with self._cv:
            out = list(self._q)
            self._q.clear()
            return out

    def close(self) -> None:
        with self._cv:
            self._closed = True
            self._cv.notify_all()


class Publisher:
    def __init__(self, bus: "Bus", topic: str):
        self.bus = bus
        self.topic = topic
        self._seq = itertools.count()
        self._last_ts = 0

    def publish(self, body: Body, timestamp_ns: int | None = None) -> TopicMessage:
        ts = now_ns() if timestamp_ns is None else int(timestamp_ns)
        ts = max(ts, self._last_ts)
        self._last_ts = ts
        msg = TopicMessage(self.topic, next(self._seq) & 0xFFFFFFFF, ts, body)
        self.bus.deliver(msg)
        return msg


class Bus:
    """Common interface for both transports."""

    def advertise(self, topic: str) -> Publisher:
        return Publisher(self, topic)

    def deliver(self, msg: TopicMessage) -> None:  # pragma: no cover - interface
        raise NotImplementedError

    def subscribe(self, topic: str, depth: int = 1) -> Subscription:  # pragma: no cover
        raise NotImplementedError

    def advertise_service(self, name: str, handler: Handler) -> None:  # pragma: no cover
        raise NotImplementedError

    def call_service(self, name: str, body: Body, timeout: float = 5.0) -> Body:  # pragma: no cover
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _raise_error_body(name: str, body: Body) -> Body:
    if isinstance(body, ErrorBody):
        if body.code == ErrorBody.UNKNOWN_SERVICE:
            raise UnknownServiceError(name)
        raise TransportError(f"{name}: {body.message}")
    return body


class InProcessBus(Bus):
    """Direct hand-off between threads of one process.

    Messages are still run through ``encode``/``decode`` when ``serialize``
    is set so that in-process runs pay the same serialisation cost as TCP.
    """

    def __init__(self, serialize: bool = True, workers: int = 4):
        self.serialize = serialize
        self._subs: dict[str, list[Subscription]] = collections.defaultdict(list)
        self._services: dict[str, Handler] = {}
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="svc")
        self._req = itertools.count(1)

    def deliver(self, msg: TopicMessage) -> None:
        if self.serialize:
            msg = decode(encode(msg))
        with self._lock:
            subs = list(self._subs.get(msg.topic, ()))
        for s in subs:
            s.put(msg)

    def subscribe(self, topic: str, depth: int = 1) -> Subscription:
        sub = Subscription(topic, depth)
        with self._lock:
            self._subs[topic].append(sub)
        return sub

    def advertise_service(self, name: str, handler: Handler) -> None:
        with self._lock:
            self._services[name] = handler

    def call_service(self, name: str, body: Body, timeout: float = 5.0) -> Body:
        with self._lock:
            handler = self._services.get(name)
        if handler is None:
            raise UnknownServiceError(name)
        rid = next(self._req) & 0xFFFFFFFF
        if self.serialize:
            body = decode(encode(ServiceCall(KIND_REQUEST, name, rid, now_ns(), body))).body
        fut = self._pool.submit(handler, body)
        try:
            resp = fut.result(timeout=timeout)
        except FutureTimeout:
            raise ServiceTimeoutError(f"{name} did not answer within {timeout} s") from None
        if self.serialize:
            resp = decode(encode(ServiceCall(KIND_RESPONSE, name, rid, now_ns(), resp))).body
        return _raise_error_body(name, resp)

    def close(self) -> None:
        self._pool.shutdown(wait=False, cancel_futures=True)
        with self._lock:
            for subs in self._subs.values():
                for s in subs:
                    s.close()


# -- TCP ----------------------------------------------------------------------

def parse_address(addr: str | None) -> tuple[str, int]:
    addr = addr or os.environ.get("VLP_BIND") or DEFAULT_BIND
    host, _, port = addr.rpartition(":")
    if not host:
        raise ValueError(f"address {addr!r} must be host:port")
    return host, int(port)


class _Conn:
    """A framed socket with a send lock (one writer at a time)."""

    def __init__(self, sock: socket.socket):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.sock = sock
        self._wlock = threading.Lock()
        self._rfile = sock.makefile("rb", buffering=1 << 16)

    def send(self, data: bytes) -> None:
        with self._wlock:
            self.sock.sendall(data)

    def read_exact(self, n: int) -> bytes:
        data = self._rfile.read(n)
        if data is None or len(data) < n:
            raise TransportError("connection closed")
        return data

    def recv(self):
        return decode(read_frame(self.read_exact))

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class TcpHub:
    """Static-address broker: routes topics to subscribers and requests to providers."""

    def __init__(self, address: str | None = None):
        host, port = parse_address(address)
        self._srv = socket.create_server((host, port))
        self.address = "%s:%d" % self._srv.getsockname()[:2]
        self._lock = threading.Lock()
        self._subs: dict[str, list[_Conn]] = collections.defaultdict(list)
        self._providers: dict[str, _Conn] = {}
        self._pending: dict[int, tuple[_Conn, int]] = {}
        self._ids = itertools.count(1)
        self._conns: list[_Conn] = []
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._accept_loop, name="hub-accept", daemon=True)
        self._thread.start()

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                sock, _ = self._srv.accept()
            except OSError:
                return
            conn = _Conn(sock)
            with self._lock:
                self._conns.append(conn)
            threading.Thread(target=self._serve, args=(conn,), name="hub-conn", daemon=True).start()

    def _reply(self, conn, call: ServiceCall, body: Body):
        conn.send(encode(ServiceCall(KIND_RESPONSE, call.service, call.request_id, now_ns(), body)))

    def _serve(self, conn: _Conn):
        try:
            while True:
                msg = conn.recv()
                if isinstance(msg, TopicMessage):
                    with self._lock:
                        targets = list(self._subs.get(msg.topic, ()))
                    data = encode(msg)
                    for t in targets:
                        try:
                            t.send(data)
                        except OSError:
                            log.warning("dropping dead subscriber on %s", msg.topic)
                elif msg.kind == KIND_REQUEST:
                    self._route_request(conn, msg)
                else:
                    with self._lock:
                        origin = self._pending.pop(msg.request_id, None)
                    if origin is not None:
                        oconn, oid = origin
                        oconn.send(encode(ServiceCall(KIND_RESPONSE, msg.service, oid, msg.timestamp_ns,
                                                      msg.body)))
        except (TransportError, OSError, WireFormatError) as e:
            log.debug("hub connection ended: %s", e)
        finally:
            self._forget(conn)

    def _route_request(self, conn: _Conn, call: ServiceCall):
        if call.service in (SUBSCRIBE_SERVICE, ADVERTISE_SERVICE):
            if not isinstance(call.body, ControlBody):
                self._reply(conn, call, ErrorBody(ErrorBody.MALFORMED, "control body expected"))
                return
            with self._lock:
                if call.service == SUBSCRIBE_SERVICE:
                    self._subs[call.body.name].append(conn)
                else:
                    self._providers[call.body.name] = conn
            self._reply(conn, call, call.body)
            return
        with self._lock:
            provider = self._providers.get(call.service)
            if provider is not None:
                hid = next(self._ids) & 0xFFFFFFFF
                self._pending[hid] = (conn, call.request_id)
        if provider is None:
            self._reply(conn, call, ErrorBody(ErrorBody.UNKNOWN_SERVICE, call.service))
            return
        provider.send(encode(ServiceCall(KIND_REQUEST, call.service, hid, call.timestamp_ns, call.body)))

    def _forget(self, conn: _Conn):
        with self._lock:
            for subs in self._subs.values():
                if conn in subs:
                    subs.remove(conn)
            for name in [n for n, c in self._providers.items() if c is conn]:
                del self._providers[name]
            if conn in self._conns:
                self._conns.remove(conn)
        conn.close()

    def close(self):
        self._stop.set()
        # shutdown wakes the blocked accept(); close alone leaves the listener alive
        try:
            self._srv.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._srv.close()
        self._thread.join(1.0)
        with self._lock:
            conns = list(self._conns)
        for c in conns:
            c.close()


class TcpBus(Bus):
    """Client side of a :class:`TcpHub`; same API as :class:`InProcessBus`."""

    def __init__(self, address: str, connect_timeout: float = 10.0, workers: int = 4):
        host, port = parse_address(address)
        deadline = time.monotonic() + connect_timeout
        while True:
            try:
                sock = socket.create_connection((host, port), timeout=connect_timeout)
                break
            except OSError as e:
                if time.monotonic() > deadline:
                    raise TransportError(f"cannot reach hub at {address}: {e}") from e
                time.sleep(0.05)
        sock.settimeout(None)
        self._conn = _Conn(sock)
        self._lock = threading.Lock()
        self._subs: dict[str, list[Subscription]] = collections.defaultdict(list)
        self._handlers: dict[str, Handler] = {}
        self._pending: dict[int, Future] = {}
        self._ids = itertools.count(1)
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="tcp-svc")
        self._closed = False
        self.error: Exception | None = None
        self._reader = threading.Thread(target=self._read_loop, name="tcp-read", daemon=True)
        self._reader.start()

    def _read_loop(self):
        try:
            while True:
                msg = self._conn.recv()
                if isinstance(msg, TopicMessage):
                    with self._lock:
                        subs = list(self._subs.get(msg.topic, ()))
                    for s in subs:
                        s.put(msg)
                elif msg.kind == KIND_RESPONSE:
                    with self._lock:
                        fut = self._pending.pop(msg.request_id, None)
                    if fut is not None:
                        fut.set_result(msg.body)
                else:
                    self._pool.submit(self._handle, msg)
        except (TransportError, OSError, WireFormatError) as e:
            if not self._closed:
                self.error = e
                log.debug("client reader ended: %s", e)
        finally:
            with self._lock:
                pending = list(self._pending.values())
                self._pending.clear()
                subs = [s for ss in self._subs.values() for s in ss]
            for fut in pending:
                if not fut.done():
                    fut.set_exception(TransportError("connection lost"))
            for s in subs:
                s.close()

    def _handle(self, call: ServiceCall):
        handler = self._handlers.get(call.service)
        try:
            body = handler(call.body) if handler else ErrorBody(ErrorBody.UNKNOWN_SERVICE, call.service)
        except Exception as e:  # handler faults travel back as error bodies
            log.exception("service %s failed", call.service)
            body = ErrorBody(ErrorBody.HANDLER_FAILED, f"{type(e).__name__}: {e}"[:1000])
        try:
            self._conn.send(encode(ServiceCall(KIND_RESPONSE, call.service, call.request_id, now_ns(), body)))
        except OSError:
            pass

    def _request(self, name: str, body: Body, timeout: float) -> Body:
        rid = next(self._ids) & 0xFFFFFFFF
        fut: Future = Future()
        with self._lock:
            self._pending[rid] = fut
        try:
            self._conn.send(encode(ServiceCall(KIND_REQUEST, name, rid, now_ns(), body)))
        except OSError as e:
            raise TransportError(str(e)) from e
        try:
            return fut.result(timeout=timeout)
        except FutureTimeout:
            raise ServiceTimeoutError(f"{name} did not answer within {timeout} s") from None
        finally:
            with self._lock:
                self._pending.pop(rid, None)

    def deliver(self, msg: TopicMessage) -> None:
        try:
            self._conn.send(encode(msg))
        except OSError as e:
            raise TransportError(str(e)) from e

    def subscribe(self, topic: str, depth: int = 1) -> Subscription:
        sub = Subscription(topic, depth)
        with self._lock:
            first = topic not in self._subs
            self._subs[topic].append(sub)
        if first:
            self._request(SUBSCRIBE_SERVICE, ControlBody(topic, min(depth, 0xFFFF)), 5.0)
        return sub

    def advertise_service(self, name: str, handler: Handler) -> None:
        self._handlers[name] = handler
        self._request(ADVERTISE_SERVICE, ControlBody(name), 5.0)

    def call_service(self, name: str, body: Body, timeout: float = 5.0) -> Body:
        return _raise_error_body(name, self._request(name, body, timeout))

    def close(self) -> None:
        self._closed = True
        self._conn.close()
        self._pool.shutdown(wait=False, cancel_futures=True)
