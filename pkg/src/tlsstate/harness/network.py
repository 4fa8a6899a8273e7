"""TCP adapters that put a real TLS peer behind the SutAdapter contract."""

from __future__ import annotations

import logging
import select
import shlex
import socket
import subprocess
import threading
import time

from ..automata import CLOSED
from ..errors import ConfigError, QueryError, SutUnavailable
from ..tls.constants import ProtocolVersion
from .alphabets import Role
from .base import SutAdapter
from .mapper import Mapper

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 0.2


def _close(sock):
    if sock is None:
        return
    try:
        sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    sock.close()


class _TlsSession(SutAdapter):
    """Shared send/collect logic; subclasses provide ``_open``."""

    def __init__(self, role: Role, version: ProtocolVersion, timeout: float = DEFAULT_TIMEOUT,
                 flight_gap: float | None = None, parallel: int = 1):
        if timeout <= 0:
            raise ConfigError("timeout must be positive")
        self.role = role
        self.version = version
        self.timeout = timeout
        # once a flight has started, stop after this much silence
        self.flight_gap = flight_gap if flight_gap is not None else min(timeout, 0.02)
        self.parallel = parallel
        self.supports_parallel = parallel > 1
        self.sock = None
        self.mapper = None
        self.closed = True

    def _open(self) -> socket.socket:
        raise NotImplementedError

    def reset(self):
        _close(self.sock)
        self.sock = None
        self.mapper = Mapper(self.role, self.version)
        self.sock = self._open()
        self.closed = False

    def _collect(self) -> tuple[bytes, bool]:
        data = bytearray()
        wait = self.timeout
        while True:
            ready, _, _ = select.select([self.sock], [], [], wait)
            if not ready:
                return bytes(data), False
            try:
                chunk = self.sock.recv(65536)
            except (ConnectionResetError, ConnectionAbortedError):
                return bytes(data), True
            except OSError as exc:
                raise QueryError(f"receive failed: {exc}") from exc
            if not chunk:
                return bytes(data), True
            data += chunk
            wait = self.flight_gap

    def step(self, symbol):
        if self.sock is None:
            raise QueryError("step() before reset()")
        if self.closed:
            return CLOSED
        payload = self.mapper.concretize(symbol)
        try:
            self.sock.sendall(payload)
        except (BrokenPipeError, ConnectionResetError, ConnectionAbortedError):
            pass  # whatever the peer sent before closing is still worth reading
        except OSError as exc:
            raise QueryError(f"send failed: {exc}") from exc
        data, closed = self._collect()
        self.closed = closed
        return self.mapper.abstract_response(data, closed)

    def finish(self):
        _close(self.sock)
        self.sock = None
        self.closed = True

    def close(self):
        self.finish()


class TlsServerTarget(_TlsSession):
    """Fuzz a TLS server: every reset opens a fresh connection to host:port."""

    def __init__(self, host: str, port: int, version: ProtocolVersion, timeout: float = DEFAULT_TIMEOUT,
                 connect_timeout: float = 3.0, parallel: int = 1, flight_gap: float | None = None):
        super().__init__(Role.FUZZ_SERVER, version, timeout, flight_gap, parallel)
        self.host, self.port = host, port
        self.connect_timeout = connect_timeout

    def _open(self):
        try:
            sock = socket.create_connection((self.host, self.port), timeout=self.connect_timeout)
        except OSError as exc:
            raise SutUnavailable(f"cannot connect to {self.host}:{self.port}: {exc}") from exc
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return sock

    def spawn(self):
        return TlsServerTarget(self.host, self.port, self.version, self.timeout,
                               self.connect_timeout, self.parallel, self.flight_gap)


class Listener:
    """A listening socket shared by every session of a fuzz-client run."""

    def __init__(self, host: str, port: int, backlog: int = 64):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self.sock.bind((host, port))
        except OSError as exc:
            self.sock.close()
            raise SutUnavailable(f"cannot listen on {host}:{port}: {exc}") from exc
        self.sock.listen(backlog)
        self.address = self.sock.getsockname()
        self._lock = threading.Lock()

    def accept(self, timeout: float) -> socket.socket:
        deadline = time.monotonic() + timeout
        while True:
            left = deadline - time.monotonic()
            if left <= 0:
                raise SutUnavailable(f"no client connected to {self.address} within {timeout:.1f}s")
            ready, _, _ = select.select([self.sock], [], [], left)
            if not ready:
                continue
            with self._lock:
                try:
                    self.sock.setblocking(False)
                    conn, _ = self.sock.accept()
                except BlockingIOError:
                    continue  # another session took it
                finally:
                    self.sock.setblocking(True)
            conn.setblocking(True)
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return conn

    def close(self):
        self.sock.close()


class TlsClientTarget(_TlsSession):
    """Fuzz a TLS client: every reset runs the trigger and accepts the next connection.

    The client's opening ClientHello is consumed during reset, so the first
    input symbol answers it.
    """

    def __init__(self, listener: Listener, version: ProtocolVersion, trigger: str | None,
                 timeout: float = DEFAULT_TIMEOUT, accept_timeout: float = 5.0, parallel: int = 1,
                 flight_gap: float | None = None):
        super().__init__(Role.FUZZ_CLIENT, version, timeout, flight_gap, parallel)
        if not trigger:
            raise ConfigError("fuzzing a client over the network needs a trigger command")
        self.listener = listener
        self.trigger = trigger
        self.accept_timeout = accept_timeout
        self._children: list[subprocess.Popen] = []

    def _run_trigger(self):
        self._children = [p for p in self._children if p.poll() is None]
        try:
            self._children.append(subprocess.Popen(shlex.split(self.trigger), stdin=subprocess.DEVNULL,
                                                   stdout=subprocess.DEVNULL,
                                                   stderr=subprocess.DEVNULL))
        except OSError as exc:
            raise SutUnavailable(f"trigger command failed: {exc}") from exc

    def _open(self):
        self._run_trigger()
        sock = self.listener.accept(self.accept_timeout)
        self.sock = sock
        # the opening ClientHello must not leak into the first answer
        deadline = time.monotonic() + self.accept_timeout
        while time.monotonic() < deadline:
            data, closed = self._collect()
            events = self.mapper.endpoint.receive(data) if data else []
            if any(ev.token == "ClientHello" for ev in events):
                return sock
            if closed:
                raise QueryError("client closed the connection before sending ClientHello")
        raise QueryError("client connected but sent no ClientHello")

    def spawn(self):
        return TlsClientTarget(self.listener, self.version, self.trigger, self.timeout,
                               self.accept_timeout, self.parallel, self.flight_gap)

    def close(self):
        super().close()
        for p in self._children:
            if p.poll() is None:
                p.kill()
            p.wait()
        self._children.clear()
