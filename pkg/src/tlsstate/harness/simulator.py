"""Serve a fixture's abstract behaviour over the concrete TLS wire.

This is the mapper run backwards: incoming records are abstracted to the
fixture's input symbols, the fixture takes one transition, and the output
token is concretized into real TLS messages.  Server fixtures listen for
connections; client fixtures keep dialing the learner's listener.
"""

from __future__ import annotations

import logging
import socket
import threading
import time

from ..automata import CLOSED, EMPTY, MealyMachine
from ..tls.constants import TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256, ProtocolVersion
from .alphabets import Role
from .base import fixture_info, fixture_machine
from .mapper import Endpoint

log = logging.getLogger(__name__)


class FixtureSession:
    """One TLS connection driven by a fixture machine."""

    def __init__(self, machine: MealyMachine, side: str, version: ProtocolVersion):
        self.machine = machine
        self.state = machine.initial
        self.endpoint = Endpoint(side, version)
        self.hello_kx = "rsa"

    def opening(self) -> bytes:
        """Bytes a client sends unprompted when the connection opens."""
        return self.endpoint.client_hello("rsa") if self.endpoint.side == "client" else b""

    def symbol(self, event) -> str | None:
        tok = event.token
        if tok == "ClientHello":
            ecdhe = TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256.code in event.message.cipher_suites
            self.hello_kx = "ecdhe" if ecdhe else "rsa"
            return "ClientHelloECDHE" if ecdhe else "ClientHelloRSA"
        if tok == "ServerHello":
            ecdhe = event.message.cipher_suite == TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256.code
            return "ServerHelloECDHE" if ecdhe else "ServerHelloRSA"
        if tok == "Certificate":
            return "ServerCertificate"
        return tok

    def emit(self, output: str) -> tuple[bytes, bool]:
        e = self.endpoint
        out = bytearray()
        close = False
        for tok in output.split("/"):
            if tok == EMPTY:
                continue
            if tok == CLOSED:
                close = True
                continue
            make = {
                "ServerHello": lambda: e.server_hello(self.hello_kx),
                "Certificate": e.certificate,
                "ServerKeyExchange": e.server_key_exchange,
                "ServerHelloDone": e.server_hello_done,
                "ClientHello": lambda: e.client_hello("rsa"),
                "ClientKeyExchange": e.client_key_exchange,
                "ChangeCipherSpec": e.change_cipher_spec,
                "Finished": e.finished,
                "ApplicationData": e.application_data,
                "ApplicationDataEmpty": lambda: e.application_data(b""),
                "AlertWarning": lambda: e.alert("AlertWarning"),
                "AlertFatal": lambda: e.alert("AlertFatal"),
            }.get(tok)
            if make is None:
                raise ValueError(f"fixture output token {tok!r} has no concrete form")
            out += make()
        return bytes(out), close

    def feed(self, data: bytes) -> tuple[bytes, bool]:
        """Process received bytes; return the reply and whether to close."""
        reply = bytearray()
        for event in self.endpoint.receive(data):
            sym = self.symbol(event)
            try:
                idx = self.machine.input_index(sym)
            except Exception:
                log.warning("ignoring %s: not an input of the fixture", event.token)
                continue
            self.state, output = self.machine.table[self.state][idx]
            chunk, close = self.emit(output)
            reply += chunk
            if close:
                return bytes(reply), True
        return bytes(reply), False


def run_session(conn: socket.socket, session: FixtureSession, stop: threading.Event) -> None:
    conn.settimeout(0.5)
    try:
        first = session.opening()
        if first:
            conn.sendall(first)
        while not stop.is_set():
            try:
                data = conn.recv(65536)
            except socket.timeout:
                continue
            if not data:
                return
            reply, close = session.feed(data)
            if reply:
                conn.sendall(reply)
            if close:
                return
    except OSError:
        return
    finally:
        try:
            conn.shutdown(socket.SHUT_WR)
        except OSError:
            pass
        conn.close()


class FixtureServer:
    """Accepts connections on host:port and plays a server fixture on each."""

    def __init__(self, name: str, host: str = "127.0.0.1", port: int = 0):
        info = fixture_info(name)
        if info.role is not Role.FUZZ_SERVER:
            raise ValueError(f"{name} is a client fixture")
        self.machine = fixture_machine(name)
        self.version = ProtocolVersion.parse(info.version)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind((host, port))
        self.sock.listen(128)
        self.sock.settimeout(0.2)
        self.address = self.sock.getsockname()
        self.stop_event = threading.Event()
        self.thread = None

    def serve_forever(self):
        while not self.stop_event.is_set():
            try:
                conn, _ = self.sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            session = FixtureSession(self.machine, "server", self.version)
            threading.Thread(target=run_session, args=(conn, session, self.stop_event),
                             daemon=True).start()

    def start(self):
        self.thread = threading.Thread(target=self.serve_forever, daemon=True)
        self.thread.start()
        return self

    def stop(self):
        self.stop_event.set()
        if self.thread is not None:
            self.thread.join()
        self.sock.close()


class FixtureClient:
    """Keeps ``connections`` client sessions dialing host:port."""

    def __init__(self, name: str, host: str, port: int, connections: int = 8):
        info = fixture_info(name)
        if info.role is not Role.FUZZ_CLIENT:
            raise ValueError(f"{name} is a server fixture")
        self.machine = fixture_machine(name)
        self.version = ProtocolVersion.parse(info.version)
        self.target = (host, port)
        self.connections = connections
        self.stop_event = threading.Event()
        self.threads = []

    def _loop(self):
        session = None
        while not self.stop_event.is_set():
            # prepared before dialing so the opening flight goes out at once
            session = session or FixtureSession(self.machine, "client", self.version)
            try:
                conn = socket.create_connection(self.target, timeout=1.0)
            except OSError:
                time.sleep(0.05)
                continue
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            run_session(conn, session, self.stop_event)
            session = None

    def start(self):
        for _ in range(self.connections):
            t = threading.Thread(target=self._loop, daemon=True)
            t.start()
            self.threads.append(t)
        return self

    def stop(self):
        self.stop_event.set()
        for t in self.threads:
            t.join()


def serve_fixture(name: str, host: str, port: int, connections: int = 8):
    """Start the simulator matching the fixture's role; returns an object with ``stop()``."""
    if fixture_info(name).role is Role.FUZZ_SERVER:
        return FixtureServer(name, host, port).start()
    return FixtureClient(name, host, port, connections).start()
