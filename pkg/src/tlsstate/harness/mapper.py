"""Translation between abstract symbols and concrete TLS flights.

``Endpoint`` is one side of a TLS connection that can emit any message on
demand, whatever the handshake state, and digests whatever the peer sends.
Missing key material is replaced by zeros so that out-of-order symbols still
produce well-formed records.  Both the learner's mapper and the fixture
simulator are built on it, which keeps their key schedules in lockstep.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

from ..automata import CLOSED, EMPTY
from ..errors import (ContractError, KeyExchangeError, MalformedHandshake, MalformedRecord,
                      RecordAuthError)
from ..tls.constants import (EMPTY_RENEGOTIATION_INFO_SCSV, SECP256R1, SUITES, AlertDescription,
                             AlertLevel, ContentType, ExtensionType, HandshakeType, ProtocolVersion,
                             suite_for)
from ..tls.crypto import (EcdheKeyPair, SessionSecrets, certificate_public_key, compute_verify_data,
                          derive_key_block, ecdhe_exchange, ecdhe_server_params, protect_record,
                          rsa_client_key_exchange, rsa_decrypt_premaster, test_credentials,
                          unprotect_record)
from ..tls.messages import (Certificate, ClientHello, ClientKeyExchange, Finished, HandshakeReassembler,
                            ServerHello, ServerHelloDone, ServerKeyExchange, decode_handshake,
                            encode_handshake)
from ..tls.records import TlsRecord, decode_records, encode_record
from .alphabets import FUZZ_CLIENT_INPUTS, FUZZ_SERVER_INPUTS, Role

APP_PAYLOAD = b"GET / HTTP/1.0\r\n\r\n"
DECRYPT_ERROR = "DecryptError"
MALFORMED = "MalformedResponse"

_TOKEN = {
    HandshakeType.HELLO_REQUEST: "HelloRequest",
    HandshakeType.CLIENT_HELLO: "ClientHello",
    HandshakeType.SERVER_HELLO: "ServerHello",
    HandshakeType.CERTIFICATE: "Certificate",
    HandshakeType.SERVER_KEY_EXCHANGE: "ServerKeyExchange",
    HandshakeType.CERTIFICATE_REQUEST: "CertificateRequest",
    HandshakeType.SERVER_HELLO_DONE: "ServerHelloDone",
    HandshakeType.CERTIFICATE_VERIFY: "CertificateVerify",
    HandshakeType.CLIENT_KEY_EXCHANGE: "ClientKeyExchange",
    HandshakeType.FINISHED: "Finished",
}

_ALERTS = {
    "AlertWarning": (AlertLevel.WARNING, 90),  # user_canceled
    "AlertFatal": (AlertLevel.FATAL, AlertDescription.UNEXPECTED_MESSAGE),
}


def _ext_u16_list(values) -> bytes:
    body = b"".join(struct.pack("!H", v) for v in values)
    return struct.pack("!H", len(body)) + body


@dataclass
class Event:
    """One received unit: a handshake message, CCS, alert or application record."""

    token: str
    message: object = None
    payload: bytes = b""


@dataclass
class Endpoint:
    side: str                      # "client" or "server": the TLS role this endpoint plays
    version: ProtocolVersion
    rng: object = os.urandom
    app_payload: bytes = APP_PAYLOAD
    secrets: SessionSecrets = field(init=False)

    def __post_init__(self):
        if self.side not in ("client", "server"):
            raise ContractError(f"side must be client or server, not {self.side!r}")
        self.peer = "server" if self.side == "client" else "client"
        self.secrets = SessionSecrets(self.version, rng=self.rng)
        self.cert_der, self.key = test_credentials()
        self.inbuf = b""
        self.handshake_in = HandshakeReassembler()
        self.peer_public_key = None
        self.peer_ske: ServerKeyExchange | None = None
        self.ephemeral: EcdheKeyPair | None = None
        self.offered_suites: tuple[int, ...] = ()
        self.peer_wants_ri = False
        self.peer_ec_formats = False

    # -- key schedule ---------------------------------------------------

    def _rekey(self) -> None:
        """Derive keys from whatever is known; gaps are filled with zeros."""
        s = self.secrets
        if s.suite is None:
            s.suite = suite_for(self.version, "rsa")
        s.client_random = s.client_random or bytes(32)
        s.server_random = s.server_random or bytes(32)
        if s.pre_master_secret is None:
            s.pre_master_secret = bytes(48)
        s.master_secret = None
        s.keys = None
        derive_key_block(s, s.suite)

    def _activate(self, direction: str) -> None:
        self._rekey()
        self.secrets.activate(direction)

    # -- output ---------------------------------------------------------

    def _record(self, ctype: ContentType, payload: bytes) -> bytes:
        rec = TlsRecord(ctype, self.version, payload)
        if self.secrets.active[self.side]:
            rec = protect_record(rec, self.secrets, self.side)
        return encode_record(rec)

    def _handshake(self, msg) -> bytes:
        raw = encode_handshake(msg)
        self.secrets.add_handshake(raw)
        return self._record(ContentType.HANDSHAKE, raw)

    def client_hello(self, kx: str = "rsa") -> bytes:
        suite = suite_for(self.version, kx)
        self.secrets.client_random = self.rng(32)
        exts = [(ExtensionType.RENEGOTIATION_INFO, b"\x00")]
        if kx == "ecdhe":
            exts += [(ExtensionType.SUPPORTED_GROUPS, _ext_u16_list([SECP256R1])),
                     (ExtensionType.EC_POINT_FORMATS, b"\x01\x00")]
        if self.version is ProtocolVersion.TLS12:
            exts.append((ExtensionType.SIGNATURE_ALGORITHMS, _ext_u16_list([0x0401])))
        return self._handshake(ClientHello(self.version, self.secrets.client_random,
                                           (suite.code,), extensions=tuple(exts)))

    def server_hello(self, kx: str = "rsa") -> bytes:
        suite = suite_for(self.version, kx)
        self.secrets.server_random = self.rng(32)
        self.secrets.suite = suite
        exts = []
        if self.peer_wants_ri:
            exts.append((ExtensionType.RENEGOTIATION_INFO, b"\x00"))
        if kx == "ecdhe" and self.peer_ec_formats:
            exts.append((ExtensionType.EC_POINT_FORMATS, b"\x01\x00"))
        return self._handshake(ServerHello(self.version, self.secrets.server_random, suite.code,
                                           extensions=tuple(exts) or None))

    def certificate(self) -> bytes:
        return self._handshake(Certificate((self.cert_der,)))

    def server_key_exchange(self) -> bytes:
        ske, self.ephemeral = ecdhe_server_params(self.secrets, self.key)
        return self._handshake(ske)

    def server_hello_done(self) -> bytes:
        return self._handshake(ServerHelloDone())

    def client_key_exchange(self) -> bytes:
        s = self.secrets
        suite = s.suite or suite_for(self.version, "rsa")
        if suite.kx == "ecdhe":
            if self.peer_ske is not None:
                try:
                    cke, _ = ecdhe_exchange(self.peer_ske, s)
                    return self._handshake(cke)
                except KeyExchangeError:
                    pass
            # no usable server share: the server falls back to zeros as well
            s.pre_master_secret = bytes(48)
            return self._handshake(ClientKeyExchange.ecdhe(EcdheKeyPair().public))
        if self.peer_public_key is not None:
            try:
                return self._handshake(rsa_client_key_exchange(self.peer_public_key, s))
            except KeyExchangeError:
                pass
        s.pre_master_secret = bytes(48)
        return self._handshake(ClientKeyExchange.rsa(bytes(256)))

    def change_cipher_spec(self) -> bytes:
        out = self._record(ContentType.CHANGE_CIPHER_SPEC, b"\x01")
        self._activate(self.side)
        return out

    def finished(self) -> bytes:
        if self.secrets.master_secret is None:
            self._rekey()
        return self._handshake(Finished(compute_verify_data(self.secrets, self.side)))

    def application_data(self, payload: bytes | None = None) -> bytes:
        return self._record(ContentType.APPLICATION_DATA,
                            self.app_payload if payload is None else payload)

    def alert(self, token: str) -> bytes:
        level, desc = _ALERTS[token]
        return self._record(ContentType.ALERT, bytes([level, desc]))

    # -- input ----------------------------------------------------------

    def receive(self, data: bytes) -> list[Event]:
        self.inbuf += data
        try:
            records, self.inbuf = decode_records(self.inbuf)
        except MalformedRecord:
            self.inbuf = b""
            return [Event(MALFORMED)]
        events = []
        for rec in records:
            if self.secrets.active[self.peer]:
                try:
                    rec = unprotect_record(rec, self.secrets, self.peer)
                except RecordAuthError:
                    events.append(Event(DECRYPT_ERROR))
                    continue
            events.extend(self._digest(rec))
        return events

    def _digest(self, rec: TlsRecord) -> list[Event]:
        ct = rec.content_type
        if ct is ContentType.CHANGE_CIPHER_SPEC:
            if rec.payload != b"\x01":
                return [Event(MALFORMED)]
            self._activate(self.peer)
            return [Event("ChangeCipherSpec")]
        if ct is ContentType.ALERT:
            if len(rec.payload) != 2 or rec.payload[0] not in (1, 2):
                return [Event(MALFORMED)]
            level = "AlertWarning" if rec.payload[0] == AlertLevel.WARNING else "AlertFatal"
            return [Event(level, payload=rec.payload)]
        if ct is ContentType.APPLICATION_DATA:
            return [Event("ApplicationData" if rec.payload else "ApplicationDataEmpty",
                          payload=rec.payload)]
        events = []
        for raw in self.handshake_in.feed(rec.payload):
            try:
                msg = decode_handshake(raw, self.version)
            except MalformedHandshake:
                events.append(Event(MALFORMED))
                continue
            self.secrets.add_handshake(raw)
            self._absorb(msg)
            events.append(Event(_TOKEN[msg.msg_type], msg))
        return events

    def _absorb(self, msg) -> None:
        s = self.secrets
        if isinstance(msg, ClientHello):
            s.client_random = msg.random
            self.offered_suites = msg.cipher_suites
            self.peer_wants_ri = (EMPTY_RENEGOTIATION_INFO_SCSV in msg.cipher_suites
                                  or msg.extension(ExtensionType.RENEGOTIATION_INFO) is not None)
            self.peer_ec_formats = msg.extension(ExtensionType.EC_POINT_FORMATS) is not None
        elif isinstance(msg, ServerHello):
            s.server_random = msg.random
            s.suite = SUITES.get(msg.cipher_suite)
        elif isinstance(msg, Certificate):
            self.peer_public_key = None
            if msg.certificates:
                try:
                    self.peer_public_key = certificate_public_key(msg.certificates[0])
                except KeyExchangeError:
                    pass
        elif isinstance(msg, ServerKeyExchange):
            self.peer_ske = msg
        elif isinstance(msg, ClientKeyExchange) and self.side == "server":
            s.pre_master_secret = self._server_premaster(msg)

    def _server_premaster(self, cke: ClientKeyExchange) -> bytes:
        suite = self.secrets.suite or suite_for(self.version, "rsa")
        try:
            if suite.kx == "ecdhe":
                if self.ephemeral is None:
                    return bytes(48)
                return self.ephemeral.shared(cke.ec_point())
            premaster = rsa_decrypt_premaster(self.key, cke, self.secrets)
        except (KeyExchangeError, MalformedHandshake):
            return bytes(48)
        # implicit-rejection decryptors return junk rather than failing
        if premaster[:2] != self.version.wire:
            return bytes(48)
        return premaster


# -- the learner's mapper ----------------------------------------------------

class Mapper:
    """The learner's side: concretizes inputs and abstracts response flights."""

    def __init__(self, role: Role, version: ProtocolVersion, rng=os.urandom):
        self.role = role
        self.version = version
        side = "client" if role is Role.FUZZ_SERVER else "server"
        self.endpoint = Endpoint(side, version, rng)
        self.inputs = FUZZ_SERVER_INPUTS if role is Role.FUZZ_SERVER else FUZZ_CLIENT_INPUTS

    def concretize(self, symbol: str) -> bytes:
        if symbol not in self.inputs:
            raise ContractError(f"{symbol!r} is not an input when the role is {self.role.value}")
        e = self.endpoint
        emit = {
            "ClientHelloRSA": lambda: e.client_hello("rsa"),
            "ClientHelloECDHE": lambda: e.client_hello("ecdhe"),
            "ClientKeyExchange": e.client_key_exchange,
            "ServerHelloRSA": lambda: e.server_hello("rsa"),
            "ServerHelloECDHE": lambda: e.server_hello("ecdhe"),
            "ServerCertificate": e.certificate,
            "ServerKeyExchange": e.server_key_exchange,
            "ServerHelloDone": e.server_hello_done,
            "ChangeCipherSpec": e.change_cipher_spec,
            "Finished": e.finished,
            "ApplicationData": e.application_data,
            "ApplicationDataEmpty": lambda: e.application_data(b""),
            "AlertWarning": lambda: e.alert("AlertWarning"),
            "AlertFatal": lambda: e.alert("AlertFatal"),
        }.get(symbol)
        if emit is None:
            raise ContractError(f"unknown input symbol {symbol!r}")
        return emit()

    def abstract_response(self, data: bytes, closed: bool) -> str:
        tokens = [ev.token for ev in self.endpoint.receive(data)] if data else []
        if closed:
            tokens.append(CLOSED)
        return "/".join(tokens) if tokens else EMPTY
