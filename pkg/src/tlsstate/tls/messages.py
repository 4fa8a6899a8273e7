"""Handshake message encoding and decoding.

Each variant is a frozen dataclass with ``encode_body``/``decode_body``;
``encode_handshake`` and ``decode_handshake`` add and strip the 4-byte
header.  Messages whose layout differs between TLS 1.0 and 1.2
(ServerKeyExchange, CertificateRequest, CertificateVerify) carry
``signature_algorithm=None`` in their 1.0 form.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from ..errors import MalformedHandshake
from .constants import HandshakeType, ProtocolVersion


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise MalformedHandshake("truncated handshake body")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def uint(self, width: int) -> int:
        return int.from_bytes(self.take(width), "big")

    def vector(self, width: int) -> bytes:
        return self.take(self.uint(width))

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def done(self):
        if self.remaining():
            raise MalformedHandshake(f"{self.remaining()} trailing bytes in handshake body")


def _vec(width: int, data: bytes) -> bytes:
    if len(data) >= 1 << (8 * width):
        raise MalformedHandshake(f"vector of {len(data)} bytes does not fit a {width}-byte length")
    return len(data).to_bytes(width, "big") + data


def _version(r: _Reader) -> ProtocolVersion:
    major, minor = r.take(2)
    try:
        return ProtocolVersion((major, minor))
    except ValueError:
        raise MalformedHandshake(f"unsupported protocol version {major}.{minor}") from None


def _encode_extensions(exts) -> bytes:
    if exts is None:
        return b""
    return _vec(2, b"".join(struct.pack("!H", t) + _vec(2, d) for t, d in exts))


def _decode_extensions(r: _Reader):
    if not r.remaining():
        return None
    block = _Reader(r.vector(2))
    exts = []
    while block.remaining():
        exts.append((block.uint(2), block.vector(2)))
    return tuple(exts)


def _random32(value: bytes, what: str):
    if len(value) != 32:
        raise MalformedHandshake(f"{what} random must be 32 bytes, got {len(value)}")


@dataclass(frozen=True)
class ClientHello:
    version: ProtocolVersion
    random: bytes
    cipher_suites: tuple[int, ...]
    session_id: bytes = b""
    compression_methods: tuple[int, ...] = (0,)
    extensions: tuple[tuple[int, bytes], ...] | None = None

    msg_type = HandshakeType.CLIENT_HELLO

    def __post_init__(self):
        _random32(self.random, "client")

    def encode_body(self) -> bytes:
        return (self.version.wire + self.random + _vec(1, self.session_id)
                + _vec(2, b"".join(struct.pack("!H", s) for s in self.cipher_suites))
                + _vec(1, bytes(self.compression_methods))
                + _encode_extensions(self.extensions))

    @classmethod
    def decode_body(cls, r: _Reader, version=None) -> ClientHello:
        version = _version(r)
        random = r.take(32)
        session_id = r.vector(1)
        raw = r.vector(2)
        if len(raw) % 2:
            raise MalformedHandshake("odd cipher suite vector length")
        suites = tuple(struct.unpack(f"!{len(raw) // 2}H", raw))
        compression = tuple(r.vector(1))
        return cls(version, random, suites, session_id, compression, _decode_extensions(r))

    def extension(self, ext_type: int) -> bytes | None:
        for t, d in self.extensions or ():
            if t == ext_type:
                return d
        return None


@dataclass(frozen=True)
class ServerHello:
    version: ProtocolVersion
    random: bytes
    cipher_suite: int
    session_id: bytes = b""
    compression_method: int = 0
    extensions: tuple[tuple[int, bytes], ...] | None = None

    msg_type = HandshakeType.SERVER_HELLO

    def __post_init__(self):
        _random32(self.random, "server")

    def encode_body(self) -> bytes:
        return (self.version.wire + self.random + _vec(1, self.session_id)
                + struct.pack("!HB", self.cipher_suite, self.compression_method)
                + _encode_extensions(self.extensions))

    @classmethod
    def decode_body(cls, r: _Reader, version=None) -> ServerHello:
        version = _version(r)
        random = r.take(32)
        session_id = r.vector(1)
        suite = r.uint(2)
        compression = r.uint(1)
        return cls(version, random, suite, session_id, compression, _decode_extensions(r))


@dataclass(frozen=True)
class Certificate:
    certificates: tuple[bytes, ...] = ()

    msg_type = HandshakeType.CERTIFICATE

    def encode_body(self) -> bytes:
        return _vec(3, b"".join(_vec(3, c) for c in self.certificates))

    @classmethod
    def decode_body(cls, r: _Reader, version=None) -> Certificate:
        chain = _Reader(r.vector(3))
        certs = []
        while chain.remaining():
            certs.append(chain.vector(3))
        return cls(tuple(certs))


def _legacy_layout(r: _Reader, version) -> bool:
    """True when the next field is a bare 2-byte-length vector (TLS 1.0 layout)."""
    if version is not None:
        return version is ProtocolVersion.TLS10
    rest = r.remaining()
    return rest >= 2 and int.from_bytes(r.data[r.pos:r.pos + 2], "big") == rest - 2


def _decode_signature(r: _Reader, version):
    """Digitally-signed trailer; the 1.0 form has no algorithm prefix."""
    if _legacy_layout(r, version):
        return None, r.vector(2)
    alg = tuple(r.take(2))
    return alg, r.vector(2)


def _encode_signature(alg, sig: bytes) -> bytes:
    return (bytes(alg) if alg is not None else b"") + _vec(2, sig)


@dataclass(frozen=True)
class ServerKeyExchange:
    """ECDHE parameters (named curve) and their signature."""

    named_curve: int
    public: bytes
    signature: bytes
    signature_algorithm: tuple[int, int] | None = None
    curve_type: int = 3

    msg_type = HandshakeType.SERVER_KEY_EXCHANGE

    @property
    def params(self) -> bytes:
        return struct.pack("!BH", self.curve_type, self.named_curve) + _vec(1, self.public)

    def encode_body(self) -> bytes:
        return self.params + _encode_signature(self.signature_algorithm, self.signature)

    @classmethod
    def decode_body(cls, r: _Reader, version=None) -> ServerKeyExchange:
        curve_type = r.uint(1)
        if curve_type != 3:
            raise MalformedHandshake(f"unsupported ECParameters curve type {curve_type}")
        curve = r.uint(2)
        public = r.vector(1)
        alg, sig = _decode_signature(r, version)
        return cls(curve, public, sig, alg, curve_type)


@dataclass(frozen=True)
class CertificateRequest:
    certificate_types: tuple[int, ...]
    signature_algorithms: tuple[tuple[int, int], ...] | None = None
    authorities: tuple[bytes, ...] = ()

    msg_type = HandshakeType.CERTIFICATE_REQUEST

    def encode_body(self) -> bytes:
        out = _vec(1, bytes(self.certificate_types))
        if self.signature_algorithms is not None:
            out += _vec(2, b"".join(bytes(a) for a in self.signature_algorithms))
        return out + _vec(2, b"".join(_vec(2, a) for a in self.authorities))

    @classmethod
    def decode_body(cls, r: _Reader, version=None) -> CertificateRequest:
        types = tuple(r.vector(1))
        algs = None
        if not _legacy_layout(r, version):
            raw = r.vector(2)
            if len(raw) % 2:
                raise MalformedHandshake("odd signature_algorithms length")
            algs = tuple((raw[i], raw[i + 1]) for i in range(0, len(raw), 2))
        names = _Reader(r.vector(2))
        authorities = []
        while names.remaining():
            authorities.append(names.vector(2))
        return cls(types, algs, tuple(authorities))


@dataclass(frozen=True)
class ServerHelloDone:
    msg_type = HandshakeType.SERVER_HELLO_DONE

    def encode_body(self) -> bytes:
        return b""

    @classmethod
    def decode_body(cls, r: _Reader, version=None) -> ServerHelloDone:
        return cls()


@dataclass(frozen=True)
class ClientKeyExchange:
    """Opaque exchange body: a 2-byte-length RSA ciphertext or a 1-byte-length EC point."""

    exchange: bytes

    msg_type = HandshakeType.CLIENT_KEY_EXCHANGE

    @classmethod
    def rsa(cls, ciphertext: bytes) -> ClientKeyExchange:
        return cls(_vec(2, ciphertext))

    @classmethod
    def ecdhe(cls, point: bytes) -> ClientKeyExchange:
        return cls(_vec(1, point))

    def rsa_ciphertext(self) -> bytes:
        r = _Reader(self.exchange)
        ct = r.vector(2)
        r.done()
        return ct

    def ec_point(self) -> bytes:
        r = _Reader(self.exchange)
        pt = r.vector(1)
        r.done()
        return pt

    def encode_body(self) -> bytes:
        return self.exchange

    @classmethod
    def decode_body(cls, r: _Reader, version=None) -> ClientKeyExchange:
        return cls(r.take(r.remaining()))


@dataclass(frozen=True)
class CertificateVerify:
    signature: bytes
    signature_algorithm: tuple[int, int] | None = None

    msg_type = HandshakeType.CERTIFICATE_VERIFY

    def encode_body(self) -> bytes:
        return _encode_signature(self.signature_algorithm, self.signature)

    @classmethod
    def decode_body(cls, r: _Reader, version=None) -> CertificateVerify:
        alg, sig = _decode_signature(r, version)
        return cls(sig, alg)


@dataclass(frozen=True)
class Finished:
    verify_data: bytes

    msg_type = HandshakeType.FINISHED

    def encode_body(self) -> bytes:
        return self.verify_data

    @classmethod
    def decode_body(cls, r: _Reader, version=None) -> Finished:
        return cls(r.take(r.remaining()))


HandshakeMessage = (ClientHello | ServerHello | Certificate | ServerKeyExchange
                    | CertificateRequest | ServerHelloDone | ClientKeyExchange
                    | CertificateVerify | Finished)

VARIANTS = {cls.msg_type: cls for cls in (
    ClientHello, ServerHello, Certificate, ServerKeyExchange, CertificateRequest,
    ServerHelloDone, ClientKeyExchange, CertificateVerify, Finished)}


def encode_handshake(msg: HandshakeMessage) -> bytes:
    body = msg.encode_body()
    return bytes([msg.msg_type]) + _vec(3, body)


def decode_handshake(data: bytes, version: ProtocolVersion | None = None) -> HandshakeMessage:
    """Decode exactly one handshake message (header included).

    ``version`` selects the layout of version-dependent messages; without it
    the layout is inferred from the vector lengths.
    """
    r = _Reader(bytes(data))
    msg_type = r.uint(1)
    body = r.vector(3)
    r.done()
    try:
        cls = VARIANTS[HandshakeType(msg_type)]
    except (ValueError, KeyError):
        raise MalformedHandshake(f"unsupported handshake type {msg_type}") from None
    br = _Reader(body)
    msg = cls.decode_body(br, version)
    br.done()
    return msg


def split_handshakes(buf: bytes) -> tuple[list[bytes], bytes]:
    """Split a handshake byte stream into whole messages plus the incomplete tail."""
    out = []
    pos = 0
    while len(buf) - pos >= 4:
        length = int.from_bytes(buf[pos + 1:pos + 4], "big")
        if len(buf) - pos - 4 < length:
            break
        out.append(bytes(buf[pos:pos + 4 + length]))
        pos += 4 + length
    return out, bytes(buf[pos:])


@dataclass
class HandshakeReassembler:
    """Accumulates handshake record payloads, which may fragment or coalesce messages."""

    pending: bytes = b""
    raw: list[bytes] = field(default_factory=list)

    def feed(self, payload: bytes) -> list[bytes]:
        msgs, self.pending = split_handshakes(self.pending + payload)
        self.raw.extend(msgs)
        return msgs
