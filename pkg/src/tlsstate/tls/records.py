"""TLS record layer framing."""

import struct
from dataclasses import dataclass

from ..errors import MalformedRecord
from .constants import ContentType, ProtocolVersion

MAX_PLAINTEXT = 2 ** 14
# protected records may grow by MAC, padding and explicit IV
MAX_CIPHERTEXT = MAX_PLAINTEXT + 2048


@dataclass(frozen=True)
class TlsRecord:
    content_type: ContentType
    version: ProtocolVersion
    payload: bytes

    def __post_init__(self):
        object.__setattr__(self, "content_type", ContentType(self.content_type))
        if len(self.payload) > MAX_CIPHERTEXT:
            raise MalformedRecord(f"record payload of {len(self.payload)} bytes is too long")


def encode_record(rec: TlsRecord) -> bytes:
    return struct.pack("!B2sH", rec.content_type, rec.version.wire, len(rec.payload)) + rec.payload


def decode_records(buf: bytes) -> tuple[list[TlsRecord], bytes]:
    """Decode every complete record in ``buf``; return them and the unconsumed tail."""
    records = []
    pos = 0
    while len(buf) - pos >= 5:
        ctype, major, minor, length = struct.unpack_from("!BBBH", buf, pos)
        try:
            ctype = ContentType(ctype)
        except ValueError:
            raise MalformedRecord(f"unknown content type {ctype}") from None
        if length > MAX_CIPHERTEXT:
            raise MalformedRecord(f"record length {length} exceeds the maximum")
        version = ProtocolVersion.from_wire(major, minor)
        if len(buf) - pos - 5 < length:
            break
        records.append(TlsRecord(ctype, version, bytes(buf[pos + 5:pos + 5 + length])))
        pos += 5 + length
    return records, bytes(buf[pos:])
